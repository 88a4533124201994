//! Adam, shared by the TransE trainer and the attention network.

use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(len: usize) -> Self {
        Adam { beta1: S::of(0.9), beta2: S::of(0.999), eps: S::of(1e-8), m: vec![S::zero(); len], v: vec![S::zero(); len], t: 0 }
    }

    /// One bias-corrected update of `params` against `grads`.
    pub fn step(&mut self, params: &mut [S], grads: &[S], lr: S) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let one = S::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
