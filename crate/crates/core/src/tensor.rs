//! A minimal dense tensor kernel with reverse-mode differentiation.
//!
//! Values are row-major matrices. A [`Tape`] records every operation of one
//! forward pass; [`Tape::backward`] walks it in reverse and returns the
//! gradient of a scalar node with respect to every node.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor shape");
        Tensor { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, v: S) -> Self {
        Tensor { rows, cols, data: vec![v; rows * cols] }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut S {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn add_assign(&mut self, other: &Tensor<S>) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a · b`.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    assert_eq!(a.cols, b.rows, "matmul shape");
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let x = a.data[i * a.cols + k];
            if x == S::zero() {
                continue;
            }
            for (o, &y) in orow.iter_mut().zip(&b.data[k * b.cols..(k + 1) * b.cols]) {
                *o += x * y;
            }
        }
    }
    out
}

/// `a · bᵀ`.
pub fn matmul_t<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    assert_eq!(a.cols, b.cols, "matmul_t shape");
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        for j in 0..b.rows {
            out.data[i * b.rows + j] = a.row(i).iter().zip(b.row(j)).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · b`.
pub fn t_matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    assert_eq!(a.rows, b.rows, "t_matmul shape");
    let mut out = Tensor::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        for i in 0..a.cols {
            let x = a.data[r * a.cols + i];
            if x == S::zero() {
                continue;
            }
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &y) in orow.iter_mut().zip(b.row(r)) {
                *o += x * y;
            }
        }
    }
    out
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

pub type Var = usize;

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    MulConst(Var, Tensor<S>),
    Silu(Var),
    /// Training-mode batch norm; `xhat` and per-column `invstd` are saved.
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor<S>, invstd: Vec<S> },
    /// Batch norm with fixed statistics.
    BatchNormFixed { x: Var, gamma: Var, beta: Var, xhat: Tensor<S>, invstd: Vec<S> },
    ConcatCols(Vec<Var>),
    /// Row-wise softmax over unmasked columns; masked entries are zero.
    MaskedSoftmax(Var, Vec<bool>),
    /// `Σ_i w[:, i] * parts[i]`.
    WeightedSum { parts: Vec<Var>, weights: Var },
    RowNormalize { x: Var, norms: Vec<S> },
    /// Mean NT-Xent over anchors with a positive.
    NtXent { sim: Var, positives: Vec<Option<usize>>, tau: S },
}

#[derive(Clone, Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Small constant inside square roots.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = matmul_t(self.value(a), self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    /// Add a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!((b.rows, b.cols), (1, x.cols), "bias shape");
        let mut v = x.clone();
        for r in 0..v.rows {
            for c in 0..v.cols {
                *v.at_mut(r, c) += b.data[c];
            }
        }
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Elementwise product with a constant tensor, e.g. a dropout mask.
    pub fn mul_const(&mut self, a: Var, k: Tensor<S>) -> Var {
        let x = self.value(a);
        assert_eq!((x.rows, x.cols), (k.rows, k.cols), "mask shape");
        let data = x.data.iter().zip(&k.data).map(|(&a, &b)| a * b).collect();
        let v = Tensor::from_vec(x.rows, x.cols, data);
        self.push(v, Op::MulConst(a, k))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|&z| z * sigmoid(z)).collect();
        let v = Tensor::from_vec(x.rows, x.cols, data);
        self.push(v, Op::Silu(a))
    }

    /// Batch norm over the rows of `x` with batch statistics. Returns the
    /// node and the per-column batch mean and (biased) variance.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> (Var, Vec<S>, Vec<S>) {
        let xv = self.value(x);
        let (n, d) = (xv.rows, xv.cols);
        let nf = S::of(n as f64);
        let mut mean = vec![S::zero(); d];
        let mut var = vec![S::zero(); d];
        for r in 0..n {
            for c in 0..d {
                mean[c] += xv.at(r, c) / nf;
            }
        }
        for r in 0..n {
            for c in 0..d {
                let z = xv.at(r, c) - mean[c];
                var[c] += z * z / nf;
            }
        }
        let invstd: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let (xhat, out) = self.affine_norm(x, gamma, beta, &mean, &invstd);
        let node = self.push(out, Op::BatchNorm { x, gamma, beta, xhat, invstd });
        (node, mean, var)
    }

    /// Batch norm with given mean and variance, treated as constants.
    pub fn batch_norm_fixed(&mut self, x: Var, gamma: Var, beta: Var, mean: &[S], var: &[S], eps: S) -> Var {
        let invstd: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let (xhat, out) = self.affine_norm(x, gamma, beta, mean, &invstd);
        self.push(out, Op::BatchNormFixed { x, gamma, beta, xhat, invstd })
    }

    fn affine_norm(&self, x: Var, gamma: Var, beta: Var, mean: &[S], invstd: &[S]) -> (Tensor<S>, Tensor<S>) {
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let mut xhat = Tensor::zeros(xv.rows, xv.cols);
        let mut out = Tensor::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            for c in 0..xv.cols {
                let h = (xv.at(r, c) - mean[c]) * invstd[c];
                *xhat.at_mut(r, c) = h;
                *out.at_mut(r, c) = g.data[c] * h + b.data[c];
            }
        }
        (xhat, out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat rows");
            for r in 0..rows {
                for c in 0..t.cols {
                    *v.at_mut(r, off + c) = t.at(r, c);
                }
            }
            off += t.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Row-wise softmax restricted to entries where `mask` is true. A row
    /// with no unmasked entry is all zeros.
    pub fn masked_softmax(&mut self, a: Var, mask: Vec<bool>) -> Var {
        let x = self.value(a);
        assert_eq!(mask.len(), x.len(), "mask shape");
        let mut v = Tensor::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let idx = |c: usize| r * x.cols + c;
            let live: Vec<usize> = (0..x.cols).filter(|&c| mask[idx(c)]).collect();
            if live.is_empty() {
                continue;
            }
            let m = live.iter().map(|&c| x.data[idx(c)]).fold(S::neg_infinity(), S::max);
            let mut z = S::zero();
            for &c in &live {
                let e = (x.data[idx(c)] - m).exp();
                v.data[idx(c)] = e;
                z += e;
            }
            for &c in &live {
                v.data[idx(c)] /= z;
            }
        }
        self.push(v, Op::MaskedSoftmax(a, mask))
    }

    /// `Σ_i weights[:, i] * parts[i]` for same-shaped parts.
    pub fn weighted_sum(&mut self, parts: &[Var], weights: Var) -> Var {
        let w = self.value(weights);
        assert_eq!(w.cols, parts.len(), "one weight column per part");
        let (rows, cols) = (self.value(parts[0]).rows, self.value(parts[0]).cols);
        let mut v = Tensor::zeros(rows, cols);
        for (i, &p) in parts.iter().enumerate() {
            let t = self.value(p);
            for r in 0..rows {
                let wi = w.at(r, i);
                for c in 0..cols {
                    *v.at_mut(r, c) += wi * t.at(r, c);
                }
            }
        }
        self.push(v, Op::WeightedSum { parts: parts.to_vec(), weights })
    }

    /// Scale each row to unit length, `x / sqrt(|x|² + eps)`.
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let eps = S::of(NORM_EPS);
        let norms: Vec<S> = (0..t.rows).map(|r| (t.row(r).iter().map(|&z| z * z).sum::<S>() + eps).sqrt()).collect();
        let mut v = t.clone();
        for r in 0..t.rows {
            for c in 0..t.cols {
                *v.at_mut(r, c) /= norms[r];
            }
        }
        self.push(v, Op::RowNormalize { x, norms })
    }

    /// NT-Xent over a similarity matrix: for each anchor `i` with positive
    /// `j`, `-s_ij/τ + log Σ_{k≠i} exp(s_ik/τ)`, averaged over anchors.
    pub fn nt_xent(&mut self, sim: Var, positives: Vec<Option<usize>>, tau: S) -> Var {
        let s = self.value(sim);
        assert_eq!(s.rows, s.cols, "square similarity matrix");
        assert_eq!(positives.len(), s.rows);
        let anchors = positives.iter().filter(|p| p.is_some()).count();
        let mut loss = S::zero();
        if anchors > 0 {
            for (i, p) in positives.iter().enumerate() {
                let Some(j) = *p else { continue };
                let row: Vec<S> = (0..s.cols).filter(|&k| k != i).map(|k| s.at(i, k) / tau).collect();
                let m = row.iter().copied().fold(S::neg_infinity(), S::max);
                let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<S>().ln();
                loss += lse - s.at(i, j) / tau;
            }
            loss /= S::of(anchors as f64);
        }
        self.push(Tensor::from_vec(1, 1, vec![loss]), Op::NtXent { sim, positives, tau })
    }

    /// Gradients of the scalar node `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Vec<Option<Tensor<S>>> {
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        let o = &self.nodes[out].value;
        assert_eq!(o.len(), 1, "backward from a scalar");
        grads[out] = Some(Tensor::filled(o.rows, o.cols, S::one()));
        for n in (0..=out).rev() {
            let Some(g) = grads[n].take() else { continue };
            let node = &self.nodes[n];
            let mut acc = |v: Var, t: Tensor<S>| match &mut grads[v] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(*a, matmul_t(&g, self.value(*b)));
                    acc(*b, t_matmul(self.value(*a), &g));
                }
                Op::MatMulT(a, b) => {
                    acc(*a, matmul(&g, self.value(*b)));
                    acc(*b, t_matmul(&g, self.value(*a)));
                }
                Op::AddRow(a, bias) => {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            gb.data[c] += g.at(r, c);
                        }
                    }
                    acc(*a, g.clone());
                    acc(*bias, gb);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::MulConst(a, k) => {
                    let data = g.data.iter().zip(&k.data).map(|(&x, &y)| x * y).collect();
                    acc(*a, Tensor::from_vec(g.rows, g.cols, data));
                }
                Op::Silu(a) => {
                    let x = self.value(*a);
                    let data = g
                        .data
                        .iter()
                        .zip(&x.data)
                        .map(|(&gz, &z)| {
                            let s = sigmoid(z);
                            gz * (s + z * s * (S::one() - s))
                        })
                        .collect();
                    acc(*a, Tensor::from_vec(g.rows, g.cols, data));
                }
                Op::BatchNorm { x, gamma, beta, xhat, invstd } => {
                    let gv = self.value(*gamma);
                    let (n, d) = (g.rows, g.cols);
                    let nf = S::of(n as f64);
                    let mut gg = Tensor::zeros(1, d);
                    let mut gbeta = Tensor::zeros(1, d);
                    let mut gx = Tensor::zeros(n, d);
                    for c in 0..d {
                        let (mut sum_g, mut sum_gx) = (S::zero(), S::zero());
                        for r in 0..n {
                            sum_g += g.at(r, c);
                            sum_gx += g.at(r, c) * xhat.at(r, c);
                        }
                        gg.data[c] = sum_gx;
                        gbeta.data[c] = sum_g;
                        for r in 0..n {
                            let dxhat = g.at(r, c) * gv.data[c];
                            let v = invstd[c] / nf
                                * (nf * dxhat - gv.data[c] * sum_g - xhat.at(r, c) * gv.data[c] * sum_gx);
                            *gx.at_mut(r, c) = v;
                        }
                    }
                    acc(*x, gx);
                    acc(*gamma, gg);
                    acc(*beta, gbeta);
                }
                Op::BatchNormFixed { x, gamma, beta, xhat, invstd } => {
                    let gv = self.value(*gamma);
                    let mut gg = Tensor::zeros(1, g.cols);
                    let mut gbeta = Tensor::zeros(1, g.cols);
                    let mut gx = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            gg.data[c] += g.at(r, c) * xhat.at(r, c);
                            gbeta.data[c] += g.at(r, c);
                            *gx.at_mut(r, c) = g.at(r, c) * gv.data[c] * invstd[c];
                        }
                    }
                    acc(*x, gx);
                    acc(*gamma, gg);
                    acc(*beta, gbeta);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let mut t = Tensor::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            for c in 0..cols {
                                *t.at_mut(r, c) = g.at(r, off + c);
                            }
                        }
                        off += cols;
                        acc(p, t);
                    }
                }
                Op::MaskedSoftmax(a, mask) => {
                    let y = &node.value;
                    let mut gx = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let dot: S = (0..g.cols).map(|c| g.at(r, c) * y.at(r, c)).sum();
                        for c in 0..g.cols {
                            if mask[r * g.cols + c] {
                                *gx.at_mut(r, c) = y.at(r, c) * (g.at(r, c) - dot);
                            }
                        }
                    }
                    acc(*a, gx);
                }
                Op::WeightedSum { parts, weights } => {
                    let w = self.value(*weights);
                    let mut gw = Tensor::zeros(w.rows, w.cols);
                    for (i, &p) in parts.iter().enumerate() {
                        let t = self.value(p);
                        let mut gp = Tensor::zeros(t.rows, t.cols);
                        for r in 0..t.rows {
                            let wi = w.at(r, i);
                            let mut s = S::zero();
                            for c in 0..t.cols {
                                *gp.at_mut(r, c) = wi * g.at(r, c);
                                s += g.at(r, c) * t.at(r, c);
                            }
                            *gw.at_mut(r, i) = s;
                        }
                        acc(p, gp);
                    }
                    acc(*weights, gw);
                }
                Op::RowNormalize { x, norms } => {
                    let y = &node.value;
                    let mut gx = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let dot: S = (0..g.cols).map(|c| g.at(r, c) * y.at(r, c)).sum();
                        for c in 0..g.cols {
                            *gx.at_mut(r, c) = (g.at(r, c) - y.at(r, c) * dot) / norms[r];
                        }
                    }
                    acc(*x, gx);
                }
                Op::NtXent { sim, positives, tau } => {
                    let s = self.value(*sim);
                    let anchors = positives.iter().filter(|p| p.is_some()).count();
                    let mut gs = Tensor::zeros(s.rows, s.cols);
                    if anchors > 0 {
                        let scale = g.data[0] / S::of(anchors as f64) / *tau;
                        for (i, p) in positives.iter().enumerate() {
                            let Some(j) = *p else { continue };
                            let m = (0..s.cols).filter(|&k| k != i).map(|k| s.at(i, k) / *tau).fold(S::neg_infinity(), S::max);
                            let z: S = (0..s.cols).filter(|&k| k != i).map(|k| (s.at(i, k) / *tau - m).exp()).sum();
                            for k in (0..s.cols).filter(|&k| k != i) {
                                *gs.at_mut(i, k) += scale * (s.at(i, k) / *tau - m).exp() / z;
                            }
                            *gs.at_mut(i, j) -= scale;
                        }
                    }
                    acc(*sim, gs);
                }
            }
            grads[n] = Some(g);
        }
        grads
    }
}
