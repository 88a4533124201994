//! Floating point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// A real scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Significant decimal digits needed for an exact text round trip.
    const ROUND_TRIP_DIGITS: usize;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion from f64")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("conversion to f64")
    }

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64_lossy(v)
    }
}

impl Scalar for f32 {
    const ROUND_TRIP_DIGITS: usize = 9;
}

impl Scalar for f64 {
    const ROUND_TRIP_DIGITS: usize = 17;
}

/// Format a scalar with 17 significant digits in exponent notation.
///
/// Both `f32` and `f64` values parse back to the identical bit pattern.
pub fn fmt_exact<S: Scalar>(v: S) -> String {
    format!("{:.16e}", v)
}

/// Parse a scalar printed by [`fmt_exact`] (or any decimal float literal).
pub fn parse_scalar<S: Scalar>(tok: &str) -> Option<S> {
    tok.parse::<S>().ok()
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

pub fn squared_distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    let na = norm(a);
    let nb = norm(b);
    if na == S::zero() || nb == S::zero() {
        return S::zero();
    }
    dot(a, b) / (na * nb)
}

/// Scale `v` to unit L2 norm in place; the zero vector is left unchanged.
pub fn normalize_in_place<S: Scalar>(v: &mut [S]) {
    let n = norm(v);
    if n > S::zero() {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

pub fn add_assign<S: Scalar>(acc: &mut [S], v: &[S]) {
    for (a, &x) in acc.iter_mut().zip(v) {
        *a += x;
    }
}
