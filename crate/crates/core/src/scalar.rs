//! Floating-point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar usable by the losses, the network and the rank statistics.
///
/// Implemented for `f32` and `f64`. The pipeline defaults to `f64`; the
/// tolerances in the test suite assume it.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for constants and literals.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    /// Widening conversion for reporting and serialization.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `ln(1 + e^z)` without overflow.
pub fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// Logistic sigmoid `1 / (1 + e^-z)`, branch-stable for large `|z|`.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `ln Σ e^{x_k}` with max shifting.
///
/// The max element contributes exactly 1 inside the log, so the remainder is
/// added through `ln_1p` to keep precision when one term dominates.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let Some((argmax, &max)) = xs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
    else {
        return T::neg_infinity();
    };
    let rest: T = xs
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != argmax)
        .map(|(_, &x)| (x - max).exp())
        .sum();
    max + rest.ln_1p()
}

/// `ln Σ e^{x} - xs[k]`, without the cancellation of subtracting afterwards.
pub fn log_sum_exp_minus<T: Scalar>(xs: &[T], k: usize) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let argmax = xs.iter().position(|&x| x == max).unwrap_or(0);
    let rest: T = xs
        .iter()
        .enumerate()
        .filter(|(m, _)| *m != argmax)
        .map(|(_, &x)| (x - max).exp())
        .sum();
    (max - xs[k]) + rest.ln_1p()
}

/// Softmax of `xs` written into `out`.
pub fn softmax_into<T: Scalar>(xs: &[T], out: &mut [T]) {
    let lse = log_sum_exp(xs);
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - lse).exp();
    }
}
