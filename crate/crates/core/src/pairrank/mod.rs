//! Pairwise ranking: pair probability, cross-entropy loss, and the
//! uncertainty-weighted mini-batch objective trained with momentum SGD.

mod batch;
mod train;

use crate::error::{Error, Result};
use crate::pairgen::Dip;
use crate::scalar::{sigmoid, softplus, Scalar};

pub use batch::{batch_gradient, batch_loss, batch_loss_and_gradient, RankSample};
pub use train::{sgd_step, split_by_source, train, train_pairs, LogEntry, SourceSplit, TrainConfig, TrainingLog};

fn finite<T: Scalar>(values: &[T]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("non-finite score"))
    }
}

/// Probability that the first image is preferred: `e^(fi-fj) / (1 + e^(fi-fj))`.
pub fn pair_probability<T: Scalar>(fi: T, fj: T) -> Result<T> {
    finite(&[fi, fj])?;
    Ok(sigmoid(fi - fj))
}

/// Cross entropy `-label (fi - fj) + ln(1 + e^(fi - fj))`.
pub fn pair_loss<T: Scalar>(fi: T, fj: T, label: T) -> Result<T> {
    finite(&[fi, fj])?;
    if !(label >= T::zero() && label <= T::one()) {
        return Err(Error::invalid(format!("label {label} outside [0, 1]")));
    }
    let z = fi - fj;
    Ok(softplus(z) - label * z)
}

impl RankSample for Dip {
    fn members(&self) -> Vec<usize> {
        vec![self.i, self.j]
    }

    fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    fn loss<T: Scalar>(&self, scores: &[T]) -> Result<T> {
        pair_loss(scores[0], scores[1], T::of(self.label))
    }

    fn loss_and_grad<T: Scalar>(&self, scores: &[T], grad: &mut [T]) -> Result<T> {
        let loss = self.loss(scores)?;
        let d = pair_probability(scores[0], scores[1])? - T::of(self.label);
        grad[0] = d;
        grad[1] = -d;
        Ok(loss)
    }
}
