use std::collections::HashMap;

use rayon::prelude::*;

use crate::data::FeatureMatrix;
use crate::error::Result;
use crate::qnet::QualityModel;
use crate::scalar::Scalar;

/// Number of distinct images whose parameter gradients are summed together
/// before the ordered cross-chunk reduction. Fixed so that results do not
/// depend on the worker count.
const CHUNK: usize = 64;

/// A training example: an ordered group of images with a loss on their scores.
pub trait RankSample: Send + Sync {
    /// Image ids, one per stream.
    fn members(&self) -> Vec<usize>;

    fn uncertainty(&self) -> f64;

    fn loss<T: Scalar>(&self, scores: &[T]) -> Result<T>;

    /// Loss, with `dloss/dscore` per stream written into `grad`.
    fn loss_and_grad<T: Scalar>(&self, scores: &[T], grad: &mut [T]) -> Result<T>;

    /// Batch weight `1 - U`.
    fn weight<T: Scalar>(&self) -> T {
        T::one() - T::of(self.uncertainty())
    }
}

/// Distinct ids in order of first appearance, and the slot of each id.
fn distinct_ids<S: RankSample>(samples: &[S]) -> (Vec<usize>, HashMap<usize, usize>) {
    let mut order = Vec::new();
    let mut slot = HashMap::new();
    for s in samples {
        for id in s.members() {
            slot.entry(id).or_insert_with(|| {
                order.push(id);
                order.len() - 1
            });
        }
    }
    (order, slot)
}

fn scores_of<T: Scalar, M: QualityModel<T>>(model: &M, features: &FeatureMatrix<T>, ids: &[usize]) -> Result<Vec<T>> {
    ids.par_iter().map(|&id| model.forward(features.row(id)?)).collect()
}

/// `sum (1 - U) * loss` over the batch. Each image is scored once.
pub fn batch_loss<T: Scalar, M: QualityModel<T>, S: RankSample>(model: &M, samples: &[S], features: &FeatureMatrix<T>) -> Result<T> {
    let (order, slot) = distinct_ids(samples);
    let scores = scores_of(model, features, &order)?;
    let mut total = T::zero();
    let mut buf = Vec::new();
    for s in samples {
        buf.clear();
        buf.extend(s.members().iter().map(|id| scores[slot[id]]));
        total = total + s.weight::<T>() * s.loss(&buf)?;
    }
    Ok(total)
}

/// Batch loss and its gradient with respect to the model parameters.
///
/// The per-sample factors `(1 - U) dloss/df` are first gathered per image,
/// then each distinct image is backpropagated once with its summed factor.
pub fn batch_loss_and_gradient<T: Scalar, M: QualityModel<T>, S: RankSample>(
    model: &M,
    samples: &[S],
    features: &FeatureMatrix<T>,
) -> Result<(T, Vec<T>)> {
    let (order, slot) = distinct_ids(samples);
    let traced: Vec<(T, M::Trace)> = order
        .par_iter()
        .map(|&id| model.forward_traced(features.row(id)?))
        .collect::<Result<_>>()?;

    let mut coeff = vec![T::zero(); order.len()];
    let mut total = T::zero();
    let (mut scores, mut grad) = (Vec::new(), Vec::new());
    for s in samples {
        let members = s.members();
        scores.clear();
        scores.extend(members.iter().map(|id| traced[slot[id]].0));
        grad.clear();
        grad.resize(members.len(), T::zero());
        let w = s.weight::<T>();
        total = total + w * s.loss_and_grad(&scores, &mut grad)?;
        for (id, g) in members.iter().zip(&grad) {
            let c = &mut coeff[slot[id]];
            *c = *c + w * *g;
        }
    }

    let n = model.param_count();
    let partials: Vec<Vec<T>> = traced
        .par_chunks(CHUNK)
        .zip(coeff.par_chunks(CHUNK))
        .map(|(tr, cs)| {
            let mut acc = vec![T::zero(); n];
            for ((_, trace), &c) in tr.iter().zip(cs) {
                if c != T::zero() {
                    model.accumulate_traced(trace, c, &mut acc);
                }
            }
            acc
        })
        .collect();
    let mut gradient = vec![T::zero(); n];
    for part in partials {
        for (g, p) in gradient.iter_mut().zip(part) {
            *g = *g + p;
        }
    }
    Ok((total, gradient))
}

pub fn batch_gradient<T: Scalar, M: QualityModel<T>, S: RankSample>(model: &M, samples: &[S], features: &FeatureMatrix<T>) -> Result<Vec<T>> {
    batch_loss_and_gradient(model, samples, features).map(|(_, g)| g)
}
