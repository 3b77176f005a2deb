//! Listwise ranking: permutation probabilities, list cross entropy, and the
//! three-element list loss used to train on DILs.

use itertools::Itertools;

use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::pairgen::Dil;
use crate::pairrank::{self, RankSample, TrainConfig, TrainingLog};
use crate::qnet::QualityModel;
use crate::scalar::{log_sum_exp, log_sum_exp_minus, softmax_into, Scalar};

/// Longest list accepted by [`list_loss_general`].
pub const MAX_ENUMERATED_LIST: usize = 6;

fn check_permutation(n: usize, perm: &[usize]) -> Result<()> {
    if perm.len() != n {
        return Err(Error::invalid(format!("permutation of length {} for {n} scores", perm.len())));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid(format!("{perm:?} is not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

/// `ln P(perm)`: the sum over positions of the score at that position minus
/// the log-sum-exp of the scores from that position on.
pub fn log_permutation_probability<T: Scalar>(scores: &[T], perm: &[usize]) -> Result<T> {
    if scores.len() < 2 {
        return Err(Error::invalid("a list needs at least two items"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    check_permutation(scores.len(), perm)?;
    let ordered: Vec<T> = perm.iter().map(|&p| scores[p]).collect();
    Ok((0..ordered.len()).map(|j| ordered[j] - log_sum_exp(&ordered[j..])).sum())
}

/// Probability of `perm` (0-based: `perm[j]` is the item placed at position j).
pub fn permutation_probability<T: Scalar>(scores: &[T], perm: &[usize]) -> Result<T> {
    log_permutation_probability(scores, perm).map(T::exp)
}

/// All permutations of `0..n` in lexicographic order, the indexing used for
/// ground-truth distributions.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    (0..n).permutations(n).collect()
}

/// Cross entropy between a ground-truth distribution over all `n!`
/// permutations (lexicographic order) and the model's permutation distribution.
pub fn list_loss_general<T: Scalar>(scores: &[T], truth: &[T]) -> Result<T> {
    let n = scores.len();
    if !(2..=MAX_ENUMERATED_LIST).contains(&n) {
        return Err(Error::invalid(format!("list length {n} outside 2..={MAX_ENUMERATED_LIST}")));
    }
    let perms = permutations(n);
    if truth.len() != perms.len() {
        return Err(Error::DimensionMismatch { expected: perms.len(), found: truth.len() });
    }
    let total: T = truth.iter().copied().sum();
    if truth.iter().any(|&p| !(p >= T::zero())) || (total - T::one()).abs() > T::of(1e-9) {
        return Err(Error::invalid("ground truth is not a probability distribution"));
    }
    let mut loss = T::zero();
    for (p, perm) in truth.iter().zip(&perms) {
        if *p > T::zero() {
            loss = loss - *p * log_permutation_probability(scores, perm)?;
        }
    }
    Ok(loss)
}

/// Loss of the list `i > j > k`:
/// `-fi - fj + ln(e^fi + e^fj + e^fk) + ln(e^fj + e^fk)`.
pub fn dil_loss<T: Scalar>(fi: T, fj: T, fk: T) -> Result<T> {
    if ![fi, fj, fk].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    Ok(log_sum_exp_minus(&[fi, fj, fk], 0) + log_sum_exp_minus(&[fj, fk], 0))
}

/// [`dil_loss`] and its partial derivatives with respect to `(fi, fj, fk)`.
pub fn dil_loss_and_grad<T: Scalar>(fi: T, fj: T, fk: T) -> Result<(T, [T; 3])> {
    let loss = dil_loss(fi, fj, fk)?;
    let mut top = [T::zero(); 3];
    softmax_into(&[fi, fj, fk], &mut top);
    let mut tail = [T::zero(); 2];
    softmax_into(&[fj, fk], &mut tail);
    Ok((loss, [top[0] - T::one(), top[1] - T::one() + tail[0], top[2] + tail[1]]))
}

impl RankSample for Dil {
    fn members(&self) -> Vec<usize> {
        vec![self.i, self.j, self.k]
    }

    fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    fn loss<T: Scalar>(&self, scores: &[T]) -> Result<T> {
        dil_loss(scores[0], scores[1], scores[2])
    }

    fn loss_and_grad<T: Scalar>(&self, scores: &[T], grad: &mut [T]) -> Result<T> {
        let (loss, g) = dil_loss_and_grad(scores[0], scores[1], scores[2])?;
        grad.copy_from_slice(&g);
        Ok(loss)
    }
}

/// `sum (1 - U) * dil_loss` over the batch.
pub fn dil_batch_loss<T: Scalar, M: QualityModel<T>>(model: &M, dils: &[Dil], features: &FeatureMatrix<T>) -> Result<T> {
    pairrank::batch_loss(model, dils, features)
}

pub fn dil_batch_gradient<T: Scalar, M: QualityModel<T>>(model: &M, dils: &[Dil], features: &FeatureMatrix<T>) -> Result<Vec<T>> {
    pairrank::batch_gradient(model, dils, features)
}

/// Trains on lists with the same optimizer, split and snapshot rule as pairs.
pub fn train_list<T: Scalar, M: QualityModel<T>>(
    dataset: &Dataset,
    dils: &[Dil],
    init: M,
    config: &TrainConfig,
) -> Result<(M, TrainingLog)> {
    pairrank::train(init, &dataset.feature_matrix(), &dataset.source_of(), dils, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_scores_are_uniform_over_permutations() {
        for perm in permutations(3) {
            assert!((permutation_probability(&[0.4f64, 0.4, 0.4], &perm).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_items_reduce_to_pair_probability() {
        let p: f64 = permutation_probability(&[1.7, -0.2], &[0, 1]).unwrap();
        assert!((p - pairrank::pair_probability(1.7, -0.2).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn three_item_direct_evaluation() {
        let e = std::f64::consts::E;
        let expected = (e * e / (e * e + e + 1.0)) * (e / (e + 1.0));
        let p = permutation_probability(&[2.0, 1.0, 0.0], &[0, 1, 2]).unwrap();
        assert!((p - expected).abs() < 1e-15);
        assert!((p - 0.48633).abs() < 1e-5);
    }

    #[test]
    fn invalid_permutations() {
        assert!(permutation_probability(&[1.0, 2.0, 3.0], &[0, 0, 1]).is_err());
        assert!(permutation_probability(&[1.0, 2.0, 3.0], &[0, 1]).is_err());
        assert!(permutation_probability(&[1.0, 2.0], &[0, 2]).is_err());
        assert!(permutation_probability(&[1.0], &[0]).is_err());
    }

    #[test]
    fn general_loss_cases() {
        let uniform = vec![1.0 / 6.0; 6];
        assert!((list_loss_general(&[0.0, 0.0, 0.0], &uniform).unwrap() - 6.0f64.ln()).abs() < 1e-14);
        let mut degenerate = vec![0.0; 6];
        degenerate[0] = 1.0;
        assert!(list_loss_general(&[60.0, 30.0, 0.0], &degenerate).unwrap() < 1e-6);
        assert!(list_loss_general(&[0.0, 0.0, 0.0], &[0.5; 6]).is_err());
        assert!(list_loss_general(&[0.0, 0.0, 0.0], &[1.0]).is_err());
        assert!(list_loss_general(&[0.0; 7], &[1.0]).is_err());
    }

    #[test]
    fn dil_loss_cases() {
        assert!((dil_loss(0.3, 0.3, 0.3).unwrap() - 6.0f64.ln()).abs() < 1e-15);
        assert!(dil_loss(80.0, 40.0, 0.0).unwrap() < 1e-15);
        assert!(dil_loss(f64::NAN, 0.0, 0.0).is_err());
        let mut truth = vec![0.0; 6];
        truth[0] = 1.0;
        let (a, b, c) = (0.3f64, -1.1, 2.4);
        assert!((dil_loss(a, b, c).unwrap() - list_loss_general(&[a, b, c], &truth).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dil_gradient_matches_finite_differences() {
        let f = [0.4f64, 1.3, -0.8];
        let (_, g) = dil_loss_and_grad(f[0], f[1], f[2]).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut p = f;
            p[k] += h;
            let mut m = f;
            m[k] -= h;
            let numeric = (dil_loss(p[0], p[1], p[2]).unwrap() - dil_loss(m[0], m[1], m[2]).unwrap()) / (2.0 * h);
            assert!((numeric - g[k]).abs() < 1e-8, "{k}");
        }
        assert!((g.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn loss_falls_along_increasing_gaps() {
        let mut prev = f64::INFINITY;
        for step in 0..50 {
            let gap = step as f64 * 0.5;
            let l = dil_loss(2.0 * gap, gap, 0.0).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }
}
