use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::rank::srcc;
use crate::data::{Dataset, Distortion};
use crate::error::{check_dim, Error, Result};
use crate::pairgen::Dip;
use crate::scalar::Scalar;

/// Pristine/distorted separability: best balanced accuracy over thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DTest {
    pub d: f64,
    /// Scores strictly above this are classified pristine.
    pub threshold: f64,
}

/// Sweeps `-inf`, every midpoint between adjacent distinct scores, and `+inf`.
/// Ties between thresholds go to the highest one.
pub fn d_test<T: Scalar>(pristine: &[T], distorted: &[T]) -> Result<DTest> {
    if pristine.is_empty() || distorted.is_empty() {
        return Err(Error::Empty("D-test needs both pristine and distorted scores".into()));
    }
    if pristine.iter().chain(distorted).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite score in D-test"));
    }
    let sorted = |v: &[T]| {
        let mut s: Vec<f64> = v.iter().map(|x| x.to_f64_lossy()).collect();
        s.sort_by(f64::total_cmp);
        s
    };
    let (p, d) = (sorted(pristine), sorted(distorted));
    let mut all: Vec<f64> = p.iter().chain(&d).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();

    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(all.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    thresholds.push(f64::INFINITY);

    let rate = |t: f64| {
        let p_above = p.len() - p.partition_point(|&v| v <= t);
        let d_below = d.partition_point(|&v| v <= t);
        0.5 * (p_above as f64 / p.len() as f64 + d_below as f64 / d.len() as f64)
    };
    let mut best = DTest { d: f64::NEG_INFINITY, threshold: f64::NEG_INFINITY };
    for t in thresholds {
        let r = rate(t);
        if r >= best.d {
            best = DTest { d: r, threshold: t };
        }
    }
    Ok(best)
}

/// Mean over (source, distortion) groups of the rank correlation between
/// distortion level and negated quality score, so a model whose scores fall
/// monotonically with level scores 1. Pristine records are not used; a group
/// with constant scores contributes 0.
pub fn l_test<T: Scalar>(dataset: &Dataset, scores: &[T]) -> Result<T> {
    check_dim(dataset.len(), scores.len())?;
    let q = dataset.level_count() as usize;
    if q < 2 {
        return Err(Error::invalid("L-test needs at least two distortion levels"));
    }
    let mut groups: BTreeMap<(usize, &Distortion), Vec<(u32, T)>> = BTreeMap::new();
    for r in dataset.records().iter().filter(|r| !r.distortion.is_pristine()) {
        groups.entry((r.source_id, &r.distortion)).or_default().push((r.level, scores[r.id]));
    }
    if groups.is_empty() {
        return Err(Error::Empty("no distorted records for the L-test".into()));
    }
    let mut total = T::zero();
    for ((source, kind), members) in &groups {
        if members.len() != q {
            return Err(Error::invalid(format!(
                "L-test group (source {source}, {kind}) has {} of {q} levels",
                members.len()
            )));
        }
        let levels: Vec<T> = members.iter().map(|m| T::of(m.0 as f64)).collect();
        let negated: Vec<T> = members.iter().map(|m| -m.1).collect();
        total = total
            + match srcc(&levels, &negated) {
                Ok(v) => v,
                Err(Error::Degenerate(_)) => T::zero(),
                Err(e) => return Err(e),
            };
    }
    Ok(total / T::of(groups.len() as f64))
}

/// Pairwise preference consistency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PTest {
    pub total: usize,
    pub concordant: usize,
    pub incorrect: usize,
}

impl PTest {
    pub fn ratio(&self) -> f64 {
        self.concordant as f64 / self.total as f64
    }
}

/// Counts pairs the model orders like the label. Score ties count as incorrect.
pub fn p_test<T: Scalar>(dips: &[Dip], scores: &[T]) -> Result<PTest> {
    if dips.is_empty() {
        return Err(Error::Empty("P-test needs at least one pair".into()));
    }
    let mut concordant = 0;
    for d in dips {
        let si = *scores.get(d.i).ok_or(Error::UnknownId(d.i))?;
        let sj = *scores.get(d.j).ok_or(Error::UnknownId(d.j))?;
        let agrees = if d.label >= 0.5 { si > sj } else { sj > si };
        concordant += usize::from(agrees);
    }
    Ok(PTest { total: dips.len(), concordant, incorrect: dips.len() - concordant })
}
