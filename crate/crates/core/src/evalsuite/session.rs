use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rank::{pearson, srcc};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::froracles::{fit_logistic, LogisticParams};

/// Resampling configuration for correlation reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub sessions: usize,
    /// Fraction of sources used to fit the logistic remap; the rest is tested.
    pub split: f64,
    pub seed: u64,
    pub remap: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { sessions: 1000, split: 0.8, seed: 0, remap: true }
    }
}

/// Median correlations over sessions. `None` when no session produced a value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub srcc: Option<f64>,
    pub plcc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub overall: Correlation,
    pub per_distortion: BTreeMap<String, Correlation>,
}

/// Correlation with an optional remap fitted on a separate subset.
pub fn plcc(predictions: &[f64], targets: &[f64], remap: bool) -> Result<f64> {
    if remap {
        plcc_fitted(predictions, targets, predictions, targets)
    } else {
        pearson(predictions, targets)
    }
}

/// Fits the logistic on `(fit_pred, fit_targets)` and correlates the remapped
/// test predictions with the test targets.
pub fn plcc_fitted(fit_pred: &[f64], fit_targets: &[f64], predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_dim(predictions.len(), targets.len())?;
    let params = fit_logistic(fit_pred, fit_targets)?;
    pearson(&params.eval_all(predictions), targets)
}

struct SessionResult {
    overall: (Option<f64>, Option<f64>),
    per_distortion: BTreeMap<String, (Option<f64>, Option<f64>)>,
}

/// `fit` is `None` without remapping and `Some(None)` when the remap could not be fitted.
fn correlate(pred: &[f64], target: &[f64], fit: Option<&Option<LogisticParams>>) -> (Option<f64>, Option<f64>) {
    let s = srcc(pred, target).ok();
    let p = match fit {
        Some(Some(params)) => pearson(&params.eval_all(pred), target).ok(),
        Some(None) => None,
        None => pearson(pred, target).ok(),
    };
    (s, p)
}

/// Repeated source-level splits; reports median SRCC and PLCC on the test side.
///
/// `targets[id]` is the subjective score of record `id`; records without one
/// are skipped. With `remap` off a split of 0 tests on every source.
pub fn session_protocol(
    dataset: &Dataset,
    predictions: &[f64],
    targets: &[Option<f64>],
    config: &SessionConfig,
) -> Result<CorrelationSummary> {
    check_dim(dataset.len(), predictions.len())?;
    check_dim(dataset.len(), targets.len())?;
    if config.sessions == 0 {
        return Err(Error::invalid("sessions must be at least 1"));
    }
    if !(0.0..1.0).contains(&config.split) || (config.remap && config.split == 0.0) {
        return Err(Error::invalid(format!("split {} outside the usable range", config.split)));
    }
    let scored: Vec<usize> = (0..dataset.len()).filter(|&id| targets[id].is_some()).collect();
    if scored.is_empty() {
        return Err(Error::Empty("no records carry a subjective score".into()));
    }
    let sources: Vec<usize> =
        scored.iter().map(|&id| dataset.records()[id].source_id).collect::<BTreeSet<_>>().into_iter().collect();
    if config.split > 0.0 && sources.len() < 2 {
        return Err(Error::invalid(format!("need at least two sources to split, found {}", sources.len())));
    }

    let run = |session: usize| -> Result<SessionResult> {
        let mut order = sources.clone();
        let held_for_fit = if config.split == 0.0 {
            0
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(session as u64);
            order.shuffle(&mut rng);
            ((config.split * order.len() as f64).round() as usize).clamp(1, order.len() - 1)
        };
        let fit_sources: BTreeSet<usize> = order[..held_for_fit].iter().copied().collect();
        let (fit_ids, test_ids): (Vec<usize>, Vec<usize>) =
            scored.iter().partition(|&&id| fit_sources.contains(&dataset.records()[id].source_id));

        let gather = |ids: &[usize]| -> (Vec<f64>, Vec<f64>) {
            ids.iter().map(|&id| (predictions[id], targets[id].unwrap_or(f64::NAN))).unzip()
        };
        // a degenerate fit leaves this session without PLCC values
        let params = if config.remap {
            let (fp, ft) = gather(&fit_ids);
            match fit_logistic(&fp, &ft) {
                Ok(p) => Some(Some(p)),
                Err(Error::Degenerate(_)) => Some(None),
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let (tp, tt) = gather(&test_ids);
        let overall = correlate(&tp, &tt, params.as_ref());

        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for &id in &test_ids {
            let kind = &dataset.records()[id].distortion;
            if !kind.is_pristine() {
                groups.entry(kind.to_string()).or_default().push(id);
            }
        }
        let per_distortion = groups
            .into_iter()
            .map(|(name, ids)| {
                let (p, t) = gather(&ids);
                (name, correlate(&p, &t, params.as_ref()))
            })
            .collect();
        Ok(SessionResult { overall, per_distortion })
    };
    let results: Vec<SessionResult> = (0..config.sessions).into_par_iter().map(run).collect::<Result<_>>()?;

    let summarize = |values: Vec<(Option<f64>, Option<f64>)>| Correlation {
        srcc: median(values.iter().filter_map(|v| v.0).collect()),
        plcc: median(values.iter().filter_map(|v| v.1).collect()),
    };
    let mut by_kind: BTreeMap<String, Vec<(Option<f64>, Option<f64>)>> = BTreeMap::new();
    for r in &results {
        for (k, v) in &r.per_distortion {
            by_kind.entry(k.clone()).or_default().push(*v);
        }
    }
    Ok(CorrelationSummary {
        overall: summarize(results.iter().map(|r| r.overall).collect()),
        per_distortion: by_kind.into_iter().map(|(k, v)| (k, summarize(v))).collect(),
    })
}

/// Median with the mean of the middle pair for even counts.
pub fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}
