//! Correlation metrics, discriminability tests and the resampled session protocol.

mod criteria;
mod rank;
mod session;

use serde::{Deserialize, Serialize};

pub use criteria::{d_test, l_test, p_test, DTest, PTest};
pub use rank::{fractional_ranks, pearson, srcc};
pub use session::{
    median, plcc, plcc_fitted, session_protocol, Correlation, CorrelationSummary, SessionConfig,
};

use crate::data::Dataset;
use crate::error::{check_dim, Result};
use crate::pairgen::Dip;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PTestReport {
    pub p: f64,
    pub m: usize,
    pub m_c: usize,
    pub m_i: usize,
}

impl From<PTest> for PTestReport {
    fn from(r: PTest) -> Self {
        PTestReport { p: r.ratio(), m: r.total, m_c: r.concordant, m_i: r.incorrect }
    }
}

/// Everything the evaluator could compute for one set of model scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub correlations: Option<CorrelationSummary>,
    pub d_test: Option<DTest>,
    pub l_test: Option<f64>,
    pub p_test: Option<PTestReport>,
    pub session_count: usize,
    pub split_fraction: f64,
    pub seed: u64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Runs every criterion the inputs support.
///
/// Correlations need `targets`; the D-test needs both pristine and distorted
/// records; the L-test needs at least two distortion levels; the P-test needs
/// `dips`.
pub fn evaluate(
    dataset: &Dataset,
    scores: &[f64],
    targets: Option<&[Option<f64>]>,
    dips: Option<&[Dip]>,
    config: &SessionConfig,
) -> Result<EvalReport> {
    check_dim(dataset.len(), scores.len())?;
    let correlations = targets.map(|t| session_protocol(dataset, scores, t, config)).transpose()?;

    let (pristine, distorted): (Vec<_>, Vec<_>) =
        dataset.records().iter().partition(|r| r.distortion.is_pristine());
    let d_test = if pristine.is_empty() || distorted.is_empty() {
        None
    } else {
        let p: Vec<f64> = pristine.iter().map(|r| scores[r.id]).collect();
        let d: Vec<f64> = distorted.iter().map(|r| scores[r.id]).collect();
        Some(criteria::d_test(&p, &d)?)
    };
    let l_test = if dataset.level_count() >= 2 && !distorted.is_empty() {
        Some(criteria::l_test(dataset, scores)?)
    } else {
        None
    };
    let p_test = dips.map(|d| criteria::p_test(d, scores).map(PTestReport::from)).transpose()?;
    Ok(EvalReport {
        correlations,
        d_test,
        l_test,
        p_test,
        session_count: config.sessions,
        split_fraction: config.split,
        seed: config.seed,
    })
}
