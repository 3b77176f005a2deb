use serde::{Deserialize, Serialize};

use super::simplex::{nelder_mead, SimplexOptions};
use crate::error::{Error, Result};

/// Four-parameter logistic `(b1 - b2) / (1 + exp(-(q - b3) / |b4|)) + b2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub beta: [f64; 4],
}

impl LogisticParams {
    pub fn new(beta: [f64; 4]) -> Result<Self> {
        if beta[3] == 0.0 || beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid(format!("invalid logistic parameters {beta:?}")));
        }
        Ok(LogisticParams { beta })
    }

    pub fn eval(&self, q: f64) -> f64 {
        let [b1, b2, b3, b4] = self.beta;
        (b1 - b2) / (1.0 + (-(q - b3) / b4.abs()).exp()) + b2
    }

    pub fn eval_all(&self, qs: &[f64]) -> Vec<f64> {
        qs.iter().map(|&q| self.eval(q)).collect()
    }

    /// True when the map increases with `q`.
    pub fn is_increasing(&self) -> bool {
        self.beta[0] > self.beta[1]
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares logistic fit by simplex search.
///
/// Starts from `(max target, min target, median raw, range(raw) / 4)`, with the
/// first two swapped when raw and target are negatively correlated.
pub fn fit_logistic(raw: &[f64], targets: &[f64]) -> Result<LogisticParams> {
    if raw.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: raw.len(), found: targets.len() });
    }
    if raw.len() < 5 {
        return Err(Error::Degenerate(format!("logistic fit needs at least 5 points, got {}", raw.len())));
    }
    if raw.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite value in logistic fit input".into()));
    }
    let (rmin, rmax) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if rmin == rmax {
        return Err(Error::Degenerate("all raw scores are equal".into()));
    }
    let (tmin, tmax) = targets.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));

    let n = raw.len() as f64;
    let (mr, mt) = (raw.iter().sum::<f64>() / n, targets.iter().sum::<f64>() / n);
    let cov: f64 = raw.iter().zip(targets).map(|(r, t)| (r - mr) * (t - mt)).sum();
    let (hi, lo) = if cov < 0.0 { (tmin, tmax) } else { (tmax, tmin) };
    let x0 = [hi, lo, median(raw), (rmax - rmin) / 4.0];

    let sse = |b: &[f64]| {
        if b[3] == 0.0 {
            return f64::INFINITY;
        }
        let p = LogisticParams { beta: [b[0], b[1], b[2], b[3]] };
        raw.iter().zip(targets).map(|(&r, &t)| (p.eval(r) - t).powi(2)).sum::<f64>()
    };
    let fit = nelder_mead(sse, &x0, SimplexOptions::default());
    LogisticParams::new([fit.x[0], fit.x[1], fit.x[2], fit.x[3]])
}
