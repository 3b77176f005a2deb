//! Maximum-differentiation pair selection between two quality models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const DEFAULT_LEVELS: usize = 5;
pub const DEFAULT_BAND_EPS: f64 = 0.5;

/// A pair the defender rates alike while the attacker separates them most.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmadPair {
    /// Highest attacker score among the level's candidates.
    pub best: usize,
    /// Lowest attacker score among the remaining candidates.
    pub worst: usize,
    pub level: usize,
    /// Defender score at the level's quantile center.
    pub center: f64,
}

/// Centers of `level_count` defender quantile levels, nearest rank at the
/// middle of each level. Levels sharing a center are merged into the first.
pub fn level_centers(defender: &[f64], level_count: usize) -> Vec<(usize, f64)> {
    let mut sorted = defender.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut centers: Vec<(usize, f64)> = Vec::with_capacity(level_count);
    for level in 0..level_count {
        let idx = (((level as f64 + 0.5) * n as f64 / level_count as f64) as usize).min(n - 1);
        let c = sorted[idx];
        if centers.last().is_none_or(|&(_, prev)| prev != c) {
            centers.push((level, c));
        }
    }
    centers
}

/// Selects one pair per defender level. Swap the arguments to exchange roles.
/// Score ties resolve to the lowest id.
pub fn gmad_pairs(attacker: &[f64], defender: &[f64], level_count: usize, band_eps: f64) -> Result<Vec<GmadPair>> {
    check_dim(defender.len(), attacker.len())?;
    if defender.is_empty() {
        return Err(Error::Empty("gMAD needs at least one image".into()));
    }
    if level_count == 0 {
        return Err(Error::invalid("level count must be positive"));
    }
    if !(band_eps > 0.0 && band_eps.is_finite()) {
        return Err(Error::invalid(format!("band_eps must be positive, got {band_eps}")));
    }
    if attacker.iter().chain(defender).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite score in gMAD input"));
    }
    let pairs: Vec<GmadPair> = level_centers(defender, level_count)
        .into_par_iter()
        .filter_map(|(level, center)| {
            let candidates: Vec<usize> =
                (0..defender.len()).filter(|&id| (defender[id] - center).abs() <= band_eps).collect();
            if candidates.len() < 2 {
                return None;
            }
            let mut best = candidates[0];
            for &id in &candidates[1..] {
                if attacker[id] > attacker[best] {
                    best = id;
                }
            }
            let mut worst = None;
            for &id in candidates.iter().filter(|&&id| id != best) {
                if worst.is_none_or(|w: usize| attacker[id] < attacker[w]) {
                    worst = Some(id);
                }
            }
            worst.map(|worst| GmadPair { best, worst, level, center })
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::Degenerate("no defender level has two candidates".into()));
    }
    Ok(pairs)
}
