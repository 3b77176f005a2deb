//! Generation of quality-discriminable image pairs (DIPs) from oracle scores
//! and their chaining into three-element lists (DILs).

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default raised-cosine cutoff on the calibrated [0, 100] scale.
pub const DEFAULT_TC: f64 = 20.0;

/// Default uncertainty bucket width used when chaining pairs into lists.
pub const DEFAULT_BUCKET_WIDTH: f64 = 0.05;

/// An ordered pair: image `i` is preferred over image `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dip {
    pub i: usize,
    pub j: usize,
    /// Smallest per-oracle score difference.
    pub gap: f64,
    pub uncertainty: f64,
    /// Ground-truth probability that `i` beats `j`; always 1 when generated.
    pub label: f64,
}

/// An ordered list with quality `i > j > k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dil {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub uncertainty: f64,
}

/// Raised-cosine uncertainty: `(1 + cos(pi t / tc)) / 2` up to `tc`, zero beyond.
pub fn uncertainty<T: Scalar>(t: T, tc: T) -> Result<T> {
    if !(t >= T::zero()) {
        return Err(Error::invalid(format!("score gap must be nonnegative, got {t}")));
    }
    if !(tc > T::zero()) {
        return Err(Error::invalid(format!("cutoff must be positive, got {tc}")));
    }
    if t > tc {
        return Ok(T::zero());
    }
    Ok(T::of(0.5) * (T::one() + (T::PI() * t / tc).cos()))
}

/// Orientation of a candidate pair before its uncertainty is attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Oriented {
    pub i: usize,
    pub j: usize,
    pub gap: f64,
}

/// Orients `(a, b)` when every oracle strictly agrees on the preferred image.
///
/// Returns `None` on ties or disagreement between oracles.
pub fn orient_pair(a: usize, b: usize, scores_a: &[f64], scores_b: &[f64]) -> Result<Option<Oriented>> {
    if scores_a.is_empty() || scores_a.len() != scores_b.len() {
        return Err(Error::invalid(format!(
            "missing oracle score for pair ({a}, {b}): {} vs {} oracles",
            scores_a.len(),
            scores_b.len()
        )));
    }
    let mut positive = true;
    let mut negative = true;
    let mut gap = f64::INFINITY;
    for (&sa, &sb) in scores_a.iter().zip(scores_b) {
        let d = sa - sb;
        if d.is_nan() {
            return Err(Error::invalid(format!("non-finite oracle score for pair ({a}, {b})")));
        }
        positive &= d > 0.0;
        negative &= d < 0.0;
        gap = gap.min(d.abs());
    }
    Ok(if positive {
        Some(Oriented { i: a, j: b, gap })
    } else if negative {
        Some(Oriented { i: b, j: a, gap })
    } else {
        None
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipConfig {
    pub tc: f64,
    pub t_min: f64,
    /// Number of unordered candidate pairs to examine.
    pub budget: usize,
    pub seed: u64,
}

impl Default for DipConfig {
    fn default() -> Self {
        DipConfig { tc: DEFAULT_TC, t_min: 0.0, budget: usize::MAX, seed: 0 }
    }
}

/// Maps a linear index over `{(a, b) : a < b < n}` (row-major) to its pair.
fn pair_at(index: usize, offsets: &[usize]) -> (usize, usize) {
    let a = offsets.partition_point(|&o| o <= index) - 1;
    (a, a + 1 + index - offsets[a])
}

/// Samples candidate pairs uniformly without replacement, orients them by
/// oracle agreement, and keeps those with gap at least `t_min`.
pub fn generate_dips(dataset: &Dataset, config: &DipConfig) -> Result<Vec<Dip>> {
    if config.budget < 1 {
        return Err(Error::invalid("pair budget must be at least 1"));
    }
    if !(config.t_min >= 0.0) {
        return Err(Error::invalid("t_min must be nonnegative"));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::Empty("need at least two records to form pairs".into()));
    }
    uncertainty(0.0, config.tc)?;

    let total = n * (n - 1) / 2;
    let offsets: Vec<usize> = (0..n).map(|a| a * (2 * n - a - 1) / 2).collect();
    let picks: Vec<usize> = if config.budget >= total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut v = rand::seq::index::sample(&mut rng, total, config.budget).into_vec();
        v.sort_unstable();
        v
    };

    let records = dataset.records();
    let oriented: Vec<Option<Oriented>> = picks
        .par_iter()
        .map(|&idx| {
            let (a, b) = pair_at(idx, &offsets);
            orient_pair(a, b, &records[a].oracle_scores, &records[b].oracle_scores)
        })
        .collect::<Result<_>>()?;

    oriented
        .into_iter()
        .flatten()
        .filter(|o| o.gap >= config.t_min)
        .map(|o| {
            Ok(Dip { i: o.i, j: o.j, gap: o.gap, uncertainty: uncertainty(o.gap, config.tc)?, label: 1.0 })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DilConfig {
    pub bucket_width: f64,
    pub budget: usize,
    pub seed: u64,
}

impl Default for DilConfig {
    fn default() -> Self {
        DilConfig { bucket_width: DEFAULT_BUCKET_WIDTH, budget: usize::MAX, seed: 0 }
    }
}

fn bucket(u: f64, width: f64) -> i64 {
    (u / width).floor() as i64
}

/// Chains `<i, j>` and `<j, k>` into `<i, j, k>` when both uncertainties fall
/// in the same bucket. The list keeps the larger of the two uncertainties.
pub fn chain_dils(dips: &[Dip], config: &DilConfig) -> Result<Vec<Dil>> {
    if !(config.bucket_width > 0.0) {
        return Err(Error::invalid(format!("bucket width must be positive, got {}", config.bucket_width)));
    }
    if dips.is_empty() {
        return Err(Error::Empty("no pairs to chain".into()));
    }
    if config.budget < 1 {
        return Err(Error::invalid("list budget must be at least 1"));
    }
    let mut by_head: HashMap<(usize, i64), Vec<usize>> = HashMap::new();
    for (k, d) in dips.iter().enumerate() {
        by_head.entry((d.i, bucket(d.uncertainty, config.bucket_width))).or_default().push(k);
    }
    let mut chains: Vec<(usize, usize)> = Vec::new();
    for (a, first) in dips.iter().enumerate() {
        if let Some(next) = by_head.get(&(first.j, bucket(first.uncertainty, config.bucket_width))) {
            chains.extend(next.iter().filter(|&&b| dips[b].j != first.i).map(|&b| (a, b)));
        }
    }
    let chosen: Vec<usize> = if config.budget >= chains.len() {
        (0..chains.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut v = rand::seq::index::sample(&mut rng, chains.len(), config.budget).into_vec();
        v.sort_unstable();
        v
    };
    Ok(chosen
        .into_iter()
        .map(|c| {
            let (a, b) = chains[c];
            let (first, second) = (&dips[a], &dips[b]);
            Dil { i: first.i, j: first.j, k: second.j, uncertainty: first.uncertainty.max(second.uncertainty) }
        })
        .collect())
}

/// Writes `i,j,T,U,label`.
pub fn save_dips(path: &Path, dips: &[Dip]) -> Result<()> {
    let mut w = crate::data::io_writer(path)?;
    w.write_record(["i", "j", "T", "U", "label"])?;
    for d in dips {
        w.write_record([d.i.to_string(), d.j.to_string(), d.gap.to_string(), d.uncertainty.to_string(), d.label.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let found = rdr.headers()?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(Error::malformed(path, format!("expected header {}", header.join(","))));
    }
    rdr.records().map(|r| r.map_err(Error::from)).collect()
}

fn check_unit(path: &Path, row: usize, what: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::malformed(path, format!("row {row}: {what} {v} outside [0, 1]")))
    }
}

pub fn load_dips(path: &Path) -> Result<Vec<Dip>> {
    use crate::data::parse_csv_field as field;
    read_rows(path, &["i", "j", "T", "U", "label"])?
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let d = Dip {
                i: field(path, k, &r[0], "i")?,
                j: field(path, k, &r[1], "j")?,
                gap: field(path, k, &r[2], "T")?,
                uncertainty: field(path, k, &r[3], "U")?,
                label: field(path, k, &r[4], "label")?,
            };
            if d.i == d.j {
                return Err(Error::malformed(path, format!("row {k}: pair of an image with itself")));
            }
            if !(d.gap >= 0.0) {
                return Err(Error::malformed(path, format!("row {k}: negative gap")));
            }
            check_unit(path, k, "U", d.uncertainty)?;
            if d.label != 0.0 && d.label != 1.0 {
                return Err(Error::malformed(path, format!("row {k}: label must be 0 or 1")));
            }
            Ok(d)
        })
        .collect()
}

/// Writes `i,j,k,U`.
pub fn save_dils(path: &Path, dils: &[Dil]) -> Result<()> {
    let mut w = crate::data::io_writer(path)?;
    w.write_record(["i", "j", "k", "U"])?;
    for d in dils {
        w.write_record([d.i.to_string(), d.j.to_string(), d.k.to_string(), d.uncertainty.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dils(path: &Path) -> Result<Vec<Dil>> {
    use crate::data::parse_csv_field as field;
    read_rows(path, &["i", "j", "k", "U"])?
        .iter()
        .enumerate()
        .map(|(row, r)| {
            let d = Dil {
                i: field(path, row, &r[0], "i")?,
                j: field(path, row, &r[1], "j")?,
                k: field(path, row, &r[2], "k")?,
                uncertainty: field(path, row, &r[3], "U")?,
            };
            if d.i == d.j || d.j == d.k || d.i == d.k {
                return Err(Error::malformed(path, format!("row {row}: list members must be distinct")));
            }
            check_unit(path, row, "U", d.uncertainty)?;
            Ok(d)
        })
        .collect()
}
