//! Dataset model, CSV ingestion, and the synthetic image generator used for
//! desk-scale runs.

mod features;
mod io;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use features::{extract_features, FEATURE_DIM};
pub use io::{
    load_dataset, load_features, load_id_scores, load_scores_only, save_dataset, save_features, save_scores, write_id_scores,
};
pub(crate) use io::{parse_field as parse_csv_field, writer as io_writer};
pub use synth::{
    apply_distortion, build_synthetic_dataset, synth_sources, SyntheticSet, BLUR_SIGMAS, LEVELS,
    NOISE_SIGMAS,
};

/// Distortion applied to a record. `Pristine` records are the references.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Distortion {
    Pristine,
    WhiteNoise,
    Blur,
    /// Any distortion not synthesized here (JPEG, JP2K, ...), kept by tag.
    External(String),
}

impl Distortion {
    pub fn is_pristine(&self) -> bool {
        matches!(self, Distortion::Pristine)
    }

    fn is_builtin(&self) -> bool {
        matches!(self, Distortion::WhiteNoise | Distortion::Blur)
    }
}

impl fmt::Display for Distortion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distortion::Pristine => f.write_str("PRISTINE"),
            Distortion::WhiteNoise => f.write_str("WN"),
            Distortion::Blur => f.write_str("BLUR"),
            Distortion::External(tag) => f.write_str(tag),
        }
    }
}

impl FromStr for Distortion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "" => return Err(Error::invalid("empty distortion tag")),
            "PRISTINE" => Distortion::Pristine,
            "WN" => Distortion::WhiteNoise,
            "BLUR" => Distortion::Blur,
            other => Distortion::External(other.to_string()),
        })
    }
}

/// One test image: identity, feature vector and oracle scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: usize,
    /// Id of the pristine record this image was derived from (its own id when pristine).
    pub source_id: usize,
    pub distortion: Distortion,
    pub level: u32,
    pub features: Vec<f64>,
    /// Oracle scores, aligned with [`Dataset::oracle_names`].
    pub oracle_scores: Vec<f64>,
    pub mos: Option<f64>,
}

/// An immutable, validated collection of [`ImageRecord`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<ImageRecord>,
    oracle_names: Vec<String>,
    feature_dim: usize,
    sources: usize,
    distortion_count: usize,
    level_count: u32,
}

impl Dataset {
    /// Validates the records and builds the dataset. Records may arrive in any
    /// order; they are sorted by id and ids must then be exactly `0..n`.
    pub fn new(mut records: Vec<ImageRecord>, oracle_names: Vec<String>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("dataset has no records".into()));
        }
        let mut seen = BTreeSet::new();
        for name in &oracle_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate oracle name {name}")));
            }
        }
        records.sort_by_key(|r| r.id);
        for pair in records.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::DuplicateId(pair[0].id));
            }
        }
        for (k, r) in records.iter().enumerate() {
            if r.id != k {
                return Err(Error::invalid(format!("ids are not dense: expected {k}, found {}", r.id)));
            }
        }

        let feature_dim = records[0].features.len();
        for r in &records {
            if r.features.len() != feature_dim {
                return Err(Error::DimensionMismatch { expected: feature_dim, found: r.features.len() });
            }
            if r.oracle_scores.len() != oracle_names.len() {
                return Err(Error::DimensionMismatch {
                    expected: oracle_names.len(),
                    found: r.oracle_scores.len(),
                });
            }
            if (r.level == 0) != r.distortion.is_pristine() {
                return Err(Error::invalid(format!(
                    "record {}: level 0 must coincide with PRISTINE (got {} level {})",
                    r.id, r.distortion, r.level
                )));
            }
            if r.distortion.is_pristine() {
                if r.source_id != r.id {
                    return Err(Error::invalid(format!(
                        "pristine record {} must be its own source (source_id {})",
                        r.id, r.source_id
                    )));
                }
            } else {
                match records.get(r.source_id) {
                    Some(src) if src.distortion.is_pristine() => {}
                    Some(_) => {
                        return Err(Error::invalid(format!(
                            "record {}: source {} is not a pristine record",
                            r.id, r.source_id
                        )))
                    }
                    None => return Err(Error::UnknownId(r.source_id)),
                }
            }
        }

        let sources = records.iter().filter(|r| r.distortion.is_pristine()).count();
        let kinds: BTreeSet<&Distortion> =
            records.iter().map(|r| &r.distortion).filter(|d| !d.is_pristine()).collect();
        let level_count = records.iter().map(|r| r.level).max().unwrap_or(0);

        // Built-in distortions form a complete grid: every source carries every
        // level of every built-in kind present in the dataset.
        let builtin: Vec<&Distortion> = kinds.iter().copied().filter(|d| d.is_builtin()).collect();
        if !builtin.is_empty() {
            let mut family: BTreeMap<(usize, &Distortion), BTreeSet<u32>> = BTreeMap::new();
            for r in records.iter().filter(|r| r.distortion.is_builtin()) {
                if !family.entry((r.source_id, &r.distortion)).or_default().insert(r.level) {
                    return Err(Error::invalid(format!(
                        "source {} has level {} of {} twice",
                        r.source_id, r.level, r.distortion
                    )));
                }
            }
            for src in records.iter().filter(|r| r.distortion.is_pristine()) {
                for kind in &builtin {
                    let levels = family.get(&(src.id, *kind)).map_or(0, |s| s.len());
                    if levels != level_count as usize {
                        return Err(Error::invalid(format!(
                            "incomplete family: source {} has {levels} of {level_count} levels of {kind}",
                            src.id
                        )));
                    }
                }
            }
        }

        let distortion_count = kinds.len();
        Ok(Dataset {
            records,
            oracle_names,
            feature_dim,
            sources,
            distortion_count,
            level_count,
        })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn record(&self, id: usize) -> Result<&ImageRecord> {
        self.records.get(id).ok_or(Error::UnknownId(id))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn oracle_names(&self) -> &[String] {
        &self.oracle_names
    }

    pub fn oracle_index(&self, name: &str) -> Result<usize> {
        self.oracle_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid(format!("unknown oracle {name}")))
    }

    /// Scores of one oracle, indexed by record id.
    pub fn oracle_column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self.oracle_index(name)?;
        Ok(self.records.iter().map(|r| r.oracle_scores[k]).collect())
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Number of pristine sources (S).
    pub fn sources(&self) -> usize {
        self.sources
    }

    /// Number of distinct non-pristine distortion kinds (K).
    pub fn distortion_count(&self) -> usize {
        self.distortion_count
    }

    /// Highest distortion level (Q).
    pub fn level_count(&self) -> u32 {
        self.level_count
    }

    /// Ids of the pristine records, ascending.
    pub fn source_ids(&self) -> Vec<usize> {
        self.records.iter().filter(|r| r.distortion.is_pristine()).map(|r| r.id).collect()
    }

    /// Source id of each record, indexed by record id.
    pub fn source_of(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.source_id).collect()
    }

    pub fn has_mos(&self) -> bool {
        self.records.iter().any(|r| r.mos.is_some())
    }

    /// Replaces one oracle's column. `scores` is indexed by record id.
    pub fn with_oracle_column(&self, name: &str, scores: &[f64]) -> Result<Dataset> {
        let k = self.oracle_index(name)?;
        if scores.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: scores.len() });
        }
        let mut out = self.clone();
        for (r, &s) in out.records.iter_mut().zip(scores) {
            r.oracle_scores[k] = s;
        }
        Ok(out)
    }

    /// Records whose source is in `sources`, renumbered densely in id order.
    /// Returns the new dataset and the original id of each new record.
    pub fn subset(&self, sources: &BTreeSet<usize>) -> Result<(Dataset, Vec<usize>)> {
        let kept: Vec<&ImageRecord> = self.records.iter().filter(|r| sources.contains(&r.source_id)).collect();
        if kept.is_empty() {
            return Err(Error::Empty("subset selects no records".into()));
        }
        let mut new_id = vec![usize::MAX; self.len()];
        for (k, r) in kept.iter().enumerate() {
            new_id[r.id] = k;
        }
        let records = kept
            .iter()
            .map(|r| ImageRecord { id: new_id[r.id], source_id: new_id[r.source_id], ..(*r).clone() })
            .collect();
        let original = kept.iter().map(|r| r.id).collect();
        Ok((Dataset::new(records, self.oracle_names.clone())?, original))
    }

    /// Feature rows converted to the working scalar type.
    pub fn feature_matrix<T: Scalar>(&self) -> FeatureMatrix<T> {
        FeatureMatrix {
            dim: self.feature_dim,
            data: self.records.iter().flat_map(|r| r.features.iter().map(|&v| T::of(v))).collect(),
        }
    }
}

/// Per-dimension affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub mean: Vec<f64>,
    /// Standard deviation, or 1 where a dimension is constant.
    pub scale: Vec<f64>,
}

impl FeatureScaling {
    /// Statistics of the features of the records in `ids`.
    pub fn fit(dataset: &Dataset, ids: &[usize]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("no records to fit feature scaling".into()));
        }
        let dim = dataset.feature_dim();
        let n = ids.len() as f64;
        let mut mean = vec![0.0; dim];
        for &id in ids {
            for (m, v) in mean.iter_mut().zip(&dataset.record(id)?.features) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for &id in ids {
            for ((s, v), m) in var.iter_mut().zip(&dataset.records[id].features).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.iter().map(|v| if *v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Ok(FeatureScaling { mean, scale })
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        if self.mean.len() != dataset.feature_dim() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), found: dataset.feature_dim() });
        }
        let mut out = dataset.clone();
        for r in &mut out.records {
            for ((v, m), s) in r.features.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Dense row-major feature table indexed by record id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(dim * rows.len());
        for row in rows {
            crate::error::check_dim(dim, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(FeatureMatrix { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn row(&self, id: usize) -> Result<&[T]> {
        if id >= self.rows() {
            return Err(Error::UnknownId(id));
        }
        Ok(&self.data[id * self.dim..(id + 1) * self.dim])
    }
}
