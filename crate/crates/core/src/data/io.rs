use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use super::{Dataset, Distortion, FeatureMatrix, ImageRecord};
use crate::error::{Error, Result};

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file))
}

pub(crate) fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub(crate) fn parse_field<T: std::str::FromStr>(path: &Path, row: usize, field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::malformed(path, format!("row {row}: cannot parse {what} from {field:?}")))
}

fn check_header(path: &Path, header: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    for (k, name) in expected.iter().enumerate() {
        if header.get(k) != Some(*name) {
            return Err(Error::malformed(
                path,
                format!("header column {k} must be {name:?}, found {:?}", header.get(k)),
            ));
        }
    }
    Ok(())
}

fn read_features(path: &Path) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    check_header(path, &header, &["id"])?;
    let dim = header.len() - 1;
    let mut rows = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != dim + 1 {
            return Err(Error::DimensionMismatch { expected: dim, found: rec.len().saturating_sub(1) });
        }
        let id: usize = parse_field(path, k, &rec[0], "id")?;
        let features = rec
            .iter()
            .skip(1)
            .map(|f| parse_field(path, k, f, "feature"))
            .collect::<Result<Vec<f64>>>()?;
        if rows.insert(id, features).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(rows)
}

struct ScoreRow {
    source_id: usize,
    distortion: Distortion,
    level: u32,
    scores: Vec<f64>,
}

fn read_scores(path: &Path) -> Result<(Vec<String>, BTreeMap<usize, ScoreRow>)> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    check_header(path, &header, &["id", "source_id", "distortion", "level"])?;
    let oracles: Vec<String> = header.iter().skip(4).map(str::to_string).collect();
    let mut rows = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::DimensionMismatch { expected: header.len(), found: rec.len() });
        }
        let id: usize = parse_field(path, k, &rec[0], "id")?;
        let row = ScoreRow {
            source_id: parse_field(path, k, &rec[1], "source_id")?,
            distortion: rec[2].parse()?,
            level: parse_field(path, k, &rec[3], "level")?,
            scores: rec
                .iter()
                .skip(4)
                .map(|f| parse_field(path, k, f, "score"))
                .collect::<Result<_>>()?,
        };
        if rows.insert(id, row).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok((oracles, rows))
}

fn read_mos(path: &Path) -> Result<BTreeMap<usize, f64>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    check_header(path, &header, &["id", "mos"])?;
    let mut rows = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, found: rec.len() });
        }
        let id = parse_field(path, k, &rec[0], "id")?;
        if rows.insert(id, parse_field(path, k, &rec[1], "mos")?).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(rows)
}

/// Loads `features.csv`, `scores.csv` and optionally `mos.csv` into a validated dataset.
pub fn load_dataset(features_path: &Path, scores_path: &Path, mos_path: Option<&Path>) -> Result<Dataset> {
    let mut features = read_features(features_path)?;
    let (oracles, scores) = read_scores(scores_path)?;
    let mut mos = match mos_path {
        Some(p) => read_mos(p)?,
        None => BTreeMap::new(),
    };
    if let Some(id) = features.keys().find(|id| !scores.contains_key(id)) {
        return Err(Error::invalid(format!("id {id} has features but no scores")));
    }
    let mut records = Vec::with_capacity(scores.len());
    for (id, row) in scores {
        let features = features.remove(&id).ok_or(Error::UnknownId(id))?;
        records.push(ImageRecord {
            id,
            source_id: row.source_id,
            distortion: row.distortion,
            level: row.level,
            features,
            oracle_scores: row.scores,
            mos: mos.remove(&id),
        });
    }
    if let Some((&id, _)) = mos.iter().next() {
        return Err(Error::UnknownId(id));
    }
    Dataset::new(records, oracles)
}

/// Loads only `scores.csv`; records carry empty feature vectors.
pub fn load_scores_only(scores_path: &Path) -> Result<Dataset> {
    let (oracles, scores) = read_scores(scores_path)?;
    let records = scores
        .into_iter()
        .map(|(id, row)| ImageRecord {
            id,
            source_id: row.source_id,
            distortion: row.distortion,
            level: row.level,
            features: Vec::new(),
            oracle_scores: row.scores,
            mos: None,
        })
        .collect();
    Dataset::new(records, oracles)
}

/// Writes the dataset back to its CSV files. Reals use the shortest decimal
/// that parses back to the same value.
pub fn save_dataset(ds: &Dataset, features_path: &Path, scores_path: &Path, mos_path: Option<&Path>) -> Result<()> {
    save_features(ds, features_path)?;
    save_scores(ds, scores_path)?;
    if let Some(path) = mos_path {
        let mut w = writer(path)?;
        w.write_record(["id", "mos"])?;
        for r in ds.records() {
            if let Some(m) = r.mos {
                w.write_record([r.id.to_string(), m.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn save_features(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..ds.feature_dim()).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    for r in ds.records() {
        let mut row = vec![r.id.to_string()];
        row.extend(r.features.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_scores(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<String> = ["id", "source_id", "distortion", "level"].map(String::from).to_vec();
    header.extend(ds.oracle_names().iter().cloned());
    w.write_record(&header)?;
    for r in ds.records() {
        let mut row = vec![r.id.to_string(), r.source_id.to_string(), r.distortion.to_string(), r.level.to_string()];
        row.extend(r.oracle_scores.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn dense<V>(path: &Path, rows: BTreeMap<usize, V>) -> Result<Vec<V>> {
    rows.into_iter()
        .enumerate()
        .map(|(k, (id, v))| {
            if id == k {
                Ok(v)
            } else {
                Err(Error::malformed(path, format!("ids must be 0..n without gaps, missing {k}")))
            }
        })
        .collect()
}

/// Loads `features.csv` on its own; ids must be dense.
pub fn load_features(path: &Path) -> Result<FeatureMatrix<f64>> {
    let rows = dense(path, read_features(path)?)?;
    if rows.is_empty() {
        return Err(Error::Empty(format!("{} has no rows", path.display())));
    }
    FeatureMatrix::from_rows(&rows)
}

/// Reads an `id,score` file with dense ids.
pub fn load_id_scores(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    check_header(path, &header, &["id", "score"])?;
    let mut rows = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, found: rec.len() });
        }
        let id = parse_field(path, k, &rec[0], "id")?;
        if rows.insert(id, parse_field(path, k, &rec[1], "score")?).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    dense(path, rows)
}

/// Writes `id,score` rows to any sink.
pub fn write_id_scores<W: std::io::Write>(sink: W, scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["id", "score"])?;
    for (id, s) in scores.iter().enumerate() {
        w.write_record([id.to_string(), s.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(Path::new("<output>"), e))
}
