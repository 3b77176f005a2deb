//! The synthetic end-to-end experiment behind the `demo` command.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{save_dataset, Dataset, FeatureScaling};
use crate::error::{Error, Result};
use crate::evalsuite::{evaluate, srcc, EvalReport, SessionConfig};
use crate::froracles::{calibrate, level_anchors, score_images, Oracle};
use crate::listrank::train_list;
use crate::pairgen::{chain_dils, generate_dips, save_dils, save_dips, Dil, DilConfig, Dip, DipConfig, DEFAULT_TC};
use crate::pairrank::{split_by_source, train_pairs, TrainConfig, TrainingLog};
use crate::qnet::{predict, save_model, LinearModel, ModelMeta, QNetModel, DEFAULT_HIDDEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub seed: u64,
    pub sources: usize,
    pub side: u32,
    /// Fraction of sources held out from training for evaluation.
    pub test_fraction: f64,
    /// Candidate pairs examined when generating DIPs.
    pub pair_budget: usize,
    pub tc: f64,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Lists sampled for the listwise model; 0 skips it.
    pub list_budget: usize,
    pub sessions: usize,
    pub session_split: f64,
    /// P-test pairs must have a gap strictly above this.
    pub p_test_gap: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            seed: 1,
            sources: 200,
            side: 64,
            test_fraction: 0.2,
            pair_budget: 200_000,
            tc: DEFAULT_TC,
            hidden: DEFAULT_HIDDEN.to_vec(),
            train: TrainConfig::default(),
            list_budget: 50_000,
            sessions: 100,
            session_split: 0.8,
            p_test_gap: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub train_samples: usize,
    pub val_samples: usize,
    pub best_batch: usize,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
}

impl From<&TrainingLog> for TrainingSummary {
    fn from(log: &TrainingLog) -> Self {
        TrainingSummary {
            train_samples: log.train_samples,
            val_samples: log.val_samples,
            best_batch: log.best_batch,
            initial_val_loss: log.initial_val_loss,
            best_val_loss: log.best_val_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub name: String,
    pub objective: String,
    pub layer_dims: Vec<usize>,
    pub training: TrainingSummary,
    /// Criteria on the held-out sources; correlations use calibrated PSNR as the target.
    pub eval: EvalReport,
    pub srcc_vs_psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub config: DemoConfig,
    pub images: usize,
    pub train_sources: usize,
    pub test_sources: usize,
    pub dips: usize,
    pub train_dips: usize,
    pub test_dips: usize,
    pub p_test_dips: usize,
    pub train_dils: usize,
    pub models: Vec<ModelOutcome>,
}

impl DemoReport {
    pub fn model(&self, name: &str) -> Option<&ModelOutcome> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub struct TrainedModel {
    pub name: String,
    pub model: QNetModel<f64>,
    pub meta: ModelMeta,
    pub log: TrainingLog,
    /// Scores for every record of the full dataset.
    pub scores: Vec<f64>,
}

pub struct DemoOutput {
    /// Standardized features; oracle columns calibrated to [0, 100].
    pub dataset: Dataset,
    /// Fitted on the training sources and already applied to `dataset`.
    pub scaling: FeatureScaling,
    pub dips: Vec<Dip>,
    pub dils: Vec<Dil>,
    pub models: Vec<TrainedModel>,
    pub report: DemoReport,
}

fn within(d: &Dip, source_of: &[usize], sources: &BTreeSet<usize>) -> bool {
    sources.contains(&source_of[d.i]) && sources.contains(&source_of[d.j])
}

/// Builds and scores the synthetic set, trains the linear, deep and
/// (optionally) listwise models and evaluates them on held-out sources.
pub fn run_demo(config: &DemoConfig) -> Result<DemoOutput> {
    let seed = config.seed;
    let synth = crate::data::build_synthetic_dataset(config.sources, config.side, seed)?;
    let raw = score_images(&synth.images, synth.records, &[Oracle::Psnr, Oracle::Ssim])?;
    let mut dataset = raw.clone();
    for oracle in [Oracle::Psnr, Oracle::Ssim] {
        dataset = calibrate(&dataset, oracle.name(), &level_anchors(&raw, oracle.name())?)?;
    }

    let source_of = dataset.source_of();
    let split = split_by_source(&source_of, config.test_fraction, seed ^ 0x7E57)?;
    let (train_sources, test_sources) = (split.train, split.validation);
    let train_ids: Vec<usize> = (0..dataset.len()).filter(|&id| train_sources.contains(&source_of[id])).collect();
    let scaling = FeatureScaling::fit(&dataset, &train_ids)?;
    let dataset = scaling.apply(&dataset)?;

    let dips = generate_dips(
        &dataset,
        &DipConfig { tc: config.tc, t_min: 0.0, budget: config.pair_budget, seed },
    )?;
    let train_dips: Vec<Dip> = dips.iter().filter(|d| within(d, &source_of, &train_sources)).cloned().collect();
    let test_dips: Vec<Dip> = dips.iter().filter(|d| within(d, &source_of, &test_sources)).cloned().collect();
    if train_dips.is_empty() || test_dips.is_empty() {
        return Err(Error::Empty("source split left no training or test pairs".into()));
    }
    let dils = if config.list_budget > 0 {
        chain_dils(&train_dips, &DilConfig { budget: config.list_budget, seed, ..DilConfig::default() })?
    } else {
        Vec::new()
    };

    let train_cfg = TrainConfig { seed, ..config.train.clone() };
    let digest = train_cfg.digest();
    let meta = |objective: &str| ModelMeta {
        seed: Some(seed),
        config_digest: Some(digest.clone()),
        objective: Some(objective.into()),
    };
    let features = dataset.feature_matrix::<f64>();
    let dim = dataset.feature_dim();

    let mut models = Vec::new();
    let (linear, log) = train_pairs(&dataset, &train_dips, LinearModel::<f64>::zeros(dim), &train_cfg)?;
    models.push(("linear", QNetModel::from(linear), meta("pairwise"), log));

    let mut dims = vec![dim];
    dims.extend(&config.hidden);
    dims.push(1);
    let init = QNetModel::<f64>::init(&dims, seed)?;
    let (deep, log) = train_pairs(&dataset, &train_dips, init.clone(), &train_cfg)?;
    models.push(("deep", deep, meta("pairwise"), log));
    if !dils.is_empty() {
        let (listwise, log) = train_list(&dataset, &dils, init, &train_cfg)?;
        models.push(("deep_list", listwise, meta("listwise"), log));
    }

    let (test_set, original) = dataset.subset(&test_sources)?;
    let mut new_id = vec![usize::MAX; dataset.len()];
    for (k, &id) in original.iter().enumerate() {
        new_id[id] = k;
    }
    let p_dips: Vec<Dip> = test_dips
        .iter()
        .filter(|d| d.gap > config.p_test_gap)
        .map(|d| Dip { i: new_id[d.i], j: new_id[d.j], ..*d })
        .collect();
    let psnr = test_set.oracle_column(Oracle::Psnr.name())?;
    let targets: Vec<Option<f64>> = psnr.iter().copied().map(Some).collect();
    let session = SessionConfig { sessions: config.sessions, split: config.session_split, seed, remap: true };

    let mut outcomes = Vec::new();
    let mut trained = Vec::new();
    for (name, model, meta, log) in models {
        let scores = predict(&model, &features)?;
        let test_scores: Vec<f64> = original.iter().map(|&id| scores[id]).collect();
        let p = if p_dips.is_empty() { None } else { Some(&p_dips[..]) };
        let eval = evaluate(&test_set, &test_scores, Some(&targets), p, &session)?;
        outcomes.push(ModelOutcome {
            name: name.into(),
            objective: meta.objective.clone().unwrap_or_default(),
            layer_dims: model.layer_dims().to_vec(),
            training: TrainingSummary::from(&log),
            eval,
            srcc_vs_psnr: srcc(&test_scores, &psnr)?,
        });
        trained.push(TrainedModel { name: name.into(), model, meta, log, scores });
    }

    let report = DemoReport {
        config: DemoConfig { train: train_cfg, ..config.clone() },
        images: dataset.len(),
        train_sources: train_sources.len(),
        test_sources: test_sources.len(),
        dips: dips.len(),
        train_dips: train_dips.len(),
        test_dips: test_dips.len(),
        p_test_dips: p_dips.len(),
        train_dils: dils.len(),
        models: outcomes,
    };
    Ok(DemoOutput { dataset, scaling, dips, dils, models: trained, report })
}

/// Writes every artifact of a demo run into `dir`, which must exist.
pub fn write_demo(output: &DemoOutput, dir: &Path) -> Result<()> {
    save_dataset(&output.dataset, &dir.join("features.csv"), &dir.join("scores.csv"), None)?;
    save_dips(&dir.join("dips.csv"), &output.dips)?;
    if !output.dils.is_empty() {
        save_dils(&dir.join("dils.csv"), &output.dils)?;
    }
    let predictions = dir.join("predictions.csv");
    let mut w = crate::data::io_writer(&predictions)?;
    let mut header = vec!["id".to_string()];
    header.extend(output.models.iter().map(|m| m.name.clone()));
    w.write_record(&header)?;
    for id in 0..output.dataset.len() {
        let mut row = vec![id.to_string()];
        row.extend(output.models.iter().map(|m| m.scores[id].to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&predictions, e))?;
    for m in &output.models {
        save_model(&m.model, &m.meta, &dir.join(format!("model_{}.json", m.name)))?;
        m.log.save_csv(&dir.join(format!("log_{}.csv", m.name)))?;
    }
    let scaling = dir.join("scaling.json");
    let json = serde_json::to_string_pretty(&output.scaling)? + "\n";
    std::fs::write(&scaling, json).map_err(|e| Error::io(&scaling, e))?;
    let report = dir.join("report.json");
    std::fs::write(&report, output.report.to_json()?).map_err(|e| Error::io(&report, e))
}
