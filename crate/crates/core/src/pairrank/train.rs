use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::batch::{batch_loss, batch_loss_and_gradient, RankSample};
use crate::data::{Dataset, FeatureMatrix};
use crate::error::{check_dim, Error, Result};
use crate::pairgen::Dip;
use crate::qnet::QualityModel;
use crate::scalar::Scalar;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of sources held out for validation.
    pub validation_fraction: f64,
    pub shuffle: bool,
    /// Validation loss is evaluated every this many batches and at the end of each epoch.
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            momentum: 0.9,
            weight_decay: 5e-4,
            learning_rate: 1e-4,
            epochs: 1,
            seed: 0,
            validation_fraction: 0.1,
            shuffle: true,
            eval_interval: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be nonnegative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation fraction must be in (0, 1)"));
        }
        if self.eval_interval == 0 {
            return Err(Error::invalid("evaluation interval must be positive"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the JSON form, recorded in model files.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One classical momentum step with L2 weight decay on every parameter:
/// `v <- mu v - lr (g + wd theta)`, `theta <- theta + v`.
pub fn sgd_step<T: Scalar>(params: &mut [T], grad: &[T], velocity: &mut [T], config: &TrainConfig) -> Result<()> {
    check_dim(params.len(), grad.len())?;
    check_dim(params.len(), velocity.len())?;
    let (mu, lr, wd) = (T::of(config.momentum), T::of(config.learning_rate), T::of(config.weight_decay));
    for ((p, &g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mu * *v - lr * (g + wd * *p);
        *p = *p + *v;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub batch_index: usize,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
    /// Batch index of the returned snapshot (0 is the initial model).
    pub best_batch: usize,
    pub best_val_loss: f64,
    pub initial_val_loss: f64,
    /// Training samples consumed, counting repeats across epochs.
    pub consumed: usize,
    pub train_samples: usize,
    pub val_samples: usize,
}

impl TrainingLog {
    /// Writes `batch_index,train_loss,val_loss`; missing values are empty.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::data::io_writer(path)?;
        w.write_record(["batch_index", "train_loss", "val_loss"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.entries {
            w.write_record([e.batch_index.to_string(), opt(e.train_loss), opt(e.val_loss)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Partition of sources into training and validation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSplit {
    pub train: BTreeSet<usize>,
    pub validation: BTreeSet<usize>,
}

/// Holds out `round(fraction * S)` sources (at least one, at most S - 1).
pub fn split_by_source(source_of: &[usize], fraction: f64, seed: u64) -> Result<SourceSplit> {
    let mut sources: Vec<usize> = source_of.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if sources.len() < 2 {
        return Err(Error::invalid(format!("need at least two sources to split, found {}", sources.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    sources.shuffle(&mut rng);
    let held = ((fraction * sources.len() as f64).round() as usize).clamp(1, sources.len() - 1);
    Ok(SourceSplit {
        validation: sources[..held].iter().copied().collect(),
        train: sources[held..].iter().copied().collect(),
    })
}

/// Mini-batch training with validation-based snapshot selection.
///
/// Samples whose images all come from validation sources form the validation
/// set; samples straddling the split are dropped. Returns the parameters with
/// the lowest validation loss seen, the initial ones included.
pub fn train<T, M, S>(
    init: M,
    features: &FeatureMatrix<T>,
    source_of: &[usize],
    samples: &[S],
    config: &TrainConfig,
) -> Result<(M, TrainingLog)>
where
    T: Scalar,
    M: QualityModel<T>,
    S: RankSample + Clone,
{
    config.validate()?;
    check_dim(features.dim(), init.input_dim())?;
    check_dim(features.rows(), source_of.len())?;
    let split = split_by_source(source_of, config.validation_fraction, config.seed)?;
    let side = |s: &S| -> Result<Option<bool>> {
        let mut in_val = None;
        for id in s.members() {
            let src = *source_of.get(id).ok_or(Error::UnknownId(id))?;
            let v = split.validation.contains(&src);
            match in_val {
                None => in_val = Some(v),
                Some(prev) if prev != v => return Ok(None),
                _ => {}
            }
        }
        Ok(in_val)
    };
    let (mut train_set, mut val_set) = (Vec::new(), Vec::new());
    for s in samples {
        match side(s)? {
            Some(false) => train_set.push(s.clone()),
            Some(true) => val_set.push(s.clone()),
            None => {}
        }
    }
    if train_set.is_empty() {
        return Err(Error::Empty("no training samples after the source split".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("no validation samples after the source split".into()));
    }

    let mut model = init;
    let mut velocity = vec![T::zero(); model.param_count()];
    let initial_val = batch_loss(&model, &val_set, features)?;
    let mut best = (model.clone(), 0usize, initial_val);
    let mut entries = vec![LogEntry { batch_index: 0, train_loss: None, val_loss: Some(initial_val.to_f64_lossy()) }];

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch_index = 0;
    let mut consumed = 0;
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let batches = order.len().div_ceil(config.batch_size);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| train_set[k].clone()));
            let (loss, grad) = batch_loss_and_gradient(&model, &batch, features)?;
            sgd_step(model.params_mut(), &grad, &mut velocity, config)?;
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Degenerate(format!("parameters diverged at batch {}", batch_index + 1)));
            }
            batch_index += 1;
            consumed += chunk.len();

            let mut entry = LogEntry { batch_index, train_loss: Some(loss.to_f64_lossy()), val_loss: None };
            if batch_index % config.eval_interval == 0 || b + 1 == batches {
                let val = batch_loss(&model, &val_set, features)?;
                entry.val_loss = Some(val.to_f64_lossy());
                if val < best.2 {
                    best = (model.clone(), batch_index, val);
                }
            }
            entries.push(entry);
        }
    }

    let (model, best_batch, best_val) = best;
    Ok((
        model,
        TrainingLog {
            entries,
            best_batch,
            best_val_loss: best_val.to_f64_lossy(),
            initial_val_loss: initial_val.to_f64_lossy(),
            consumed,
            train_samples: train_set.len(),
            val_samples: val_set.len(),
        },
    ))
}

/// [`train`] on pairs, taking features and sources from the dataset.
pub fn train_pairs<T: Scalar, M: QualityModel<T>>(
    dataset: &Dataset,
    dips: &[Dip],
    init: M,
    config: &TrainConfig,
) -> Result<(M, TrainingLog)> {
    train(init, &dataset.feature_matrix(), &dataset.source_of(), dips, config)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::qnet::{LinearModel, QNetModel};

    #[test]
    fn defaults_match_the_reference_setup() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 512);
        assert_eq!(c.momentum, 0.9);
        assert_eq!(c.weight_decay, 5e-4);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.epochs, 1);
        assert!(c.shuffle);
        assert_eq!(c.digest().len(), 64);
    }

    #[test]
    fn sgd_step_cases() {
        let cfg = TrainConfig { momentum: 0.9, weight_decay: 0.0, learning_rate: 0.1, ..TrainConfig::default() };
        let mut p = vec![1.0f64, -2.0];
        let mut v = vec![0.0; 2];
        sgd_step(&mut p, &[0.0, 0.0], &mut v, &cfg).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);

        let plain = TrainConfig { momentum: 0.0, ..cfg.clone() };
        sgd_step(&mut p, &[1.0, 2.0], &mut v, &plain).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15 && (p[1] + 2.2).abs() < 1e-15);

        // constant gradient: the second displacement is 1 + mu times the first
        let mut p = vec![0.0f64];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[1.0], &mut v, &cfg).unwrap();
        let first = p[0];
        sgd_step(&mut p, &[1.0], &mut v, &cfg).unwrap();
        assert!(((p[0] - first) - 1.9 * first).abs() < 1e-15);

        let decayed = TrainConfig { momentum: 0.0, weight_decay: 0.5, learning_rate: 0.1, ..cfg };
        let mut p = vec![2.0f64];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[0.0], &mut v, &decayed).unwrap();
        assert!((p[0] - 1.9).abs() < 1e-15);
        assert!(sgd_step(&mut p, &[0.0, 1.0], &mut v, &decayed).is_err());
    }

    #[test]
    fn split_keeps_both_sides_nonempty() {
        let sources: Vec<usize> = (0..10).flat_map(|s| std::iter::repeat(s * 3).take(3)).collect();
        let split = split_by_source(&sources, 0.1, 4).unwrap();
        assert_eq!(split.validation.len(), 1);
        assert_eq!(split.train.len(), 9);
        assert!(split.validation.is_disjoint(&split.train));
        assert_eq!(split, split_by_source(&sources, 0.1, 4).unwrap());
        assert!(split_by_source(&[0, 0, 0], 0.5, 0).is_err());
    }

    fn toy_problem(seed: u64) -> (FeatureMatrix<f64>, Vec<usize>, Vec<Dip>) {
        // 40 sources x 5 images, quality is a fixed linear function of the features
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = [1.0, -0.5, 0.25, 0.0];
        let mut rows = Vec::new();
        let mut src = Vec::new();
        for s in 0..40 {
            for _ in 0..5 {
                rows.push((0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
                src.push(s * 5);
            }
        }
        let q: Vec<f64> = rows.iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
        let mut dips = Vec::new();
        for _ in 0..3000 {
            let a = rng.random_range(0..rows.len());
            let b = rng.random_range(0..rows.len());
            if a != b && q[a] != q[b] {
                let (i, j) = if q[a] > q[b] { (a, b) } else { (b, a) };
                dips.push(Dip { i, j, gap: (q[a] - q[b]).abs(), uncertainty: 0.0, label: 1.0 });
            }
        }
        (FeatureMatrix::from_rows(&rows).unwrap(), src, dips)
    }

    #[test]
    fn linear_training_lowers_validation_loss() {
        let (feats, src, dips) = toy_problem(1);
        let cfg = TrainConfig { batch_size: 32, learning_rate: 1e-2, seed: 3, validation_fraction: 0.2, ..TrainConfig::default() };
        let (model, log) = train(LinearModel::zeros(4), &feats, &src, &dips, &cfg).unwrap();
        assert!(log.best_val_loss < log.initial_val_loss);
        assert!(model.weights[0] > 0.0 && model.weights[1] < 0.0);
    }

    #[test]
    fn one_epoch_consumes_every_training_pair_once() {
        let (feats, src, dips) = toy_problem(2);
        let cfg = TrainConfig { batch_size: 100, seed: 5, ..TrainConfig::default() };
        let (_, log) = train(LinearModel::zeros(4), &feats, &src, &dips, &cfg).unwrap();
        assert_eq!(log.consumed, log.train_samples);
        let batches = log.train_samples.div_ceil(100);
        assert_eq!(log.entries.len(), batches + 1);
        let cfg3 = TrainConfig { epochs: 3, ..cfg };
        let (_, log3) = train(LinearModel::zeros(4), &feats, &src, &dips, &cfg3).unwrap();
        assert_eq!(log3.consumed, 3 * log3.train_samples);
    }

    #[test]
    fn training_is_deterministic() {
        let (feats, src, dips) = toy_problem(3);
        let cfg = TrainConfig { batch_size: 64, learning_rate: 1e-3, seed: 9, ..TrainConfig::default() };
        let init = QNetModel::<f64>::init(&[4, 8, 3, 1], 1).unwrap();
        let a = train(init.clone(), &feats, &src, &dips, &cfg).unwrap();
        let b = train(init, &feats, &src, &dips, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_sides_are_errors() {
        let (feats, src, _) = toy_problem(4);
        // a single pair lands on one side only
        let dips = vec![Dip { i: 0, j: 1, gap: 1.0, uncertainty: 0.0, label: 1.0 }];
        let err = train(LinearModel::zeros(4), &feats, &src, &dips, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
    }
}
