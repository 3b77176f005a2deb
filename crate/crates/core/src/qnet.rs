//! The quality function: a fully connected ReLU network with a scalar output,
//! plus the bias-free linear special case.
//!
//! Pairwise and listwise training evaluate one parameter set on every stream,
//! so weight sharing between streams needs no bookkeeping here.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::data::FeatureMatrix;
use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

/// Hidden layer widths of the default deep architecture.
pub const DEFAULT_HIDDEN: [usize; 3] = [256, 128, 3];

/// A scalar-valued model that is differentiable in its parameters.
pub trait QualityModel<T: Scalar>: Clone + Send + Sync {
    fn input_dim(&self) -> usize;
    fn params(&self) -> &[T];
    fn params_mut(&mut self) -> &mut [T];
    fn forward(&self, x: &[T]) -> Result<T>;
    /// Adds `upstream * df(x)/dtheta` into `grad`.
    fn accumulate_gradient(&self, x: &[T], upstream: T, grad: &mut [T]) -> Result<()>;

    /// Whatever a forward pass must keep for a later backward pass.
    type Trace: Send + Sync;

    fn forward_traced(&self, x: &[T]) -> Result<(T, Self::Trace)>;
    /// Same as [`QualityModel::accumulate_gradient`] for the input that produced `trace`.
    fn accumulate_traced(&self, trace: &Self::Trace, upstream: T, grad: &mut [T]);

    fn param_count(&self) -> usize {
        self.params().len()
    }
}

/// Fully connected network: ReLU on hidden layers, identity on the output.
///
/// Parameters are stored flat, layer by layer, each layer as its row-major
/// `out x in` weight matrix followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetModel<T> {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<T>,
}

/// Parameter and input gradients of `upstream * f(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Backward<T> {
    pub params: Vec<T>,
    pub input: Vec<T>,
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::invalid("a network needs at least an input and an output layer"));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(Error::invalid(format!("layer {pos} has zero width")));
    }
    if *dims.last().unwrap() != 1 {
        return Err(Error::invalid("output layer must have width 1"));
    }
    Ok(())
}

fn layer_offsets(dims: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(dims.len());
    let mut at = 0;
    for w in dims.windows(2) {
        offsets.push(at);
        at += w[0] * w[1] + w[1];
    }
    offsets.push(at);
    offsets
}

impl<T: Scalar> QNetModel<T> {
    /// Uniform fan-based initialization with half-width `sqrt(6 / (fan_in + fan_out))`
    /// and zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        validate_dims(dims)?;
        let offsets = layer_offsets(dims);
        let mut params = vec![T::zero(); *offsets.last().unwrap()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[offsets[l]..offsets[l] + fan_in * fan_out] {
                *p = T::of(rng.random_range(-limit..limit));
            }
        }
        Ok(QNetModel { dims: dims.to_vec(), offsets, params })
    }

    /// Builds a model from explicit per-layer weights (row-major) and biases.
    pub fn from_layers(dims: &[usize], weights: &[Vec<T>], biases: &[Vec<T>]) -> Result<Self> {
        validate_dims(dims)?;
        let layers = dims.len() - 1;
        check_dim(layers, weights.len())?;
        check_dim(layers, biases.len())?;
        let offsets = layer_offsets(dims);
        let mut params = Vec::with_capacity(*offsets.last().unwrap());
        for (l, w) in dims.windows(2).enumerate() {
            check_dim(w[0] * w[1], weights[l].len())?;
            check_dim(w[1], biases[l].len())?;
            params.extend_from_slice(&weights[l]);
            params.extend_from_slice(&biases[l]);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(QNetModel { dims: dims.to_vec(), offsets, params })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn layer_weights(&self, l: usize) -> &[T] {
        let n = self.dims[l] * self.dims[l + 1];
        &self.params[self.offsets[l]..self.offsets[l] + n]
    }

    pub fn layer_biases(&self, l: usize) -> &[T] {
        let n = self.dims[l] * self.dims[l + 1];
        &self.params[self.offsets[l] + n..self.offsets[l + 1]]
    }

    /// Post-activation outputs of every layer, input included.
    fn activations(&self, x: &[T]) -> Result<Vec<Vec<T>>> {
        check_dim(self.dims[0], x.len())?;
        let last = self.layer_count() - 1;
        let mut acts = Vec::with_capacity(self.dims.len());
        acts.push(x.to_vec());
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = self.layer_weights(l);
            let b = self.layer_biases(l);
            let input = &acts[l];
            let out: Vec<T> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let z = row.iter().zip(input).fold(b[o], |acc, (&wi, &xi)| acc + wi * xi);
                    if l < last {
                        z.max(T::zero())
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(out);
        }
        Ok(acts)
    }

    fn backprop(&self, acts: &[Vec<T>], upstream: T, grad: &mut [T]) -> Vec<T> {
        let mut delta = vec![upstream];
        for l in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = self.layer_weights(l);
            let input = &acts[l];
            let (gw, gb) = grad[self.offsets[l]..self.offsets[l + 1]].split_at_mut(n_in * n_out);
            let mut below = vec![T::zero(); n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == T::zero() {
                    continue;
                }
                gb[o] = gb[o] + d;
                let row = &w[o * n_in..(o + 1) * n_in];
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] = grow[i] + d * input[i];
                    below[i] = below[i] + d * row[i];
                }
            }
            if l > 0 {
                // ReLU: the subgradient at exactly zero is taken as zero
                for (b, &a) in below.iter_mut().zip(input) {
                    if a <= T::zero() {
                        *b = T::zero();
                    }
                }
            }
            delta = below;
        }
        delta
    }

    /// Gradients of `upstream * f(x)` with respect to every parameter and to `x`.
    pub fn backward(&self, x: &[T], upstream: T) -> Result<Backward<T>> {
        let acts = self.activations(x)?;
        let mut params = vec![T::zero(); self.params.len()];
        let input = self.backprop(&acts, upstream, &mut params);
        Ok(Backward { params, input })
    }
}

impl<T: Scalar> QualityModel<T> for QNetModel<T> {
    fn input_dim(&self) -> usize {
        self.dims[0]
    }

    fn params(&self) -> &[T] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn forward(&self, x: &[T]) -> Result<T> {
        Ok(self.activations(x)?.pop().expect("output layer")[0])
    }

    fn accumulate_gradient(&self, x: &[T], upstream: T, grad: &mut [T]) -> Result<()> {
        check_dim(self.params.len(), grad.len())?;
        let acts = self.activations(x)?;
        self.backprop(&acts, upstream, grad);
        Ok(())
    }

    type Trace = Vec<Vec<T>>;

    fn forward_traced(&self, x: &[T]) -> Result<(T, Self::Trace)> {
        let acts = self.activations(x)?;
        Ok((acts[acts.len() - 1][0], acts))
    }

    fn accumulate_traced(&self, trace: &Self::Trace, upstream: T, grad: &mut [T]) {
        self.backprop(trace, upstream, grad);
    }
}

/// Scores every row of `features`, in row order.
pub fn predict<T: Scalar, M: QualityModel<T>>(model: &M, features: &FeatureMatrix<T>) -> Result<Vec<T>> {
    check_dim(model.input_dim(), features.dim())?;
    (0..features.rows()).into_par_iter().map(|id| model.forward(features.row(id)?)).collect()
}

/// `f(x) = w . x`. Pair losses only see score differences, so a bias would
/// cancel and is omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    pub weights: Vec<T>,
}

impl<T: Scalar> LinearModel<T> {
    pub fn new(weights: Vec<T>) -> Self {
        LinearModel { weights }
    }

    pub fn zeros(dim: usize) -> Self {
        LinearModel { weights: vec![T::zero(); dim] }
    }
}

impl<T: Scalar> QualityModel<T> for LinearModel<T> {
    fn input_dim(&self) -> usize {
        self.weights.len()
    }

    fn params(&self) -> &[T] {
        &self.weights
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    fn forward(&self, x: &[T]) -> Result<T> {
        check_dim(self.weights.len(), x.len())?;
        Ok(self.weights.iter().zip(x).fold(T::zero(), |acc, (&w, &v)| acc + w * v))
    }

    fn accumulate_gradient(&self, x: &[T], upstream: T, grad: &mut [T]) -> Result<()> {
        check_dim(self.weights.len(), x.len())?;
        check_dim(self.weights.len(), grad.len())?;
        for (g, &v) in grad.iter_mut().zip(x) {
            *g = *g + upstream * v;
        }
        Ok(())
    }

    type Trace = Vec<T>;

    fn forward_traced(&self, x: &[T]) -> Result<(T, Self::Trace)> {
        Ok((self.forward(x)?, x.to_vec()))
    }

    fn accumulate_traced(&self, trace: &Self::Trace, upstream: T, grad: &mut [T]) {
        for (g, &v) in grad.iter_mut().zip(trace) {
            *g = *g + upstream * v;
        }
    }
}

impl<T: Scalar> From<LinearModel<T>> for QNetModel<T> {
    fn from(m: LinearModel<T>) -> Self {
        let d = m.weights.len();
        QNetModel::from_layers(&[d, 1], &[m.weights], &[vec![T::zero()]]).expect("linear layout is valid")
    }
}

/// Provenance stored next to the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub config_digest: Option<String>,
    #[serde(default)]
    pub objective: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    #[serde(default)]
    meta: ModelMeta,
}

/// JSON text of a model; `f64` and `f32` parameters round-trip exactly.
pub fn model_to_json<T: Scalar>(model: &QNetModel<T>, meta: &ModelMeta) -> Result<String> {
    let widen = |v: &[T]| v.iter().map(|p| p.to_f64_lossy()).collect();
    let file = ModelFile {
        layer_dims: model.dims.clone(),
        weights: (0..model.layer_count()).map(|l| widen(model.layer_weights(l))).collect(),
        biases: (0..model.layer_count()).map(|l| widen(model.layer_biases(l))).collect(),
        meta: meta.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn save_model<T: Scalar>(model: &QNetModel<T>, meta: &ModelMeta, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_json(model, meta)? + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model_with_meta<T: Scalar>(path: &Path) -> Result<(QNetModel<T>, ModelMeta)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
    let narrow = |v: &Vec<Vec<f64>>| -> Vec<Vec<T>> { v.iter().map(|l| l.iter().map(|&p| T::of(p)).collect()).collect() };
    let model = QNetModel::from_layers(&file.layer_dims, &narrow(&file.weights), &narrow(&file.biases))
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    Ok((model, file.meta))
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<QNetModel<T>> {
    load_model_with_meta(path).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn default_architecture_parameter_count() {
        let m = QNetModel::<f64>::init(&[16, 256, 128, 3, 1], 0).unwrap();
        // 16*256+256 + 256*128+128 + 128*3+3 + 3*1+1
        assert_eq!(m.param_count(), 37_639);
        assert_eq!(QNetModel::<f64>::init(&[5, 1], 0).unwrap().param_count(), 6);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = QNetModel::<f64>::init(&[8, 4, 1], 3).unwrap();
        let b = QNetModel::<f64>::init(&[8, 4, 1], 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, QNetModel::<f64>::init(&[8, 4, 1], 4).unwrap());
        let limit = (6.0f64 / 12.0).sqrt();
        assert!(a.layer_weights(0).iter().all(|w| w.abs() <= limit));
        assert!(a.layer_biases(0).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn invalid_dims() {
        assert!(QNetModel::<f64>::init(&[4], 0).is_err());
        assert!(QNetModel::<f64>::init(&[4, 0, 1], 0).is_err());
        assert!(QNetModel::<f64>::init(&[4, 2], 0).is_err());
    }

    #[test]
    fn forward_basics() {
        let zero = QNetModel::<f64>::from_layers(&[2, 3, 1], &[vec![0.0; 6], vec![0.0; 3]], &[vec![0.0; 3], vec![0.0]]).unwrap();
        assert_eq!(zero.forward(&[4.0, -9.0]).unwrap(), 0.0);
        let lin = LinearModel::new(vec![1.0, 2.0]);
        assert_eq!(lin.forward(&[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(QNetModel::from(lin.clone()).forward(&[3.0, 4.0]).unwrap(), 11.0);
        assert!(lin.forward(&[1.0]).is_err());
        let m = QNetModel::<f64>::init(&[3, 5, 1], 1).unwrap();
        assert_eq!(m.forward(&[0.1, 0.2, 0.3]).unwrap(), m.forward(&[0.1, 0.2, 0.3]).unwrap());
        assert!(matches!(m.forward(&[0.1]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn linear_gradient_is_the_input() {
        let lin = LinearModel::new(vec![0.5, -1.0, 2.0]);
        let mut g = vec![0.0; 3];
        lin.accumulate_gradient(&[1.0, 2.0, 3.0], 1.0, &mut g).unwrap();
        assert_eq!(g, vec![1.0, 2.0, 3.0]);
        let net = QNetModel::from(lin);
        let b = net.backward(&[1.0, 2.0, 3.0], 1.0).unwrap();
        assert_eq!(&b.params[..3], &[1.0, 2.0, 3.0]);
        assert_eq!(b.input, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let m = QNetModel::<f64>::init(&[4, 6, 3, 1], 2).unwrap();
        let b = m.backward(&[0.3, -0.1, 0.9, 0.4], 0.0).unwrap();
        assert!(b.params.iter().chain(&b.input).all(|&g| g == 0.0));
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-5;
        for trial in 0..20 {
            let dims = if trial % 2 == 0 { vec![6, 8, 5, 1] } else { vec![4, 7, 3, 1] };
            let mut m = QNetModel::<f64>::init(&dims, trial).unwrap();
            // nonzero biases so that more units are active
            for p in m.params_mut().iter_mut() {
                *p += rng.random_range(-0.1..0.1);
            }
            let x = random_input(&mut rng, dims[0]);
            let upstream = rng.random_range(-2.0..2.0);
            let analytic = m.backward(&x, upstream).unwrap();
            for k in 0..m.param_count() {
                let mut plus = m.clone();
                plus.params_mut()[k] += h;
                let mut minus = m.clone();
                minus.params_mut()[k] -= h;
                let numeric = upstream * (plus.forward(&x).unwrap() - minus.forward(&x).unwrap()) / (2.0 * h);
                let err = (numeric - analytic.params[k]).abs() / numeric.abs().max(analytic.params[k].abs()).max(1e-8);
                assert!(err < 1e-4 || (numeric - analytic.params[k]).abs() < 1e-9, "trial {trial} param {k}: {numeric} vs {}", analytic.params[k]);
            }
            for k in 0..x.len() {
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let numeric = upstream * (m.forward(&xp).unwrap() - m.forward(&xm).unwrap()) / (2.0 * h);
                assert!((numeric - analytic.input[k]).abs() < 1e-6, "input {k}");
            }
        }
    }

    #[test]
    fn scaling_last_layer_scales_output() {
        let m = QNetModel::<f64>::init(&[3, 4, 2, 1], 9).unwrap();
        let x = [0.7, -0.2, 0.5];
        let c = 2.5;
        let mut scaled = m.clone();
        let last = scaled.layer_count() - 1;
        let start = scaled.offsets[last];
        let end = scaled.offsets[last + 1];
        for p in &mut scaled.params_mut()[start..end] {
            *p *= c;
        }
        assert!((scaled.forward(&x).unwrap() - c * m.forward(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let m = QNetModel::<f32>::init(&[3, 4, 1], 1).unwrap();
        let b = m.backward(&[0.1, 0.2, 0.3], 1.0).unwrap();
        assert_eq!(b.params.len(), m.param_count());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = QNetModel::<f64>::init(&[5, 7, 3, 1], 11).unwrap();
        let meta = ModelMeta { seed: Some(11), config_digest: Some("abc".into()), objective: Some("pairwise".into()) };
        save_model(&m, &meta, &path).unwrap();
        let (back, back_meta) = load_model_with_meta::<f64>(&path).unwrap();
        assert_eq!(back_meta, meta);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let x = random_input(&mut rng, 5);
            assert_eq!(m.forward(&x).unwrap().to_bits(), back.forward(&x).unwrap().to_bits());
        }

        let m32 = QNetModel::<f32>::init(&[3, 2, 1], 5).unwrap();
        save_model(&m32, &ModelMeta::default(), &path).unwrap();
        assert_eq!(load_model::<f32>(&path).unwrap(), m32);
    }

    #[test]
    fn load_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = QNetModel::<f64>::init(&[2, 2, 1], 0).unwrap();
        let text = model_to_json(&m, &ModelMeta::default()).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_model::<f64>(&path), Err(Error::Malformed { .. })));
        let mismatched = text.replacen("\"layer_dims\": [\n    2,", "\"layer_dims\": [\n    3,", 1);
        assert_ne!(mismatched, text);
        std::fs::write(&path, mismatched).unwrap();
        assert!(matches!(load_model::<f64>(&path), Err(Error::Malformed { .. })));
    }
}
