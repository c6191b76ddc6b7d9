//! A small tanh network mapping `(r, sigma, t_go)` to the optimal command,
//! trained with Adam on standardized inputs and outputs.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "ftnog-command-model";
pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_LAYERS: [usize; 5] = [3, 30, 30, 30, 1];

/// Affine standardization `z = (v - mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: f64,
    pub scale: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        mean: 0.0,
        scale: 1.0,
    };

    fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count().max(1) as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let scale = var.sqrt();
        Self {
            mean,
            scale: if scale > 0.0 && scale.is_finite() { scale } else { 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`, row-major.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

/// Feedforward network with tanh hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandModel {
    pub layers: Vec<Layer>,
    pub input_norm: [Normalization; 3],
    pub output_norm: Normalization,
    /// Horizon `T_bar` of the data the model was fit to.
    pub t_bar: f64,
}

impl CommandModel {
    /// All weights and biases zero, identity normalization.
    pub fn zeros(layer_sizes: &[usize], t_bar: f64) -> Self {
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                weights: Array2::zeros((w[1], w[0])),
                biases: Array1::zeros(w[1]),
            })
            .collect();
        Self {
            layers,
            input_norm: [Normalization::IDENTITY; 3],
            output_norm: Normalization::IDENTITY,
            t_bar,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(layer_sizes: &[usize], t_bar: f64, rng: &mut impl Rng) -> Self {
        let mut model = Self::zeros(layer_sizes, t_bar);
        for layer in &mut model.layers {
            let (out, inp) = layer.weights.dim();
            let limit = (6.0 / (inp + out) as f64).sqrt();
            layer
                .weights
                .mapv_inplace(|_| rng.random_range(-limit..limit));
        }
        model
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weights.ncols()];
        sizes.extend(self.layers.iter().map(|l| l.weights.nrows()));
        sizes
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Weights then biases of each layer, in order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.biases.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *w = flat[k];
                k += 1;
            }
        }
    }

    fn normalize_input(&self, x: [f64; 3]) -> [f64; 3] {
        let n = &self.input_norm;
        [
            (x[0] - n[0].mean) / n[0].scale,
            (x[1] - n[1].mean) / n[1].scale,
            (x[2] - n[2].mean) / n[2].scale,
        ]
    }

    /// Network output in normalized units.
    fn forward_normalized(&self, z: &[f64]) -> f64 {
        let mut act = z.to_vec();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut next: Vec<f64> = l.biases.to_vec();
            for (o, row) in l.weights.rows().into_iter().enumerate() {
                let mut acc = next[o];
                for (w, a) in row.iter().zip(&act) {
                    acc += w * a;
                }
                next[o] = if k == last { acc } else { acc.tanh() };
            }
            act = next;
        }
        act[0]
    }

    /// Predicted command at `(r, sigma, t_go)` in dataset units.
    pub fn forward(&self, r: f64, sigma: f64, t_go: f64) -> Result<f64> {
        if !(r.is_finite() && sigma.is_finite() && t_go.is_finite()) {
            return Err(Error::InvalidState(format!(
                "non-finite network input ({r}, {sigma}, {t_go})"
            )));
        }
        let z = self.normalize_input([r, sigma, t_go]);
        Ok(self.output_norm.mean + self.output_norm.scale * self.forward_normalized(&z))
    }

    /// Mean squared error on normalized outputs and its gradient with respect
    /// to [`CommandModel::params_flat`].
    pub fn loss_and_gradient(&self, samples: &[Sample]) -> (f64, Vec<f64>) {
        let (x, y) = self.normalized_batch(samples);
        let (loss, grads) = batch_gradient(&self.layers, x.view(), &y);
        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in &grads {
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        (loss, flat)
    }

    fn normalized_batch(&self, samples: &[Sample]) -> (Array2<f64>, Array1<f64>) {
        let mut x = Array2::zeros((samples.len(), 3));
        let mut y = Array1::zeros(samples.len());
        for (k, s) in samples.iter().enumerate() {
            let z = self.normalize_input([s.r, s.sigma, s.t_go]);
            x.row_mut(k).assign(&ndarray::arr1(&z));
            y[k] = (s.u - self.output_norm.mean) / self.output_norm.scale;
        }
        (x, y)
    }

    /// Mean squared error on normalized outputs over `samples`.
    pub fn mse(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for chunk in samples.chunks(4096) {
            let (x, y) = self.normalized_batch(chunk);
            let pred = batch_forward(&self.layers, x.view());
            total += (&pred - &y).mapv(|e| e * e).sum();
        }
        total / samples.len() as f64
    }
}

type Grads = Vec<(Array2<f64>, Array1<f64>)>;

fn batch_forward(layers: &[Layer], x: ArrayView2<f64>) -> Array1<f64> {
    let mut act = x.to_owned();
    let last = layers.len() - 1;
    for (k, l) in layers.iter().enumerate() {
        let mut z = act.dot(&l.weights.t()) + &l.biases;
        if k != last {
            z.mapv_inplace(f64::tanh);
        }
        act = z;
    }
    act.column(0).to_owned()
}

fn batch_gradient(layers: &[Layer], x: ArrayView2<f64>, y: &Array1<f64>) -> (f64, Grads) {
    let n = x.nrows() as f64;
    let last = layers.len() - 1;
    let mut acts = vec![x.to_owned()];
    for (k, l) in layers.iter().enumerate() {
        let mut z = acts[k].dot(&l.weights.t()) + &l.biases;
        if k != last {
            z.mapv_inplace(f64::tanh);
        }
        acts.push(z);
    }
    let err = &acts[layers.len()].column(0) - y;
    let loss = err.mapv(|e| e * e).sum() / n;
    let mut delta = (err * (2.0 / n)).insert_axis(Axis(1));
    let mut grads: Grads = Vec::with_capacity(layers.len());
    for k in (0..layers.len()).rev() {
        let gw = delta.t().dot(&acts[k]);
        let gb = delta.sum_axis(Axis(0));
        if k > 0 {
            let mut back = delta.dot(&layers[k].weights);
            back.zip_mut_with(&acts[k], |d, a| *d *= 1.0 - a * a);
            delta = back;
        }
        grads.push((gw, gb));
    }
    grads.reverse();
    (loss, grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub layer_sizes: Vec<usize>,
    /// Stop once the training-set MSE (normalized) falls below this.
    pub target_mse: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiply the learning rate by this after `patience` epochs without a
    /// new best validation MSE.
    pub lr_decay: f64,
    pub patience: usize,
    pub min_learning_rate: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layer_sizes: DEFAULT_LAYERS.to_vec(),
            target_mse: 1e-4,
            max_epochs: 200,
            batch_size: 1024,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            patience: 5,
            min_learning_rate: 1e-6,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.layer_sizes.len() < 2
            || self.layer_sizes[0] != 3
            || *self.layer_sizes.last().unwrap() != 1
            || self.layer_sizes.contains(&0)
        {
            return bad(format!("layer sizes {:?} must run from 3 to 1", self.layer_sizes));
        }
        if !(self.target_mse > 0.0) {
            return bad("target_mse must be positive".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning rate must be positive and decay in (0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub validation_mse: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub reached_target: bool,
    /// Metrics of the returned (best-validation) weights, normalized units.
    pub train_mse: f64,
    pub validation_mse: f64,
    /// The same metrics in dataset units of the command.
    pub train_mse_raw: f64,
    pub validation_mse_raw: f64,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub history: Vec<EpochRecord>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Fit a model to `data`. `t_bar` is recorded in the model for query-time
/// scaling.
pub fn train(data: &[Sample], t_bar: f64, config: &TrainConfig) -> Result<(CommandModel, TrainReport)> {
    config.validate()?;
    if data.len() < 2 {
        return Err(Error::InvalidConfig("training needs at least two samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((data.len() as f64 * config.validation_fraction).round() as usize)
        .clamp(1, data.len() - 1);
    let val: Vec<Sample> = order[..n_val].iter().map(|&k| data[k]).collect();
    let trn: Vec<Sample> = order[n_val..].iter().map(|&k| data[k]).collect();

    let mut model = CommandModel::glorot(&config.layer_sizes, t_bar, &mut rng);
    model.input_norm = [
        Normalization::fit(trn.iter().map(|s| s.r)),
        Normalization::fit(trn.iter().map(|s| s.sigma)),
        Normalization::fit(trn.iter().map(|s| s.t_go)),
    ];
    model.output_norm = Normalization::fit(trn.iter().map(|s| s.u));
    let (x_all, y_all) = model.normalized_batch(&trn);

    let mut params = model.params_flat();
    let mut adam = Adam {
        m: vec![0.0; params.len()],
        v: vec![0.0; params.len()],
        t: 0,
    };
    let mut lr = config.learning_rate;
    let mut best = (f64::INFINITY, params.clone(), f64::INFINITY);
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut idx: Vec<usize> = (0..trn.len()).collect();
    let mut reached_target = false;
    let mut xb = Array2::zeros((config.batch_size, 3));
    let mut yb = Array1::zeros(config.batch_size);

    for epoch in 1..=config.max_epochs {
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(config.batch_size) {
            let n = chunk.len();
            for (row, &k) in chunk.iter().enumerate() {
                xb.row_mut(row).assign(&x_all.row(k));
                yb[row] = y_all[k];
            }
            let (loss, grads) =
                batch_gradient(&model.layers, xb.slice(s![..n, ..]), &yb.slice(s![..n]).to_owned());
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            let flat: Vec<f64> = grads
                .iter()
                .flat_map(|(gw, gb)| gw.iter().chain(gb.iter()).copied())
                .collect();
            adam.step(&mut params, &flat, lr);
            model.set_params_flat(&params);
        }
        let train_mse = model.mse(&trn);
        let validation_mse = model.mse(&val);
        if !(train_mse.is_finite() && validation_mse.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_mse,
            validation_mse,
            learning_rate: lr,
        });
        if validation_mse < best.0 {
            best = (validation_mse, params.clone(), train_mse);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                lr = (lr * config.lr_decay).max(config.min_learning_rate);
                since_best = 0;
            }
        }
        if train_mse < config.target_mse {
            reached_target = true;
            break;
        }
    }

    model.set_params_flat(&best.1);
    let s2 = model.output_norm.scale * model.output_norm.scale;
    let report = TrainReport {
        epochs: history.len(),
        reached_target,
        train_mse: best.2,
        validation_mse: best.0,
        train_mse_raw: best.2 * s2,
        validation_mse_raw: best.0 * s2,
        train_rows: trn.len(),
        validation_rows: val.len(),
        history,
    };
    Ok((model, report))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    #[allow(dead_code)]
    version: u32,
    layer_sizes: Vec<usize>,
    activations: Vec<String>,
    t_bar: f64,
    input_normalization: [Normalization; 3],
    output_normalization: Normalization,
    layers: Vec<LayerFile>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_array(vals: impl Iterator<Item = f64>) -> String {
    let items: Vec<String> = vals.map(fmt_f64).collect();
    format!("[{}]", items.join(", "))
}

fn fmt_norm(n: &Normalization) -> String {
    format!(
        "{{\"mean\": {}, \"scale\": {}}}",
        fmt_f64(n.mean),
        fmt_f64(n.scale)
    )
}

/// Serialize to the versioned JSON model document.
pub fn model_to_string(model: &CommandModel) -> String {
    let sizes = model.layer_sizes();
    let acts: Vec<String> = (0..model.layers.len())
        .map(|k| {
            if k + 1 == model.layers.len() {
                "\"identity\"".to_string()
            } else {
                "\"tanh\"".to_string()
            }
        })
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "{{");
    let _ = writeln!(out, "  \"format\": \"{MODEL_FORMAT}\",");
    let _ = writeln!(out, "  \"version\": {MODEL_VERSION},");
    let _ = writeln!(out, "  \"layer_sizes\": {sizes:?},");
    let _ = writeln!(out, "  \"activations\": [{}],", acts.join(", "));
    let _ = writeln!(out, "  \"t_bar\": {},", fmt_f64(model.t_bar));
    let norms: Vec<String> = model.input_norm.iter().map(fmt_norm).collect();
    let _ = writeln!(out, "  \"input_normalization\": [{}],", norms.join(", "));
    let _ = writeln!(out, "  \"output_normalization\": {},", fmt_norm(&model.output_norm));
    let _ = writeln!(out, "  \"layers\": [");
    for (k, l) in model.layers.iter().enumerate() {
        let sep = if k + 1 == model.layers.len() { "" } else { "," };
        let _ = writeln!(out, "    {{");
        let _ = writeln!(out, "      \"weights\": {},", fmt_array(l.weights.iter().copied()));
        let _ = writeln!(out, "      \"biases\": {}", fmt_array(l.biases.iter().copied()));
        let _ = writeln!(out, "    }}{sep}");
    }
    let _ = writeln!(out, "  ]");
    let _ = writeln!(out, "}}");
    out
}

pub fn model_from_str(text: &str) -> Result<CommandModel> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("version") {
        Some(v) if v.as_u64() == Some(MODEL_VERSION as u64) => {}
        Some(v) => return Err(Error::UnsupportedModelVersion(v.to_string())),
        None => return Err(Error::InvalidModel("missing version".into())),
    }
    let file: ModelFile = serde_json::from_value(value)?;
    let invalid = |m: String| Err(Error::InvalidModel(m));
    if file.format != MODEL_FORMAT {
        return invalid(format!("unknown format {:?}", file.format));
    }
    let sizes = &file.layer_sizes;
    if sizes.len() < 2 || sizes[0] != 3 || sizes[sizes.len() - 1] != 1 || sizes.contains(&0) {
        return invalid(format!("layer sizes {sizes:?} must run from 3 to 1"));
    }
    if file.layers.len() != sizes.len() - 1 {
        return invalid(format!(
            "{} layers listed for layer sizes {sizes:?}",
            file.layers.len()
        ));
    }
    if file.activations.len() != file.layers.len() {
        return invalid("one activation per layer required".into());
    }
    for (k, act) in file.activations.iter().enumerate() {
        let want = if k + 1 == file.layers.len() { "identity" } else { "tanh" };
        if act != want {
            return invalid(format!("layer {k}: activation {act:?}, expected {want:?}"));
        }
    }
    let norms = file.input_normalization.iter().chain([&file.output_normalization]);
    for n in norms {
        if !(n.scale > 0.0 && n.scale.is_finite() && n.mean.is_finite()) {
            return invalid(format!("bad normalization {n:?}"));
        }
    }
    if !(file.t_bar > 0.0 && file.t_bar.is_finite()) {
        return invalid(format!("t_bar = {} must be positive", file.t_bar));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (k, l) in file.layers.into_iter().enumerate() {
        let (inp, out) = (sizes[k], sizes[k + 1]);
        if l.weights.len() != inp * out {
            return invalid(format!(
                "layer {k}: {} weights, expected {out}x{inp} = {}",
                l.weights.len(),
                inp * out
            ));
        }
        if l.biases.len() != out {
            return invalid(format!("layer {k}: {} biases, expected {out}", l.biases.len()));
        }
        if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
            return invalid(format!("layer {k}: non-finite parameter"));
        }
        layers.push(Layer {
            weights: Array2::from_shape_vec((out, inp), l.weights)
                .expect("length checked above"),
            biases: Array1::from(l.biases),
        });
    }
    Ok(CommandModel {
        layers,
        input_norm: file.input_normalization,
        output_norm: file.output_normalization,
        t_bar: file.t_bar,
    })
}

pub fn save_model(model: &CommandModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<CommandModel> {
    model_from_str(&std::fs::read_to_string(path)?)
}
