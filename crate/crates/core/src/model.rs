//! Fully connected leaky-ReLU network with hand-written backpropagation and
//! an Adam trainer.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eval::roc_auc;
use crate::losses::{LossError, LossKind, Objective};

const MAGIC: &[u8; 4] = b"SPML";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("feature matrix has {got} columns, model expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("bad model file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{kind} training hit a non-finite {what} at step {step}")]
    NonFinite {
        kind: LossKind,
        what: &'static str,
        step: u64,
        /// Evaluations recorded before the abort.
        partial: TrainReport,
    },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("evaluation failed: {0}")]
    Eval(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub negative_slope: f64,
    pub seed: u64,
    pub l2_coefficient: f64,
}

impl MlpConfig {
    /// Small-sample architecture: 64, 32, 16 hidden units, slope 0.05.
    pub fn small(input_dim: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 32, 16],
            negative_slope: 0.05,
            seed,
            l2_coefficient: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 {
            return Err(ModelError::InvalidConfig("input_dim must be >= 1".into()));
        }
        if self.hidden.is_empty() {
            return Err(ModelError::InvalidConfig("hidden layer list is empty".into()));
        }
        if let Some(i) = self.hidden.iter().position(|&w| w == 0) {
            return Err(ModelError::InvalidConfig(format!("hidden[{i}] has zero width")));
        }
        if !(self.negative_slope > 0.0 && self.negative_slope < 1.0) {
            return Err(ModelError::InvalidConfig(format!(
                "negative_slope {} outside (0, 1)",
                self.negative_slope
            )));
        }
        if !(self.l2_coefficient >= 0.0 && self.l2_coefficient.is_finite()) {
            return Err(ModelError::InvalidConfig("l2_coefficient must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub steps: u64,
    /// Seeds the per-epoch shuffling.
    pub shuffle_seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            steps: 20_000,
            shuffle_seed: 0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning_rate must be >= 0".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::InvalidConfig(format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(TrainError::InvalidConfig("epsilon must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n_params: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One bias-corrected update.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = self.cfg.learning_rate;
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
        }
    }
}

/// Row-major feature matrix view.
#[derive(Debug, Clone, Copy)]
pub struct Features<'a> {
    pub data: &'a [f64],
    pub n_cols: usize,
}

impl<'a> Features<'a> {
    pub fn new(data: &'a [f64], n_cols: usize) -> Self {
        assert!(n_cols > 0 && data.len().is_multiple_of(n_cols), "ragged feature matrix");
        Self { data, n_cols }
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_cols
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    /// Offset of the weight block; biases follow it.
    offset: usize,
}

/// Multilayer perceptron producing one logit. All parameters live in one
/// flat vector: per layer, the `outputs × inputs` weight matrix (row-major)
/// followed by the biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    negative_slope: f64,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

fn layer_shapes(dims: &[usize]) -> (Vec<LayerShape>, usize) {
    let mut offset = 0;
    let layers = dims
        .windows(2)
        .map(|w| {
            let l = LayerShape {
                inputs: w[0],
                outputs: w[1],
                offset,
            };
            offset += w[0] * w[1] + w[1];
            l
        })
        .collect();
    (layers, offset)
}

impl Mlp {
    /// Uniform fan-in scaled initialization, `U(-b, b)` with
    /// `b = sqrt(6 / ((1 + slope²) fan_in))`; biases start at zero.
    pub fn init(cfg: &MlpConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let dims = cfg.dims();
        let (layers, n_params) = layer_shapes(&dims);
        let mut params = vec![0.0; n_params];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let gain = 1.0 + cfg.negative_slope * cfg.negative_slope;
        for l in &layers {
            let bound = (6.0 / (gain * l.inputs as f64)).sqrt();
            for p in &mut params[l.offset..l.offset + l.inputs * l.outputs] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(Self {
            dims,
            negative_slope: cfg.negative_slope,
            layers,
            params,
        })
    }

    /// Builds a network from explicit parameters (flat layout as above).
    pub fn from_params(dims: Vec<usize>, negative_slope: f64, params: Vec<f64>) -> Result<Self, ModelError> {
        if dims.len() < 2 || dims.contains(&0) || *dims.last().unwrap() != 1 {
            return Err(ModelError::InvalidConfig(format!("bad layer dims {dims:?}")));
        }
        let (layers, n) = layer_shapes(&dims);
        if params.len() != n {
            return Err(ModelError::InvalidConfig(format!("expected {n} parameters, got {}", params.len())));
        }
        Ok(Self {
            dims,
            negative_slope,
            layers,
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn activate(&self, v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            self.negative_slope * v
        }
    }

    fn check_dim(&self, x: Features<'_>) -> Result<(), ModelError> {
        if x.n_cols != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                got: x.n_cols,
                expected: self.input_dim(),
            });
        }
        Ok(())
    }

    /// Logits for every row of `x`.
    pub fn forward(&self, x: Features<'_>) -> Result<Vec<f64>, ModelError> {
        self.check_dim(x)?;
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        Ok(self.forward_rows(x, &rows).0)
    }

    /// Forward pass over selected rows. Returns the logits and the per-layer
    /// pre-activations (row-major `[batch × width]`) needed for backprop.
    fn forward_rows(&self, x: Features<'_>, rows: &[usize]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let batch = rows.len();
        let mut input: Vec<f64> = Vec::with_capacity(batch * x.n_cols);
        for &r in rows {
            input.extend_from_slice(x.row(r));
        }
        let mut pre_acts = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let w = &self.params[l.offset..l.offset + l.inputs * l.outputs];
            let b = &self.params[l.offset + l.inputs * l.outputs..l.offset + l.inputs * l.outputs + l.outputs];
            let mut z = vec![0.0; batch * l.outputs];
            for s in 0..batch {
                let a = &input[s * l.inputs..(s + 1) * l.inputs];
                let zs = &mut z[s * l.outputs..(s + 1) * l.outputs];
                for (o, zo) in zs.iter_mut().enumerate() {
                    let wr = &w[o * l.inputs..(o + 1) * l.inputs];
                    *zo = b[o] + wr.iter().zip(a).map(|(w, a)| w * a).sum::<f64>();
                }
            }
            let next = if li == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.activate(v)).collect()
            };
            pre_acts.push(input);
            pre_acts.push(z);
            input = next;
        }
        (input, pre_acts)
    }

    /// Gradient of `Σ_j dlogit[j] * logit(rows[j])` with respect to the
    /// parameters, given the cached activations from `forward_rows`.
    fn backward(&self, cache: &[Vec<f64>], dlogit: &[f64]) -> Vec<f64> {
        let batch = dlogit.len();
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = dlogit.to_vec();
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let input = &cache[2 * li];
            let w_off = l.offset;
            let b_off = l.offset + l.inputs * l.outputs;
            for s in 0..batch {
                let a = &input[s * l.inputs..(s + 1) * l.inputs];
                for o in 0..l.outputs {
                    let d = delta[s * l.outputs + o];
                    if d == 0.0 {
                        continue;
                    }
                    grad[b_off + o] += d;
                    let g = &mut grad[w_off + o * l.inputs..w_off + (o + 1) * l.inputs];
                    for (gi, ai) in g.iter_mut().zip(a) {
                        *gi += d * ai;
                    }
                }
            }
            if li == 0 {
                break;
            }
            // propagate into the previous layer's pre-activations
            let prev_z = &cache[2 * (li - 1) + 1];
            let w = &self.params[w_off..w_off + l.inputs * l.outputs];
            let mut next = vec![0.0; batch * l.inputs];
            for s in 0..batch {
                let ns = &mut next[s * l.inputs..(s + 1) * l.inputs];
                for o in 0..l.outputs {
                    let d = delta[s * l.outputs + o];
                    if d == 0.0 {
                        continue;
                    }
                    for (n, wi) in ns.iter_mut().zip(&w[o * l.inputs..(o + 1) * l.inputs]) {
                        *n += d * wi;
                    }
                }
                for (n, z) in ns.iter_mut().zip(&prev_z[s * l.inputs..(s + 1) * l.inputs]) {
                    if *z <= 0.0 {
                        *n *= self.negative_slope;
                    }
                }
            }
            delta = next;
        }
        grad
    }

    /// Batch objective `(1/|rows|) Σ loss + l2 ‖θ‖²` and its parameter gradient.
    pub fn loss_and_gradient(
        &self,
        x: Features<'_>,
        rows: &[usize],
        objective: &Objective,
        l2_coefficient: f64,
    ) -> Result<(f64, Vec<f64>), TrainError> {
        self.check_dim(x)?;
        let (logits, cache) = self.forward_rows(x, rows);
        let eval = objective.evaluate(&logits, rows)?;
        let scale = 1.0 / rows.len() as f64;
        let dlogit: Vec<f64> = eval.grad.iter().map(|g| g * scale).collect();
        let mut grad = self.backward(&cache, &dlogit);
        let mut value = eval.value * scale;
        if l2_coefficient > 0.0 {
            value += l2_coefficient * self.params.iter().map(|p| p * p).sum::<f64>();
            for (g, p) in grad.iter_mut().zip(&self.params) {
                *g += 2.0 * l2_coefficient * p;
            }
        }
        Ok((value, grad))
    }

    /// Serializes to the `SPML` binary layout: magic, version (u32), layer
    /// count (u32), layer dims (u32 each), negative slope (f64), then every
    /// parameter as f64. All little-endian.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        out.write_all(&self.negative_slope.to_le_bytes())?;
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::BadFile("missing SPML magic".into()));
        }
        let mut u32buf = [0u8; 4];
        input.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != FORMAT_VERSION {
            return Err(ModelError::BadFile(format!("unsupported version {version}")));
        }
        input.read_exact(&mut u32buf)?;
        let n_dims = u32::from_le_bytes(u32buf) as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(ModelError::BadFile(format!("implausible layer count {n_dims}")));
        }
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            input.read_exact(&mut u32buf)?;
            dims.push(u32::from_le_bytes(u32buf) as usize);
        }
        let mut f64buf = [0u8; 8];
        input.read_exact(&mut f64buf)?;
        let slope = f64::from_le_bytes(f64buf);
        if dims.contains(&0) {
            return Err(ModelError::BadFile("zero layer width".into()));
        }
        let (_, n) = layer_shapes(&dims);
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            input.read_exact(&mut f64buf)?;
            params.push(f64::from_le_bytes(f64buf));
        }
        Self::from_params(dims, slope, params)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    /// Mean per-event loss on the whole training set, without the L2 term.
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub records: Vec<EvalRecord>,
    /// Wall-clock seconds per optimizer step.
    pub seconds_per_step: f64,
}

impl TrainReport {
    pub fn peak_auc(&self) -> Option<f64> {
        self.records.iter().map(|r| r.test_auc).reduce(f64::max)
    }

    pub fn final_auc(&self) -> Option<f64> {
        self.records.last().map(|r| r.test_auc)
    }
}

/// Training split: features plus the objective's per-event columns.
pub struct TrainSet<'a> {
    pub x: Features<'a>,
    pub objective: &'a Objective,
}

/// Evaluation split: true labels for ROC AUC and, optionally, the training
/// objective's columns for a test loss.
pub struct EvalSet<'a> {
    pub x: Features<'a>,
    pub labels: &'a [bool],
    pub objective: Option<&'a Objective>,
}

fn mean_loss(model: &Mlp, x: Features<'_>, objective: &Objective) -> Result<(f64, Vec<f64>), TrainError> {
    let logits = model.forward(x)?;
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    let eval = objective.evaluate(&logits, &rows)?;
    Ok((eval.value / rows.len().max(1) as f64, logits))
}

fn record(model: &Mlp, step: u64, train: &TrainSet<'_>, test: &EvalSet<'_>) -> Result<EvalRecord, TrainError> {
    let (train_loss, _) = mean_loss(model, train.x, train.objective)?;
    let logits = model.forward(test.x)?;
    let test_loss = match test.objective {
        Some(obj) => {
            let rows: Vec<usize> = (0..test.x.n_rows()).collect();
            Some(obj.evaluate(&logits, &rows)?.value / rows.len().max(1) as f64)
        }
        None => None,
    };
    let test_auc = roc_auc(&logits, test.labels)
        .map_err(|e| TrainError::Eval(e.to_string()))?
        .auc;
    Ok(EvalRecord {
        step,
        train_loss,
        test_loss,
        test_auc,
    })
}

/// Adam training with per-epoch seeded shuffling. A trailing partial batch
/// is dropped and the data reshuffled; a training set smaller than one batch
/// is used whole. Evaluates at step 0, every `eval_every` steps and at the
/// final step.
pub fn train(
    model: &mut Mlp,
    train_set: &TrainSet<'_>,
    opt: &AdamConfig,
    l2_coefficient: f64,
    eval_every: u64,
    test: &EvalSet<'_>,
) -> Result<TrainReport, TrainError> {
    opt.validate()?;
    train_set.objective.validate()?;
    let n = train_set.x.n_rows();
    if n == 0 || train_set.objective.len() != n {
        return Err(TrainError::InvalidConfig(format!(
            "training set has {n} rows but objective has {}",
            train_set.objective.len()
        )));
    }
    let kind = train_set.objective.kind();
    let eval_every = eval_every.max(1);
    let batch = opt.batch_size.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opt.shuffle_seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut adam = Adam::new(opt.clone(), model.n_params());
    let mut report = TrainReport::default();
    report.records.push(record(model, 0, train_set, test)?);
    let started = Instant::now();

    for step in 1..=opt.steps {
        if cursor + batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let rows = &order[cursor..cursor + batch];
        cursor += batch;
        let (value, grad) = model.loss_and_gradient(train_set.x, rows, train_set.objective, l2_coefficient)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let what = if value.is_finite() { "gradient" } else { "loss" };
            report.seconds_per_step = started.elapsed().as_secs_f64() / step as f64;
            return Err(TrainError::NonFinite {
                kind,
                what,
                step,
                partial: report,
            });
        }
        adam.step(model.params_mut(), &grad);
        if step % eval_every == 0 || step == opt.steps {
            let rec = record(model, step, train_set, test)?;
            if !rec.train_loss.is_finite() {
                report.seconds_per_step = started.elapsed().as_secs_f64() / step as f64;
                return Err(TrainError::NonFinite {
                    kind,
                    what: "loss",
                    step,
                    partial: report,
                });
            }
            report.records.push(rec);
        }
    }
    report.seconds_per_step = if opt.steps > 0 {
        started.elapsed().as_secs_f64() / opt.steps as f64
    } else {
        0.0
    };
    Ok(report)
}
