//! Experiment configuration: a TOML file, every table closed to unknown keys.

use serde::{Deserialize, Serialize};
use splotml_core::data::{FeatureShape, SyntheticModel};
use splotml_core::density::{Density1D, MixtureModel};
use splotml_core::experiment::{CwolaConfig, Method, SweepSettings, TrainSettings};
use splotml_core::model::AdamConfig;

#[derive(Debug, thiserror::Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn bad(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub mixture: Option<MixtureConfig>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub cwola: CwolaSection,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

fn default_methods() -> Vec<String> {
    Method::ALL.iter().map(|m| m.name().to_string()).collect()
}

/// Exactly one of `synthetic` or `csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub csv: Option<CsvConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_events: usize,
    #[serde(default = "half")]
    pub signal_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Replaces the five default feature blobs when given.
    #[serde(default)]
    pub features: Option<Vec<FeatureConfig>>,
    /// Uninformative unit-gaussian features appended after the others.
    #[serde(default)]
    pub null_features: usize,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub signal_mean: f64,
    pub signal_std: f64,
    pub background_mean: f64,
    pub background_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvConfig {
    pub path: String,
    pub mass_column: String,
    #[serde(default)]
    pub label_column: Option<String>,
    /// Every other column when omitted.
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub support: [f64; 2],
    pub signal: ShapeConfig,
    pub background: ShapeConfig,
    /// Defaults to the expected counts for synthetic data and an even split
    /// for CSV data.
    #[serde(default)]
    pub initial_yields: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeConfig {
    Uniform,
    Gaussian { mean: f64, sigma: f64 },
    Exponential { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CwolaSection {
    pub center: f64,
    pub inside_fraction: f64,
}

impl Default for CwolaSection {
    fn default() -> Self {
        let d = CwolaConfig::default();
        Self {
            center: d.center,
            inside_fraction: d.inside_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub negative_slope: f64,
    pub init_seed: u64,
    pub l2: f64,
    pub likelihood_l2: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = TrainSettings::default();
        Self {
            hidden: d.hidden,
            negative_slope: d.negative_slope,
            init_seed: d.init_seed,
            l2: d.l2_coefficient,
            likelihood_l2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub shuffle_seed: u64,
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            learning_rate: a.learning_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
            batch_size: a.batch_size,
            steps: a.steps,
            shuffle_seed: a.shuffle_seed,
            eval_every: TrainSettings::default().eval_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub test_size: usize,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| bad("config", e.message().to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            bad(if path == "." { "config".into() } else { path }, e.inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sets every named seed to `seed`; sweep seeds become `seed, seed+1, …`.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(s) = self.data.synthetic.as_mut() {
            s.seed = seed;
        }
        self.split.seed = seed;
        self.model.init_seed = seed;
        self.train.shuffle_seed = seed;
        if let Some(sw) = self.sweep.as_mut() {
            let k = sw.seeds.len() as u64;
            sw.seeds = (0..k).map(|i| seed.wrapping_add(i)).collect();
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.data.synthetic, &self.data.csv) {
            (Some(_), Some(_)) => return Err(bad("data", "set exactly one of `synthetic` or `csv`, not both")),
            (None, None) => return Err(bad("data", "set one of `synthetic` or `csv`")),
            _ => {}
        }
        if let Some(s) = &self.data.synthetic {
            if s.n_events < 2 {
                return Err(bad("data.synthetic.n_events", "must be at least 2"));
            }
            if !(s.signal_fraction > 0.0 && s.signal_fraction < 1.0) {
                return Err(bad("data.synthetic.signal_fraction", "must lie in (0, 1)"));
            }
            if let Some(fs) = &s.features {
                for (i, f) in fs.iter().enumerate() {
                    if !(f.signal_std > 0.0 && f.background_std > 0.0) {
                        return Err(bad(format!("data.synthetic.features[{i}]"), "standard deviations must be positive"));
                    }
                    if ![f.signal_mean, f.background_mean, f.signal_std, f.background_std].iter().all(|v| v.is_finite()) {
                        return Err(bad(format!("data.synthetic.features[{i}]"), "values must be finite"));
                    }
                }
                if fs.is_empty() && s.null_features == 0 {
                    return Err(bad("data.synthetic.features", "at least one feature is required"));
                }
            }
        }
        if let Some(m) = &self.mixture {
            let [lo, hi] = m.support;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(bad("mixture.support", "must be a finite interval [lo, hi] with lo < hi"));
            }
            for (name, shape) in [("signal", &m.signal), ("background", &m.background)] {
                shape_density(shape, lo, hi).map_err(|e| bad(format!("mixture.{name}"), e))?;
            }
            if let Some(y) = m.initial_yields {
                for (i, v) in y.iter().enumerate() {
                    if !(v.is_finite() && *v >= 0.0) {
                        return Err(bad(format!("mixture.initial_yields[{i}]"), format!("must be finite and non-negative, got {v}")));
                    }
                }
                if y[0] + y[1] <= 0.0 {
                    return Err(bad("mixture.initial_yields", "must not all be zero"));
                }
            }
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(bad("split.test_fraction", "must lie in (0, 1)"));
        }
        if !(self.cwola.inside_fraction > 0.0 && self.cwola.inside_fraction < 1.0) {
            return Err(bad("cwola.inside_fraction", "must lie in (0, 1)"));
        }
        if !self.cwola.center.is_finite() {
            return Err(bad("cwola.center", "must be finite"));
        }
        if self.methods.is_empty() {
            return Err(bad("methods", "list at least one method"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if Method::parse(m).is_none() {
                let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                return Err(bad(format!("methods[{i}]"), format!("unknown method `{m}`; expected one of {}", known.join(", "))));
            }
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(bad("model.hidden", "list at least one layer, all widths positive"));
        }
        if !(self.model.negative_slope > 0.0 && self.model.negative_slope < 1.0) {
            return Err(bad("model.negative_slope", "must lie in (0, 1)"));
        }
        if !(self.model.l2.is_finite() && self.model.l2 >= 0.0) {
            return Err(bad("model.l2", "must be finite and non-negative"));
        }
        if let Some(l2) = self.model.likelihood_l2 {
            if !(l2.is_finite() && l2 >= 0.0) {
                return Err(bad("model.likelihood_l2", "must be finite and non-negative"));
            }
        }
        self.adam().validate().map_err(|e| bad("train", e.to_string()))?;
        if self.train.eval_every == 0 {
            return Err(bad("train.eval_every", "must be positive"));
        }
        if let Some(sw) = &self.sweep {
            if sw.sizes.is_empty() {
                return Err(bad("sweep.sizes", "list at least one size"));
            }
            if sw.sizes.windows(2).any(|w| w[0] > w[1]) {
                return Err(bad("sweep.sizes", "must be sorted ascending"));
            }
            if sw.sizes[0] < 2 {
                return Err(bad("sweep.sizes", "sizes must be at least 2"));
            }
            if sw.seeds.is_empty() {
                return Err(bad("sweep.seeds", "list at least one seed"));
            }
            if sw.test_size < 2 {
                return Err(bad("sweep.test_size", "must be at least 2"));
            }
        }
        Ok(())
    }

    pub fn methods(&self) -> Vec<Method> {
        self.methods.iter().filter_map(|m| Method::parse(m)).collect()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.train.learning_rate,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            epsilon: self.train.epsilon,
            batch_size: self.train.batch_size,
            steps: self.train.steps,
            shuffle_seed: self.train.shuffle_seed,
        }
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            hidden: self.model.hidden.clone(),
            negative_slope: self.model.negative_slope,
            init_seed: self.model.init_seed,
            l2_coefficient: self.model.l2,
            likelihood_l2: self.model.likelihood_l2,
            adam: self.adam(),
            eval_every: self.train.eval_every,
        }
    }

    pub fn cwola(&self) -> CwolaConfig {
        CwolaConfig {
            center: self.cwola.center,
            inside_fraction: self.cwola.inside_fraction,
        }
    }

    /// Mass shapes, canonical when no `[mixture]` table is given.
    pub fn mass_shapes(&self) -> (Density1D, Density1D) {
        match &self.mixture {
            Some(m) => {
                let [lo, hi] = m.support;
                (
                    shape_density(&m.signal, lo, hi).expect("validated"),
                    shape_density(&m.background, lo, hi).expect("validated"),
                )
            }
            None => (Density1D::canonical_signal(), Density1D::canonical_background()),
        }
    }

    /// Mixture with initial yields for `n` events.
    pub fn mixture_for(&self, n: usize) -> MixtureModel {
        let frac = self.data.synthetic.as_ref().map_or(0.5, |s| s.signal_fraction);
        let yields = self
            .mixture
            .as_ref()
            .and_then(|m| m.initial_yields)
            .unwrap_or([n as f64 * frac, n as f64 * (1.0 - frac)]);
        let (s, b) = self.mass_shapes();
        MixtureModel::new(vec![(s, yields[0]), (b, yields[1])]).expect("validated")
    }

    pub fn synthetic_model(&self) -> Option<SyntheticModel> {
        let s = self.data.synthetic.as_ref()?;
        let (signal_mass, background_mass) = self.mass_shapes();
        let mut model = SyntheticModel {
            signal_mass,
            background_mass,
            ..SyntheticModel::default()
        };
        if let Some(fs) = &s.features {
            model.features = fs
                .iter()
                .map(|f| FeatureShape {
                    signal_mean: f.signal_mean,
                    signal_std: f.signal_std,
                    background_mean: f.background_mean,
                    background_std: f.background_std,
                })
                .collect();
        }
        Some(model.with_null_features(s.null_features))
    }

    pub fn sweep_settings(&self) -> Option<SweepSettings> {
        let sw = self.sweep.as_ref()?;
        let s = self.data.synthetic.as_ref()?;
        Some(SweepSettings {
            sizes: sw.sizes.clone(),
            methods: self.methods(),
            seeds: sw.seeds.clone(),
            test_size: sw.test_size,
            signal_fraction: s.signal_fraction,
            cwola: self.cwola(),
        })
    }
}

fn shape_density(shape: &ShapeConfig, lo: f64, hi: f64) -> Result<Density1D, String> {
    match *shape {
        ShapeConfig::Uniform => Density1D::uniform(lo, hi),
        ShapeConfig::Gaussian { mean, sigma } => Density1D::truncated_gaussian(mean, sigma, lo, hi),
        ShapeConfig::Exponential { rate } => Density1D::truncated_exponential(rate, lo, hi),
    }
    .map_err(|e| e.to_string())
}
