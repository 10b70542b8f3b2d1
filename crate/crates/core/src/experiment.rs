//! The comparison protocol: one labelled dataset, sWeights from the mass,
//! and one network per training method, all sharing initial weights and
//! batch order.

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{attach_sweights, cwola_label, generate_with, split, CwolaLabeling, DataError, Dataset, Standardizer, SweightAttachment, SyntheticModel};
use crate::density::MixtureModel;
use crate::eval::{CellOutcome, SweepCell, SweepTable};
use crate::losses::{LossKind, Objective};
use crate::model::{train, AdamConfig, EvalSet, Mlp, MlpConfig, ModelError, TrainError, TrainReport, TrainSet};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{method} training failed: {source}")]
    Train {
        method: Method,
        #[source]
        source: TrainError,
    },
    #[error("dataset has no true labels; evaluation needs them")]
    Unlabelled,
}

/// A training arm of the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    TrueLabels,
    ConstrainedMse,
    Likelihood,
    Cwola,
    WeightedCe,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::TrueLabels,
        Method::ConstrainedMse,
        Method::Likelihood,
        Method::Cwola,
        Method::WeightedCe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::TrueLabels => "true_labels",
            Method::ConstrainedMse => "constrained_mse",
            Method::Likelihood => "likelihood",
            Method::Cwola => "cwola",
            Method::WeightedCe => "weighted_ce",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            Method::TrueLabels | Method::Cwola => LossKind::PlainCe,
            Method::ConstrainedMse => LossKind::ConstrainedMse,
            Method::Likelihood => LossKind::ExactLikelihood,
            Method::WeightedCe => LossKind::WeightedCe,
        }
    }

    /// Only this arm is expected to run away.
    pub fn divergence_expected(self) -> bool {
        self == Method::WeightedCe
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// CWoLa signal-region settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwolaConfig {
    pub center: f64,
    pub inside_fraction: f64,
}

impl Default for CwolaConfig {
    fn default() -> Self {
        Self {
            center: 4.0,
            inside_fraction: 0.5,
        }
    }
}

/// Standardized train/test splits with every auxiliary column attached.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub sweights: SweightAttachment,
    pub cwola_train: CwolaLabeling,
    pub cwola_test: Vec<bool>,
    pub scaler: Standardizer,
}

impl Prepared {
    fn objectives(&self, method: Method) -> Result<(Objective, Option<Objective>), DataError> {
        match method {
            Method::Cwola => {
                let test = Objective::PlainCe {
                    labels: self.cwola_test.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect(),
                };
                Ok((self.cwola_train.objective(), Some(test)))
            }
            m => Ok((self.train.objective(m.loss_kind())?, self.test.objective(m.loss_kind()).ok())),
        }
    }
}

/// sWeights on the whole sample, then split, CWoLa region from the train
/// split, and feature standardization from the train split.
pub fn prepare(
    ds: &Dataset,
    mixture: &MixtureModel,
    test_fraction: f64,
    split_seed: u64,
    cwola: CwolaConfig,
) -> Result<Prepared, ExperimentError> {
    if ds.labels().is_none() {
        return Err(ExperimentError::Unlabelled);
    }
    let (weighted, sweights) = attach_sweights(ds, mixture)?;
    let (train, test) = split(&weighted, test_fraction, split_seed)?;
    let cwola_train = cwola_label(train.mass(), cwola.center, cwola.inside_fraction)?;
    let cwola_test = cwola_train.label(test.mass());
    let scaler = Standardizer::fit(&train);
    Ok(Prepared {
        train: train.standardized(&scaler),
        test: test.standardized(&scaler),
        sweights,
        cwola_train,
        cwola_test,
        scaler,
    })
}

/// Training settings shared by every arm.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub hidden: Vec<usize>,
    pub negative_slope: f64,
    pub init_seed: u64,
    pub l2_coefficient: f64,
    /// Applied to the likelihood arm only, if set.
    pub likelihood_l2: Option<f64>,
    pub adam: AdamConfig,
    pub eval_every: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32, 16],
            negative_slope: 0.05,
            init_seed: 0,
            l2_coefficient: 0.0,
            likelihood_l2: None,
            adam: AdamConfig::default(),
            eval_every: 500,
        }
    }
}

impl TrainSettings {
    pub fn mlp_config(&self, input_dim: usize) -> MlpConfig {
        MlpConfig {
            input_dim,
            hidden: self.hidden.clone(),
            negative_slope: self.negative_slope,
            seed: self.init_seed,
            l2_coefficient: self.l2_coefficient,
        }
    }

    fn l2_for(&self, method: Method) -> f64 {
        match (method, self.likelihood_l2) {
            (Method::Likelihood, Some(l2)) => l2,
            _ => self.l2_coefficient,
        }
    }
}

/// Result of one arm. `aborted_at` is set when training stopped on a
/// non-finite loss or gradient; `report` then holds the partial curve.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub report: TrainReport,
    pub aborted_at: Option<u64>,
    pub model: Mlp,
}

impl MethodRun {
    pub fn min_train_loss(&self) -> Option<f64> {
        self.report.records.iter().map(|r| r.train_loss).reduce(f64::min)
    }

    /// Aborted, or reached a negative training loss (impossible for any
    /// cross-entropy with non-negative weights).
    pub fn diverged(&self) -> bool {
        self.aborted_at.is_some()
            || (self.method.loss_kind() == LossKind::WeightedCe && self.min_train_loss().is_some_and(|l| l < 0.0))
    }
}

pub fn run_method(prep: &Prepared, method: Method, settings: &TrainSettings) -> Result<MethodRun, ExperimentError> {
    let mut model = Mlp::init(&settings.mlp_config(prep.train.n_features()))?;
    let (train_obj, test_obj) = prep.objectives(method)?;
    let labels = prep.test.labels().ok_or(ExperimentError::Unlabelled)?;
    let result = train(
        &mut model,
        &TrainSet {
            x: prep.train.features(),
            objective: &train_obj,
        },
        &settings.adam,
        settings.l2_for(method),
        settings.eval_every,
        &EvalSet {
            x: prep.test.features(),
            labels,
            objective: test_obj.as_ref(),
        },
    );
    match result {
        Ok(report) => Ok(MethodRun {
            method,
            report,
            aborted_at: None,
            model,
        }),
        Err(TrainError::NonFinite { step, partial, .. }) => Ok(MethodRun {
            method,
            report: partial,
            aborted_at: Some(step),
            model,
        }),
        Err(source) => Err(ExperimentError::Train { method, source }),
    }
}

/// Runs every method; arms are independent and may run concurrently, output
/// order follows `methods`.
pub fn run_methods(prep: &Prepared, methods: &[Method], settings: &TrainSettings) -> Result<Vec<MethodRun>, ExperimentError> {
    methods.par_iter().map(|&m| run_method(prep, m, settings)).collect()
}

/// Size-sweep protocol settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    /// Train sizes, ascending.
    pub sizes: Vec<usize>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub test_size: usize,
    pub signal_fraction: f64,
    pub cwola: CwolaConfig,
}

/// Final test AUC per (size, method, seed). For each seed one pool of
/// `max(sizes)` training events and one test set are drawn; smaller sizes
/// take a prefix of the pool, and sWeights are recomputed on each prefix.
/// Aborted arms become divergence markers.
pub fn size_sweep(
    model: &SyntheticModel,
    sweep: &SweepSettings,
    settings: &TrainSettings,
) -> Result<SweepTable, ExperimentError> {
    if sweep.sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(DataError::InvalidArgument("sweep sizes must be ascending".into()).into());
    }
    let max_size = sweep.sizes.iter().copied().max().unwrap_or(0);
    let mut jobs = Vec::new();
    for &size in &sweep.sizes {
        for &seed in &sweep.seeds {
            jobs.push((size, seed));
        }
    }
    let results: Vec<Vec<SweepCell>> = jobs
        .par_iter()
        .map(|&(size, seed)| -> Result<Vec<SweepCell>, ExperimentError> {
            let pool = generate_with(model, max_size + sweep.test_size, sweep.signal_fraction, seed)?;
            let train_idx: Vec<usize> = (0..size).collect();
            let test_idx: Vec<usize> = (max_size..max_size + sweep.test_size).collect();
            let train_raw = pool.subset(&train_idx);
            let test_raw = pool.subset(&test_idx);
            let n = train_raw.len() as f64;
            let mixture = model.mixture(n * sweep.signal_fraction, n * (1.0 - sweep.signal_fraction));
            let (train_w, sweights) = attach_sweights(&train_raw, &mixture)?;
            let cwola_train = cwola_label(train_w.mass(), sweep.cwola.center, sweep.cwola.inside_fraction)?;
            let cwola_test = cwola_train.label(test_raw.mass());
            let scaler = Standardizer::fit(&train_w);
            let prep = Prepared {
                train: train_w.standardized(&scaler),
                test: test_raw.standardized(&scaler),
                sweights,
                cwola_train,
                cwola_test,
                scaler,
            };
            let per_seed = TrainSettings {
                init_seed: settings.init_seed.wrapping_add(seed),
                adam: AdamConfig {
                    shuffle_seed: settings.adam.shuffle_seed.wrapping_add(seed),
                    ..settings.adam.clone()
                },
                ..settings.clone()
            };
            sweep
                .methods
                .iter()
                .map(|&method| {
                    let run = run_method(&prep, method, &per_seed)?;
                    let outcome = match run.aborted_at {
                        Some(step) => CellOutcome::Diverged { step },
                        None => CellOutcome::Auc(run.report.final_auc().unwrap_or(f64::NAN)),
                    };
                    Ok(SweepCell {
                        size,
                        method: method.name().to_string(),
                        seed,
                        outcome,
                    })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let mut cells: Vec<SweepCell> = results.into_iter().flatten().collect();
    let method_rank = |m: &str| sweep.methods.iter().position(|x| x.name() == m).unwrap_or(usize::MAX);
    cells.sort_by(|a, b| {
        (a.size, method_rank(&a.method), a.seed).cmp(&(b.size, method_rank(&b.method), b.seed))
    });
    Ok(SweepTable { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
        }
        assert_eq!(Method::parse("nope"), None);
    }

    #[test]
    fn arms_share_initial_logits() {
        let ds = generate_synthetic(2000, 0.5, 4).unwrap();
        let prep = prepare(&ds, &MixtureModel::canonical(1000.0, 1000.0).unwrap(), 0.25, 1, CwolaConfig::default()).unwrap();
        let settings = TrainSettings {
            adam: AdamConfig {
                steps: 0,
                ..AdamConfig::default()
            },
            ..TrainSettings::default()
        };
        let runs = run_methods(&prep, &[Method::TrueLabels, Method::Cwola], &settings).unwrap();
        assert_eq!(runs[0].model, runs[1].model);
        assert_eq!(runs[0].report.records[0].test_auc, runs[1].report.records[0].test_auc);
    }

    #[test]
    fn small_sweep_table_shape() {
        let sweep = SweepSettings {
            sizes: vec![1000],
            methods: vec![Method::TrueLabels],
            seeds: vec![1, 2],
            test_size: 500,
            signal_fraction: 0.5,
            cwola: CwolaConfig::default(),
        };
        let settings = TrainSettings {
            hidden: vec![8],
            adam: AdamConfig {
                steps: 50,
                ..AdamConfig::default()
            },
            eval_every: 25,
            ..TrainSettings::default()
        };
        let table = size_sweep(&SyntheticModel::default(), &sweep, &settings).unwrap();
        assert_eq!(table.cells.len(), 2);
        assert_eq!(table.summary().len(), 1);
    }
}
