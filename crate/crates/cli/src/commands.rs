use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use splotml_core::data::{attach_sweights, generate_with, ingest_csv, CsvSchema, DataError, Dataset};
use splotml_core::eval::{curve_rows, learning_curve, write_curve_csv, EvalError};
use splotml_core::experiment::{prepare, run_methods, size_sweep, ExperimentError, Method, MethodRun};
use splotml_core::fmt_f64;
use splotml_core::splot::SplotError;
use thiserror::Error;

use crate::artifacts::{sha256_hex, Artifacts};
use crate::config::{ConfigError, ExperimentConfig};

const SPECIES: [&str; 2] = ["signal", "background"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("i/o: {e}"))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Splot(s) => s.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SplotError> for CliError {
    fn from(e: SplotError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Data(d) => d.into(),
            ExperimentError::Unlabelled => CliError::Data(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    DemoDivergence,
    Sweights,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::DemoDivergence => "demo-divergence",
            Command::Sweights => "sweights",
            Command::Sweep => "sweep",
        }
    }
}

/// What a finished command leaves behind.
#[derive(Debug)]
pub struct Outcome {
    pub manifest: PathBuf,
    /// Arms that aborted or reached a negative weighted loss.
    pub divergent: Vec<Method>,
    /// Set when an arm that should have stayed finite aborted.
    pub unexpected_abort: Option<String>,
}

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        field: "config".into(),
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.override_seed(s);
    }
    Ok(cfg)
}

pub fn execute(command: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let mut artifacts = Artifacts::create(out)?;
    artifacts.write("config.toml", cfg.to_toml().as_bytes())?;
    let mut manifest = Map::new();
    manifest.insert("command".into(), json!(command.name()));
    manifest.insert("config".into(), serde_json::to_value(cfg).expect("config is json"));
    manifest.insert("versions".into(), json!({ "splotml": env!("CARGO_PKG_VERSION") }));
    manifest.insert("seeds".into(), seeds(cfg));

    let mut divergent = Vec::new();
    let mut unexpected_abort = None;
    match command {
        Command::Sweights => {
            let (ds, input) = load_data(cfg)?;
            manifest.insert("inputs".into(), input);
            let mixture = cfg.mixture_for(ds.len());
            let (weighted, att) = attach_sweights(&ds, &mixture)?;
            let mut buf = Vec::new();
            att.table.write_csv(&mut buf, &SPECIES)?;
            artifacts.write("sweights.csv", &buf)?;
            let summary = json!({
                "n_events": ds.len(),
                "n_events_kept": weighted.len(),
                "n_features": ds.n_features(),
                "feature_names": ds.feature_names(),
                "label_fraction": label_fraction(&ds),
                "fitted_yields": att.fit.yields,
                "em_iterations": att.fit.iterations,
                "dropped_rows": att.dropped_rows,
                "condition_number": att.table.condition_number,
            });
            artifacts.write("dataset_summary.json", &pretty(&summary))?;
        }
        Command::Run | Command::DemoDivergence => {
            let (ds, input) = load_data(cfg)?;
            manifest.insert("inputs".into(), input);
            let methods = if command == Command::DemoDivergence {
                Method::ALL.to_vec()
            } else {
                cfg.methods()
            };
            let mixture = cfg.mixture_for(ds.len());
            let prep = prepare(&ds, &mixture, cfg.split.test_fraction, cfg.split.seed, cfg.cwola())?;
            let mut buf = Vec::new();
            prep.sweights.table.write_csv(&mut buf, &SPECIES)?;
            artifacts.write("sweights.csv", &buf)?;
            let summary = json!({
                "n_events": ds.len(),
                "n_train": prep.train.len(),
                "n_test": prep.test.len(),
                "n_features": ds.n_features(),
                "feature_names": ds.feature_names(),
                "label_fraction": label_fraction(&ds),
                "fitted_yields": prep.sweights.fit.yields,
                "em_iterations": prep.sweights.fit.iterations,
                "dropped_rows": prep.sweights.dropped_rows,
                "condition_number": prep.sweights.table.condition_number,
                "cwola": {
                    "lo": prep.cwola_train.lo,
                    "hi": prep.cwola_train.hi,
                    "inside_fraction_train": prep.cwola_train.inside_fraction,
                },
            });
            artifacts.write("dataset_summary.json", &pretty(&summary))?;

            let runs = run_methods(&prep, &methods, &cfg.train_settings())?;
            for run in &runs {
                let rows = curve_rows(&[(run.method.name().to_string(), run.report.clone())])?;
                let mut buf = Vec::new();
                write_curve_csv(&mut buf, &rows)?;
                artifacts.write(&format!("train_{}.csv", run.method.name()), &buf)?;
                let mut model = Vec::new();
                run.model.write_to(&mut model)?;
                artifacts.write(&format!("model_{}.spml", run.method.name()), &model)?;
                if run.diverged() {
                    divergent.push(run.method);
                }
                if let Some(step) = run.aborted_at {
                    if !run.method.divergence_expected() && unexpected_abort.is_none() {
                        unexpected_abort = Some(format!("{} aborted on a non-finite value at step {step}", run.method));
                    }
                }
            }
            let reports: Vec<(String, _)> = runs.iter().map(|r| (r.method.name().to_string(), r.report.clone())).collect();
            learning_curve(&reports, artifacts.dir(), "learning_curve")?;
            artifacts.adopt("learning_curve.csv")?;
            artifacts.adopt("learning_curve.svg")?;
            artifacts.write("summary.csv", method_summary(&runs).as_bytes())?;
            print_runs(&runs);
        }
        Command::Sweep => {
            let model = cfg.synthetic_model().ok_or_else(|| ConfigError {
                field: "data.synthetic".into(),
                message: "the size sweep draws its own samples and needs a synthetic source".into(),
            })?;
            let sweep = cfg.sweep_settings().ok_or_else(|| ConfigError {
                field: "sweep".into(),
                message: "missing [sweep] table".into(),
            })?;
            manifest.insert("inputs".into(), json!({ "source": "synthetic" }));
            let table = size_sweep(&model, &sweep, &cfg.train_settings())?;
            let mut buf = Vec::new();
            table.write_cells_csv(&mut buf)?;
            artifacts.write("sweep_cells.csv", &buf)?;
            let mut buf = Vec::new();
            table.write_summary_csv(&mut buf)?;
            artifacts.write("sweep_summary.csv", &buf)?;
            artifacts.write("sweep.svg", table.svg().as_bytes())?;
            for s in table.summary() {
                println!(
                    "size {:>8}  {:<16} mean AUC {}  ok {} diverged {}",
                    s.size,
                    s.method,
                    s.mean_auc.map_or("-".into(), |v| format!("{v:.4}")),
                    s.n_ok,
                    s.n_diverged
                );
            }
        }
    }
    manifest.insert(
        "divergent_methods".into(),
        json!(divergent.iter().map(|m| m.name()).collect::<Vec<_>>()),
    );
    let manifest = artifacts.finish(manifest)?;
    Ok(Outcome {
        manifest,
        divergent,
        unexpected_abort,
    })
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Value), CliError> {
    if let (Some(s), Some(model)) = (&cfg.data.synthetic, cfg.synthetic_model()) {
        let ds = generate_with(&model, s.n_events, s.signal_fraction, s.seed)?;
        return Ok((ds, json!({ "source": "synthetic" })));
    }
    let c = cfg.data.csv.as_ref().expect("validated: one source");
    let path = Path::new(&c.path);
    let schema = CsvSchema {
        mass: c.mass_column.clone(),
        label: c.label_column.clone(),
        features: c.feature_columns.clone(),
    };
    let (ds, report) = ingest_csv(path, &schema).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let bytes = std::fs::read(path)?;
    Ok((
        ds,
        json!({
            "source": "csv",
            "path": c.path,
            "sha256": sha256_hex(&bytes),
            "rows": report.rows,
            "feature_columns": report.feature_columns,
        }),
    ))
}

fn seeds(cfg: &ExperimentConfig) -> Value {
    json!({
        "data": cfg.data.synthetic.as_ref().map(|s| s.seed),
        "split": cfg.split.seed,
        "init": cfg.model.init_seed,
        "shuffle": cfg.train.shuffle_seed,
        "sweep": cfg.sweep.as_ref().map(|s| s.seeds.clone()),
    })
}

fn label_fraction(ds: &Dataset) -> Option<f64> {
    ds.labels()
        .map(|l| l.iter().filter(|&&v| v).count() as f64 / l.len().max(1) as f64)
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s.into_bytes()
}

fn method_summary(runs: &[MethodRun]) -> String {
    let mut s = String::from("method,final_auc,peak_auc,min_train_loss,aborted_at,diverged\n");
    let cell = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in runs {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method,
            cell(r.report.final_auc()),
            cell(r.report.peak_auc()),
            cell(r.min_train_loss()),
            r.aborted_at.map(|s| s.to_string()).unwrap_or_default(),
            r.diverged()
        ));
    }
    s
}

fn print_runs(runs: &[MethodRun]) {
    for r in runs {
        let f = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.4}"));
        println!(
            "{:<16} final AUC {}  peak AUC {}  min train loss {}{}",
            r.method.name(),
            f(r.report.final_auc()),
            f(r.report.peak_auc()),
            f(r.min_train_loss()),
            if r.diverged() { "  DIVERGED" } else { "" }
        );
    }
}
