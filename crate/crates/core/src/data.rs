//! Datasets: synthetic generation, CSV ingestion, sWeight attachment,
//! train/test splitting and CWoLa region labels.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::density::{Density1D, MixtureModel};
use crate::losses::{LossKind, Objective};
use crate::model::Features;
use crate::splot::{fit_and_compute, SWeightTable, SplotError, YieldFit};

/// Events generated per independently seeded chunk.
pub const GENERATION_CHUNK: usize = 8192;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column `{name}` has {got} entries, expected {expected}")]
    LengthMismatch {
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("declared column `{0}` not found in header")]
    MissingColumn(String),
    #[error("dataset has no `{0}` column attached")]
    MissingAux(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("sWeights need exactly two species for training, got {0}")]
    SpeciesCount(usize),
    #[error(transparent)]
    Splot(#[from] SplotError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Columnar event store. Features are row-major `[n × d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    x: Vec<f64>,
    mass: Vec<f64>,
    labels: Option<Vec<bool>>,
    /// Signal and background sWeights per event.
    sweights: Option<Vec<[f64; 2]>>,
    p_signal: Option<Vec<f64>>,
    p_background: Option<Vec<f64>>,
}

fn check_finite(column: &str, values: &[f64]) -> Result<(), DataError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(row) => Err(DataError::NonFinite {
            column: column.to_string(),
            row,
        }),
        None => Ok(()),
    }
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        x: Vec<f64>,
        mass: Vec<f64>,
        labels: Option<Vec<bool>>,
    ) -> Result<Self, DataError> {
        let n = mass.len();
        let d = feature_names.len();
        if d == 0 {
            return Err(DataError::InvalidArgument("at least one feature column is required".into()));
        }
        if x.len() != n * d {
            return Err(DataError::LengthMismatch {
                name: "features".into(),
                got: x.len(),
                expected: n * d,
            });
        }
        if let Some(y) = &labels {
            if y.len() != n {
                return Err(DataError::LengthMismatch {
                    name: "label".into(),
                    got: y.len(),
                    expected: n,
                });
            }
        }
        check_finite("mass", &mass)?;
        for (j, name) in feature_names.iter().enumerate() {
            if let Some(row) = (0..n).find(|&i| !x[i * d + j].is_finite()) {
                return Err(DataError::NonFinite {
                    column: name.clone(),
                    row,
                });
            }
        }
        Ok(Self {
            feature_names,
            x,
            mass,
            labels,
            sweights: None,
            p_signal: None,
            p_background: None,
        })
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> Features<'_> {
        Features::new(&self.x, self.n_features())
    }

    pub fn feature_column(&self, j: usize) -> Vec<f64> {
        let d = self.n_features();
        (0..self.len()).map(|i| self.x[i * d + j]).collect()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn sweights(&self) -> Option<&[[f64; 2]]> {
        self.sweights.as_deref()
    }

    pub fn signal_sweights(&self) -> Option<Vec<f64>> {
        self.sweights.as_ref().map(|w| w.iter().map(|r| r[0]).collect())
    }

    pub fn densities(&self) -> Option<(&[f64], &[f64])> {
        match (&self.p_signal, &self.p_background) {
            (Some(s), Some(b)) => Some((s, b)),
            _ => None,
        }
    }

    /// Rows `idx` in the given order, carrying every attached column.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let d = self.n_features();
        let mut x = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            x.extend_from_slice(&self.x[i * d..(i + 1) * d]);
        }
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            feature_names: self.feature_names.clone(),
            x,
            mass: pick(&self.mass),
            labels: self.labels.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
            sweights: self.sweights.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect()),
            p_signal: self.p_signal.as_ref().map(pick),
            p_background: self.p_background.as_ref().map(pick),
        }
    }

    /// First `n` rows (all rows if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Per-event objective columns for `kind`. `PlainCe` uses the true labels.
    pub fn objective(&self, kind: LossKind) -> Result<Objective, DataError> {
        match kind {
            LossKind::ConstrainedMse => Ok(Objective::ConstrainedMse {
                sweights: self.signal_sweights().ok_or(DataError::MissingAux("sweights"))?,
            }),
            LossKind::WeightedCe => {
                let w = self.sweights.as_ref().ok_or(DataError::MissingAux("sweights"))?;
                Ok(Objective::WeightedCe {
                    ws: w.iter().map(|r| r[0]).collect(),
                    wb: w.iter().map(|r| r[1]).collect(),
                })
            }
            LossKind::ExactLikelihood => {
                let (ps, pb) = self.densities().ok_or(DataError::MissingAux("p_signal/p_background"))?;
                Ok(Objective::ExactLikelihood {
                    ps: ps.to_vec(),
                    pb: pb.to_vec(),
                })
            }
            LossKind::PlainCe => Ok(Objective::PlainCe {
                labels: self
                    .labels
                    .as_ref()
                    .ok_or(DataError::MissingAux("label"))?
                    .iter()
                    .map(|&l| if l { 1.0 } else { 0.0 })
                    .collect(),
            }),
        }
    }

    /// Replaces the features by `(x - mean) / std` per column.
    pub fn standardized(&self, scaler: &Standardizer) -> Dataset {
        let d = self.n_features();
        let mut out = self.clone();
        for (i, v) in out.x.iter_mut().enumerate() {
            let j = i % d;
            *v = (*v - scaler.mean[j]) / scaler.std[j];
        }
        out
    }

    /// Writes every column with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header: Vec<String> = self.feature_names.clone();
        header.push("mass".into());
        if self.labels.is_some() {
            header.push("label".into());
        }
        if self.sweights.is_some() {
            header.push("sweight_signal".into());
            header.push("sweight_background".into());
        }
        if self.p_signal.is_some() {
            header.push("p_signal".into());
            header.push("p_background".into());
        }
        writeln!(out, "{}", header.join(","))?;
        let d = self.n_features();
        for i in 0..self.len() {
            let mut cells: Vec<String> = self.x[i * d..(i + 1) * d].iter().map(|&v| crate::fmt_f64(v)).collect();
            cells.push(crate::fmt_f64(self.mass[i]));
            if let Some(y) = &self.labels {
                cells.push(if y[i] { "1" } else { "0" }.into());
            }
            if let Some(w) = &self.sweights {
                cells.push(crate::fmt_f64(w[i][0]));
                cells.push(crate::fmt_f64(w[i][1]));
            }
            if let (Some(s), Some(b)) = (&self.p_signal, &self.p_background) {
                cells.push(crate::fmt_f64(s[i]));
                cells.push(crate::fmt_f64(b[i]));
            }
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Per-feature mean and standard deviation, fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &Dataset) -> Self {
        let d = ds.n_features();
        let n = ds.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for row in ds.x.chunks_exact(d.max(1)) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        for row in ds.x.chunks_exact(d.max(1)) {
            for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = sq
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }
}

/// Class-conditional independent gaussian for one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureShape {
    pub signal_mean: f64,
    pub signal_std: f64,
    pub background_mean: f64,
    pub background_std: f64,
}

impl FeatureShape {
    fn log_ratio(&self, x: f64) -> f64 {
        let ls = -0.5 * ((x - self.signal_mean) / self.signal_std).powi(2) - self.signal_std.ln();
        let lb = -0.5 * ((x - self.background_mean) / self.background_std).powi(2) - self.background_std.ln();
        ls - lb
    }
}

/// Generative model of the synthetic benchmark: a mass shape per class and
/// independent per-feature gaussians whose parameters depend on the class
/// only, so features are independent of mass within each class.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    pub signal_mass: Density1D,
    pub background_mass: Density1D,
    pub features: Vec<FeatureShape>,
}

impl Default for SyntheticModel {
    /// Canonical mass shapes and five features: four informative blobs
    /// (two mean shifts, one width difference, one mixed) and one null
    /// feature.
    fn default() -> Self {
        let f = |sm, ss, bm, bs| FeatureShape {
            signal_mean: sm,
            signal_std: ss,
            background_mean: bm,
            background_std: bs,
        };
        Self {
            signal_mass: Density1D::canonical_signal(),
            background_mass: Density1D::canonical_background(),
            features: vec![
                f(0.8, 1.0, 0.0, 1.0),
                f(0.4, 1.0, -0.2, 1.0),
                f(0.0, 0.7, 0.0, 1.3),
                f(-0.3, 1.0, 0.2, 1.2),
                f(0.0, 1.0, 0.0, 1.0),
            ],
        }
    }
}

impl SyntheticModel {
    /// Appends `k` features with identical unit gaussians for both classes.
    pub fn with_null_features(mut self, k: usize) -> Self {
        self.features.extend(std::iter::repeat_n(
            FeatureShape {
                signal_mean: 0.0,
                signal_std: 1.0,
                background_mean: 0.0,
                background_std: 1.0,
            },
            k,
        ));
        self
    }

    pub fn feature_names(&self) -> Vec<String> {
        (0..self.features.len()).map(|j| format!("x{j}")).collect()
    }

    /// Exact `log p(x|S) / p(x|B)`; monotone in the Bayes-optimal score.
    pub fn log_likelihood_ratio(&self, x: &[f64]) -> f64 {
        self.features.iter().zip(x).map(|(f, &v)| f.log_ratio(v)).sum()
    }

    /// Exact `P(S | x)` for a given signal fraction.
    pub fn posterior(&self, x: &[f64], signal_fraction: f64) -> f64 {
        let logit = self.log_likelihood_ratio(x) + (signal_fraction / (1.0 - signal_fraction)).ln();
        crate::losses::sigmoid(logit)
    }

    /// The mixture model with the true shapes and the given yields.
    pub fn mixture(&self, signal_yield: f64, background_yield: f64) -> MixtureModel {
        MixtureModel::new(vec![
            (self.signal_mass.clone(), signal_yield),
            (self.background_mass.clone(), background_yield),
        ])
        .expect("yields validated by caller")
    }
}

/// Draws `n` labelled events with the default synthetic model.
pub fn generate_synthetic(n: usize, signal_fraction: f64, seed: u64) -> Result<Dataset, DataError> {
    generate_with(&SyntheticModel::default(), n, signal_fraction, seed)
}

/// Draws `n` events: label ~ Bernoulli(fraction), mass from the class shape,
/// features from the class-conditional gaussians. Chunks of
/// [`GENERATION_CHUNK`] events use independent streams of one seed, so the
/// output does not depend on the worker count.
pub fn generate_with(model: &SyntheticModel, n: usize, signal_fraction: f64, seed: u64) -> Result<Dataset, DataError> {
    if n < 2 {
        return Err(DataError::InvalidArgument(format!("need at least 2 events, got {n}")));
    }
    if !(signal_fraction > 0.0 && signal_fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "signal fraction {signal_fraction} outside (0, 1)"
        )));
    }
    let d = model.features.len();
    let n_chunks = n.div_ceil(GENERATION_CHUNK);
    let chunks: Vec<(Vec<f64>, Vec<f64>, Vec<bool>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = GENERATION_CHUNK.min(n - c * GENERATION_CHUNK);
            let mut x = Vec::with_capacity(len * d);
            let mut m = Vec::with_capacity(len);
            let mut y = Vec::with_capacity(len);
            for _ in 0..len {
                let is_signal = rng.random::<f64>() < signal_fraction;
                let shape = if is_signal { &model.signal_mass } else { &model.background_mass };
                m.push(shape.sample_one(&mut rng));
                for f in &model.features {
                    let z: f64 = rng.sample(StandardNormal);
                    x.push(if is_signal {
                        f.signal_mean + f.signal_std * z
                    } else {
                        f.background_mean + f.background_std * z
                    });
                }
                y.push(is_signal);
            }
            (x, m, y)
        })
        .collect();
    let mut x = Vec::with_capacity(n * d);
    let mut mass = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (cx, cm, cy) in chunks {
        x.extend(cx);
        mass.extend(cm);
        labels.extend(cy);
    }
    Dataset::new(model.feature_names(), x, mass, Some(labels))
}

/// What [`attach_sweights`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct SweightAttachment {
    pub fit: YieldFit,
    /// sWeights for the input rows, before flagged rows were dropped.
    pub table: SWeightTable,
    /// Input rows removed because their mixture denominator was degenerate.
    pub dropped_rows: Vec<usize>,
}

/// Fits yields, computes sWeights, and attaches the signal/background
/// sWeights and per-event mass densities. Flagged rows are removed.
pub fn attach_sweights(ds: &Dataset, mm: &MixtureModel) -> Result<(Dataset, SweightAttachment), DataError> {
    if mm.n_species() != 2 {
        return Err(DataError::SpeciesCount(mm.n_species()));
    }
    let (fit, table) = fit_and_compute(&ds.mass, mm)?;
    let dropped_rows = table.flagged_events.clone();
    let keep: Vec<usize> = {
        let mut flagged = dropped_rows.iter().peekable();
        (0..ds.len())
            .filter(|i| {
                if flagged.peek() == Some(&i) {
                    flagged.next();
                    false
                } else {
                    true
                }
            })
            .collect()
    };
    let mut out = ds.subset(&keep);
    out.sweights = Some(keep.iter().map(|&i| [table.get(i, 0), table.get(i, 1)]).collect());
    out.p_signal = Some(keep.iter().map(|&i| mm.shape(0).evaluate(ds.mass[i])).collect());
    out.p_background = Some(keep.iter().map(|&i| mm.shape(1).evaluate(ds.mass[i])).collect());
    Ok((
        out,
        SweightAttachment {
            fit,
            table,
            dropped_rows,
        },
    ))
}

/// Column roles for [`ingest_csv`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvSchema {
    pub mass: String,
    pub label: Option<String>,
    /// Feature columns; `None` takes every column that is not mass or label.
    pub features: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub rows: usize,
    pub feature_columns: Vec<String>,
}

fn parse_strict(cell: &str, column: &str, line: usize) -> Result<f64, DataError> {
    let v: f64 = cell.trim().parse().map_err(|_| DataError::Malformed {
        line,
        reason: format!("column `{column}`: `{cell}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(DataError::Malformed {
            line,
            reason: format!("column `{column}`: non-finite value `{cell}`"),
        });
    }
    Ok(v)
}

/// Reads a headered, comma-separated file (gzip when the name ends in `.gz`).
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<(Dataset, IngestReport), DataError> {
    let file = std::fs::File::open(path)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    ingest_reader(BufReader::new(reader), schema)
}

pub fn ingest_reader<R: BufRead>(reader: R, schema: &CsvSchema) -> Result<(Dataset, IngestReport), DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let mass_idx = find(&schema.mass)?;
    let label_idx = schema.label.as_deref().map(find).transpose()?;
    let feature_names: Vec<String> = match &schema.features {
        Some(list) => list.clone(),
        None => header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != mass_idx && Some(*i) != label_idx)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let feature_idx: Vec<usize> = feature_names.iter().map(|f| find(f)).collect::<Result<_, _>>()?;

    let mut x = Vec::new();
    let mut mass = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| DataError::Malformed {
            line,
            reason: e.to_string(),
        })?;
        for (&j, name) in feature_idx.iter().zip(&feature_names) {
            x.push(parse_strict(&rec[j], name, line)?);
        }
        mass.push(parse_strict(&rec[mass_idx], &schema.mass, line)?);
        if let (Some(j), Some(ys)) = (label_idx, labels.as_mut()) {
            let v = parse_strict(&rec[j], schema.label.as_deref().unwrap_or(""), line)?;
            if v != 0.0 && v != 1.0 {
                return Err(DataError::Malformed {
                    line,
                    reason: format!("label `{}` is not 0 or 1", &rec[j]),
                });
            }
            ys.push(v == 1.0);
        }
    }
    let rows = mass.len();
    let ds = Dataset::new(feature_names.clone(), x, mass, labels)?;
    Ok((
        ds,
        IngestReport {
            rows,
            feature_columns: feature_names,
        },
    ))
}

/// Signal-region labels for classification without labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CwolaLabeling {
    pub lo: f64,
    pub hi: f64,
    pub labels: Vec<bool>,
    pub inside_fraction: f64,
}

impl CwolaLabeling {
    pub fn contains(&self, m: f64) -> bool {
        m >= self.lo && m <= self.hi
    }

    /// Applies the same interval to other masses.
    pub fn label(&self, masses: &[f64]) -> Vec<bool> {
        masses.iter().map(|&m| self.contains(m)).collect()
    }

    pub fn objective(&self) -> Objective {
        Objective::PlainCe {
            labels: self.labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Interval `[center - h, center + h]` holding at least `inside_fraction` of
/// the events, with `h` found by bisection to 1e-6 mass units.
pub fn cwola_label(masses: &[f64], center: f64, inside_fraction: f64) -> Result<CwolaLabeling, DataError> {
    if masses.is_empty() {
        return Err(DataError::InvalidArgument("no events to label".into()));
    }
    if !(inside_fraction > 0.0 && inside_fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "inside fraction {inside_fraction} outside (0, 1)"
        )));
    }
    let n = masses.len() as f64;
    let fraction = |h: f64| masses.iter().filter(|&&m| (m - center).abs() <= h).count() as f64 / n;
    let mut lo = 0.0;
    let mut hi = masses.iter().map(|m| (m - center).abs()).fold(0.0, f64::max);
    if fraction(lo) < inside_fraction {
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            if fraction(mid) >= inside_fraction {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    } else {
        hi = 0.0;
    }
    let achieved = fraction(hi);
    if achieved - inside_fraction > 0.01 {
        return Err(DataError::InvalidArgument(format!(
            "inside fraction {inside_fraction} unreachable: smallest interval holds {achieved:.4}"
        )));
    }
    let (lo, hi) = (center - hi, center + hi);
    let labels = masses.iter().map(|&m| m >= lo && m <= hi).collect();
    Ok(CwolaLabeling {
        lo,
        hi,
        labels,
        inside_fraction: achieved,
    })
}

/// Seeded shuffle then partition into `(train, test)`. Rows keep their
/// original relative order inside each part.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (ds.len() as f64 * test_fraction).round() as usize;
    let (test, train) = idx.split_at_mut(n_test);
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(train), ds.subset(test)))
}
