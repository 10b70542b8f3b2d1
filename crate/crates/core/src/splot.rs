//! sPlot: species covariance matrix, per-event sWeights and the yield fit
//! they rely on.
//!
//! With yields at the maximum-likelihood point the sWeights satisfy two exact
//! identities: each event's weights sum to one across species, and each
//! species' weights sum to its fitted yield.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::density::{Density1D, MixtureModel, DENOMINATOR_FLOOR};
use crate::linalg::{chunked_sum, neumaier_sum, InversionFailure, SquareMatrix};

/// Reject V when its 1-norm condition number exceeds this.
pub const MAX_CONDITION: f64 = 1e12;

pub const EM_TOLERANCE: f64 = 1e-10;
pub const EM_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplotError {
    #[error("every event has a degenerate mixture denominator")]
    AllEventsDegenerate,
    #[error("species indistinguishable: inverse covariance matrix is singular")]
    SpeciesIndistinguishable,
    #[error("ill-conditioned V (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("invalid initial yields: {0}")]
    InvalidInitialYields(String),
    #[error("yield fit did not converge after {iterations} iterations (last iterate {last:?})")]
    NonConvergence { iterations: usize, last: Vec<f64> },
    #[error("yields are unidentifiable: likelihood has a flat direction")]
    Unidentifiable,
    #[error("shape count {shapes} does not match yield count {yields}")]
    ShapeCountMismatch { shapes: usize, yields: usize },
    #[error("{0}")]
    Mixture(#[from] crate::density::MixtureError),
}

impl From<InversionFailure> for SplotError {
    fn from(f: InversionFailure) -> Self {
        match f {
            InversionFailure::Singular => SplotError::SpeciesIndistinguishable,
            InversionFailure::IllConditioned(c) => SplotError::IllConditioned(c),
        }
    }
}

/// `V⁻¹` together with the events left out of the sum.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseCovariance {
    pub matrix: SquareMatrix,
    pub flagged_events: Vec<usize>,
}

fn flagged_indices(masses: &[f64], mm: &MixtureModel) -> Vec<usize> {
    masses
        .iter()
        .enumerate()
        .filter(|(_, &m)| mm.evaluate(m).is_degenerate())
        .map(|(e, _)| e)
        .collect()
}

/// Accumulates `V⁻¹_nj = Σ_e p_n(m_e) p_j(m_e) / (Σ_k N_k p_k(m_e))²` over
/// events with a non-degenerate denominator.
pub fn compute_vinv(masses: &[f64], mm: &MixtureModel) -> Result<InverseCovariance, SplotError> {
    let k = mm.n_species();
    let flagged_events = flagged_indices(masses, mm);
    if flagged_events.len() == masses.len() {
        return Err(SplotError::AllEventsDegenerate);
    }
    let sums = chunked_sum(masses.len(), k * k, |e, acc| {
        let point = mm.evaluate(masses[e]);
        if point.is_degenerate() {
            return;
        }
        let d2 = point.denominator * point.denominator;
        for n in 0..k {
            for j in n..k {
                acc[n * k + j] += point.densities[n] * point.densities[j] / d2;
            }
        }
    });
    let mut matrix = SquareMatrix::zeros(k);
    for n in 0..k {
        for j in n..k {
            matrix.set(n, j, sums[n * k + j]);
            matrix.set(j, n, sums[n * k + j]);
        }
    }
    Ok(InverseCovariance {
        matrix,
        flagged_events,
    })
}

/// Per-event sWeights with the covariance they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SWeightTable {
    n_species: usize,
    /// Row-major `[n_events × n_species]`.
    weights: Vec<f64>,
    pub covariance: SquareMatrix,
    pub yields: Vec<f64>,
    pub flagged_events: Vec<usize>,
    pub condition_number: f64,
}

impl SWeightTable {
    pub fn n_events(&self) -> usize {
        self.weights.len() / self.n_species.max(1)
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    pub fn row(&self, e: usize) -> &[f64] {
        &self.weights[e * self.n_species..(e + 1) * self.n_species]
    }

    pub fn get(&self, e: usize, species: usize) -> f64 {
        self.weights[e * self.n_species + species]
    }

    /// All sWeights of one species, in event order.
    pub fn column(&self, species: usize) -> Vec<f64> {
        (0..self.n_events()).map(|e| self.get(e, species)).collect()
    }

    pub fn species_sums(&self) -> Vec<f64> {
        (0..self.n_species)
            .map(|s| neumaier_sum((0..self.n_events()).map(|e| self.get(e, s))))
            .collect()
    }

    /// Writes `event_index,sweight_<name>...` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W, species_names: &[&str]) -> std::io::Result<()> {
        assert_eq!(species_names.len(), self.n_species, "one name per species");
        let mut header = String::from("event_index");
        for name in species_names {
            header.push_str(",sweight_");
            header.push_str(name);
        }
        writeln!(out, "{header}")?;
        for e in 0..self.n_events() {
            write!(out, "{e}")?;
            for v in self.row(e) {
                write!(out, ",{}", crate::fmt_f64(*v))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, species_names: &[&str]) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w, species_names)?;
        w.flush()
    }
}

/// sWeights for every event using the yields stored in `mm`.
///
/// Flagged events (degenerate denominator) get zero weight in every species.
pub fn compute_sweights(masses: &[f64], mm: &MixtureModel) -> Result<SWeightTable, SplotError> {
    let vinv = compute_vinv(masses, mm)?;
    let (covariance, condition_number) = vinv.matrix.inverse(MAX_CONDITION)?;
    let k = mm.n_species();
    let mut weights = vec![0.0; masses.len() * k];
    let mut flagged = vinv.flagged_events.iter().peekable();
    for (e, &m) in masses.iter().enumerate() {
        if flagged.peek() == Some(&&e) {
            flagged.next();
            continue;
        }
        let point = mm.evaluate(m);
        let numer = covariance.mul_vec(&point.densities);
        for n in 0..k {
            weights[e * k + n] = numer[n] / point.denominator;
        }
    }
    Ok(SWeightTable {
        n_species: k,
        weights,
        covariance,
        yields: mm.yields(),
        flagged_events: vinv.flagged_events,
        condition_number,
    })
}

/// Result of the maximum-likelihood yield fit.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldFit {
    pub yields: Vec<f64>,
    pub iterations: usize,
    /// `Σ_e log Σ_k N_k p_k(m_e)` before the first update and after every
    /// accepted update.
    pub log_likelihood: Vec<f64>,
}

fn log_likelihood(table: &[Vec<f64>], yields: &[f64]) -> f64 {
    neumaier_sum(table.iter().map(|p| {
        p.iter()
            .zip(yields)
            .map(|(p, n)| p * n)
            .sum::<f64>()
            .ln()
    }))
}

/// Fraction of the total below which a shrinking yield is tested for a
/// boundary optimum.
const BOUNDARY_PROBE: f64 = 1e-6;

/// Maximum-likelihood yields with `Σ_k N_k = total`, by EM.
///
/// Each iteration applies `N_k ← (total / n) Σ_e N_k p_k(m_e) / Σ_j N_j p_j(m_e)`
/// over the `n` non-degenerate events. The log-likelihood never decreases;
/// an update whose computed likelihood is lower than the last one ends the
/// iteration unaccepted.
/// EM creeps towards a zero yield only sublinearly, so a yield that drops
/// below `1e-6 · total` is set to zero when doing so does not lower the
/// likelihood.
pub fn fit_yields(
    masses: &[f64],
    shapes: &[Density1D],
    init_yields: &[f64],
    total: f64,
) -> Result<YieldFit, SplotError> {
    if shapes.len() != init_yields.len() {
        return Err(SplotError::ShapeCountMismatch {
            shapes: shapes.len(),
            yields: init_yields.len(),
        });
    }
    if !(total.is_finite() && total > 0.0) {
        return Err(SplotError::InvalidInitialYields(format!("total must be positive, got {total}")));
    }
    if let Some(bad) = init_yields.iter().find(|y| !(y.is_finite() && **y > 0.0)) {
        return Err(SplotError::InvalidInitialYields(format!("yield {bad} is not positive")));
    }
    let init_sum: f64 = init_yields.iter().sum();
    if (init_sum - total).abs() > 1e-9 * total {
        return Err(SplotError::InvalidInitialYields(format!(
            "initial yields sum to {init_sum}, expected {total}"
        )));
    }

    // densities depend on m only; tabulate once
    let table: Vec<Vec<f64>> = masses
        .iter()
        .map(|&m| shapes.iter().map(|d| d.evaluate(m)).collect::<Vec<_>>())
        .filter(|p: &Vec<f64>| p.iter().zip(init_yields).map(|(p, n)| p * n).sum::<f64>() >= DENOMINATOR_FLOOR)
        .collect();
    if table.is_empty() {
        return Err(SplotError::AllEventsDegenerate);
    }
    let n_valid = table.len() as f64;
    let scale = total / n_valid;
    let k = shapes.len();

    let mut yields = init_yields.to_vec();
    let mut trace = vec![log_likelihood(&table, &yields)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < EM_MAX_ITERATIONS {
        iterations += 1;
        let mut next = vec![0.0; k];
        for p in &table {
            let denom: f64 = p.iter().zip(&yields).map(|(p, n)| p * n).sum();
            for s in 0..k {
                next[s] += yields[s] * p[s] / denom;
            }
        }
        for v in &mut next {
            *v *= scale;
        }
        let mut ll = log_likelihood(&table, &next);

        for s in 0..k {
            if next[s] > 0.0 && next[s] < BOUNDARY_PROBE * total {
                let mut snapped = next.clone();
                let freed = snapped[s];
                snapped[s] = 0.0;
                let rest: f64 = snapped.iter().sum();
                for v in &mut snapped {
                    *v *= (rest + freed) / rest;
                }
                let snapped_ll = log_likelihood(&table, &snapped);
                if snapped_ll >= ll {
                    next = snapped;
                    ll = snapped_ll;
                }
            }
        }

        // EM cannot lower the likelihood; a computed drop is rounding at the
        // optimum
        if ll < trace[trace.len() - 1] {
            converged = true;
            break;
        }

        let max_rel_change = next
            .iter()
            .zip(&yields)
            .map(|(a, b)| {
                if *a == 0.0 && *b == 0.0 {
                    0.0
                } else {
                    (a - b).abs() / a.abs().max(b.abs())
                }
            })
            .fold(0.0, f64::max);
        yields = next;
        trace.push(ll);
        if max_rel_change < EM_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SplotError::NonConvergence {
            iterations,
            last: yields,
        });
    }

    // a singular information matrix means some direction leaves the
    // likelihood unchanged
    let info = chunked_sum(table.len(), k * k, |e, acc| {
        let p = &table[e];
        let denom: f64 = p.iter().zip(&yields).map(|(p, n)| p * n).sum();
        let d2 = denom * denom;
        for i in 0..k {
            for j in 0..k {
                acc[i * k + j] += p[i] * p[j] / d2;
            }
        }
    });
    let rows: Vec<Vec<f64>> = info.chunks(k).map(<[f64]>::to_vec).collect();
    if SquareMatrix::from_rows(&rows).inverse(MAX_CONDITION).is_err() {
        return Err(SplotError::Unidentifiable);
    }

    Ok(YieldFit {
        yields,
        iterations,
        log_likelihood: trace,
    })
}

/// Fits yields starting from the model's current ones (rescaled to the event
/// count) and computes sWeights at the fitted point.
pub fn fit_and_compute(masses: &[f64], mm: &MixtureModel) -> Result<(YieldFit, SWeightTable), SplotError> {
    let shapes: Vec<Density1D> = mm.shapes().cloned().collect();
    let n_valid = masses.len() - flagged_indices(masses, mm).len();
    if n_valid == 0 {
        return Err(SplotError::AllEventsDegenerate);
    }
    let total = n_valid as f64;
    let current = mm.yields();
    let current_sum: f64 = current.iter().sum();
    let init: Vec<f64> = if current_sum > 0.0 && current.iter().all(|&y| y > 0.0) {
        current.iter().map(|y| y * total / current_sum).collect()
    } else {
        vec![total / shapes.len() as f64; shapes.len()]
    };
    let fit = fit_yields(masses, &shapes, &init, total)?;
    let fitted = mm.with_yields(&fit.yields)?;
    let table = compute_sweights(masses, &fitted)?;
    Ok((fit, table))
}

/// One bin of [`conditional_sweight_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_sweight: f64,
    pub label_fraction: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalCheck {
    pub bins: Vec<ConditionalBin>,
    /// Indices of requested bins that held no events.
    pub empty_bins: Vec<usize>,
}

impl ConditionalCheck {
    pub fn count_within(&self, z_bound: f64) -> usize {
        self.bins.iter().filter(|b| b.z.abs() < z_bound).count()
    }
}

/// Compares the per-bin mean signal sWeight with the per-bin signal label
/// fraction, binning a control variable into equal-population bins.
///
/// The z-score uses the paired per-event difference `w_e - y_e`:
/// `z = Σ(w - y) / sqrt(Σ(w - y)²)`. For indicator weights this reduces to
/// the binomial variance of the label fraction.
pub fn conditional_sweight_check(
    control: &[f64],
    labels: &[bool],
    signal_sweights: &[f64],
    n_bins: usize,
) -> ConditionalCheck {
    assert_eq!(control.len(), labels.len(), "column length mismatch");
    assert_eq!(control.len(), signal_sweights.len(), "column length mismatch");
    let mut order: Vec<usize> = (0..control.len()).collect();
    order.sort_by(|&a, &b| control[a].total_cmp(&control[b]));
    let n = order.len();
    let mut bins = Vec::new();
    let mut empty_bins = Vec::new();
    let edge = |i: usize| -> usize { i * n / n_bins.max(1) };
    for b in 0..n_bins {
        let (start, end) = (edge(b), edge(b + 1));
        if start >= end {
            empty_bins.push(b);
            continue;
        }
        let members = &order[start..end];
        let count = members.len();
        let sum_w = neumaier_sum(members.iter().map(|&e| signal_sweights[e]));
        let sum_y = members.iter().filter(|&&e| labels[e]).count() as f64;
        let sum_d2 = neumaier_sum(members.iter().map(|&e| {
            let d = signal_sweights[e] - if labels[e] { 1.0 } else { 0.0 };
            d * d
        }));
        let diff = sum_w - sum_y;
        let z = if sum_d2 > 0.0 {
            diff / sum_d2.sqrt()
        } else if diff.abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        };
        bins.push(ConditionalBin {
            lo: control[members[0]],
            hi: control[members[count - 1]],
            count,
            mean_sweight: sum_w / count as f64,
            label_fraction: sum_y / count as f64,
            z,
        });
    }
    ConditionalCheck { bins, empty_bins }
}
