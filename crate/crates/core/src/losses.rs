//! Training objectives over raw logits.
//!
//! Every loss takes the logit `z_i` and applies the sigmoid itself, so the
//! logarithms can be taken in a numerically stable form. Per-event terms are
//! summed, not averaged. Gradients are with respect to `z_i`.

use thiserror::Error;

/// Lower floor on the mixture bracket inside [`exact_likelihood`].
pub const LIKELIHOOD_FLOOR: f64 = 1e-30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("events {0:?} have p_signal = p_background = 0")]
    ZeroDensity(Vec<usize>),
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("non-finite {what} at event {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("label at event {index} is {value}, expected 0 or 1")]
    InvalidLabel { index: usize, value: f64 },
}

/// The four trainable objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    ConstrainedMse,
    ExactLikelihood,
    WeightedCe,
    PlainCe,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::ConstrainedMse => "constrained_mse",
            LossKind::ExactLikelihood => "exact_likelihood",
            LossKind::WeightedCe => "weighted_ce",
            LossKind::PlainCe => "plain_ce",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + (-(a - b).abs()).exp().ln_1p()
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), LossError> {
    if got != expected {
        return Err(LossError::LengthMismatch { what, got, expected });
    }
    Ok(())
}

/// `Σ (w - σ(z))²`: regression of the sigmoid output onto sWeights.
pub fn constrained_mse(z: &[f64], w: &[f64]) -> LossEval {
    assert_eq!(z.len(), w.len(), "logit/weight length mismatch");
    let mut value = 0.0;
    let grad = z
        .iter()
        .zip(w)
        .map(|(&z, &w)| {
            let s = sigmoid(z);
            let r = w - s;
            value += r * r;
            -2.0 * r * s * (1.0 - s)
        })
        .collect();
    LossEval { value, grad }
}

/// `-Σ log[σ(z) p_s + (1 - σ(z)) p_b]`, evaluated in log space and floored at
/// [`LIKELIHOOD_FLOOR`].
pub fn exact_likelihood(z: &[f64], ps: &[f64], pb: &[f64]) -> Result<LossEval, LossError> {
    check_len("p_signal", ps.len(), z.len())?;
    check_len("p_background", pb.len(), z.len())?;
    let zero: Vec<usize> = ps
        .iter()
        .zip(pb)
        .enumerate()
        .filter(|(_, (s, b))| !(**s + **b > 0.0))
        .map(|(i, _)| i)
        .collect();
    if !zero.is_empty() {
        return Err(LossError::ZeroDensity(zero));
    }
    let log_floor = LIKELIHOOD_FLOOR.ln();
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let log_sig = -softplus(-z[i]);
        let log_one_minus = -softplus(z[i]);
        let lps = ps[i].ln();
        let lpb = pb[i].ln();
        let log_bracket = log_add_exp(log_sig + lps, log_one_minus + lpb);
        if log_bracket < log_floor {
            value -= log_floor;
            grad.push(0.0);
            continue;
        }
        value -= log_bracket;
        // σ(1-σ) p / bracket, each factor kept in log space
        let common = log_sig + log_one_minus - log_bracket;
        grad.push(-((common + lps).exp() - (common + lpb).exp()));
    }
    Ok(LossEval { value, grad })
}

/// `Σ [-w_s log σ(z) - w_b log(1 - σ(z))]`. Negative weights are accepted and
/// leave the loss without a lower bound.
pub fn weighted_ce(z: &[f64], ws: &[f64], wb: &[f64]) -> LossEval {
    assert_eq!(z.len(), ws.len(), "logit/weight length mismatch");
    assert_eq!(z.len(), wb.len(), "logit/weight length mismatch");
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        value += ws[i] * softplus(-z[i]) + wb[i] * softplus(z[i]);
        grad.push((ws[i] + wb[i]) * sigmoid(z[i]) - ws[i]);
    }
    LossEval { value, grad }
}

/// Binary cross-entropy against labels in {0, 1}.
pub fn plain_ce(z: &[f64], y: &[f64]) -> Result<LossEval, LossError> {
    check_len("labels", y.len(), z.len())?;
    if let Some((index, &value)) = y.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(LossError::InvalidLabel { index, value });
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        value += if y[i] == 1.0 { softplus(-z[i]) } else { softplus(z[i]) };
        grad.push(sigmoid(z[i]) - y[i]);
    }
    Ok(LossEval { value, grad })
}

/// A loss together with the per-event auxiliary columns it consumes.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    ConstrainedMse { sweights: Vec<f64> },
    ExactLikelihood { ps: Vec<f64>, pb: Vec<f64> },
    WeightedCe { ws: Vec<f64>, wb: Vec<f64> },
    PlainCe { labels: Vec<f64> },
}

impl Objective {
    pub fn kind(&self) -> LossKind {
        match self {
            Objective::ConstrainedMse { .. } => LossKind::ConstrainedMse,
            Objective::ExactLikelihood { .. } => LossKind::ExactLikelihood,
            Objective::WeightedCe { .. } => LossKind::WeightedCe,
            Objective::PlainCe { .. } => LossKind::PlainCe,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Objective::ConstrainedMse { sweights } => sweights.len(),
            Objective::ExactLikelihood { ps, .. } => ps.len(),
            Objective::WeightedCe { ws, .. } => ws.len(),
            Objective::PlainCe { labels } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks that every column has the same length and holds finite values
    /// satisfying the loss preconditions.
    pub fn validate(&self) -> Result<(), LossError> {
        fn finite(what: &'static str, v: &[f64]) -> Result<(), LossError> {
            match v.iter().position(|x| !x.is_finite()) {
                Some(index) => Err(LossError::NonFinite { what, index }),
                None => Ok(()),
            }
        }
        match self {
            Objective::ConstrainedMse { sweights } => finite("sweight", sweights),
            Objective::ExactLikelihood { ps, pb } => {
                check_len("p_background", pb.len(), ps.len())?;
                finite("p_signal", ps)?;
                finite("p_background", pb)?;
                let zero: Vec<usize> = (0..ps.len()).filter(|&i| !(ps[i] + pb[i] > 0.0) || ps[i] < 0.0 || pb[i] < 0.0).collect();
                if zero.is_empty() {
                    Ok(())
                } else {
                    Err(LossError::ZeroDensity(zero))
                }
            }
            Objective::WeightedCe { ws, wb } => {
                check_len("background weight", wb.len(), ws.len())?;
                finite("signal weight", ws)?;
                finite("background weight", wb)
            }
            Objective::PlainCe { labels } => {
                match labels.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
                    Some((index, &value)) => Err(LossError::InvalidLabel { index, value }),
                    None => Ok(()),
                }
            }
        }
    }

    /// Loss and gradient for the events `rows`, with `z[j]` the logit of
    /// event `rows[j]`.
    pub fn evaluate(&self, z: &[f64], rows: &[usize]) -> Result<LossEval, LossError> {
        check_len("logits", z.len(), rows.len())?;
        let gather = |col: &[f64]| rows.iter().map(|&r| col[r]).collect::<Vec<_>>();
        match self {
            Objective::ConstrainedMse { sweights } => Ok(constrained_mse(z, &gather(sweights))),
            Objective::ExactLikelihood { ps, pb } => exact_likelihood(z, &gather(ps), &gather(pb)),
            Objective::WeightedCe { ws, wb } => Ok(weighted_ce(z, &gather(ws), &gather(wb))),
            Objective::PlainCe { labels } => plain_ce(z, &gather(labels)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(f64) -> f64, z: f64, h: f64) -> f64 {
        (f(z + h) - f(z - h)) / (2.0 * h)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-5 * a.abs().max(b.abs()) + 1e-8
    }

    #[test]
    fn cmse_at_half() {
        let e = constrained_mse(&[0.0], &[0.5]);
        assert_eq!(e.value, 0.0);
        assert_eq!(e.grad[0], 0.0);
    }

    #[test]
    fn cmse_negative_weight() {
        let e = constrained_mse(&[0.0], &[-0.2]);
        assert!((e.value - 0.49).abs() < 1e-15);
        assert!((e.grad[0] - 0.35).abs() < 1e-15);
        let fd = central_diff(|z| constrained_mse(&[z], &[-0.2]).value, 0.0, 1e-6);
        assert!(close(fd, e.grad[0]));
    }

    #[test]
    fn cmse_gradient_grid() {
        for wi in -10..=10 {
            let w = wi as f64 * 0.5;
            for zi in -20..=20 {
                let z = zi as f64 * 0.5;
                let e = constrained_mse(&[z], &[w]);
                let fd = central_diff(|z| constrained_mse(&[z], &[w]).value, z, 1e-6);
                assert!(close(fd, e.grad[0]), "w={w} z={z}: {fd} vs {}", e.grad[0]);
            }
        }
    }

    #[test]
    fn likelihood_uninformative_mass() {
        let c = 0.3;
        let z = [-3.0, 0.0, 2.5];
        let e = exact_likelihood(&z, &[c; 3], &[c; 3]).unwrap();
        assert!((e.value + 3.0 * c.ln()).abs() < 1e-12);
        assert!(e.grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn likelihood_separable_goes_to_zero() {
        let e = exact_likelihood(&[40.0, -40.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!(e.value >= 0.0 && e.value < 1e-15);
    }

    #[test]
    fn likelihood_rejects_zero_density() {
        let err = exact_likelihood(&[0.0, 1.0, 2.0], &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.5]).unwrap_err();
        assert_eq!(err, LossError::ZeroDensity(vec![1]));
    }

    #[test]
    fn likelihood_floor_keeps_value_finite() {
        let e = exact_likelihood(&[-1e4], &[1e-20], &[1e-300]).unwrap();
        assert!(e.value.is_finite());
        assert!((e.value + LIKELIHOOD_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn weighted_ce_confident_signal() {
        assert!(weighted_ce(&[50.0], &[1.0], &[0.0]).value < 1e-20);
    }

    #[test]
    fn weighted_ce_negative_weight_unbounded() {
        let mut prev = f64::INFINITY;
        for z in [1.0, 10.0, 100.0, 1e3, 1e4] {
            let v = weighted_ce(&[z], &[0.8], &[-0.3]).value;
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < -1e3);
    }

    #[test]
    fn plain_ce_log2() {
        let e = plain_ce(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((e.value - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!(plain_ce(&[0.0], &[0.5]).is_err());
    }

    #[test]
    fn reduction_to_plain_ce() {
        let z: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.37).chain([-700.0, 700.0]).collect();
        for &zi in &z {
            for y in [0.0, 1.0] {
                let a = exact_likelihood(&[zi], &[y], &[1.0 - y]).unwrap();
                let b = plain_ce(&[zi], &[y]).unwrap();
                if b.value > -LIKELIHOOD_FLOOR.ln() {
                    assert_eq!(a.value, -LIKELIHOOD_FLOOR.ln());
                    assert_eq!(a.grad[0], 0.0);
                    continue;
                }
                assert!((a.value - b.value).abs() <= 1e-12, "z={zi} y={y}");
                assert!((a.grad[0] - b.grad[0]).abs() <= 1e-12, "z={zi} y={y}");
            }
        }
    }

    #[test]
    fn objective_gathers_rows() {
        let obj = Objective::PlainCe {
            labels: vec![0.0, 1.0, 1.0],
        };
        let e = obj.evaluate(&[0.0, 0.0], &[2, 0]).unwrap();
        assert_eq!(e.grad, vec![-0.5, 0.5]);
        assert!(obj.evaluate(&[0.0], &[2, 0]).is_err());
        assert!(Objective::ExactLikelihood { ps: vec![0.0], pb: vec![0.0] }.validate().is_err());
        assert!(Objective::ConstrainedMse { sweights: vec![f64::NAN] }.validate().is_err());
    }
}
