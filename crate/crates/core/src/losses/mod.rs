//! Robust classification losses with learnable hyperparameters.
//!
//! Every loss reports its value together with the gradient with respect to the
//! logits and with respect to its active hyperparameters (in constrained
//! coordinates, slot order of [`HyperParams::names`]).
//!
//! - [`ce`]: cross entropy
//! - [`gce`]: generalized cross entropy, `(1 - p^q) / q`
//! - [`rce`] / [`sl`]: reverse cross entropy and the symmetric combination
//! - [`bi_tempered`]: tempered log/exp loss over a tempered softmax
//! - [`polysoft`]: polynomial soft-weighting latent loss of the CE value
//!
//! The probability-based losses assume their input came from a standard softmax
//! and return gradients with respect to the logits of that softmax.

mod hyper;
mod tempered;

pub use hyper::{sigmoid, softplus, softplus_inverse, HyperParams, LossVariant, UnconstrainedHyper, DEFAULT_RCE_A, EPS_Q, EPS_T};
pub use tempered::{bi_tempered, exp_t, log_t, tempered_softmax, SOLVER_MAX_ITERS, SOLVER_TOL, TEMPERATURE_FD_STEP};

pub(crate) use tempered::bi_tempered_on_probs;
use tempered::bi_tempered_with_logit_grad;

use crate::error::{ArlError, Result};

/// Probabilities are clamped to this floor before logs and powers.
pub const PROB_FLOOR: f64 = 1e-12;

/// A probability vector with every entry at least [`PROB_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities(Vec<f64>);

impl Probabilities {
    /// Validates a user-supplied distribution (finite, non-negative, sums to 1
    /// within `1e-8`) and applies the floor.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(ArlError::InvalidInput("empty probability vector".into()));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ArlError::InvalidInput(format!("invalid probabilities {p:?}")));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(ArlError::InvalidInput(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self::clamped(p))
    }

    pub(crate) fn clamped(mut p: Vec<f64>) -> Self {
        for v in &mut p {
            *v = v.max(PROB_FLOOR);
        }
        Probabilities(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Loss value plus gradients with respect to the logits and the active hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad_logits: Vec<f64>,
    pub grad_hyper: Vec<f64>,
}

pub(crate) fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(ArlError::InvalidInput(format!("label {label} out of range for {classes} classes")));
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Result<Probabilities> {
    if z.is_empty() || z.iter().any(|v| !v.is_finite()) {
        return Err(ArlError::InvalidInput(format!("invalid logits {z:?}")));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Probabilities::clamped(exps.into_iter().map(|e| e / total).collect()))
}

/// `-p_label * (delta - p)` scaled by `dl_dpy`: logit gradient of a loss that
/// depends on the softmax output only through `p_label`.
fn through_softmax(p: &[f64], label: usize, dl_dpy: f64) -> Vec<f64> {
    let py = p[label];
    p.iter()
        .enumerate()
        .map(|(k, &pk)| {
            let delta = if k == label { 1.0 } else { 0.0 };
            dl_dpy * py * (delta - pk)
        })
        .collect()
}

pub fn ce(probs: &Probabilities, label: usize) -> Result<LossEval> {
    let p = probs.as_slice();
    check_label(label, p.len())?;
    let value = -p[label].ln();
    let grad_logits = p
        .iter()
        .enumerate()
        .map(|(k, &pk)| if k == label { pk - 1.0 } else { pk })
        .collect();
    Ok(LossEval {
        value,
        grad_logits,
        grad_hyper: vec![],
    })
}

pub fn gce(probs: &Probabilities, label: usize, q: f64) -> Result<LossEval> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(ArlError::Domain(format!("q = {q} outside (0, 1]")));
    }
    let p = probs.as_slice();
    check_label(label, p.len())?;
    let py = p[label];
    let pq = py.powf(q);
    let value = (1.0 - pq) / q;
    let d_q = -(pq * py.ln()) / q - (1.0 - pq) / (q * q);
    Ok(LossEval {
        value,
        grad_logits: through_softmax(p, label, -py.powf(q - 1.0)),
        grad_hyper: vec![d_q],
    })
}

pub fn rce(probs: &Probabilities, label: usize, rce_a: f64) -> Result<LossEval> {
    if !(rce_a < 0.0) {
        return Err(ArlError::Domain(format!("rce_a = {rce_a} must be negative")));
    }
    let p = probs.as_slice();
    check_label(label, p.len())?;
    let off_label: f64 = p.iter().enumerate().filter(|&(j, _)| j != label).map(|(_, v)| v).sum();
    // sum_{j != label} p_j = 1 - p_label on the simplex, so the logit gradient
    // only flows through p_label.
    Ok(LossEval {
        value: -rce_a * off_label,
        grad_logits: through_softmax(p, label, rce_a),
        grad_hyper: vec![],
    })
}

/// `gamma1 * ce + gamma2 * rce`; the hyper-gradient is `(ce, rce)` exactly.
pub fn sl(probs: &Probabilities, label: usize, gamma1: f64, gamma2: f64, rce_a: f64) -> Result<LossEval> {
    if !(gamma1 >= 0.0 && gamma2 >= 0.0) {
        return Err(ArlError::Domain(format!("gamma1 = {gamma1}, gamma2 = {gamma2} must be nonnegative")));
    }
    let c = ce(probs, label)?;
    let r = rce(probs, label, rce_a)?;
    Ok(LossEval {
        value: gamma1 * c.value + gamma2 * r.value,
        grad_logits: c
            .grad_logits
            .iter()
            .zip(&r.grad_logits)
            .map(|(a, b)| gamma1 * a + gamma2 * b)
            .collect(),
        grad_hyper: vec![c.value, r.value],
    })
}

fn check_polysoft(ce_value: f64, lambda: f64, d: f64) -> Result<()> {
    if !(lambda > 0.0) {
        return Err(ArlError::Domain(format!("lambda = {lambda} must be positive")));
    }
    if !(d > 1.0) {
        return Err(ArlError::Domain(format!("d = {d} must exceed 1")));
    }
    if !(ce_value >= 0.0) || !ce_value.is_finite() {
        return Err(ArlError::InvalidInput(format!("ce value {ce_value} must be finite and nonnegative")));
    }
    Ok(())
}

/// Latent robust loss of polynomial soft weighting, as a function of the CE value.
///
/// `grad_logits` is empty here; the derivative with respect to the CE value is
/// [`polysoft_weight`]. Use [`evaluate`] for the composed loss on logits.
pub fn polysoft(ce_value: f64, lambda: f64, d: f64) -> Result<LossEval> {
    check_polysoft(ce_value, lambda, d)?;
    let scale = (d - 1.0) / d;
    let plateau = scale * lambda;
    if ce_value >= lambda {
        return Ok(LossEval {
            value: plateau,
            grad_logits: vec![],
            grad_hyper: vec![scale, lambda / (d * d)],
        });
    }
    let u = 1.0 - ce_value / lambda;
    let exponent = d / (d - 1.0);
    let uk = u.powf(exponent);
    let weight = u.powf(1.0 / (d - 1.0));
    let value = plateau * (1.0 - uk);
    let d_lambda = scale * (1.0 - uk) - weight * ce_value / lambda;
    let d_d = lambda * (1.0 - uk) / (d * d) + lambda * uk * u.ln() / (d * (d - 1.0));
    Ok(LossEval {
        value,
        grad_logits: vec![],
        grad_hyper: vec![d_lambda, d_d],
    })
}

/// Implicit sample weight `(1 - ce/lambda)^(1/(d-1))`, zero once `ce >= lambda`.
pub fn polysoft_weight(ce_value: f64, lambda: f64, d: f64) -> Result<f64> {
    check_polysoft(ce_value, lambda, d)?;
    if ce_value >= lambda {
        return Ok(0.0);
    }
    Ok((1.0 - ce_value / lambda).powf(1.0 / (d - 1.0)))
}

/// Evaluate the configured loss on one sample's logits.
pub fn evaluate(hyper: &HyperParams, logits: &[f64], label: usize) -> Result<LossEval> {
    match *hyper {
        HyperParams::Ce => ce(&softmax(logits)?, label),
        HyperParams::Gce { q } => gce(&softmax(logits)?, label, q),
        HyperParams::Sl { gamma1, gamma2, rce_a } => sl(&softmax(logits)?, label, gamma1, gamma2, rce_a),
        HyperParams::BiTempered { t1, t2 } => bi_tempered(logits, label, t1, t2),
        HyperParams::PolySoft { lambda, d } => {
            let base = ce(&softmax(logits)?, label)?;
            let mut eval = polysoft(base.value, lambda, d)?;
            let weight = polysoft_weight(base.value, lambda, d)?;
            eval.grad_logits = base.grad_logits.iter().map(|g| weight * g).collect();
            Ok(eval)
        }
    }
}

/// Value and logit gradient, skipping the hyperparameter gradient. This is the
/// training path: Bi-Tempered's temperature gradients cost four extra solves.
pub fn value_and_logit_grad(hyper: &HyperParams, logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    match *hyper {
        HyperParams::BiTempered { t1, t2 } => bi_tempered_with_logit_grad(logits, label, t1, t2),
        _ => {
            let eval = evaluate(hyper, logits, label)?;
            Ok((eval.value, eval.grad_logits))
        }
    }
}

/// Loss value only; cheaper than [`evaluate`] for Bi-Tempered.
pub fn value(hyper: &HyperParams, logits: &[f64], label: usize) -> Result<f64> {
    match *hyper {
        HyperParams::BiTempered { t1, t2 } => {
            hyper.validate()?;
            check_label(label, logits.len())?;
            let (p, _) = tempered::solve_tempered(logits, t2)?;
            Ok(bi_tempered_on_probs(&p, label, t1))
        }
        _ => Ok(evaluate(hyper, logits, label)?.value),
    }
}

/// Loss on an explicit probability vector, as used by the bound verifier and the
/// loss-curve emitter. Bi-Tempered takes the vector as its tempered-softmax output.
pub fn value_on_probs(hyper: &HyperParams, probs: &Probabilities, label: usize) -> Result<f64> {
    hyper.validate()?;
    check_label(label, probs.len())?;
    match *hyper {
        HyperParams::Ce => Ok(ce(probs, label)?.value),
        HyperParams::Gce { q } => Ok(gce(probs, label, q)?.value),
        HyperParams::Sl { gamma1, gamma2, rce_a } => Ok(sl(probs, label, gamma1, gamma2, rce_a)?.value),
        HyperParams::BiTempered { t1, .. } => Ok(bi_tempered_on_probs(probs.as_slice(), label, t1)),
        HyperParams::PolySoft { lambda, d } => Ok(polysoft(ce(probs, label)?.value, lambda, d)?.value),
    }
}
