//! Tempered logarithm/exponential, the tempered softmax and the Bi-Tempered loss.

use super::{check_label, LossEval, Probabilities};
use crate::error::{ArlError, Result};

/// Below this distance from 1 the temperature is treated as exactly 1.
const UNIT_TEMPERATURE_TOL: f64 = 1e-8;

pub const SOLVER_TOL: f64 = 1e-12;
pub const SOLVER_MAX_ITERS: usize = 200;
const MAX_BRACKET_DOUBLINGS: usize = 200;

/// Central-difference step used for the temperature gradients.
pub const TEMPERATURE_FD_STEP: f64 = 1e-4;

/// `(x^(1-t) - 1) / (1 - t)`, the natural log at `t = 1`.
pub fn log_t(x: f64, t: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(ArlError::Domain(format!("log_t requires x > 0, got {x}")));
    }
    Ok(log_t_unchecked(x, t))
}

pub(crate) fn log_t_unchecked(x: f64, t: f64) -> f64 {
    let one_minus_t = 1.0 - t;
    if one_minus_t.abs() < UNIT_TEMPERATURE_TOL {
        x.ln()
    } else {
        (one_minus_t * x.ln()).exp_m1() / one_minus_t
    }
}

/// `[1 + (1-t) x]_+^(1/(1-t))`, the natural exponential at `t = 1`.
///
/// For `t > 1` the base can hit zero from above, where the power diverges; that
/// case returns `+inf`. The tempered softmax only evaluates non-positive
/// arguments, which never reach it.
pub fn exp_t(x: f64, t: f64) -> f64 {
    let one_minus_t = 1.0 - t;
    if one_minus_t.abs() < UNIT_TEMPERATURE_TOL {
        return x.exp();
    }
    let scaled = one_minus_t * x;
    if scaled <= -1.0 {
        return if one_minus_t > 0.0 { 0.0 } else { f64::INFINITY };
    }
    (scaled.ln_1p() / one_minus_t).exp()
}

/// Raw solution of `sum_j exp_t(z_j - gamma) = 1`. Returns unclamped probabilities
/// and the normalizer.
pub(crate) fn solve_tempered(z: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
    if z.is_empty() {
        return Err(ArlError::InvalidInput("empty logit vector".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(ArlError::InvalidInput(format!("non-finite logits {z:?}")));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = z.iter().map(|v| v - max).collect();
    let excess = |g: f64| shifted.iter().map(|&s| exp_t(s - g, t)).sum::<f64>() - 1.0;

    // excess(0) >= 0 since the largest term is exactly 1.
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut doublings = 0;
    while excess(hi) >= 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS {
            return Err(ArlError::Numeric(format!(
                "tempered softmax: could not bracket the normalizer (t = {t}, upper = {hi})"
            )));
        }
    }

    let mut iters = 0;
    while hi - lo > SOLVER_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iters += 1;
        if iters >= SOLVER_MAX_ITERS {
            return Err(ArlError::Numeric(format!(
                "tempered softmax: bisection did not converge (t = {t}, bracket = [{lo}, {hi}], width = {})",
                hi - lo
            )));
        }
    }

    // Newton polish inside the final bracket; d excess / d gamma = -sum p^t.
    let mut gamma = 0.5 * (lo + hi);
    for _ in 0..3 {
        let f = excess(gamma);
        let slope: f64 = shifted.iter().map(|&s| exp_t(s - gamma, t).powf(t)).sum();
        if slope <= 0.0 || f == 0.0 {
            break;
        }
        let next = gamma + f / slope;
        if !(next >= lo && next <= hi) || excess(next).abs() >= f.abs() {
            break;
        }
        gamma = next;
    }

    let p = shifted.iter().map(|&s| exp_t(s - gamma, t)).collect();
    Ok((p, gamma + max))
}

/// Heavy-tailed softmax `p_j = exp_t(z_j - gamma)` with `gamma` chosen so the
/// probabilities sum to one.
pub fn tempered_softmax(z: &[f64], t2: f64) -> Result<(Probabilities, f64)> {
    if !(t2 > 1.0) {
        return Err(ArlError::Domain(format!("tempered softmax requires t2 > 1, got {t2}")));
    }
    let (p, gamma) = solve_tempered(z, t2)?;
    Ok((Probabilities::clamped(p), gamma))
}

/// Loss value on a probability vector (no temperature-2 dependence).
pub(crate) fn bi_tempered_on_probs(p: &[f64], label: usize, t1: f64) -> f64 {
    let floor = super::PROB_FLOOR;
    let py = p[label].max(floor);
    let two_minus_t1 = 2.0 - t1;
    let power_sum: f64 = p.iter().map(|&v| v.max(0.0).powf(two_minus_t1)).sum();
    (-log_t_unchecked(py, t1) - (1.0 - power_sum) / two_minus_t1).max(0.0)
}

fn bi_tempered_value(z: &[f64], label: usize, t1: f64, t2: f64) -> Result<f64> {
    let (p, _) = solve_tempered(z, t2)?;
    Ok(bi_tempered_on_probs(&p, label, t1))
}

/// Value and logit gradient only (no temperature gradients).
pub(crate) fn bi_tempered_with_logit_grad(z: &[f64], label: usize, t1: f64, t2: f64) -> Result<(f64, Vec<f64>)> {
    if !(0.0..1.0).contains(&t1) {
        return Err(ArlError::Domain(format!("t1 = {t1} outside [0, 1)")));
    }
    if !(t2 > 1.0) {
        return Err(ArlError::Domain(format!("t2 = {t2} must exceed 1")));
    }
    check_label(label, z.len())?;
    let (p, _) = solve_tempered(z, t2)?;
    let value = bi_tempered_on_probs(&p, label, t1);

    let py = p[label].max(super::PROB_FLOOR);
    let dl_dp: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(j, &pj)| {
            let mut g = pj.powf(1.0 - t1);
            if j == label {
                g -= py.powf(-t1);
            }
            g
        })
        .collect();
    let s: Vec<f64> = p.iter().map(|&pj| pj.powf(t2)).collect();
    let s_total: f64 = s.iter().sum();
    let weighted: f64 = dl_dp.iter().zip(&s).map(|(g, s)| g * s).sum();
    let grad_logits = dl_dp
        .iter()
        .zip(&s)
        .map(|(g, &sk)| g * sk - sk * weighted / s_total)
        .collect();
    Ok((value, grad_logits))
}

/// Bi-Tempered logistic loss of the logits `z` against `label`.
///
/// The logit gradient goes through the implicit normalizer: with `s_j = p_j^t2`,
/// `dp_j/dz_k = s_j (delta_jk - s_k / sum s)`. Temperature gradients use central
/// differences with step [`TEMPERATURE_FD_STEP`].
pub fn bi_tempered(z: &[f64], label: usize, t1: f64, t2: f64) -> Result<LossEval> {
    let (value, grad_logits) = bi_tempered_with_logit_grad(z, label, t1, t2)?;

    let h1 = TEMPERATURE_FD_STEP;
    let d_t1 = (bi_tempered_value(z, label, t1 + h1, t2)? - bi_tempered_value(z, label, t1 - h1, t2)?) / (2.0 * h1);
    let h2 = TEMPERATURE_FD_STEP.min(0.5 * (t2 - 1.0));
    let d_t2 = (bi_tempered_value(z, label, t1, t2 + h2)? - bi_tempered_value(z, label, t1, t2 - h2)?) / (2.0 * h2);

    Ok(LossEval {
        value,
        grad_logits,
        grad_hyper: vec![d_t1, d_t2],
    })
}
