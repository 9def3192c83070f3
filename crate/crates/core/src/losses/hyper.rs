//! Loss hyperparameter sets and their smooth unconstrained reparameterization.
//!
//! Every learnable hyperparameter lives in an open (or half-open) interval. The
//! meta-learning loop updates an unconstrained vector `theta` instead and maps it
//! back through a logistic or softplus transform, so every iterate stays feasible.

use serde::{Deserialize, Serialize};

use crate::error::{ArlError, Result};

/// Lower margin keeping GCE's `q` away from the `q -> 0` singularity.
pub const EPS_Q: f64 = 1e-3;
/// Upper margin keeping Bi-Tempered's `t1` away from 1.
pub const EPS_T: f64 = 1e-3;
/// Default constant of the reverse cross entropy term (must be negative).
pub const DEFAULT_RCE_A: f64 = -4.0;

const BOUNDARY_MARGIN: f64 = 1e-12;

fn default_rce_a() -> f64 {
    DEFAULT_RCE_A
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Ce,
    Gce,
    Sl,
    BiTempered,
    PolySoft,
}

impl LossVariant {
    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Ce => "ce",
            LossVariant::Gce => "gce",
            LossVariant::Sl => "sl",
            LossVariant::BiTempered => "bi_tempered",
            LossVariant::PolySoft => "poly_soft",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ce" => Ok(LossVariant::Ce),
            "gce" => Ok(LossVariant::Gce),
            "sl" => Ok(LossVariant::Sl),
            "bi_tempered" | "bitempered" => Ok(LossVariant::BiTempered),
            "poly_soft" | "polysoft" => Ok(LossVariant::PolySoft),
            other => Err(ArlError::Config(format!("unknown loss variant '{other}'"))),
        }
    }
}

/// The loss hyperparameter set. Only the fields of the active variant exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum HyperParams {
    Ce,
    Gce {
        q: f64,
    },
    Sl {
        gamma1: f64,
        gamma2: f64,
        #[serde(default = "default_rce_a")]
        rce_a: f64,
    },
    BiTempered {
        t1: f64,
        t2: f64,
    },
    PolySoft {
        lambda: f64,
        d: f64,
    },
}

impl HyperParams {
    /// Mid-domain starting point for the meta-learning loop.
    pub fn initial(variant: LossVariant, num_classes: usize) -> Self {
        match variant {
            LossVariant::Ce => HyperParams::Ce,
            LossVariant::Gce => HyperParams::Gce { q: 0.3 },
            LossVariant::Sl => HyperParams::Sl {
                gamma1: 1.0,
                gamma2: 1.0,
                rce_a: DEFAULT_RCE_A,
            },
            LossVariant::BiTempered => HyperParams::BiTempered { t1: 0.5, t2: 1.5 },
            LossVariant::PolySoft => HyperParams::PolySoft {
                lambda: (num_classes as f64).ln(),
                d: 3.0,
            },
        }
    }

    pub fn variant(&self) -> LossVariant {
        match self {
            HyperParams::Ce => LossVariant::Ce,
            HyperParams::Gce { .. } => LossVariant::Gce,
            HyperParams::Sl { .. } => LossVariant::Sl,
            HyperParams::BiTempered { .. } => LossVariant::BiTempered,
            HyperParams::PolySoft { .. } => LossVariant::PolySoft,
        }
    }

    /// Names of the learnable hyperparameters, in slot order.
    pub fn names(&self) -> &'static [&'static str] {
        match self {
            HyperParams::Ce => &[],
            HyperParams::Gce { .. } => &["q"],
            HyperParams::Sl { .. } => &["gamma1", "gamma2"],
            HyperParams::BiTempered { .. } => &["t1", "t2"],
            HyperParams::PolySoft { .. } => &["lambda", "d"],
        }
    }

    /// Values of the learnable hyperparameters, in slot order.
    pub fn values(&self) -> Vec<f64> {
        match *self {
            HyperParams::Ce => vec![],
            HyperParams::Gce { q } => vec![q],
            HyperParams::Sl { gamma1, gamma2, .. } => vec![gamma1, gamma2],
            HyperParams::BiTempered { t1, t2 } => vec![t1, t2],
            HyperParams::PolySoft { lambda, d } => vec![lambda, d],
        }
    }

    pub fn num_learnable(&self) -> usize {
        self.names().len()
    }

    /// Same variant (and fixed constants) with new learnable values.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.num_learnable() {
            return Err(ArlError::Shape(format!(
                "{} expects {} hyperparameters, got {}",
                self.variant().name(),
                self.num_learnable(),
                values.len()
            )));
        }
        let h = match *self {
            HyperParams::Ce => HyperParams::Ce,
            HyperParams::Gce { .. } => HyperParams::Gce { q: values[0] },
            HyperParams::Sl { rce_a, .. } => HyperParams::Sl {
                gamma1: values[0],
                gamma2: values[1],
                rce_a,
            },
            HyperParams::BiTempered { .. } => HyperParams::BiTempered {
                t1: values[0],
                t2: values[1],
            },
            HyperParams::PolySoft { .. } => HyperParams::PolySoft {
                lambda: values[0],
                d: values[1],
            },
        };
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ArlError::Domain(msg));
        for v in self.values() {
            if !v.is_finite() {
                return bad(format!("non-finite hyperparameter in {self:?}"));
            }
        }
        match *self {
            HyperParams::Ce => Ok(()),
            HyperParams::Gce { q } if !(q > 0.0 && q <= 1.0) => bad(format!("q = {q} outside (0, 1]")),
            HyperParams::Sl {
                gamma1,
                gamma2,
                rce_a,
            } => {
                if gamma1 < 0.0 || gamma2 < 0.0 {
                    bad(format!("gamma1 = {gamma1}, gamma2 = {gamma2} must be nonnegative"))
                } else if !(rce_a < 0.0) {
                    bad(format!("rce_a = {rce_a} must be negative"))
                } else {
                    Ok(())
                }
            }
            HyperParams::BiTempered { t1, t2 } => {
                if !(0.0..1.0).contains(&t1) {
                    bad(format!("t1 = {t1} outside [0, 1)"))
                } else if !(t2 > 1.0) {
                    bad(format!("t2 = {t2} must exceed 1"))
                } else {
                    Ok(())
                }
            }
            HyperParams::PolySoft { lambda, d } => {
                if !(lambda > 0.0) {
                    bad(format!("lambda = {lambda} must be positive"))
                } else if !(d > 1.0) {
                    bad(format!("d = {d} must exceed 1"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn transforms(&self) -> &'static [Transform] {
        match self {
            HyperParams::Ce => &[],
            HyperParams::Gce { .. } => &[Transform::Logistic { lo: EPS_Q, hi: 1.0 }],
            HyperParams::Sl { .. } => &[Transform::Softplus { offset: 0.0 }, Transform::Softplus { offset: 0.0 }],
            HyperParams::BiTempered { .. } => &[
                Transform::Logistic {
                    lo: 0.0,
                    hi: 1.0 - EPS_T,
                },
                Transform::Softplus { offset: 1.0 },
            ],
            HyperParams::PolySoft { .. } => &[Transform::Softplus { offset: 0.0 }, Transform::Softplus { offset: 1.0 }],
        }
    }

    /// Map into unconstrained coordinates. Values sitting exactly on (or beyond)
    /// the reachable range are pulled inside by a tiny margin and logged.
    pub fn to_unconstrained(&self) -> Result<UnconstrainedHyper> {
        self.validate()?;
        let theta = self
            .transforms()
            .iter()
            .zip(self.values())
            .zip(self.names())
            .map(|((tr, v), name)| tr.inverse(v, name))
            .collect();
        Ok(UnconstrainedHyper {
            template: *self,
            theta,
        })
    }

    pub fn from_unconstrained(u: &UnconstrainedHyper) -> Result<Self> {
        u.to_hyper()
    }
}

/// Unconstrained coordinates of a hyperparameter set. `template` carries the
/// variant and any fixed constants (e.g. the RCE constant); its learnable values
/// are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedHyper {
    pub template: HyperParams,
    pub theta: Vec<f64>,
}

impl UnconstrainedHyper {
    pub fn new(template: HyperParams, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != template.num_learnable() {
            return Err(ArlError::Shape(format!(
                "theta has {} entries, {} expects {}",
                theta.len(),
                template.variant().name(),
                template.num_learnable()
            )));
        }
        Ok(UnconstrainedHyper { template, theta })
    }

    pub fn to_hyper(&self) -> Result<HyperParams> {
        let values: Vec<f64> = self
            .template
            .transforms()
            .iter()
            .zip(&self.theta)
            .map(|(tr, &t)| tr.forward(t))
            .collect();
        let h = self.template.with_values(&values)?;
        h.validate()?;
        Ok(h)
    }

    /// Chain-rule factors `d value_k / d theta_k` (the map is diagonal).
    pub fn chain_factors(&self) -> Vec<f64> {
        self.template
            .transforms()
            .iter()
            .zip(&self.theta)
            .map(|(tr, &t)| tr.derivative(t))
            .collect()
    }

    /// Same template with a different theta vector.
    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        UnconstrainedHyper {
            template: self.template,
            theta,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Transform {
    /// `lo + (hi - lo) * sigmoid(theta)`
    Logistic { lo: f64, hi: f64 },
    /// `offset + softplus(theta)`
    Softplus { offset: f64 },
}

impl Transform {
    fn forward(self, theta: f64) -> f64 {
        match self {
            Transform::Logistic { lo, hi } => lo + (hi - lo) * sigmoid(theta),
            Transform::Softplus { offset } => {
                let v = offset + softplus(theta);
                if v > offset {
                    v
                } else {
                    // softplus underflowed or was absorbed by the offset
                    log::warn!("theta = {theta} maps onto the domain edge {offset}; clamped");
                    offset + BOUNDARY_MARGIN
                }
            }
        }
    }

    fn derivative(self, theta: f64) -> f64 {
        match self {
            Transform::Logistic { lo, hi } => {
                let s = sigmoid(theta);
                (hi - lo) * s * (1.0 - s)
            }
            Transform::Softplus { .. } => sigmoid(theta),
        }
    }

    fn inverse(self, value: f64, name: &str) -> f64 {
        match self {
            Transform::Logistic { lo, hi } => {
                let width = hi - lo;
                let (min, max) = (lo + BOUNDARY_MARGIN * width, hi - BOUNDARY_MARGIN * width);
                let v = if value < min || value > max {
                    let clamped = value.clamp(min, max);
                    log::warn!("{name} = {value} outside the reachable range ({lo}, {hi}); clamped to {clamped}");
                    clamped
                } else {
                    value
                };
                ((v - lo) / (hi - v)).ln()
            }
            Transform::Softplus { offset } => {
                let mut y = value - offset;
                if y < BOUNDARY_MARGIN {
                    log::warn!("{name} = {value} at the domain edge {offset}; clamped");
                    y = BOUNDARY_MARGIN;
                }
                softplus_inverse(y)
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}
