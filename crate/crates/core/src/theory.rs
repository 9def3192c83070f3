//! Bound constants for the bounded-loss robustness results and a grid oracle
//! that checks the risk-gap sandwiches under symmetric label noise.
//!
//! For a symmetric noise rate `eta <= 1 - 1/c`, with `f*` minimizing the clean
//! risk and `f^` the noisy risk:
//!
//! ```text
//! 0  <= R_eta(f*) - R_eta(f^) <= A
//! A' <= R(f*)     - R(f^)     <= 0
//! ```
//!
//! The risk of a finite world is a sum over points whose assignments are
//! independent, so both minimizers are found by scanning the simplex grid once
//! per point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ArlError, Result};
use crate::losses::{self, HyperParams, LossVariant, Probabilities};

/// Largest simplex grid the verifier will scan.
pub const GRID_BUDGET: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    #[serde(rename = "A")]
    pub a: f64,
    /// `-inf` at `eta = 1 - 1/c` when the bound degenerates.
    #[serde(rename = "A_prime")]
    pub a_prime: f64,
    pub num_classes: usize,
    pub eta: f64,
    pub hyper: HyperParams,
}

fn check_eta(c: usize, eta: f64) -> Result<()> {
    if c < 2 {
        return Err(ArlError::Domain(format!("need at least 2 classes, got {c}")));
    }
    let cap = 1.0 - 1.0 / c as f64;
    if !(0.0..=cap + 1e-12).contains(&eta) {
        return Err(ArlError::Domain(format!("noise rate eta = {eta} must lie in [0, 1 - 1/c] = [0, {cap}]")));
    }
    Ok(())
}

/// `x / denom`, where a zero denominator sends a nonzero numerator to `-inf`.
fn neg_ratio(num: f64, denom: f64) -> f64 {
    if denom.abs() < 1e-15 {
        if num.abs() < 1e-15 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        num / denom
    }
}

/// The constants `A` and `A'` for PolySoft (requires `lambda >= ln c`) and
/// Bi-Tempered losses.
pub fn bound_constants(c: usize, eta: f64, hyper: &HyperParams) -> Result<BoundConstants> {
    check_eta(c, eta)?;
    hyper.validate()?;
    let cf = c as f64;
    let slack = cf - 1.0 - eta * cf;
    let (a, a_prime) = match *hyper {
        HyperParams::PolySoft { lambda, d } => {
            if lambda < cf.ln() - 1e-12 {
                return Err(ArlError::Domain(format!("lambda = {lambda} must be at least ln c = {}", cf.ln())));
            }
            let scale = cf * (d - 1.0) * eta / d;
            let a = scale / (cf - 1.0) * (lambda - cf.ln());
            let a_prime = neg_ratio(scale * (cf.ln() - lambda), slack);
            (a.max(0.0), a_prime.min(0.0))
        }
        HyperParams::BiTempered { t1, .. } => {
            let spread = cf - cf.powf(t1);
            let a = eta / (1.0 - t1) - eta * spread / ((cf - 1.0) * (1.0 - t1) * (2.0 - t1));
            let num = eta * spread / ((1.0 - t1) * (2.0 - t1)) - eta * (cf - 1.0) / (1.0 - t1);
            (a, neg_ratio(num, slack))
        }
        _ => {
            return Err(ArlError::Domain(format!(
                "bound constants are defined for poly_soft and bi_tempered, not {}",
                hyper.variant().name()
            )))
        }
    };
    Ok(BoundConstants {
        a,
        a_prime,
        num_classes: c,
        eta,
        hyper: *hyper,
    })
}

/// Points with clean labels, a simplex grid resolution and a symmetric noise rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteWorld {
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub delta: f64,
    pub eta: f64,
}

impl FiniteWorld {
    pub fn new(labels: Vec<usize>, num_classes: usize, delta: f64, eta: f64) -> Result<Self> {
        check_eta(num_classes, eta)?;
        if labels.is_empty() {
            return Err(ArlError::Config("a finite world needs at least one point".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(ArlError::Config(format!("label {bad} out of range for {num_classes} classes")));
        }
        let steps = (1.0 / delta).round();
        if !(delta > 0.0) || delta > 1.0 || (steps * delta - 1.0).abs() > 1e-9 {
            return Err(ArlError::Config(format!("grid step {delta} must divide 1")));
        }
        Ok(FiniteWorld {
            labels,
            num_classes,
            delta,
            eta,
        })
    }

    /// `k` points with labels `0, 1, ..., c-1, 0, ...`.
    pub fn balanced(k: usize, num_classes: usize, delta: f64, eta: f64) -> Result<Self> {
        Self::new((0..k).map(|i| i % num_classes).collect(), num_classes, delta, eta)
    }

    pub fn steps(&self) -> usize {
        (1.0 / self.delta).round() as usize
    }

    pub fn grid_size(&self) -> usize {
        simplex_grid_size(self.steps(), self.num_classes)
    }

    /// Probability of observing label `j` for a point whose clean label is `y`.
    pub fn label_prob(&self, y: usize, j: usize, noisy: bool) -> f64 {
        match (noisy, j == y) {
            (false, true) => 1.0,
            (false, false) => 0.0,
            (true, true) => 1.0 - self.eta,
            (true, false) => self.eta / (self.num_classes - 1) as f64,
        }
    }
}

/// Number of compositions of `steps` into `parts` nonnegative parts.
pub fn simplex_grid_size(steps: usize, parts: usize) -> usize {
    // C(steps + parts - 1, parts - 1), saturating
    let mut acc: u128 = 1;
    for i in 1..parts as u128 {
        acc = acc * (steps as u128 + i) / i;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

/// All compositions of `steps` into `parts` parts, in lexicographic order.
pub fn simplex_compositions(steps: usize, parts: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(left - k, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::with_capacity(simplex_grid_size(steps, parts));
    rec(steps, parts, &mut Vec::with_capacity(parts), &mut out);
    out
}

fn to_probs(comp: &[usize], steps: usize) -> Vec<f64> {
    comp.iter().map(|&k| k as f64 / steps as f64).collect()
}

/// Loss table over the grid: `table[g][j] = L(u_g, j)`.
struct LossTable {
    comps: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
}

impl LossTable {
    fn build(world: &FiniteWorld, hyper: &HyperParams) -> Result<Self> {
        let size = world.grid_size();
        if size > GRID_BUDGET {
            return Err(ArlError::Config(format!("simplex grid has {size} points, budget is {GRID_BUDGET}")));
        }
        let steps = world.steps();
        let c = world.num_classes;
        let comps = simplex_compositions(steps, c);
        let values = comps
            .par_iter()
            .map(|comp| {
                let p = Probabilities::new(to_probs(comp, steps))?;
                (0..c).map(|j| losses::value_on_probs(hyper, &p, j)).collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LossTable { comps, values })
    }

    fn index_of(&self, comp: &[usize]) -> Option<usize> {
        self.comps.binary_search_by(|probe| probe.as_slice().cmp(comp)).ok()
    }

    /// Largest change of any `L(., j)` between grid neighbours (one step of
    /// mass moved between two coordinates).
    fn max_neighbour_change(&self) -> f64 {
        let c = self.comps.first().map_or(0, Vec::len);
        (0..self.comps.len())
            .into_par_iter()
            .map(|g| {
                let comp = &self.comps[g];
                let mut worst = 0.0_f64;
                let mut nb = comp.clone();
                for a in 0..c {
                    for b in 0..c {
                        if a == b || comp[b] == 0 {
                            continue;
                        }
                        nb.copy_from_slice(comp);
                        nb[a] += 1;
                        nb[b] -= 1;
                        if let Some(h) = self.index_of(&nb) {
                            for j in 0..c {
                                worst = worst.max((self.values[g][j] - self.values[h][j]).abs());
                            }
                        }
                    }
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }

    fn point_risk(&self, world: &FiniteWorld, g: usize, y: usize, noisy: bool) -> f64 {
        (0..world.num_classes)
            .map(|j| world.label_prob(y, j, noisy) * self.values[g][j])
            .sum()
    }

    /// First grid index minimizing the point risk.
    fn argmin(&self, world: &FiniteWorld, y: usize, noisy: bool) -> usize {
        let mut best = 0;
        let mut best_val = f64::INFINITY;
        for g in 0..self.comps.len() {
            let v = self.point_risk(world, g, y, noisy);
            if v < best_val {
                best_val = v;
                best = g;
            }
        }
        best
    }
}

/// Exact clean (`noisy = false`) or noisy risk of a per-point assignment.
pub fn exact_risk(world: &FiniteWorld, assignment: &[Vec<f64>], hyper: &HyperParams, noisy: bool) -> Result<f64> {
    if assignment.len() != world.labels.len() {
        return Err(ArlError::Domain(format!(
            "assignment covers {} points, world has {}",
            assignment.len(),
            world.labels.len()
        )));
    }
    let steps = world.steps() as f64;
    let mut total = 0.0;
    for (u, &y) in assignment.iter().zip(&world.labels) {
        if u.len() != world.num_classes || u.iter().any(|&v| ((v * steps).round() - v * steps).abs() > 1e-6) {
            return Err(ArlError::Domain(format!("assignment {u:?} is not on the simplex grid")));
        }
        let p = Probabilities::new(u.clone()).map_err(|e| ArlError::Domain(e.to_string()))?;
        for j in 0..world.num_classes {
            let w = world.label_prob(y, j, noisy);
            if w > 0.0 {
                total += w * losses::value_on_probs(hyper, &p, j)?;
            }
        }
    }
    Ok(total / world.labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub variant: LossVariant,
    pub hyper: HyperParams,
    pub num_classes: usize,
    pub eta: f64,
    pub delta: f64,
    pub constants: Option<BoundConstants>,
    /// Clean-risk minimizer, one grid distribution per point.
    pub f_star: Vec<Vec<f64>>,
    /// Noisy-risk minimizer.
    pub f_hat: Vec<Vec<f64>>,
    pub clean_risk_f_star: f64,
    pub clean_risk_f_hat: f64,
    pub noisy_risk_f_star: f64,
    pub noisy_risk_f_hat: f64,
    /// `R_eta(f*) - R_eta(f^)`.
    pub noisy_gap: f64,
    /// `R(f*) - R(f^)`.
    pub clean_gap: f64,
    pub tol_grid: f64,
    pub noisy_lower_ok: bool,
    pub noisy_upper_ok: bool,
    pub clean_lower_ok: bool,
    pub clean_upper_ok: bool,
    /// Slack of each inequality (nonnegative when it holds without tolerance).
    pub noisy_lower_slack: f64,
    pub noisy_upper_slack: f64,
    pub clean_lower_slack: f64,
    pub clean_upper_slack: f64,
    /// For PolySoft at `lambda = ln c`: whether `|noisy_gap| <= tol_grid`.
    pub equality_ok: Option<bool>,
}

impl RiskReport {
    pub fn passed(&self) -> bool {
        self.noisy_lower_ok && self.noisy_upper_ok && self.clean_lower_ok && self.clean_upper_ok && self.equality_ok != Some(false)
    }
}

/// Finds both minimizers on the grid and checks the two sandwiches. Losses
/// without stated constants (CE, GCE, SL) are checked only against the
/// trivial halves `0 <= noisy_gap` and `clean_gap <= 0`.
pub fn riskgap_verify(world: &FiniteWorld, hyper: &HyperParams) -> Result<RiskReport> {
    hyper.validate()?;
    let constants = match hyper.variant() {
        LossVariant::PolySoft | LossVariant::BiTempered => Some(bound_constants(world.num_classes, world.eta, hyper)?),
        _ => None,
    };
    let table = LossTable::build(world, hyper)?;
    let tol_grid = table.max_neighbour_change();
    let steps = world.steps();

    let picks: Vec<(usize, usize)> = world
        .labels
        .par_iter()
        .map(|&y| (table.argmin(world, y, false), table.argmin(world, y, true)))
        .collect();
    let k = world.labels.len() as f64;
    let risk = |which: &dyn Fn(&(usize, usize)) -> usize, noisy: bool| -> f64 {
        picks
            .iter()
            .zip(&world.labels)
            .map(|(pick, &y)| table.point_risk(world, which(pick), y, noisy))
            .sum::<f64>()
            / k
    };
    let star = |p: &(usize, usize)| p.0;
    let hat = |p: &(usize, usize)| p.1;
    let clean_risk_f_star = risk(&star, false);
    let clean_risk_f_hat = risk(&hat, false);
    let noisy_risk_f_star = risk(&star, true);
    let noisy_risk_f_hat = risk(&hat, true);
    let noisy_gap = noisy_risk_f_star - noisy_risk_f_hat;
    let clean_gap = clean_risk_f_star - clean_risk_f_hat;

    let a = constants.map_or(f64::INFINITY, |b| b.a);
    let a_prime = constants.map_or(f64::NEG_INFINITY, |b| b.a_prime);
    let noisy_lower_slack = noisy_gap;
    let noisy_upper_slack = a - noisy_gap;
    let clean_lower_slack = clean_gap - a_prime;
    let clean_upper_slack = -clean_gap;
    let equality_ok = match *hyper {
        HyperParams::PolySoft { lambda, .. } if (lambda - (world.num_classes as f64).ln()).abs() < 1e-12 => {
            Some(noisy_gap.abs() <= tol_grid)
        }
        _ => None,
    };
    let assign = |which: &dyn Fn(&(usize, usize)) -> usize| -> Vec<Vec<f64>> {
        picks.iter().map(|p| to_probs(&table.comps[which(p)], steps)).collect()
    };
    Ok(RiskReport {
        variant: hyper.variant(),
        hyper: *hyper,
        num_classes: world.num_classes,
        eta: world.eta,
        delta: world.delta,
        constants,
        f_star: assign(&star),
        f_hat: assign(&hat),
        clean_risk_f_star,
        clean_risk_f_hat,
        noisy_risk_f_star,
        noisy_risk_f_hat,
        noisy_gap,
        clean_gap,
        tol_grid,
        noisy_lower_ok: noisy_lower_slack >= -tol_grid,
        noisy_upper_ok: noisy_upper_slack >= -tol_grid,
        clean_lower_ok: clean_lower_slack >= -tol_grid,
        clean_upper_ok: clean_upper_slack >= -tol_grid,
        noisy_lower_slack,
        noisy_upper_slack,
        clean_lower_slack,
        clean_upper_slack,
        equality_ok,
    })
}

/// Spread of `sum_j L(u, j)` over the simplex grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundedLossReport {
    pub min_sum: f64,
    pub max_sum: f64,
    pub range: f64,
    pub tol_grid: f64,
}

pub fn bounded_loss_check(num_classes: usize, delta: f64, hyper: &HyperParams) -> Result<BoundedLossReport> {
    let world = FiniteWorld::new(vec![0], num_classes, delta, 0.0)?;
    let table = LossTable::build(&world, hyper)?;
    let sums: Vec<f64> = table.values.iter().map(|row| row.iter().sum()).collect();
    let min_sum = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let max_sum = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundedLossReport {
        min_sum,
        max_sum,
        range: max_sum - min_sum,
        tol_grid: table.max_neighbour_change(),
    })
}
