use std::fs;
use std::path::Path;

use crate::error::{ArlError, Result};
use crate::losses::{self, HyperParams, Probabilities};
use crate::numfmt::sig9;

pub const CURVE_POINTS: usize = 500;
pub const FLATTENING_SLOPE: f64 = 0.05;

/// One sample of a loss curve. `x` is the correct-class probability, or the CE
/// value for PolySoft; `ce` and `zero_one` are reference columns at the same point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub learned: f64,
    pub ce: f64,
    pub zero_one: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(move |k| if k + 1 == n { hi } else { lo + step * k as f64 })
}

/// Samples the loss on a binary diagnostic grid: `p` in `[0.001, 1]` for
/// probability-based losses, `ce` in `[0, 3 lambda]` for PolySoft.
pub fn emit_losscurve(hyper: &HyperParams) -> Result<Vec<CurvePoint>> {
    hyper.validate()?;
    match *hyper {
        HyperParams::PolySoft { lambda, d } => linspace(0.0, 3.0 * lambda, CURVE_POINTS)
            .map(|ce| {
                Ok(CurvePoint {
                    x: ce,
                    learned: losses::polysoft(ce, lambda, d)?.value,
                    ce,
                    zero_one: if (-ce).exp() < 0.5 { 1.0 } else { 0.0 },
                })
            })
            .collect(),
        _ => linspace(0.001, 1.0, CURVE_POINTS)
            .map(|p| {
                let probs = Probabilities::new(vec![p, 1.0 - p])?;
                Ok(CurvePoint {
                    x: p,
                    learned: losses::value_on_probs(hyper, &probs, 0)?,
                    ce: losses::ce(&probs, 0)?.value,
                    zero_one: if p < 0.5 { 1.0 } else { 0.0 },
                })
            })
            .collect(),
    }
}

pub fn losscurve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("x,learned,ce,zero_one\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", sig9(p.x), sig9(p.learned), sig9(p.ce), sig9(p.zero_one)));
    }
    out
}

pub fn write_losscurve(path: &Path, points: &[CurvePoint]) -> Result<()> {
    fs::write(path, losscurve_csv(points)).map_err(|e| ArlError::io(path, e))
}

/// Smallest CE value at which the slope of the learned loss with respect to CE
/// drops below `threshold`, using forward differences along the curve.
pub fn flattening_point(points: &[CurvePoint], threshold: f64) -> Option<f64> {
    let mut by_ce: Vec<&CurvePoint> = points.iter().collect();
    by_ce.sort_by(|a, b| a.ce.total_cmp(&b.ce));
    by_ce.windows(2).find_map(|w| {
        let dx = w[1].ce - w[0].ce;
        (dx > 0.0 && (w[1].learned - w[0].learned) / dx < threshold).then_some(w[0].ce)
    })
}
