use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::MetaSplit;
use crate::error::{ArlError, Result};
use crate::losses::HyperParams;
use crate::meta::{self, accuracy, HyperPolicy, MetricsRow, TrainConfig, TrainOutcome};
use crate::numfmt::sig9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationMode {
    /// Best fixed hyperparameters from a grid, selected by meta-set accuracy.
    Fixed,
    /// Fixed at the adaptive run's final hyperparameters.
    Opt1,
    /// Replays the adaptive run's hyperparameter snapshots without meta updates.
    Opt2,
    Adaptive,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [AblationMode::Fixed, AblationMode::Opt1, AblationMode::Opt2, AblationMode::Adaptive];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Fixed => "fixed",
            AblationMode::Opt1 => "opt1",
            AblationMode::Opt2 => "opt2",
            AblationMode::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = ArlError;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| ArlError::Usage(format!("unknown ablation mode '{s}' (expected fixed, opt1, opt2 or adaptive)")))
    }
}

pub fn parse_modes(list: &str) -> Result<Vec<AblationMode>> {
    let modes: Vec<AblationMode> = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    if modes.is_empty() {
        return Err(ArlError::Usage("no ablation modes given".into()));
    }
    Ok(modes)
}

/// Default candidates for the `fixed` mode.
pub fn default_grid(template: &HyperParams, num_classes: usize) -> Vec<HyperParams> {
    let ln_c = (num_classes as f64).ln();
    match *template {
        HyperParams::Ce => vec![HyperParams::Ce],
        HyperParams::Gce { .. } => (1..=9).map(|k| HyperParams::Gce { q: k as f64 / 10.0 }).collect(),
        HyperParams::Sl { rce_a, .. } => {
            let g = [0.1, 1.0, 10.0];
            g.iter()
                .flat_map(|&gamma1| g.iter().map(move |&gamma2| HyperParams::Sl { gamma1, gamma2, rce_a }))
                .collect()
        }
        HyperParams::BiTempered { .. } => [0.2, 0.5, 0.8]
            .iter()
            .flat_map(|&t1| [1.2, 1.5, 2.0].iter().map(move |&t2| HyperParams::BiTempered { t1, t2 }))
            .collect(),
        HyperParams::PolySoft { .. } => [0.5, 1.0, 2.0, 4.0]
            .iter()
            .flat_map(|&m| [2.0, 3.0, 5.0].iter().map(move |&d| HyperParams::PolySoft { lambda: m * ln_c, d }))
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct ModeResult {
    pub mode: AblationMode,
    pub metrics: Vec<MetricsRow>,
    /// Hyperparameters in effect at the end of the run.
    pub final_hyper: HyperParams,
}

impl ModeResult {
    pub fn final_accuracy(&self) -> f64 {
        self.metrics.last().map_or(f64::NAN, |r| r.test_acc)
    }
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub results: Vec<ModeResult>,
}

impl AblationOutcome {
    pub fn get(&self, mode: AblationMode) -> Option<&ModeResult> {
        self.results.iter().find(|r| r.mode == mode)
    }

    /// `iter,<mode>,...` with test accuracy per metrics row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter");
        for r in &self.results {
            out.push(',');
            out.push_str(r.mode.name());
        }
        out.push('\n');
        let rows = self.results.first().map_or(0, |r| r.metrics.len());
        for i in 0..rows {
            out.push_str(&self.results[0].metrics[i].iteration.to_string());
            for r in &self.results {
                out.push(',');
                out.push_str(&sig9(r.metrics[i].test_acc));
            }
            out.push('\n');
        }
        out
    }
}

fn fixed_with(config: &TrainConfig, hyper: HyperParams) -> TrainConfig {
    TrainConfig {
        loss: hyper,
        ..config.clone()
    }
}

/// Runs the requested modes on one split. `opt1` and `opt2` reuse the adaptive
/// run, which is computed whenever any of the three is requested; the fixed
/// grid cells run in parallel.
pub fn run_ablation(split: &MetaSplit, config: &TrainConfig, modes: &[AblationMode], grid: Option<&[HyperParams]>) -> Result<AblationOutcome> {
    if config.loss.num_learnable() == 0 {
        return Err(ArlError::Config("ablation needs a loss with hyperparameters".into()));
    }
    let (train, meta_set, test) = (&split.train, &split.meta, &split.test);
    let needs_adaptive = modes.iter().any(|m| *m != AblationMode::Fixed);
    let needs_fixed = modes.contains(&AblationMode::Fixed);

    let (adaptive, fixed) = rayon::join(
        || needs_adaptive.then(|| meta::arl_train(train, meta_set, test, config)).transpose(),
        || needs_fixed.then(|| best_fixed(split, config, grid)).transpose(),
    );
    let adaptive: Option<TrainOutcome> = adaptive?;
    let fixed: Option<ModeResult> = fixed?;

    let mut results = Vec::with_capacity(modes.len());
    for &mode in modes {
        let result = match mode {
            AblationMode::Fixed => fixed.clone().expect("fixed run"),
            AblationMode::Adaptive => {
                let a = adaptive.as_ref().expect("adaptive run");
                ModeResult {
                    mode,
                    metrics: a.metrics.clone(),
                    final_hyper: a.state.hyper,
                }
            }
            AblationMode::Opt1 => {
                let last = adaptive.as_ref().expect("adaptive run").state.hyper;
                let out = meta::train_fixed(train, meta_set, test, &fixed_with(config, last))?;
                ModeResult {
                    mode,
                    metrics: out.metrics,
                    final_hyper: last,
                }
            }
            AblationMode::Opt2 => {
                let a = adaptive.as_ref().expect("adaptive run");
                let mut schedule = vec![(0, config.loss)];
                for row in &a.metrics {
                    schedule.push((row.iteration, config.loss.with_values(&row.hyper)?));
                }
                let out = meta::run(train, meta_set, test, config, &HyperPolicy::Schedule(schedule))?;
                ModeResult {
                    mode,
                    final_hyper: out.state.hyper,
                    metrics: out.metrics,
                }
            }
        };
        results.push(result);
    }
    Ok(AblationOutcome { results })
}

fn best_fixed(split: &MetaSplit, config: &TrainConfig, grid: Option<&[HyperParams]>) -> Result<ModeResult> {
    use rayon::prelude::*;
    let default;
    let grid = match grid {
        Some(g) if !g.is_empty() => g,
        _ => {
            default = default_grid(&config.loss, split.train.num_classes);
            &default
        }
    };
    let runs: Vec<(f64, ModeResult)> = grid
        .par_iter()
        .map(|h| {
            let out = meta::train_fixed(&split.train, &split.meta, &split.test, &fixed_with(config, *h))?;
            let meta_acc = accuracy(&out.state.params, &split.meta.features, &split.meta.labels)?;
            Ok((
                meta_acc,
                ModeResult {
                    mode: AblationMode::Fixed,
                    metrics: out.metrics,
                    final_hyper: *h,
                },
            ))
        })
        .collect::<Result<_>>()?;
    // first cell wins ties, so the choice does not depend on scheduling
    let mut best = 0;
    for (i, (acc, _)) in runs.iter().enumerate() {
        if *acc > runs[best].0 {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("non-empty grid").1)
}
