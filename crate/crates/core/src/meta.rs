//! Adaptive robust-loss learning: one-step lookahead on the training loss,
//! hypergradient of a clean meta loss with respect to the loss hyperparameters,
//! then the real parameter step with the updated hyperparameters.
//!
//! Per iteration `t`:
//!
//! 1. draw a training batch and a meta batch;
//! 2. `w~(theta) = w - alpha * grad_w L_train(batch, w; theta)`;
//! 3. `theta <- theta - beta * grad_theta L_meta(meta batch, w~(theta))`;
//! 4. `w <- w - alpha * grad_w L_train(batch, w; theta)` with the new `theta`.
//!
//! The hypergradient contracts the meta gradient at `w~` with the mixed partial
//! `d grad_w L_train / d theta_k`, taken by central differences in the
//! unconstrained coordinates.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::NoisyDataset;
use crate::error::{ArlError, Result};
use crate::losses::{self, HyperParams, UnconstrainedHyper};
use crate::model::{init_mlp, Activation, Gradients, Matrix, MlpParams};
use crate::numfmt::sig9;

/// Features and labels of one mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchRef<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [usize],
}

/// Owned mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_indices(dataset: &NoisyDataset, indices: &[usize]) -> Self {
        Batch {
            features: dataset.features.select_rows(indices),
            labels: indices.iter().map(|&i| dataset.labels[i]).collect(),
        }
    }

    pub fn as_ref(&self) -> BatchRef<'_> {
        BatchRef {
            features: &self.features,
            labels: &self.labels,
        }
    }
}

impl<'a> From<&'a NoisyDataset> for BatchRef<'a> {
    fn from(d: &'a NoisyDataset) -> Self {
        BatchRef {
            features: &d.features,
            labels: &d.labels,
        }
    }
}

fn default_alpha() -> f64 {
    0.1
}
fn default_beta() -> f64 {
    0.1
}
fn default_batch() -> usize {
    100
}
fn default_meta_batch() -> usize {
    30
}
fn default_iterations() -> usize {
    3000
}
fn default_fd_eps() -> f64 {
    1e-3
}
fn default_hidden() -> Vec<usize> {
    vec![16]
}
fn default_metrics_every() -> usize {
    50
}
fn default_decay() -> f64 {
    0.1
}

/// Step sizes, batch sizes, iteration budget and network shape for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_meta_batch")]
    pub meta_batch_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fd_eps")]
    pub fd_eps: f64,
    /// Initial loss hyperparameters.
    pub loss: HyperParams,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_metrics_every")]
    pub metrics_every: usize,
    /// Heavy-ball momentum on the real parameter step; 0 is plain SGD.
    #[serde(default)]
    pub momentum: f64,
    /// Iterations at which both step sizes are multiplied by `lr_decay`.
    #[serde(default)]
    pub lr_milestones: Vec<usize>,
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
}

impl TrainConfig {
    pub fn new(loss: HyperParams) -> Self {
        TrainConfig {
            alpha: default_alpha(),
            beta: default_beta(),
            batch_size: default_batch(),
            meta_batch_size: default_meta_batch(),
            iterations: default_iterations(),
            seed: 0,
            fd_eps: default_fd_eps(),
            loss,
            hidden: default_hidden(),
            activation: Activation::Tanh,
            metrics_every: default_metrics_every(),
            momentum: 0.0,
            lr_milestones: vec![],
            lr_decay: default_decay(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ArlError::Config(m));
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be nonnegative, got {}", self.beta));
        }
        if self.batch_size == 0 || self.meta_batch_size == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.fd_eps > 0.0) {
            return bad(format!("fd_eps must be positive, got {}", self.fd_eps));
        }
        if self.metrics_every == 0 {
            return bad("metrics_every must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.lr_decay > 0.0) {
            return bad(format!("lr_decay must be positive, got {}", self.lr_decay));
        }
        self.loss.validate()
    }

    /// Step-size multiplier at iteration `t` (0-based).
    pub fn decay_factor(&self, t: usize) -> f64 {
        let passed = self.lr_milestones.iter().filter(|&&m| t >= m).count();
        self.lr_decay.powi(passed as i32)
    }

    pub fn layer_sizes(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(num_classes);
        sizes
    }
}

/// Draws batches by walking a reshuffled permutation of the dataset.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(len: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        BatchSampler { rng, order, pos: 0 }
    }

    pub fn next_indices(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        out
    }
}

/// Mean training loss over the batch and its gradient with respect to `w`.
pub fn train_loss_and_grad(params: &MlpParams, batch: BatchRef<'_>, hyper: &HyperParams) -> Result<(f64, Gradients)> {
    let logits = params.forward_logits(batch.features)?;
    let n = batch.labels.len();
    if n == 0 {
        return Err(ArlError::InvalidInput("empty batch".into()));
    }
    let scale = 1.0 / n as f64;
    let mut upstream = Matrix::zeros(n, params.num_classes());
    let mut total = 0.0;
    for (i, &y) in batch.labels.iter().enumerate() {
        let (value, grad) = losses::value_and_logit_grad(hyper, logits.row(i), y)?;
        total += value;
        for (u, g) in upstream.row_mut(i).iter_mut().zip(grad) {
            *u = g * scale;
        }
    }
    let grads = params.backward(batch.features, &upstream)?;
    Ok((total * scale, grads))
}

/// Mean CE on clean meta data and its gradient.
pub fn meta_loss_and_grad(params: &MlpParams, batch: BatchRef<'_>) -> Result<(f64, Gradients)> {
    train_loss_and_grad(params, batch, &HyperParams::Ce)
}

pub fn mean_loss(params: &MlpParams, batch: BatchRef<'_>, hyper: &HyperParams) -> Result<f64> {
    let logits = params.forward_logits(batch.features)?;
    let mut total = 0.0;
    for (i, &y) in batch.labels.iter().enumerate() {
        total += losses::value(hyper, logits.row(i), y)?;
    }
    Ok(total / batch.labels.len().max(1) as f64)
}

/// Fraction of rows whose arg-max logit equals the label.
pub fn accuracy(params: &MlpParams, features: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let logits = params.forward_logits(features)?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(logits.row(i)) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// `w - alpha * grad_w L_train(batch, w; hyper)`.
pub fn virtual_step(params: &MlpParams, hyper: &HyperParams, batch: BatchRef<'_>, alpha: f64) -> Result<MlpParams> {
    let (_, g) = train_loss_and_grad(params, batch, hyper)?;
    if !g.is_finite() {
        return Err(ArlError::Numeric(format!("non-finite training gradient at hyperparameters {hyper:?}")));
    }
    params.sgd_step(&g, alpha)
}

/// Gradient of the meta loss after the virtual step with respect to `theta`.
pub fn hypergradient(
    params: &MlpParams,
    theta: &UnconstrainedHyper,
    train: BatchRef<'_>,
    meta: BatchRef<'_>,
    alpha: f64,
    fd_eps: f64,
) -> Result<Vec<f64>> {
    let hyper = theta.to_hyper()?;
    if hyper.num_learnable() == 0 {
        return Ok(vec![]);
    }
    let lookahead = virtual_step(params, &hyper, train, alpha)?;
    let (_, meta_grad) = meta_loss_and_grad(&lookahead, meta)?;

    let mut out = Vec::with_capacity(theta.theta.len());
    for k in 0..theta.theta.len() {
        let scale = theta.theta[k].abs().max(1.0);
        if fd_eps < 1e-8 * scale {
            log::warn!("fd_eps = {fd_eps} is tiny relative to theta[{k}] = {}", theta.theta[k]);
        }
        let shifted = |sign: f64| -> Result<Gradients> {
            let mut t = theta.theta.clone();
            t[k] += sign * fd_eps;
            let h = theta.with_theta(t).to_hyper()?;
            Ok(train_loss_and_grad(params, train, &h)?.1)
        };
        let mixed = shifted(1.0)?.difference_quotient(&shifted(-1.0)?, 2.0 * fd_eps);
        out.push(-alpha * meta_grad.dot(&mixed));
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ArlError::Numeric(format!("non-finite hypergradient {out:?} at {hyper:?}")));
    }
    Ok(out)
}

/// `theta - beta * hypergrad`.
pub fn meta_update(theta: &UnconstrainedHyper, hypergrad: &[f64], beta: f64) -> Result<UnconstrainedHyper> {
    if hypergrad.len() != theta.theta.len() {
        return Err(ArlError::Shape(format!("hypergradient has {} entries, theta has {}", hypergrad.len(), theta.theta.len())));
    }
    if hypergrad.iter().any(|v| !v.is_finite()) {
        return Err(ArlError::Numeric(format!("non-finite hypergradient {hypergrad:?}")));
    }
    let next = theta.theta.iter().zip(hypergrad).map(|(t, g)| t - beta * g).collect();
    Ok(theta.with_theta(next))
}

/// One row of the training log. Hyperparameters are in constrained coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub train_loss: f64,
    pub meta_loss: f64,
    pub test_acc: f64,
    pub hyper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: MlpParams,
    pub theta: UnconstrainedHyper,
    pub hyper: HyperParams,
    pub iteration: usize,
    velocity: Option<Gradients>,
    train_sampler: BatchSampler,
    meta_sampler: BatchSampler,
}

/// How the loss hyperparameters evolve during a run.
#[derive(Debug, Clone, PartialEq)]
pub enum HyperPolicy {
    /// Learned on the meta set every iteration.
    Adaptive,
    /// Held at the configured initial value.
    Fixed,
    /// Piecewise constant: entry `(t, h)` takes effect from iteration `t` (0-based) on.
    Schedule(Vec<(usize, HyperParams)>),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<MetricsRow>,
}

fn check_sets(train: &NoisyDataset, meta: &NoisyDataset, test: &NoisyDataset) -> Result<()> {
    if train.is_empty() || meta.is_empty() || test.is_empty() {
        return Err(ArlError::Config(format!(
            "datasets must be non-empty (train = {}, meta = {}, test = {})",
            train.len(),
            meta.len(),
            test.len()
        )));
    }
    if meta.dim() != train.dim() || test.dim() != train.dim() {
        return Err(ArlError::Shape("train, meta and test feature dimensions differ".into()));
    }
    if meta.num_classes != train.num_classes || test.num_classes != train.num_classes {
        return Err(ArlError::Shape("train, meta and test class counts differ".into()));
    }
    Ok(())
}

/// Full adaptive run: the hyperparameters are learned on `meta` while `w` trains on `train`.
pub fn arl_train(train: &NoisyDataset, meta: &NoisyDataset, test: &NoisyDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    run(train, meta, test, config, &HyperPolicy::Adaptive)
}

/// Conventional training with the configured hyperparameters held fixed.
pub fn train_fixed(train: &NoisyDataset, meta: &NoisyDataset, test: &NoisyDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    run(train, meta, test, config, &HyperPolicy::Fixed)
}

/// Training loop shared by the adaptive, fixed and scheduled policies. The
/// training sampler, meta sampler and initial weights depend only on the seed,
/// so the policies see identical batches.
pub fn run(
    train: &NoisyDataset,
    meta: &NoisyDataset,
    test: &NoisyDataset,
    config: &TrainConfig,
    policy: &HyperPolicy,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_sets(train, meta, test)?;
    let sizes = config.layer_sizes(train.dim(), train.num_classes);
    let params = init_mlp(&sizes, config.activation, config.seed)?;
    let theta = config.loss.to_unconstrained()?;
    let mut state = TrainState {
        params,
        hyper: theta.to_hyper()?,
        theta,
        iteration: 0,
        velocity: None,
        train_sampler: BatchSampler::new(train.len(), config.seed, 1),
        meta_sampler: BatchSampler::new(meta.len(), config.seed, 2),
    };
    if let HyperPolicy::Fixed | HyperPolicy::Schedule(_) = policy {
        // Fixed values are used verbatim, not through the reparameterization.
        state.hyper = config.loss;
    }
    let mut metrics = Vec::new();
    let meta_all = BatchRef::from(meta);

    for t in 0..config.iterations {
        let decay = config.decay_factor(t);
        let alpha = config.alpha * decay;
        let beta = config.beta * decay;
        let train_batch = Batch::from_indices(train, &state.train_sampler.next_indices(config.batch_size));

        match policy {
            HyperPolicy::Adaptive if state.hyper.num_learnable() > 0 => {
                let meta_batch = Batch::from_indices(meta, &state.meta_sampler.next_indices(config.meta_batch_size));
                let hg = hypergradient(&state.params, &state.theta, train_batch.as_ref(), meta_batch.as_ref(), alpha, config.fd_eps)
                    .map_err(|e| dump(e, t, &state.hyper))?;
                state.theta = meta_update(&state.theta, &hg, beta).map_err(|e| dump(e, t, &state.hyper))?;
                state.hyper = state.theta.to_hyper()?;
            }
            HyperPolicy::Schedule(schedule) => {
                if let Some((_, h)) = schedule.iter().rev().find(|(start, _)| *start <= t) {
                    state.hyper = *h;
                }
            }
            _ => {}
        }

        let (train_loss, grads) = train_loss_and_grad(&state.params, train_batch.as_ref(), &state.hyper)?;
        if !train_loss.is_finite() || !grads.is_finite() {
            return Err(dump(ArlError::Numeric(format!("training diverged (loss = {train_loss})")), t, &state.hyper));
        }
        let step = if config.momentum > 0.0 {
            let v = match state.velocity.take() {
                Some(mut v) => {
                    v.scale(config.momentum);
                    v.add_scaled(&grads, 1.0);
                    v
                }
                None => grads,
            };
            let next = state.params.sgd_step(&v, alpha)?;
            state.velocity = Some(v);
            next
        } else {
            state.params.sgd_step(&grads, alpha)?
        };
        state.params = step;
        state.iteration = t + 1;

        if state.iteration.is_multiple_of(config.metrics_every) || state.iteration == config.iterations {
            metrics.push(MetricsRow {
                iteration: state.iteration,
                train_loss,
                meta_loss: mean_loss(&state.params, meta_all, &HyperParams::Ce)?,
                test_acc: accuracy(&state.params, &test.features, &test.labels)?,
                hyper: state.hyper.values(),
            });
        }
    }
    Ok(TrainOutcome { state, metrics })
}

fn dump(err: ArlError, iteration: usize, hyper: &HyperParams) -> ArlError {
    match err {
        ArlError::Numeric(m) => ArlError::Numeric(format!("{m} [iteration {iteration}, hyperparameters {hyper:?}]")),
        other => other,
    }
}

/// Implicit per-sample weights of the PolySoft loss at the current parameters,
/// computed from each sample's CE against its observed label.
pub fn compute_sample_weights(params: &MlpParams, hyper: &HyperParams, dataset: &NoisyDataset) -> Result<Vec<f64>> {
    let HyperParams::PolySoft { lambda, d } = *hyper else {
        return Err(ArlError::Usage(format!(
            "sample weights are defined for poly_soft only, got {}",
            hyper.variant().name()
        )));
    };
    let logits = params.forward_logits(&dataset.features)?;
    (0..dataset.len())
        .map(|i| {
            let ce = losses::ce(&losses::softmax(logits.row(i))?, dataset.labels[i])?.value;
            losses::polysoft_weight(ce, lambda, d)
        })
        .collect()
}

/// `iter,train_loss,meta_loss,test_acc,<hyperparameter names>`.
pub fn metrics_csv(rows: &[MetricsRow], hyper_names: &[&str]) -> String {
    let mut out = String::from("iter,train_loss,meta_loss,test_acc");
    for name in hyper_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{}", r.iteration, sig9(r.train_loss), sig9(r.meta_loss), sig9(r.test_acc)));
        for v in &r.hyper {
            out.push(',');
            out.push_str(&sig9(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow], hyper_names: &[&str]) -> Result<()> {
    fs::write(path, metrics_csv(rows, hyper_names)).map_err(|e| ArlError::io(path, e))
}

/// `sample_id,is_clean,weight`.
pub fn weights_csv(dataset: &NoisyDataset, weights: &[f64]) -> String {
    let mut out = String::from("sample_id,is_clean,weight\n");
    for (i, w) in weights.iter().enumerate() {
        out.push_str(&format!("{i},{},{}\n", u8::from(!dataset.is_flipped(i)), sig9(*w)));
    }
    out
}

pub fn write_weights_csv(path: &Path, dataset: &NoisyDataset, weights: &[f64]) -> Result<()> {
    fs::write(path, weights_csv(dataset, weights)).map_err(|e| ArlError::io(path, e))
}

/// Mean weight over clean and over flipped samples.
pub fn weight_means(dataset: &NoisyDataset, weights: &[f64]) -> (f64, f64) {
    let (mut clean, mut nc, mut noisy, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for (i, w) in weights.iter().enumerate() {
        if dataset.is_flipped(i) {
            noisy += w;
            nn += 1;
        } else {
            clean += w;
            nc += 1;
        }
    }
    (clean / nc.max(1) as f64, noisy / nn.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, inject_symmetric, split_meta};

    fn small_split(rate: f64) -> (NoisyDataset, NoisyDataset, NoisyDataset) {
        let ds = gen_blobs(660, 3, 2, 0.5, 1).unwrap();
        let split = split_meta(&ds, 30, 0.2, 2).unwrap();
        (inject_symmetric(&split.train, rate, 3).unwrap(), split.meta, split.test)
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = BatchSampler::new(10, 0, 1);
        let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next_indices(2)).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(s.next_indices(50).len(), 10);
    }

    #[test]
    fn virtual_step_basics() {
        let (train, _, _) = small_split(0.4);
        let p = init_mlp(&[2, 8, 3], Activation::Tanh, 0).unwrap();
        let batch = Batch::from_indices(&train, &(0..20).collect::<Vec<_>>());
        let h = HyperParams::Gce { q: 0.4 };
        assert_eq!(virtual_step(&p, &h, batch.as_ref(), 0.0).unwrap(), p);

        let ce_step = virtual_step(&p, &HyperParams::Ce, batch.as_ref(), 0.3).unwrap();
        let (_, g) = train_loss_and_grad(&p, batch.as_ref(), &HyperParams::Ce).unwrap();
        assert_eq!(ce_step, p.sgd_step(&g, 0.3).unwrap());

        let (_, g) = train_loss_and_grad(&p, batch.as_ref(), &h).unwrap();
        let moved = virtual_step(&p, &h, batch.as_ref(), 0.3).unwrap();
        let dist: f64 = moved.as_slice().iter().zip(p.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((dist - 0.3 * g.norm()).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_gives_zero_hypergradient() {
        let (train, meta, _) = small_split(0.4);
        let p = init_mlp(&[2, 8, 3], Activation::Tanh, 0).unwrap();
        let batch = Batch::from_indices(&train, &(0..20).collect::<Vec<_>>());
        let theta = HyperParams::PolySoft { lambda: 1.0, d: 3.0 }.to_unconstrained().unwrap();
        let hg = hypergradient(&p, &theta, batch.as_ref(), BatchRef::from(&meta), 0.0, 1e-3).unwrap();
        assert!(hg.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn meta_update_properties() {
        let theta = HyperParams::Gce { q: 0.3 }.to_unconstrained().unwrap();
        assert_eq!(meta_update(&theta, &[0.0], 0.5).unwrap(), theta);
        assert_eq!(meta_update(&theta, &[2.0], 0.0).unwrap(), theta);
        let far = meta_update(&theta, &[-1e6], 1.0).unwrap();
        assert!(far.to_hyper().unwrap().validate().is_ok());
        assert!(matches!(meta_update(&theta, &[f64::NAN], 0.1), Err(ArlError::Numeric(_))));
        assert!(matches!(meta_update(&theta, &[1.0, 2.0], 0.1), Err(ArlError::Shape(_))));
    }

    #[test]
    fn zero_beta_single_step_matches_fixed() {
        let (train, meta, test) = small_split(0.4);
        let mut cfg = TrainConfig::new(HyperParams::Gce { q: 0.3 });
        cfg.iterations = 1;
        cfg.beta = 0.0;
        let a = arl_train(&train, &meta, &test, &cfg).unwrap();
        let b = train_fixed(&train, &meta, &test, &cfg).unwrap();
        assert_eq!(a.state.params, b.state.params);
    }

    #[test]
    fn ce_adaptive_equals_plain_training() {
        let (train, meta, test) = small_split(0.2);
        let mut cfg = TrainConfig::new(HyperParams::Ce);
        cfg.iterations = 120;
        let a = arl_train(&train, &meta, &test, &cfg).unwrap();
        let b = train_fixed(&train, &meta, &test, &cfg).unwrap();
        assert_eq!(a.state.params, b.state.params);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn metrics_cadence_and_determinism() {
        let (train, meta, test) = small_split(0.4);
        let mut cfg = TrainConfig::new(HyperParams::PolySoft { lambda: 1.1, d: 3.0 });
        cfg.iterations = 120;
        let a = arl_train(&train, &meta, &test, &cfg).unwrap();
        let iters: Vec<usize> = a.metrics.iter().map(|m| m.iteration).collect();
        assert_eq!(iters, vec![50, 100, 120]);
        let b = arl_train(&train, &meta, &test, &cfg).unwrap();
        let names = cfg.loss.names();
        assert_eq!(metrics_csv(&a.metrics, names), metrics_csv(&b.metrics, names));
        for m in &a.metrics {
            assert!((0.0..=1.0).contains(&m.test_acc));
            assert!(cfg.loss.with_values(&m.hyper).unwrap().validate().is_ok());
        }
        assert!(metrics_csv(&a.metrics, names).starts_with("iter,train_loss,meta_loss,test_acc,lambda,d\n"));
    }

    #[test]
    fn schedule_policy_switches_values() {
        let (train, meta, test) = small_split(0.4);
        let mut cfg = TrainConfig::new(HyperParams::Sl {
            gamma1: 1.0,
            gamma2: 1.0,
            rce_a: -4.0,
        });
        cfg.iterations = 100;
        let late = HyperParams::Sl {
            gamma1: 0.2,
            gamma2: 2.0,
            rce_a: -4.0,
        };
        let out = run(&train, &meta, &test, &cfg, &HyperPolicy::Schedule(vec![(0, cfg.loss), (50, late)])).unwrap();
        assert_eq!(out.metrics[0].hyper, vec![1.0, 1.0]);
        assert_eq!(out.metrics[1].hyper, vec![0.2, 2.0]);
    }

    #[test]
    fn empty_sets_are_config_errors() {
        let (train, meta, test) = small_split(0.4);
        let empty = train.subset(&[]);
        let cfg = TrainConfig::new(HyperParams::Ce);
        assert!(matches!(arl_train(&empty, &meta, &test, &cfg), Err(ArlError::Config(_))));
        assert!(matches!(arl_train(&train, &empty, &test, &cfg), Err(ArlError::Config(_))));
    }

    #[test]
    fn sample_weights() {
        let (train, _, _) = small_split(0.4);
        let p = init_mlp(&[2, 8, 3], Activation::Tanh, 0).unwrap();
        assert!(matches!(compute_sample_weights(&p, &HyperParams::Ce, &train), Err(ArlError::Usage(_))));
        let w = compute_sample_weights(&p, &HyperParams::PolySoft { lambda: 0.01, d: 2.0 }, &train).unwrap();
        // random init: every CE is far above 0.01
        assert!(w.iter().all(|&v| v == 0.0));
        let w = compute_sample_weights(&p, &HyperParams::PolySoft { lambda: 50.0, d: 2.0 }, &train).unwrap();
        assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v) && v > 0.9));
        let csv = weights_csv(&train, &w);
        assert!(csv.starts_with("sample_id,is_clean,weight\n0,"));
        assert_eq!(csv.lines().count(), train.len() + 1);
    }

    #[test]
    fn confident_sample_gets_full_weight() {
        // one-hidden-layer net with a huge bias on class 0
        let mut flat = vec![0.0; 2 * 2 + 2 + 2 * 3 + 3];
        flat[2 * 2 + 2 + 2 * 3] = 40.0;
        let p = MlpParams::from_flat(&[2, 2, 3], Activation::Tanh, flat).unwrap();
        let ds = NoisyDataset::new_clean(
            Matrix::new(1, 2, vec![0.3, -0.2]).unwrap(),
            vec![0],
            3,
            gen_blobs(3, 3, 2, 1.0, 0).unwrap().provenance,
        )
        .unwrap();
        let w = compute_sample_weights(&p, &HyperParams::PolySoft { lambda: 1.0, d: 2.0 }, &ds).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12);
    }
}
