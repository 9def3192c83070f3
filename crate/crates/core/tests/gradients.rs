mod common;

use arl_core::losses::{self, HyperParams};
use arl_core::meta::{train_loss_and_grad, BatchRef};
use arl_core::model::{init_mlp, Activation, Matrix, MlpParams};
use common::*;
use rand::Rng;

const FD_STEP: f64 = 1e-6;

#[test]
fn logit_gradients_match_finite_differences() {
    for (f, family) in FAMILIES.iter().enumerate() {
        let mut r = rng(10 + f as u64);
        for _ in 0..100 {
            let c = r.random_range(2..8);
            let z = logits(&mut r, c, 3.0);
            let y = r.random_range(0..c);
            let h = random_hyper(&mut r, family);
            let eval = losses::evaluate(&h, &z, y).unwrap();
            let fd = central_fd(|zz| losses::value(&h, zz, y).unwrap(), &z, FD_STEP);
            let err = rel_err(&eval.grad_logits, &fd);
            assert!(err <= 1e-5, "{family} {h:?} z={z:?} y={y}: rel err {err:e}");
        }
    }
}

/// Largest step up to 1e-3 whose two-step stencil stays inside the domain.
fn stencil_step(h: &HyperParams) -> f64 {
    let base = h.values();
    let mut step = 1e-3;
    while step > 1e-7 {
        let ok = (0..base.len()).all(|k| {
            [-2.0, 2.0].iter().all(|s| {
                let mut v = base.clone();
                v[k] += s * step;
                h.with_values(&v).and_then(|hh| hh.validate()).is_ok()
            })
        });
        if ok {
            return step;
        }
        step /= 10.0;
    }
    step
}

fn value_at(h: &HyperParams, values: &[f64], z: &[f64], y: usize) -> f64 {
    losses::value(&h.with_values(values).unwrap(), z, y).unwrap()
}

#[test]
fn hyper_gradients_match_finite_differences() {
    for (f, family) in ["gce", "bi_tempered", "poly_soft"].iter().enumerate() {
        let mut r = rng(20 + f as u64);
        for _ in 0..100 {
            let c = r.random_range(2..8);
            let z = logits(&mut r, c, 3.0);
            let y = r.random_range(0..c);
            let h = random_hyper(&mut r, family);
            let eval = losses::evaluate(&h, &z, y).unwrap();
            // an oracle of different order and step from the library's own differences
            let fd = five_point_fd(|v| value_at(&h, v, &z, y), &h.values(), stencil_step(&h));
            let err = rel_err(&eval.grad_hyper, &fd);
            assert!(err <= 1e-5, "{family} {h:?}: {:?} vs {fd:?} ({err:e})", eval.grad_hyper);
        }
    }
}

#[test]
fn sl_hyper_gradient_is_exact() {
    let mut r = rng(30);
    for _ in 0..100 {
        let c = r.random_range(2..8);
        let z = logits(&mut r, c, 3.0);
        let y = r.random_range(0..c);
        let h = random_hyper(&mut r, "sl");
        let eval = losses::evaluate(&h, &z, y).unwrap();
        let base = h.values();
        // linear in (gamma1, gamma2): a unit forward difference is exact
        let fd: Vec<f64> = (0..2)
            .map(|k| {
                let mut v = base.clone();
                v[k] += 1.0;
                value_at(&h, &v, &z, y) - value_at(&h, &base, &z, y)
            })
            .collect();
        let err = rel_err(&eval.grad_hyper, &fd);
        assert!(err <= 1e-12, "{h:?}: {err:e}");
    }
}

fn random_batch(r: &mut rand_chacha::ChaCha8Rng, n: usize, dim: usize, c: usize) -> (Matrix, Vec<usize>) {
    let data = (0..n * dim).map(|_| r.random_range(-1.5..1.5)).collect();
    let labels = (0..n).map(|_| r.random_range(0..c)).collect();
    (Matrix::new(n, dim, data).unwrap(), labels)
}

#[test]
fn end_to_end_parameter_gradients() {
    for (f, family) in FAMILIES.iter().enumerate() {
        let mut r = rng(40 + f as u64);
        for trial in 0..5 {
            let act = if trial % 2 == 0 { Activation::Tanh } else { Activation::Relu };
            let params = init_mlp(&[3, 6, 4], act, trial).unwrap();
            let (x, labels) = random_batch(&mut r, 8, 3, 4);
            let h = random_hyper(&mut r, family);
            let batch = BatchRef {
                features: &x,
                labels: &labels,
            };
            let (_, g) = train_loss_and_grad(&params, batch, &h).unwrap();
            let fd = central_fd(
                |flat| {
                    let p = MlpParams::from_flat(params.sizes(), act, flat.to_vec()).unwrap();
                    train_loss_and_grad(&p, batch, &h).unwrap().0
                },
                params.as_slice(),
                FD_STEP,
            );
            let err = rel_err(g.as_slice(), &fd);
            assert!(err <= 1e-5, "{family} {act:?} {h:?}: {err:e}");
        }
    }
}

#[test]
fn gce_approaches_ce_for_small_q() {
    let q = 1e-4;
    for k in 0..=100 {
        let p = 0.01 + 0.99 * k as f64 / 100.0;
        let probs = losses::Probabilities::new(vec![p, 1.0 - p]).unwrap();
        let ce = losses::ce(&probs, 0).unwrap().value;
        let gce = losses::gce(&probs, 0, q).unwrap().value;
        // (1 - e^{-q x}) / q lies in [x - q x^2 / 2, x]
        assert!(gce <= ce + 1e-12 && ce - gce <= q * ce * ce / 2.0 + 1e-12, "p={p}: {gce} vs {ce}");
        if p >= 0.012 {
            assert!((gce - ce).abs() <= 1e-3, "p={p}: {gce} vs {ce}");
        }
    }
    let probs = losses::Probabilities::new(vec![0.5, 0.5]).unwrap();
    assert!((losses::gce(&probs, 0, 1e-4).unwrap().value - std::f64::consts::LN_2).abs() < 1e-3);
}

#[test]
fn near_unit_temperatures_recover_ce() {
    let mut r = rng(50);
    for _ in 0..50 {
        let c = r.random_range(2..8);
        let z = logits(&mut r, c, 3.0);
        let y = r.random_range(0..c);
        let bt = losses::bi_tempered(&z, y, 1.0 - 1e-6, 1.0 + 1e-6).unwrap().value;
        let ce = losses::ce(&losses::softmax(&z).unwrap(), y).unwrap().value;
        assert!((bt - ce).abs() <= 1e-4, "{bt} vs {ce}");
    }
}
