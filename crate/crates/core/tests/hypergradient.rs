mod common;

use arl_core::data::{gen_blobs, inject_symmetric, split_meta_sized, NoisyDataset};
use arl_core::losses::{softplus, HyperParams};
use arl_core::meta::{hypergradient, meta_loss_and_grad, train_loss_and_grad, virtual_step, Batch, BatchRef};
use arl_core::model::{init_mlp, Activation, MlpParams};
use common::*;
use rand::seq::index::sample;
use rand::Rng;

struct State {
    params: MlpParams,
    train: Batch,
    meta: Batch,
    alpha: f64,
}

fn data() -> (NoisyDataset, NoisyDataset) {
    let ds = gen_blobs(400, 3, 2, 0.6, 3).unwrap();
    let split = split_meta_sized(&ds, 30, 100, 4).unwrap();
    (inject_symmetric(&split.train, 0.4, 5).unwrap(), split.meta)
}

fn random_state(r: &mut rand_chacha::ChaCha8Rng, train: &NoisyDataset, meta: &NoisyDataset) -> State {
    let params = init_mlp(&[2, 8, 3], Activation::Tanh, r.random()).unwrap();
    let ti = sample(r, train.len(), 32).into_vec();
    let mi = sample(r, meta.len(), 15).into_vec();
    State {
        params,
        train: Batch::from_indices(train, &ti),
        meta: Batch::from_indices(meta, &mi),
        alpha: r.random_range(0.05..1.0),
    }
}

fn meta_after_step(s: &State, h: &HyperParams) -> f64 {
    let w = virtual_step(&s.params, h, s.train.as_ref(), s.alpha).unwrap();
    meta_loss_and_grad(&w, s.meta.as_ref()).unwrap().0
}

#[test]
fn agrees_with_pipeline_differences() {
    let (train, meta) = data();
    for (f, family) in ["gce", "sl", "bi_tempered", "poly_soft"].iter().enumerate() {
        let mut r = rng(60 + f as u64);
        for _ in 0..20 {
            let s = random_state(&mut r, &train, &meta);
            let mut h = random_hyper(&mut r, family);
            if let HyperParams::PolySoft { d, .. } = h {
                // keep part of the batch below the plateau so lambda matters
                h = HyperParams::PolySoft { lambda: r.random_range(1.2..4.0), d };
            }
            let theta = h.to_unconstrained().unwrap();
            let hg = hypergradient(&s.params, &theta, s.train.as_ref(), s.meta.as_ref(), s.alpha, 1e-3).unwrap();
            let fd = central_fd(
                |t| meta_after_step(&s, &theta.with_theta(t.to_vec()).to_hyper().unwrap()),
                &theta.theta,
                1e-4,
            );
            let err = rel_err(&hg, &fd);
            assert!(err <= 1e-3, "{family} {h:?}: {hg:?} vs {fd:?} ({err:e})");
        }
    }
}

#[test]
fn sl_matches_analytic_mixed_partial() {
    let (train, meta) = data();
    let mut r = rng(70);
    for _ in 0..20 {
        let s = random_state(&mut r, &train, &meta);
        let h = random_hyper(&mut r, "sl");
        let HyperParams::Sl { rce_a, .. } = h else { unreachable!() };
        let theta = h.to_unconstrained().unwrap();
        let hg = hypergradient(&s.params, &theta, s.train.as_ref(), s.meta.as_ref(), s.alpha, 1e-3).unwrap();

        let w = virtual_step(&s.params, &h, s.train.as_ref(), s.alpha).unwrap();
        let (_, g) = meta_loss_and_grad(&w, s.meta.as_ref()).unwrap();
        let part = |g1: f64, g2: f64| {
            train_loss_and_grad(&s.params, s.train.as_ref(), &HyperParams::Sl { gamma1: g1, gamma2: g2, rce_a })
                .unwrap()
                .1
        };
        let chain = theta.chain_factors();
        let analytic = [
            -s.alpha * g.dot(&part(1.0, 0.0)) * chain[0],
            -s.alpha * g.dot(&part(0.0, 1.0)) * chain[1],
        ];
        let err = rel_err(&hg, &analytic);
        assert!(err <= 1e-6, "{hg:?} vs {analytic:?} ({err:e})");
        // the chain factor of a softplus slot is the logistic of theta
        assert!((chain[0] - (1.0 - (-softplus(theta.theta[0])).exp())).abs() < 1e-12);
    }
}

#[test]
fn zero_step_gives_exactly_zero() {
    let (train, meta) = data();
    let mut r = rng(80);
    for family in ["gce", "sl", "bi_tempered", "poly_soft"] {
        let s = random_state(&mut r, &train, &meta);
        let theta = random_hyper(&mut r, family).to_unconstrained().unwrap();
        let hg = hypergradient(&s.params, &theta, s.train.as_ref(), s.meta.as_ref(), 0.0, 1e-3).unwrap();
        assert!(hg.iter().all(|&v| v == 0.0), "{family}: {hg:?}");
    }
}

#[test]
fn ce_has_no_hypergradient() {
    let (train, meta) = data();
    let s = random_state(&mut rng(90), &train, &meta);
    let theta = HyperParams::Ce.to_unconstrained().unwrap();
    let m = BatchRef::from(&meta);
    assert!(hypergradient(&s.params, &theta, s.train.as_ref(), m, 0.3, 1e-3).unwrap().is_empty());
}
