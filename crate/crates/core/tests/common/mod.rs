#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use arl_core::losses::HyperParams;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||a - b|| / max(||a||, ||b||)`, with a floor on the denominator so two
/// vanishing vectors compare as equal.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

/// Central differences of `f` at `x`.
pub fn central_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Five-point stencil, fourth order.
pub fn five_point_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let mut at = |s: f64| {
                probe[k] = x[k] + s * h;
                let v = f(&probe);
                probe[k] = x[k];
                v
            };
            (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
        })
        .collect()
}

pub fn logits(rng: &mut ChaCha8Rng, c: usize, scale: f64) -> Vec<f64> {
    (0..c).map(|_| rng.random_range(-scale..scale)).collect()
}

/// A random in-domain hyperparameter set of the given family.
pub fn random_hyper(rng: &mut ChaCha8Rng, family: &str) -> HyperParams {
    match family {
        "ce" => HyperParams::Ce,
        "gce" => HyperParams::Gce {
            q: rng.random_range(0.05..1.0),
        },
        "sl" => HyperParams::Sl {
            gamma1: rng.random_range(0.0..3.0),
            gamma2: rng.random_range(0.0..3.0),
            rce_a: -rng.random_range(1.0..6.0),
        },
        "bi_tempered" => HyperParams::BiTempered {
            t1: rng.random_range(0.0..0.9),
            t2: rng.random_range(1.05..3.0),
        },
        "poly_soft" => HyperParams::PolySoft {
            lambda: rng.random_range(0.3..4.0),
            d: rng.random_range(1.5..5.0),
        },
        other => panic!("unknown family {other}"),
    }
}

pub const FAMILIES: [&str; 5] = ["ce", "gce", "sl", "bi_tempered", "poly_soft"];
