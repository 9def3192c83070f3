mod common;

use arl_core::losses::{self, HyperParams, Probabilities};
use arl_core::theory::{bound_constants, bounded_loss_check, exact_risk, riskgap_verify, simplex_compositions, FiniteWorld};
use common::rng;
use rand::Rng;

const LN3: f64 = 1.098_612_288_668_109_8;

#[test]
fn constants_examples() {
    let ln10 = 10f64.ln();
    let at = |lambda: f64| bound_constants(10, 0.4, &HyperParams::PolySoft { lambda, d: 2.0 }).unwrap();
    assert_eq!(at(ln10).a, 0.0);
    assert!((at(3.0).a - 0.154981).abs() < 1e-6);
    let bt = bound_constants(10, 0.4, &HyperParams::BiTempered { t1: 0.5, t2: 2.0 }).unwrap();
    assert!((bt.a - 0.394802).abs() < 1e-6);
}

#[test]
fn a_shrinks_toward_zero_as_lambda_reaches_ln_c() {
    let mut last = f64::INFINITY;
    for k in (0..=20).rev() {
        let lambda = LN3 + 0.1 * k as f64;
        let b = bound_constants(3, 0.3, &HyperParams::PolySoft { lambda, d: 3.0 }).unwrap();
        assert!(b.a >= 0.0 && b.a <= last && b.a_prime <= 0.0);
        last = b.a;
    }
    assert_eq!(last, 0.0);
}

#[test]
fn noisy_risk_equals_clean_without_noise() {
    let world = FiniteWorld::balanced(5, 3, 0.1, 0.0).unwrap();
    let comps = simplex_compositions(10, 3);
    let f: Vec<Vec<f64>> = (0..5).map(|i| comps[i * 7].iter().map(|&k| k as f64 / 10.0).collect()).collect();
    for h in [HyperParams::Ce, HyperParams::Gce { q: 0.4 }, HyperParams::PolySoft { lambda: 2.0, d: 3.0 }] {
        assert_eq!(exact_risk(&world, &f, &h, false).unwrap(), exact_risk(&world, &f, &h, true).unwrap());
    }
}

#[test]
fn exact_risk_matches_label_sampling() {
    let world = FiniteWorld::balanced(4, 3, 0.1, 0.3).unwrap();
    let comps = simplex_compositions(10, 3);
    let mut r = rng(100);
    let h = HyperParams::BiTempered { t1: 0.5, t2: 2.0 };
    let f: Vec<Vec<f64>> = (0..4)
        .map(|_| comps[r.random_range(0..comps.len())].iter().map(|&k| k as f64 / 10.0).collect())
        .collect();
    let exact = exact_risk(&world, &f, &h, true).unwrap();

    let draws = 200_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..draws {
        let i = r.random_range(0..4);
        let y = world.labels[i];
        let label = if r.random::<f64>() < world.eta {
            let k = r.random_range(0..2);
            (y + 1 + k) % 3
        } else {
            y
        };
        let v = losses::value_on_probs(&h, &Probabilities::new(f[i].clone()).unwrap(), label).unwrap();
        sum += v;
        sq += v * v;
    }
    let mean = sum / draws as f64;
    let sd = ((sq / draws as f64 - mean * mean) / draws as f64).sqrt();
    assert!((mean - exact).abs() <= 3.0 * sd, "{mean} vs {exact} (sd {sd})");
}

#[test]
fn polysoft_is_noise_tolerant_at_ln_c() {
    for eta in [0.1, 0.3, 0.6] {
        let world = FiniteWorld::balanced(4, 3, 0.02, eta).unwrap();
        let rep = riskgap_verify(&world, &HyperParams::PolySoft { lambda: LN3, d: 3.0 }).unwrap();
        assert!(rep.noisy_gap.abs() <= rep.tol_grid, "eta {eta}: {rep:?}");
        assert_eq!(rep.equality_ok, Some(true));
        assert!(rep.passed());
    }
}

#[test]
fn sandwiches_hold_on_the_grid() {
    let cases = [
        HyperParams::PolySoft { lambda: 2.0 * LN3, d: 2.0 },
        HyperParams::PolySoft { lambda: 3.0, d: 4.0 },
        HyperParams::BiTempered { t1: 0.5, t2: 2.0 },
        HyperParams::BiTempered { t1: 0.2, t2: 1.5 },
    ];
    for h in cases {
        for eta in [0.1, 0.3, 0.6] {
            let world = FiniteWorld::balanced(4, 3, 0.02, eta).unwrap();
            let rep = riskgap_verify(&world, &h).unwrap();
            assert!(rep.passed(), "{h:?} eta {eta}: {rep:?}");
            let b = rep.constants.unwrap();
            assert!(rep.noisy_gap <= b.a + rep.tol_grid && rep.clean_gap >= b.a_prime - rep.tol_grid);
        }
    }
}

#[test]
fn bounded_loss_condition() {
    for h in [
        HyperParams::Gce { q: 0.5 },
        HyperParams::Sl { gamma1: 0.1, gamma2: 1.0, rce_a: -4.0 },
        HyperParams::BiTempered { t1: 0.5, t2: 2.0 },
        HyperParams::PolySoft { lambda: LN3, d: 3.0 },
    ] {
        let rep = bounded_loss_check(3, 0.02, &h).unwrap();
        assert!(rep.range.is_finite() && rep.min_sum <= rep.max_sum, "{h:?}: {rep:?}");
    }
    // MAE is symmetric: sum_j (1 - u_j) = c - 1 everywhere
    let mae = bounded_loss_check(3, 0.02, &HyperParams::Gce { q: 1.0 }).unwrap();
    assert!(mae.range < 1e-9);
}

#[test]
fn hypothesis_errors_name_the_condition() {
    let msg = bound_constants(3, 0.5, &HyperParams::PolySoft { lambda: 0.9, d: 2.0 }).unwrap_err().to_string();
    assert!(msg.contains("lambda"));
    let world = FiniteWorld::balanced(4, 3, 0.02, 0.3).unwrap();
    assert!(riskgap_verify(&world, &HyperParams::PolySoft { lambda: 0.9, d: 2.0 }).is_err());
    assert!(FiniteWorld::balanced(4, 3, 0.02, 0.7).is_err());
}
