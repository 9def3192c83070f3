use arl_core::data::{gen_blobs, inject_asymmetric, inject_hierarchical, inject_symmetric, load_csv, split_meta, write_csv};
use arl_core::ArlError;

// 0.999 quantiles of the chi-square distribution
const CHI2_999_DF1: f64 = 10.828;
const CHI2_999_DF8: f64 = 26.124;

fn chi_square(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum()
}

#[test]
fn symmetric_rate_within_binomial_bound() {
    let ds = gen_blobs(10_000, 10, 4, 0.5, 1).unwrap();
    let noisy = inject_symmetric(&ds, 0.4, 2).unwrap();
    let sd = (0.4f64 * 0.6 / 10_000.0).sqrt();
    assert!((noisy.flipped_fraction() - 0.4).abs() <= 3.0 * sd, "{}", noisy.flipped_fraction());
}

#[test]
fn symmetric_targets_are_uniform() {
    let ds = gen_blobs(10_000, 10, 4, 0.5, 3).unwrap();
    let noisy = inject_symmetric(&ds, 0.4, 4).unwrap();
    let mut offsets = vec![0usize; 9];
    for i in 0..noisy.len() {
        if noisy.is_flipped(i) {
            offsets[(noisy.labels[i] + 10 - noisy.clean_labels[i]) % 10 - 1] += 1;
        }
    }
    let stat = chi_square(&offsets);
    assert!(stat < CHI2_999_DF8, "chi2 = {stat}, counts {offsets:?}");
}

#[test]
fn asymmetric_targets_split_evenly() {
    let ds = gen_blobs(10_000, 5, 3, 0.5, 5).unwrap();
    let noisy = inject_asymmetric(&ds, 0.4, 6).unwrap();
    let mut counts = [0usize; 2];
    for i in 0..noisy.len() {
        if noisy.is_flipped(i) {
            let off = (noisy.labels[i] + 5 - noisy.clean_labels[i]) % 5;
            assert!(off == 1 || off == 2);
            counts[off - 1] += 1;
        }
    }
    assert!(chi_square(&counts) < CHI2_999_DF1, "{counts:?}");
    let sd = (0.4f64 * 0.6 / 10_000.0).sqrt();
    assert!((noisy.flipped_fraction() - 0.4).abs() <= 3.0 * sd);
}

#[test]
fn hierarchical_flips_uniform_within_blocks() {
    let ds = gen_blobs(9_000, 6, 3, 0.5, 7).unwrap();
    let blocks = vec![vec![0, 1, 2], vec![3, 4, 5]];
    let noisy = inject_hierarchical(&ds, 0.5, &blocks, 8).unwrap();
    let mut counts = [0usize; 2];
    for i in 0..noisy.len() {
        if noisy.is_flipped(i) {
            let (y, j) = (noisy.clean_labels[i], noisy.labels[i]);
            assert_eq!(y / 3, j / 3, "flip crossed a block");
            counts[((j % 3) + 3 - (y % 3)) % 3 - 1] += 1;
        }
    }
    assert!(chi_square(&counts) < CHI2_999_DF1, "{counts:?}");
    let singleton = inject_hierarchical(&ds, 0.5, &[vec![0, 1, 2, 3, 4], vec![5]], 8);
    assert!(matches!(singleton, Err(ArlError::Config(_))));
}

#[test]
fn plurality_survives_symmetric_noise_up_to_cap() {
    let ds = gen_blobs(30_000, 3, 2, 0.5, 9).unwrap();
    let noisy = inject_symmetric(&ds, 0.6, 10).unwrap();
    for y in 0..3 {
        let mut seen = [0usize; 3];
        for i in (0..noisy.len()).filter(|&i| noisy.clean_labels[i] == y) {
            seen[noisy.labels[i]] += 1;
        }
        let best = (0..3).max_by_key(|&k| seen[k]).unwrap();
        assert_eq!(best, y, "{seen:?}");
    }
}

#[test]
fn split_then_csv_roundtrip() {
    let ds = gen_blobs(300, 3, 2, 0.5, 11).unwrap();
    let split = split_meta(&ds, 30, 0.2, 12).unwrap();
    assert_eq!(split.meta.class_counts(), vec![10, 10, 10]);
    assert_eq!(split.test.len(), 60);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.csv");
    write_csv(&split.train, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back.labels, split.train.labels);
    assert_eq!(back.features, split.train.features);
}
