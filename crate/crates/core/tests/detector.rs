mod common;

use proptest::prelude::*;

use prompt_gamma::detector::{
    binned_landing_kernel, landing_kernel, sample_hits, DetectionDistribution, DetectorArray,
};
use prompt_gamma::discrimination::kl_divergence;

use common::{single, water, water_geometry, NEAR_PAIR_A, NEAR_PAIR_B};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn bins_partition_the_kernel(
        x in 0.0f64..24.0, cell in 0usize..105, bins in 1usize..=64, h in 0.2f64..5.0,
    ) {
        let geom = water_geometry(h, bins);
        let xp = geom.cell_left_edge(cell);
        let total: f64 = (1..=bins).map(|b| binned_landing_kernel(xp, b, x, &geom).unwrap()).sum();
        let k = landing_kernel(xp, x, &geom);
        prop_assert!((total - k).abs() < 1e-12, "{total} vs {k}");
        prop_assert!((0.0..=0.5).contains(&k));
    }
}

#[test]
fn centred_cell_closed_form() {
    let geom = water_geometry(1.0, 1);
    let x = 7.3;
    let got = landing_kernel(x - 0.1, x, &geom);
    let want = (0.1f64).atan() / std::f64::consts::PI;
    assert!((got - want).abs() < 1e-15);
}

#[test]
fn far_detector_is_linear_in_cell_width() {
    let h = 1e4;
    let geom = DetectorArray::new(h, 0.0, 1.0, 0.2, 1).unwrap();
    let got = landing_kernel(0.4, 0.3, &geom);
    let want = 0.2 / (2.0 * std::f64::consts::PI * h);
    assert!(((got - want) / want).abs() < 1e-6);
}

#[test]
fn bin_out_of_range_is_an_error() {
    let geom = water_geometry(1.0, 3);
    assert!(binned_landing_kernel(1.0, 0, 1.0, &geom).is_err());
    assert!(binned_landing_kernel(1.0, 4, 1.0, &geom).is_err());
}

#[test]
fn two_bins_split_a_symmetric_cell_evenly() {
    let geom = water_geometry(1.0, 2);
    let x = 5.0;
    let a = binned_landing_kernel(x - 0.1, 1, x, &geom).unwrap();
    let b = binned_landing_kernel(x - 0.1, 2, x, &geom).unwrap();
    assert!((a - b).abs() < 1e-15);
}

#[test]
fn frozen_divergence_and_detection_values() {
    // reference values from an independent high-precision Simpson evaluation
    // on 19201 depth points
    let medium = water();
    let geom = water_geometry(1.0, 1);
    let dist = DetectionDistribution::compute(&single(NEAR_PAIR_A), &geom, &medium).unwrap();
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    assert!(rel(dist.total_mass(), 0.451_468_934_450_182_2) < 1e-8);
    assert!(rel(dist.prob(1, 80), 0.006_324_639_125_557_717) < 1e-8);
    assert!(rel(dist.prob(1, 81), 0.005_722_901_551_901_363) < 1e-8);
    let kl = kl_divergence(&single(NEAR_PAIR_A), &single(NEAR_PAIR_B), &geom, &medium).unwrap();
    assert!(rel(kl, 0.009_662_429_916_794_65) < 1e-7, "{kl}");
}

#[test]
fn collapsing_bins_recovers_the_single_bin_distribution() {
    let medium = water();
    let d = single(NEAR_PAIR_A);
    let six = DetectionDistribution::compute(&d, &water_geometry(1.0, 6), &medium).unwrap();
    let one = DetectionDistribution::compute(&d, &water_geometry(1.0, 1), &medium).unwrap();
    let collapsed = six.collapse_bins();
    for (a, b) in collapsed.atoms().iter().zip(one.atoms()) {
        assert!((a - b).abs() < 1e-14);
    }
}

fn goodness_of_fit(bins: usize) {
    let medium = water();
    let geom = water_geometry(1.0, bins);
    let d = single(NEAR_PAIR_A);
    let dist = DetectionDistribution::compute(&d, &geom, &medium).unwrap();
    let n = 100_000;
    let hits = sample_hits(n, &d, &geom, &medium, 2024).unwrap();
    let mut observed = vec![0u64; dist.n_atoms()];
    for h in &hits {
        observed[dist.atom(h)] += 1;
    }
    let total = dist.total_mass();
    let expected: Vec<f64> = dist.atoms().iter().map(|p| n as f64 * p / total).collect();
    let (stat, df, crit) = common::chi_square(&observed, &expected, 5.0, 0.01);
    assert!(
        stat < crit,
        "b = {bins}: chi2 {stat:.1} on {df} df, critical {crit:.1}"
    );
}

#[test]
fn sampled_hits_follow_the_detection_distribution_one_bin() {
    goodness_of_fit(1);
}

#[test]
fn sampled_hits_follow_the_detection_distribution_six_bins() {
    goodness_of_fit(6);
}

#[test]
fn sampling_is_seed_deterministic() {
    let medium = water();
    let geom = water_geometry(1.0, 6);
    let d = single(NEAR_PAIR_A);
    let a = sample_hits(500, &d, &geom, &medium, 11).unwrap();
    let b = sample_hits(500, &d, &geom, &medium, 11).unwrap();
    let c = sample_hits(500, &d, &geom, &medium, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a
        .iter()
        .all(|h| h.cell < geom.n_cells() && (1..=6).contains(&h.bin)));
}

#[test]
fn geometry_validation() {
    assert!(DetectorArray::new(0.0, 0.0, 21.0, 0.2, 1).is_err());
    assert!(DetectorArray::new(1.0, 0.0, 21.0, 0.0, 1).is_err());
    assert!(DetectorArray::new(1.0, 21.0, 0.0, 0.2, 1).is_err());
    assert!(DetectorArray::new(1.0, 0.0, 21.05, 0.2, 1).is_err());
    assert!(DetectorArray::new(1.0, 0.0, 21.0, 0.2, 0).is_err());
}
