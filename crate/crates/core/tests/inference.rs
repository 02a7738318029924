mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use prompt_gamma::detector::sample_hits;
use prompt_gamma::discrimination::kl_divergence;
use prompt_gamma::inference::{
    effective_sample_size, log_likelihood, mean_kl, metropolis_accept, normalize_log_weights, propose,
    resample_indices, smc_run, Adaptation, Prior, SmcProblem, SmcSettings,
};
use prompt_gamma::runner::scenarios;

use common::{single, water, water_geometry, NEAR_PAIR_A, NEAR_PAIR_B};

#[test]
fn resampled_copy_counts_are_unbiased() {
    let w = [0.5, 0.3, 0.2];
    let reps = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut totals = [0usize; 3];
    for _ in 0..reps {
        for i in resample_indices(&w, &mut rng).unwrap() {
            totals[i] += 1;
        }
    }
    let n = w.len() as f64;
    for (i, &p) in w.iter().enumerate() {
        let mean = totals[i] as f64 / reps as f64;
        // copies of particle i ~ Binomial(N, w_i)
        let se = (n * p * (1.0 - p) / reps as f64).sqrt();
        assert!(
            (mean - n * p).abs() < 3.0 * se,
            "particle {i}: {mean} vs {}",
            n * p
        );
    }
}

#[test]
fn certain_particle_takes_every_slot() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(
        resample_indices(&[0.0, 1.0, 0.0, 0.0], &mut rng).unwrap(),
        vec![1; 4]
    );
}

proptest! {
    #[test]
    fn normalized_weights_sum_to_one(
        log_w in prop::collection::vec(-800.0f64..800.0, 2..200), shift in -1e4f64..1e4,
    ) {
        let w = normalize_log_weights(&log_w).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|x| x.is_finite() && *x >= 0.0));
        let shifted: Vec<f64> = log_w.iter().map(|l| l + shift).collect();
        let w2 = normalize_log_weights(&shifted).unwrap();
        for (a, b) in w.iter().zip(&w2) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let ess = effective_sample_size(&w);
        prop_assert!(ess >= 1.0 - 1e-9 && ess <= w.len() as f64 + 1e-9);
    }
}

#[test]
fn impossible_particle_gets_zero_weight() {
    let w = normalize_log_weights(&[-3.0, f64::NEG_INFINITY, -1.0]).unwrap();
    assert_eq!(w[1], 0.0);
    assert!(normalize_log_weights(&[f64::NEG_INFINITY; 3]).is_err());
}

#[test]
fn metropolis_chain_samples_its_target() {
    // standard normal target, random-walk proposals from the fixed component
    let adapt = Adaptation {
        fixed_variance: 4.0,
        ..Adaptation::default()
    };
    let log_target = |x: f64| -0.5 * x * x;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut x = vec![0.0];
    let (burn, thin, kept) = (1_000, 10, 20_000);
    let n_bins = 20;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut observed = vec![0u64; n_bins];
    for step in 0..burn + thin * kept {
        let y = propose(&x, 0, None, &adapt, &mut rng).unwrap();
        if metropolis_accept(log_target(y[0]) - log_target(x[0]), &mut rng) {
            x = y;
        }
        if step >= burn && (step - burn) % thin == 0 {
            let bin = ((normal.cdf(x[0]) * n_bins as f64) as usize).min(n_bins - 1);
            observed[bin] += 1;
        }
    }
    let expected = vec![kept as f64 / n_bins as f64; n_bins];
    let (stat, df, crit) = common::chi_square(&observed, &expected, 5.0, 0.01);
    assert!(stat < crit, "chi2 {stat:.1} on {df} df, critical {crit:.1}");
}

#[test]
fn metropolis_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        assert!(metropolis_accept(0.0, &mut rng));
        assert!(!metropolis_accept(f64::NEG_INFINITY, &mut rng));
        assert!(!metropolis_accept(f64::NAN, &mut rng));
    }
}

#[test]
fn burn_in_proposal_variance() {
    let adapt = Adaptation::default();
    let m = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let mut sums = vec![0.0; m];
    let mut squares = vec![0.0; m];
    for _ in 0..n {
        let y = propose(&[16.0, 0.3, 0.2], 1, None, &adapt, &mut rng).unwrap();
        for (i, (c, v)) in [16.0, 0.3, 0.2].iter().zip(&y).enumerate() {
            sums[i] += v - c;
            squares[i] += (v - c) * (v - c);
        }
    }
    let target = adapt.fixed_variance / m as f64;
    for i in 0..m {
        let mean = sums[i] / n as f64;
        let var = squares[i] / n as f64 - mean * mean;
        assert!((var / target - 1.0).abs() < 0.05, "coordinate {i}: {var}");
        assert!(mean.abs() < 4.0 * (target / n as f64).sqrt());
    }
}

#[test]
fn likelihood_prefers_the_generating_parameters() {
    let medium = water();
    let geom = water_geometry(1.0, 1);
    let truth = single(NEAR_PAIR_B);
    let other = single(NEAR_PAIR_A);
    let wins = (0..20u64)
        .filter(|&rep| {
            let hits = sample_hits(2000, &truth, &geom, &medium, 100 + rep).unwrap();
            log_likelihood(&hits, &truth, &geom, &medium).unwrap()
                >= log_likelihood(&hits, &other, &geom, &medium).unwrap()
        })
        .count();
    assert!(wins >= 19, "{wins}/20");
}

#[test]
fn likelihood_of_repeated_data_doubles() {
    let medium = water();
    let geom = water_geometry(1.0, 6);
    let d = single(NEAR_PAIR_A);
    let hits = sample_hits(300, &d, &geom, &medium, 9).unwrap();
    let doubled: Vec<_> = hits.iter().chain(&hits).copied().collect();
    let one = log_likelihood(&hits, &d, &geom, &medium).unwrap();
    let two = log_likelihood(&doubled, &d, &geom, &medium).unwrap();
    assert_eq!(two, 2.0 * one);
    assert_eq!(log_likelihood(&[], &d, &geom, &medium).unwrap(), 0.0);
}

#[test]
fn single_particle_mean_divergence_is_the_pair_divergence() {
    let medium = water();
    let geom = water_geometry(1.0, 1);
    let (a, b) = (single(NEAR_PAIR_A), single(NEAR_PAIR_B));
    let m = mean_kl(std::slice::from_ref(&a), &b, &geom, &medium).unwrap();
    let k = kl_divergence(&a, &b, &geom, &medium).unwrap();
    assert!((m - k).abs() < 1e-15);
    assert_eq!(mean_kl(&[b.clone(), b.clone()], &b, &geom, &medium).unwrap(), 0.0);
    let two = mean_kl(&[a.clone(), b.clone()], &b, &geom, &medium).unwrap();
    let four = mean_kl(&[a.clone(), a.clone(), b.clone(), b.clone()], &b, &geom, &medium).unwrap();
    assert!((two - four).abs() < 1e-15);
}

#[test]
fn prior_bounds_and_symmetry() {
    let prior = Prior::new(vec![16.0, 0.3, 0.2], vec![0.5, 0.05, 0.05]).unwrap();
    assert_eq!(prior.log_density(&[16.0, 0.3, -0.01]), f64::NEG_INFINITY);
    let a = prior.log_density(&[16.4, 0.3, 0.2]);
    let b = prior.log_density(&[15.6, 0.3, 0.2]);
    assert!((a - b).abs() < 1e-12);
    assert!(prior.log_density(&[16.0, 0.3, 0.2]) > a);
}

fn small_problem(seed: u64) -> SmcProblem {
    let mut cfg = scenarios::water(1).unwrap();
    cfg.master_seed = seed;
    cfg.smc = SmcSettings {
        particles: 40,
        k_per_block: 200,
        iterations: 4,
        ..SmcSettings::default()
    };
    cfg.smc_problem().unwrap()
}

#[test]
fn runs_are_reproducible_and_well_formed() {
    let a = smc_run(&small_problem(5)).unwrap();
    let b = smc_run(&small_problem(5)).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.snapshots, b.snapshots);
    assert_eq!(a.trace.records.len(), 4);
    assert_eq!(a.snapshots.len(), 5);
    assert_eq!(a.hits_observed, 800);
    for r in &a.trace.records {
        assert!((0.0..=1.0).contains(&r.acceptance_rate));
        assert!(r.mean_kl >= 0.0 && r.mean_kl.is_finite());
        assert!(r.ess >= 1.0 - 1e-9 && r.ess <= 40.0 + 1e-9);
    }
    for s in &a.snapshots {
        assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(a.ensemble.particles.iter().all(|p| p.history.len() == 4));
    let c = smc_run(&small_problem(6)).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn zero_iterations_leave_the_prior_sample() {
    let mut p = small_problem(5);
    p.settings.iterations = 0;
    let out = smc_run(&p).unwrap();
    assert!(out.trace.records.is_empty());
    assert_eq!(out.snapshots.len(), 1);
    assert_eq!(out.ensemble.len(), 40);
}
