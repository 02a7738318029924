#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

use prompt_gamma::bortfeld::{FixedPhysics, TissueParams};
use prompt_gamma::detector::DetectorArray;
use prompt_gamma::phantom::{LayeredParams, Medium, Phantom};

/// Two nearby water configurations used for divergence and bound checks.
pub const NEAR_PAIR_A: (f64, f64, f64) = (16.2, 0.25, 0.2);
pub const NEAR_PAIR_B: (f64, f64, f64) = (16.9, 0.3, 0.25);

pub fn water() -> Medium {
    Medium::new(
        Phantom::homogeneous(24.0, 1.0, "water").unwrap(),
        FixedPhysics::default(),
    )
    .unwrap()
}

pub fn single((r, s, e): (f64, f64, f64)) -> LayeredParams {
    LayeredParams::new(vec![TissueParams::new(r, s, e).unwrap()]).unwrap()
}

/// The water detector used throughout: Δ = 0.2 cm over [0, 21] cm.
pub fn water_geometry(h: f64, bins: usize) -> DetectorArray {
    DetectorArray::new(h, 0.0, 21.0, 0.2, bins).unwrap()
}

/// ln erfcx(x) = x² + ln erfc(x), independent of the library's special
/// functions: a positive-term series for erf below 2, a continued fraction
/// above.
pub fn ln_erfcx(x: f64) -> f64 {
    if x < 0.0 {
        // erfc(x) = 2 − erfc(−x)
        let a = -x;
        return x * x + (2.0 - (ln_erfcx(a) - a * a).exp()).ln();
    }
    let a = x;
    if a < 2.0 {
        // erf(a) = (2a/√π) e^{-a²} Σ (2a²)^n / (1·3·…·(2n+1))
        let (mut term, mut sum, mut n) = (1.0, 1.0, 0.0);
        while term > 1e-17 * sum {
            n += 1.0;
            term *= 2.0 * a * a / (2.0 * n + 1.0);
            sum += term;
        }
        let erf = 2.0 * a / std::f64::consts::PI.sqrt() * (-a * a).exp() * sum;
        x * x + (1.0 - erf).ln()
    } else {
        // erfcx(x) = (1/√π) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        let mut tail = x;
        for n in (1..=4000).rev() {
            tail = x + 0.5 * n as f64 / tail;
        }
        -0.5 * std::f64::consts::PI.ln() - tail.ln()
    }
}

/// Pearson statistic with cells of expected count below `min_expected`
/// pooled; returns `(statistic, degrees of freedom, critical value at alpha)`.
pub fn chi_square(observed: &[u64], expected: &[f64], min_expected: f64, alpha: f64) -> (f64, usize, f64) {
    assert_eq!(observed.len(), expected.len());
    let mut stat = 0.0;
    let mut classes = 0;
    let (mut po, mut pe) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        if e >= min_expected {
            stat += (o as f64 - e).powi(2) / e;
            classes += 1;
        } else {
            po += o as f64;
            pe += e;
        }
    }
    if pe > 0.0 {
        stat += (po - pe).powi(2) / pe;
        classes += 1;
    }
    let df = classes - 1;
    let crit = ChiSquared::new(df as f64).unwrap().inverse_cdf(1.0 - alpha);
    (stat, df, crit)
}
