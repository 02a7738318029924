//! Gamma function and the parabolic cylinder function of negative order.
//!
//! The Bortfeld depth-dose curve needs `D_ν(z)` for `ν = -1/p` and
//! `ν = -1/p - 1` at arguments anywhere in roughly `[-60, 60]`. Those values
//! overflow on the proximal side of the curve, so the primary quantity here is
//! the scaled factor `S(ν, z)` with
//!
//! ```text
//! D_ν(z) = exp(-z²/4) · S(ν, z)
//! S(ν, z) = 1/Γ(-ν) · ∫₀^∞ t^(-ν-1) exp(-t²/2 - z t) dt        (ν < 0)
//! ```
//!
//! and [`ln_pcf_scaled`] returns `ln S` so callers can combine it with the
//! `exp(-z²/4)` prefactors before exponentiating.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, Tolerance};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

// ln Γ(z) for z > 0 (Lanczos, g = 7).
pub(crate) fn ln_gamma_unchecked(z: f64) -> f64 {
    if z < 0.5 {
        // Γ(z) = Γ(z + 1) / z keeps the Lanczos sum in its accurate range.
        return ln_gamma_unchecked(z + 1.0) - z.ln();
    }
    let x = z - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + a.ln()
}

/// Natural log of the Gamma function for `z > 0`.
pub fn ln_gamma(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("ln_gamma requires z > 0, got {z}")));
    }
    Ok(ln_gamma_unchecked(z))
}

/// The Gamma function `Γ(z)` for `z > 0`.
pub fn gamma_fn(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("gamma requires z > 0, got {z}")));
    }
    if z < 0.5 {
        return Ok(gamma_fn(z + 1.0)? / z);
    }
    if z.fract() == 0.0 && z <= 20.0 {
        return Ok((2..z as u64).map(|k| k as f64).product());
    }
    if z > 140.0 {
        return Ok(ln_gamma_unchecked(z).exp());
    }
    let x = z - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    Ok((2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a)
}

/// Order of a parabolic cylinder function; only negative orders are supported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcfOrder(f64);

impl PcfOrder {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu < 0.0) || !nu.is_finite() {
            return Err(Error::Domain(format!(
                "parabolic cylinder order must be finite and negative, got {nu}"
            )));
        }
        Ok(PcfOrder(nu))
    }

    pub fn nu(self) -> f64 {
        self.0
    }
}

// Integrand values below exp(-CUTOFF) relative to the peak are dropped.
const CUTOFF: f64 = 50.0;
const PCF_TOL: f64 = 1e-12;

/// `ln S(ν, z)`; see the module docs for the definition of `S`.
pub fn ln_pcf_scaled(nu: f64, z: f64) -> Result<f64> {
    let order = PcfOrder::new(nu)?;
    if !z.is_finite() {
        return Err(Error::Domain(format!("pcf argument must be finite, got {z}")));
    }
    let s = -order.nu();
    Ok(ln_moment_integral(s, z, PCF_TOL)? - ln_gamma_unchecked(s))
}

/// `S(ν, z) = exp(z²/4) · D_ν(z)`, the overflow-safe scaled parabolic
/// cylinder function. Overflows to `+inf` only when `S` itself exceeds the
/// `f64` range (roughly `z < -37`); use [`ln_pcf_scaled`] there.
pub fn pcf_scaled(nu: f64, z: f64) -> Result<f64> {
    Ok(ln_pcf_scaled(nu, z)?.exp())
}

/// The unscaled parabolic cylinder function `D_ν(z)` for `ν < 0`.
pub fn pcf(nu: f64, z: f64) -> Result<f64> {
    Ok((ln_pcf_scaled(nu, z)? - 0.25 * z * z).exp())
}

/// Tabulated `ln S(ν, z)` and `ln S(ν - 1, z)` for one fixed `ν`, used on
/// the hot path of the forward model. Interpolation is cubic Hermite with
/// exact node derivatives from `∂S(ν, z)/∂z = ν S(ν - 1, z)`; arguments outside
/// the table fall back to direct quadrature.
#[derive(Debug, Clone)]
pub struct ScaledPcfTable {
    nu: f64,
    z_min: f64,
    step: f64,
    // per node: [ln S(ν), d/dz ln S(ν), ln S(ν-1), d/dz ln S(ν-1)]
    nodes: Vec<[f64; 4]>,
}

impl ScaledPcfTable {
    pub const Z_MIN: f64 = -80.0;
    pub const Z_MAX: f64 = 80.0;
    pub const STEP: f64 = 0.0125;

    pub fn new(nu: f64) -> Result<Self> {
        PcfOrder::new(nu)?;
        let n = ((Self::Z_MAX - Self::Z_MIN) / Self::STEP).round() as usize + 1;
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let z = Self::Z_MIN + i as f64 * Self::STEP;
            let l0 = ln_pcf_scaled(nu, z)?;
            let l1 = ln_pcf_scaled(nu - 1.0, z)?;
            let l2 = ln_pcf_scaled(nu - 2.0, z)?;
            nodes.push([l0, nu * (l1 - l0).exp(), l1, (nu - 1.0) * (l2 - l1).exp()]);
        }
        Ok(ScaledPcfTable {
            nu,
            z_min: Self::Z_MIN,
            step: Self::STEP,
            nodes,
        })
    }

    /// Shared table for `ν`, built on first use.
    pub fn shared(nu: f64) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<u64, Arc<ScaledPcfTable>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let key = nu.to_bits();
        if let Some(t) = cache.lock().expect("pcf table cache poisoned").get(&key) {
            return Ok(Arc::clone(t));
        }
        // built outside the lock; a racing builder produces an identical table
        let table = Arc::new(ScaledPcfTable::new(nu)?);
        let mut guard = cache.lock().expect("pcf table cache poisoned");
        Ok(Arc::clone(guard.entry(key).or_insert(table)))
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `(ln S(ν, z), ln S(ν - 1, z))`.
    pub fn ln_pair(&self, z: f64) -> Result<(f64, f64)> {
        let u = (z - self.z_min) / self.step;
        if !(u >= 0.0) || u >= (self.nodes.len() - 1) as f64 {
            return Ok((ln_pcf_scaled(self.nu, z)?, ln_pcf_scaled(self.nu - 1.0, z)?));
        }
        let i = u as usize;
        let t = u - i as f64;
        let a = &self.nodes[i];
        let b = &self.nodes[i + 1];
        let h = self.step;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let lead = h00 * a[0] + h10 * h * a[1] + h01 * b[0] + h11 * h * b[1];
        let tail = h00 * a[2] + h10 * h * a[3] + h01 * b[2] + h11 * h * b[3];
        Ok((lead, tail))
    }
}

/// `ln ∫₀^∞ t^(s-1) exp(-t²/2 - z t) dt` for `s > 0`, evaluated relative to the
/// integrand's peak so neither tail overflows.
pub(crate) fn ln_moment_integral(s: f64, z: f64, rel_tol: f64) -> Result<f64> {
    let log_integrand = |t: f64| (s - 1.0) * t.ln() - 0.5 * t * t - z * t;

    // interior maximum of the log-integrand: t² + z t - (s - 1) = 0
    let disc = z * z + 4.0 * (s - 1.0);
    let mode = if disc >= 0.0 {
        let root = if z > 0.0 {
            2.0 * (s - 1.0) / (z + disc.sqrt())
        } else {
            0.5 * (-z + disc.sqrt())
        };
        (root > 0.0 && (s >= 1.0 || z < 0.0)).then_some(root)
    } else {
        None
    };

    // [0, split] is integrated after substituting t = split·w^m, which removes
    // the t^(s-1) endpoint singularity and any non-smoothness it carries.
    let split = 1.0 / (1.0 + z.abs());
    let power = (6.0 / s).ceil().max(1.0);
    let ln_split = split.ln();

    let mut reference = log_integrand(split);
    if let Some(m) = mode {
        reference = reference.max(log_integrand(m));
    }
    // log-integrand minus `reference`; around an interior mode m it is formed
    // as (s-1)(ln(1 + u/m) - u/m) - u²/2 with u = t - m, which stays accurate
    // when t² and z·t are individually huge
    let mode_shift = mode.map(|m| log_integrand(m) - reference);
    let log_rel = |t: f64| -> f64 {
        match (mode, mode_shift) {
            (Some(m), Some(shift)) => {
                let u = t - m;
                let r = u / m;
                (s - 1.0) * (r.ln_1p() - r) - 0.5 * u * u + shift
            }
            _ => log_integrand(t) - reference,
        }
    };

    let anchor = mode.map_or(split, |m| m.max(split));
    let mut step = 1.0;
    let upper = loop {
        let t = anchor + step;
        if log_rel(t) < -CUTOFF {
            break t;
        }
        step *= 2.0;
    };

    // drop the left flank when the whole of [0, lower] is negligible
    let mut lower = 0.0;
    if let Some(m) = mode.filter(|&m| m > split) {
        if log_rel(split) < -CUTOFF {
            let mut step = 1.0;
            loop {
                let t = m - step;
                if t <= split {
                    break;
                }
                if log_rel(t) < -CUTOFF {
                    lower = t;
                    break;
                }
                step *= 2.0;
            }
        }
    }

    let integrand = |v: f64| -> f64 {
        if v < split {
            let ln_w = (v / split).ln();
            let ln_t = ln_split + power * ln_w;
            let t = ln_t.exp();
            (power.ln() + (power * s - 1.0) * ln_w + (s - 1.0) * ln_split - 0.5 * t * t - z * t - reference)
                .exp()
        } else {
            log_rel(v).exp()
        }
    };

    let mut points = Vec::with_capacity(4);
    points.push(lower);
    if lower < split {
        points.push(split);
    }
    if let Some(m) = mode {
        if m > lower.max(split) && m < upper {
            points.push(m);
        }
    }
    points.push(upper);

    let est = integrate(integrand, &points, Tolerance::relative(rel_tol))?;
    if !(est.value > 0.0) {
        return Err(Error::Quadrature(format!(
            "non-positive moment integral for s={s}, z={z}"
        )));
    }
    Ok(reference + est.value.ln())
}
