//! How many detected gammas it takes to tell two parameter sets apart.
//!
//! The divergence is taken between the conditional-on-detection distributions
//! over (cell, bin) atoms, the same distributions the likelihood uses.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{DetectionDistribution, DetectorArray};
use crate::error::{Error, Result};
use crate::phantom::{LayeredParams, Medium};

/// Alternative-model probabilities below this are raised to it before the log.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationSpec {
    pub d_true: LayeredParams,
    pub d_alt: LayeredParams,
    /// Prior probability that `d_true` is the true configuration.
    pub p0: f64,
    /// Acceptable probability of preferring the wrong configuration.
    pub delta: f64,
    pub geometry: DetectorArray,
}

impl DiscriminationSpec {
    pub fn validate(&self) -> Result<()> {
        check_open_unit("p0", self.p0)?;
        check_open_unit("delta", self.delta)?;
        LayeredParams::new(self.d_true.per_layer.clone())?;
        LayeredParams::new(self.d_alt.per_layer.clone())?;
        self.geometry.validate()
    }
}

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidParams(format!(
            "{name} must lie in (0, 1), got {v}"
        )));
    }
    Ok(())
}

/// `Σ p log(p/q)` over the atoms of two detection distributions, each
/// normalized by its own detected mass.
pub fn kl_between(p: &DetectionDistribution, q: &DetectionDistribution) -> Result<f64> {
    if p.n_atoms() != q.n_atoms() {
        return Err(Error::InvalidGeometry(format!(
            "distributions have {} and {} atoms",
            p.n_atoms(),
            q.n_atoms()
        )));
    }
    kl_atoms(p.atoms(), p.total_mass(), q.atoms(), q.total_mass())
}

pub(crate) fn kl_atoms(p: &[f64], p_mass: f64, q: &[f64], q_mass: f64) -> Result<f64> {
    if !(p_mass > 0.0) || !(q_mass > 0.0) {
        return Err(Error::ZeroMass);
    }
    let mut floored = 0usize;
    let mut total = 0.0;
    for (&pa, &qa) in p.iter().zip(q) {
        if pa <= 0.0 {
            continue;
        }
        let pc = pa / p_mass;
        let mut qc = qa / q_mass;
        if qc < PROBABILITY_FLOOR {
            qc = PROBABILITY_FLOOR;
            floored += 1;
        }
        total += pc * (pc.ln() - qc.ln());
    }
    if floored > 0 {
        log::debug!("KL: {floored} alternative atoms floored at {PROBABILITY_FLOOR:e}");
    }
    Ok(total.max(0.0))
}

/// `D_KL(P(·|d_t) ‖ P(·|d_alt))` for the given detector.
pub fn kl_divergence(
    d_t: &LayeredParams,
    d_alt: &LayeredParams,
    geom: &DetectorArray,
    medium: &Medium,
) -> Result<f64> {
    let p = DetectionDistribution::compute(d_t, geom, medium)?;
    let q = DetectionDistribution::compute(d_alt, geom, medium)?;
    kl_between(&p, &q)
}

/// Smallest `k` with `k ≥ [ln((1-p0)/p0) - ln(1/(1-δ) - 1)] / D_KL`.
pub fn observation_bound(kl: f64, p0: f64, delta: f64) -> Result<u64> {
    check_open_unit("p0", p0)?;
    check_open_unit("delta", delta)?;
    if !(kl > 0.0) || !kl.is_finite() {
        return Err(Error::ZeroDivergence);
    }
    // -ln(1/(1-δ) - 1) = ln(1-δ) - ln δ, written to avoid the cancellation
    let numerator = ((1.0 - p0) / p0).ln() + (-delta).ln_1p() - delta.ln();
    let k = (numerator / kl).ceil();
    // a prior already at least this confident needs one observation
    Ok(k.max(1.0) as u64)
}

pub fn required_observations(spec: &DiscriminationSpec, medium: &Medium) -> Result<u64> {
    spec.validate()?;
    let kl = kl_divergence(&spec.d_true, &spec.d_alt, &spec.geometry, medium)?;
    observation_bound(kl, spec.p0, spec.delta)
}

/// One coordinate of the per-layer triples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordinate {
    #[serde(alias = "R", alias = "r")]
    Range,
    Sigma,
    Epsilon,
}

impl Coordinate {
    pub fn name(&self) -> &'static str {
        match self {
            Coordinate::Range => "R",
            Coordinate::Sigma => "sigma",
            Coordinate::Epsilon => "epsilon",
        }
    }
}

impl std::str::FromStr for Coordinate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "R" | "r" | "range" => Ok(Coordinate::Range),
            "sigma" => Ok(Coordinate::Sigma),
            "epsilon" | "eps" => Ok(Coordinate::Epsilon),
            other => Err(Error::InvalidParams(format!(
                "unknown coordinate {other:?}; expected R, sigma or epsilon"
            ))),
        }
    }
}

/// `steps` evenly spaced values over `[lo, hi]` (both ends included).
pub fn scan_points(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

/// Replaces `coord` with `value` in every layer of `d`.
pub fn with_coordinate(d: &LayeredParams, coord: Coordinate, value: f64) -> Result<LayeredParams> {
    let per_layer = d
        .per_layer
        .iter()
        .map(|p| {
            let mut q = *p;
            match coord {
                Coordinate::Range => q.range = value,
                Coordinate::Sigma => q.sigma = value,
                Coordinate::Epsilon => q.epsilon = value,
            }
            q
        })
        .collect();
    LayeredParams::new(per_layer)
}

/// `D_KL(P(·|d_star) ‖ P(·|d))` as one coordinate of `d` sweeps `[lo, hi]`
/// with the others held at `d_star`.
pub fn kl_sensitivity_scan(
    d_star: &LayeredParams,
    coord: Coordinate,
    (lo, hi): (f64, f64),
    steps: usize,
    geom: &DetectorArray,
    medium: &Medium,
) -> Result<Vec<(f64, f64)>> {
    let values = scan_points(lo, hi, steps);
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let truth = DetectionDistribution::compute(d_star, geom, medium)?;
    values
        .into_par_iter()
        .map(|v| {
            let d = with_coordinate(d_star, coord, v)?;
            let q = DetectionDistribution::compute(&d, geom, medium)?;
            Ok((v, kl_between(&truth, &q)?))
        })
        .collect()
}

/// One row of a discrimination table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub bins: usize,
    pub h: f64,
    pub kl: f64,
    pub k_required: u64,
}

/// Divergence and observation bound for every `(b, h)` combination.
pub fn bound_table(
    spec: &DiscriminationSpec,
    bins: &[usize],
    standoffs: &[f64],
    medium: &Medium,
) -> Result<Vec<BoundRow>> {
    spec.validate()?;
    let grid: Vec<(f64, usize)> = standoffs
        .iter()
        .flat_map(|&h| bins.iter().map(move |&b| (h, b)))
        .collect();
    grid.into_par_iter()
        .map(|(h, b)| {
            let geom = DetectorArray::new(
                h,
                spec.geometry.xprime_lo,
                spec.geometry.xprime_hi,
                spec.geometry.delta,
                b,
            )?;
            let kl = kl_divergence(&spec.d_true, &spec.d_alt, &geom, medium)?;
            Ok(BoundRow {
                bins: b,
                h,
                kl,
                k_required: observation_bound(kl, spec.p0, spec.delta)?,
            })
        })
        .collect()
}

pub fn write_scan_csv<W: Write>(mut out: W, coord: Coordinate, curve: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(out, "{},kl", coord.name())?;
    for (v, kl) in curve {
        writeln!(out, "{v},{kl:e}")?;
    }
    Ok(())
}

pub fn write_bound_csv<W: Write>(mut out: W, rows: &[BoundRow]) -> std::io::Result<()> {
    writeln!(out, "b,h,kl,k_required")?;
    for r in rows {
        writeln!(out, "{},{},{:e},{}", r.bins, r.h, r.kl, r.k_required)?;
    }
    Ok(())
}
