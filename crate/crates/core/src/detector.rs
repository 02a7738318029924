//! Detector-plane model: landing kernels, detection probabilities per cell and
//! angular bin, and synthetic hit sampling.
//!
//! A gamma emitted isotropically at depth `x` lands in the detector cell
//! `[x', x'+Δ)` at standoff `h` with probability
//!
//! ```text
//! P(x'|x) = (atan((x'+Δ-x)/h) - atan((x'-x)/h)) / 2π
//! ```
//!
//! Only the upper half-plane is instrumented, so an infinite detector line
//! collects half the emissions. With `b` angular bins of width `π/b` each cell
//! probability splits into the parts whose projection angle falls in each bin.
//! All detection probabilities are per cell; sums run over cells.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bortfeld::{EmissionGrid, DEFAULT_MAX_PANEL};
use crate::error::{Error, Result};
use crate::phantom::{LayeredParams, Medium};

const TWO_PI: f64 = 2.0 * PI;

/// Detector plane parallel to the beam at standoff `h`, covering
/// `[xprime_lo, xprime_hi]` with cells of width `delta` and `bins` angular bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorArray {
    pub h: f64,
    pub xprime_lo: f64,
    pub xprime_hi: f64,
    pub delta: f64,
    pub bins: usize,
}

impl DetectorArray {
    pub fn new(h: f64, xprime_lo: f64, xprime_hi: f64, delta: f64, bins: usize) -> Result<Self> {
        let g = DetectorArray {
            h,
            xprime_lo,
            xprime_hi,
            delta,
            bins,
        };
        g.validate()?;
        Ok(g)
    }

    /// Cells of width `delta` from `xprime_lo` up to the first edge at or past
    /// `reach`.
    pub fn covering(h: f64, xprime_lo: f64, reach: f64, delta: f64, bins: usize) -> Result<Self> {
        let n = ((reach - xprime_lo) / delta - 1e-9).ceil().max(1.0);
        DetectorArray::new(h, xprime_lo, xprime_lo + n * delta, delta, bins)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "h must be positive, got {}",
                self.h
            )));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if !(self.xprime_lo < self.xprime_hi) || !self.xprime_hi.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "detector extent [{}, {}] is empty",
                self.xprime_lo, self.xprime_hi
            )));
        }
        let n = (self.xprime_hi - self.xprime_lo) / self.delta;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::InvalidGeometry(format!(
                "detector extent {} is not a multiple of delta {}",
                self.xprime_hi - self.xprime_lo,
                self.delta
            )));
        }
        if self.bins == 0 {
            return Err(Error::InvalidGeometry(
                "at least one angular bin is required".into(),
            ));
        }
        Ok(())
    }

    pub fn with_bins(self, bins: usize) -> Self {
        DetectorArray { bins, ..self }
    }

    pub fn with_h(self, h: f64) -> Self {
        DetectorArray { h, ..self }
    }

    pub fn n_cells(&self) -> usize {
        ((self.xprime_hi - self.xprime_lo) / self.delta).round() as usize
    }

    pub fn cell_left_edge(&self, cell: usize) -> f64 {
        self.xprime_lo + cell as f64 * self.delta
    }

    /// Cell boundaries `e_0 < … < e_C`, the last pinned to `xprime_hi`.
    pub fn edges(&self) -> Vec<f64> {
        let n = self.n_cells();
        let mut e: Vec<f64> = (0..=n).map(|c| self.cell_left_edge(c)).collect();
        e[n] = self.xprime_hi;
        e
    }

    pub fn cell_of(&self, xprime: f64) -> Option<usize> {
        if !(xprime >= self.xprime_lo && xprime < self.xprime_hi) {
            return None;
        }
        let c = ((xprime - self.xprime_lo) / self.delta).floor() as usize;
        Some(c.min(self.n_cells() - 1))
    }

    /// Lower angle of 1-based bin `bin`: `-π/2 + (bin-1)π/b`.
    pub fn bin_lower_angle(&self, bin: usize) -> f64 {
        -FRAC_PI_2 + (bin as f64 - 1.0) * PI / self.bins as f64
    }

    /// Emission-grid panel cap that resolves the landing kernel at this
    /// standoff.
    pub fn max_panel(&self) -> f64 {
        DEFAULT_MAX_PANEL.min(0.5 * self.h)
    }

    fn check_bin(&self, bin: usize) -> Result<()> {
        if bin == 0 || bin > self.bins {
            return Err(Error::Domain(format!("bin {bin} outside 1..={}", self.bins)));
        }
        Ok(())
    }
}

/// One detected gamma: its cell and its 1-based angular bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GammaHit {
    pub cell: usize,
    pub bin: usize,
}

impl GammaHit {
    pub fn xprime(&self, geom: &DetectorArray) -> f64 {
        geom.cell_left_edge(self.cell)
    }
}

/// Probability that a gamma emitted at `x` lands in `[xprime, xprime+Δ)`.
pub fn landing_kernel(xprime: f64, x: f64, geom: &DetectorArray) -> f64 {
    let h = geom.h;
    ((xprime + geom.delta - x) / h).atan() / TWO_PI - ((xprime - x) / h).atan() / TWO_PI
}

/// The part of [`landing_kernel`] whose projection angle lies in `bin`.
pub fn binned_landing_kernel(xprime: f64, bin: usize, x: f64, geom: &DetectorArray) -> Result<f64> {
    geom.check_bin(bin)?;
    let h = geom.h;
    let theta_lo = geom.bin_lower_angle(bin);
    let theta_hi = geom.bin_lower_angle(bin + 1);
    // the outermost bins reach ±π/2, i.e. the whole half line on their side
    let reach_lo = if bin == 1 {
        f64::NEG_INFINITY
    } else {
        x + h * theta_lo.tan()
    };
    let reach_hi = if bin == geom.bins {
        f64::INFINITY
    } else {
        x + h * theta_hi.tan()
    };
    let u1 = reach_lo.max(xprime);
    let u2 = reach_hi.min(xprime + geom.delta);
    if u2 <= u1 {
        return Ok(0.0);
    }
    Ok(((u2 - x) / h).atan() / TWO_PI - ((u1 - x) / h).atan() / TWO_PI)
}

/// Detection probabilities of every (bin, cell) atom for one parameter set.
#[derive(Debug, Clone)]
pub struct DetectionDistribution {
    n_cells: usize,
    n_bins: usize,
    // bin-major: probs[(bin-1) * n_cells + cell]
    probs: Vec<f64>,
    total_mass: f64,
}

impl DetectionDistribution {
    pub fn compute(params: &LayeredParams, geom: &DetectorArray, medium: &Medium) -> Result<Self> {
        geom.validate()?;
        let grid = medium.emission_grid(params, geom.max_panel())?;
        Ok(Self::from_grid(&grid, geom))
    }

    /// Pushes an emission grid through the binned landing kernel. Uses
    /// `atan((e - x)/h)` at the cell edges and splits each cell's angular
    /// interval at the bin boundaries, which is the same partition as
    /// [`binned_landing_kernel`].
    pub fn from_grid(grid: &EmissionGrid, geom: &DetectorArray) -> Self {
        let edges = geom.edges();
        let n_cells = geom.n_cells();
        let n_bins = geom.bins;
        let bin_width = PI / n_bins as f64;
        let bounds: Vec<f64> = (0..=n_bins).map(|j| -FRAC_PI_2 + j as f64 * bin_width).collect();
        let mut probs = vec![0.0; n_cells * n_bins];
        let mut angles = vec![0.0; edges.len()];
        let inv_h = 1.0 / geom.h;
        for (&x, &q) in grid.nodes.iter().zip(&grid.mass) {
            if q == 0.0 {
                continue;
            }
            for (a, &e) in angles.iter_mut().zip(&edges) {
                *a = ((e - x) * inv_h).atan();
            }
            let scale = q / TWO_PI;
            if n_bins == 1 {
                for c in 0..n_cells {
                    probs[c] += scale * (angles[c + 1] - angles[c]);
                }
                continue;
            }
            let bin_of = |phi: f64| (((phi + FRAC_PI_2) / bin_width) as usize).min(n_bins - 1);
            for c in 0..n_cells {
                let (lo, hi) = (angles[c], angles[c + 1]);
                let (jl, jh) = (bin_of(lo), bin_of(hi));
                if jl == jh {
                    probs[jl * n_cells + c] += scale * (hi - lo);
                } else {
                    probs[jl * n_cells + c] += scale * (bounds[jl + 1] - lo);
                    for j in jl + 1..jh {
                        probs[j * n_cells + c] += scale * bin_width;
                    }
                    probs[jh * n_cells + c] += scale * (hi - bounds[jh]);
                }
            }
        }
        let total_mass = probs.iter().sum();
        DetectionDistribution {
            n_cells,
            n_bins,
            probs,
            total_mass,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_atoms(&self) -> usize {
        self.probs.len()
    }

    /// `P_bin(cell | d)` with 1-based `bin`.
    pub fn prob(&self, bin: usize, cell: usize) -> f64 {
        self.probs[(bin - 1) * self.n_cells + cell]
    }

    /// Atom index of a hit in the bin-major layout.
    pub fn atom(&self, hit: &GammaHit) -> usize {
        (hit.bin - 1) * self.n_cells + hit.cell
    }

    pub fn atoms(&self) -> &[f64] {
        &self.probs
    }

    /// `P(cell | d) = Σ_bin P_bin(cell | d)`.
    pub fn marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_cells];
        for chunk in self.probs.chunks(self.n_cells) {
            for (a, p) in m.iter_mut().zip(chunk) {
                *a += p;
            }
        }
        m
    }

    /// Total probability of each bin over the detector extent.
    pub fn bin_masses(&self) -> Vec<f64> {
        self.probs.chunks(self.n_cells).map(|c| c.iter().sum()).collect()
    }

    /// Probability that an emitted gamma is detected at all.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// The marginal over bins as a single-bin distribution.
    pub fn collapse_bins(&self) -> Self {
        DetectionDistribution {
            n_cells: self.n_cells,
            n_bins: 1,
            probs: self.marginal(),
            total_mass: self.total_mass,
        }
    }

    /// `ln(P_atom / total_mass)` for every atom; `-inf` for empty atoms.
    pub fn log_conditional(&self) -> Vec<f64> {
        let ln_total = self.total_mass.ln();
        self.probs
            .iter()
            .map(|&p| {
                if p > 0.0 {
                    p.ln() - ln_total
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    }

    /// Draws `k` hits conditional on detection: a bin with probability
    /// proportional to its mass, then a cell from that bin's distribution.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<GammaHit>> {
        if k == 0 {
            return Ok(Vec::new());
        }
        if !(self.total_mass > 0.0) {
            return Err(Error::ZeroMass);
        }
        let bin_pick = WeightedIndex::new(self.bin_masses()).map_err(|_| Error::ZeroMass)?;
        let cell_picks: Vec<Option<WeightedIndex<f64>>> = self
            .probs
            .chunks(self.n_cells)
            .map(|c| WeightedIndex::new(c).ok())
            .collect();
        let mut hits = Vec::with_capacity(k);
        for _ in 0..k {
            let b = bin_pick.sample(rng);
            let cell = cell_picks[b]
                .as_ref()
                .expect("a bin with positive mass has a valid cell distribution")
                .sample(rng);
            hits.push(GammaHit { cell, bin: b + 1 });
        }
        Ok(hits)
    }
}

fn emission_grid(params: &LayeredParams, geom: &DetectorArray, medium: &Medium) -> Result<EmissionGrid> {
    geom.validate()?;
    medium.emission_grid(params, geom.max_panel())
}

/// `P(x'|d) = ∫ P(x'|x) Q(x|d) dx` for the cell `[xprime, xprime+Δ)`.
pub fn detection_density(
    xprime: f64,
    params: &LayeredParams,
    geom: &DetectorArray,
    medium: &Medium,
) -> Result<f64> {
    let grid = emission_grid(params, geom, medium)?;
    Ok(grid
        .nodes
        .iter()
        .zip(&grid.mass)
        .map(|(&x, &q)| q * landing_kernel(xprime, x, geom))
        .sum())
}

/// `P_bin(x'|d)`, the binned counterpart of [`detection_density`].
pub fn binned_detection_density(
    xprime: f64,
    bin: usize,
    params: &LayeredParams,
    geom: &DetectorArray,
    medium: &Medium,
) -> Result<f64> {
    geom.check_bin(bin)?;
    let grid = emission_grid(params, geom, medium)?;
    let mut total = 0.0;
    for (&x, &q) in grid.nodes.iter().zip(&grid.mass) {
        total += q * binned_landing_kernel(xprime, bin, x, geom)?;
    }
    Ok(total)
}

/// Total detection probability of one angular bin over the detector extent.
pub fn bin_mass(bin: usize, params: &LayeredParams, geom: &DetectorArray, medium: &Medium) -> Result<f64> {
    geom.check_bin(bin)?;
    let dist = DetectionDistribution::compute(params, geom, medium)?;
    Ok(dist.bin_masses()[bin - 1])
}

/// `k` i.i.d. hits conditional on detection, reproducible from `seed`.
pub fn sample_hits(
    k: usize,
    params: &LayeredParams,
    geom: &DetectorArray,
    medium: &Medium,
    seed: u64,
) -> Result<Vec<GammaHit>> {
    let dist = DetectionDistribution::compute(params, geom, medium)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dist.sample(k, &mut rng)
}

/// Writes hits as CSV with columns `cell_index,xprime_left_edge,bin`.
pub fn write_hits_csv<W: Write>(mut out: W, hits: &[GammaHit], geom: &DetectorArray) -> std::io::Result<()> {
    writeln!(out, "cell_index,xprime_left_edge,bin")?;
    for hit in hits {
        writeln!(out, "{},{},{}", hit.cell, hit.xprime(geom), hit.bin)?;
    }
    Ok(())
}
