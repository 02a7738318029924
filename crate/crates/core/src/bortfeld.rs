//! Bortfeld depth-dose curve for a proton pencil beam in a homogeneous medium,
//! and the prompt-gamma emission density derived from it.
//!
//! ```text
//! D(x) = K₁ [ D_{-1/p}(-ζ)/σ + K₂ D_{-1/p-1}(-ζ) ],   ζ = (R - x)/σ
//! K₁   = Φ₀ exp(-ζ²/4) σ^{1/p} Γ(1/p) / (√(2π) ρ p α^{1/p} (1 + βR))
//! K₂   = β/p + γ̂β + ε/R
//! ```
//!
//! `K₁` carries `exp(-ζ²/4)` and so depends on `x`. Each product
//! `exp(-ζ²/4)·D_ν(-ζ)` is formed as `exp(-ζ²/2 + ln S(ν, -ζ))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use std::sync::Arc;

use crate::special::{ln_gamma_unchecked, ln_pcf_scaled, ScaledPcfTable};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Material constants held fixed during inference. Defaults are the uniform
/// water-phantom values: α = 0.0022 cm·MeV^-p, p = 1.77, ρ = 1 g/cm³,
/// β = 0.012 cm⁻¹, γ̂ = 0.6 and unit primary fluence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPhysics {
    pub alpha: f64,
    pub p: f64,
    pub rho: f64,
    pub beta: f64,
    pub gamma_hat: f64,
    #[serde(default = "unit_fluence")]
    pub phi0: f64,
}

fn unit_fluence() -> f64 {
    1.0
}

impl Default for FixedPhysics {
    fn default() -> Self {
        FixedPhysics {
            alpha: 0.0022,
            p: 1.77,
            rho: 1.0,
            beta: 0.012,
            gamma_hat: 0.6,
            phi0: 1.0,
        }
    }
}

impl FixedPhysics {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("p", self.p),
            ("rho", self.rho),
            ("beta", self.beta),
            ("gamma_hat", self.gamma_hat),
            ("phi0", self.phi0),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "physics.{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !(self.p > 1.0) {
            return Err(Error::InvalidParams(format!(
                "physics.p must exceed 1, got {}",
                self.p
            )));
        }
        Ok(())
    }

    /// Range from initial energy by the Bragg-Kleeman rule `R = α E^p`.
    pub fn range_from_energy(&self, energy_mev: f64) -> f64 {
        self.alpha * energy_mev.powf(self.p)
    }

    pub fn energy_from_range(&self, range_cm: f64) -> f64 {
        (range_cm / self.alpha).powf(1.0 / self.p)
    }
}

/// Unknown tissue parameters of one homogeneous region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TissueParams {
    /// Range `R` in cm.
    pub range: f64,
    /// Width `σ` of the Gaussian range straggling in cm.
    pub sigma: f64,
    /// Fraction `ε` of low-energy primary fluence.
    pub epsilon: f64,
}

impl TissueParams {
    pub fn new(range: f64, sigma: f64, epsilon: f64) -> Result<Self> {
        let p = TissueParams {
            range,
            sigma,
            epsilon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "R must be positive, got {}",
                self.range
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParams(format!(
                "epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Standardized residual range `ζ(x) = (R - x)/σ`.
    pub fn zeta(&self, x: f64) -> f64 {
        (self.range - x) / self.sigma
    }
}

/// Dose curve for one parameter triple with the x-independent factors
/// precomputed.
#[derive(Debug, Clone)]
pub struct DoseCurve {
    params: TissueParams,
    nu: f64,
    ln_prefactor: f64,
    k2: f64,
    table: Arc<ScaledPcfTable>,
}

impl DoseCurve {
    pub fn new(params: &TissueParams, physics: &FixedPhysics) -> Result<Self> {
        params.validate()?;
        physics.validate()?;
        let inv_p = 1.0 / physics.p;
        let ln_prefactor = physics.phi0.ln() + inv_p * params.sigma.ln() + ln_gamma_unchecked(inv_p)
            - LN_SQRT_2PI
            - physics.rho.ln()
            - physics.p.ln()
            - inv_p * physics.alpha.ln()
            - (1.0 + physics.beta * params.range).ln();
        let k2 = physics.beta * inv_p + physics.gamma_hat * physics.beta + params.epsilon / params.range;
        Ok(DoseCurve {
            params: *params,
            nu: -inv_p,
            ln_prefactor,
            k2,
            table: ScaledPcfTable::shared(-inv_p)?,
        })
    }

    pub fn params(&self) -> &TissueParams {
        &self.params
    }

    /// `K₂`, the coefficient of the lower-order term.
    pub fn k2(&self) -> f64 {
        self.k2
    }

    /// Order `ν = -1/p` of the leading parabolic cylinder term.
    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Dose at depth `x` (any real `x`; depth validation is the caller's).
    pub fn eval(&self, x: f64) -> Result<f64> {
        let zeta = self.params.zeta(x);
        let base = self.ln_prefactor - 0.5 * zeta * zeta;
        let (ln_lead, ln_tail) = self.table.ln_pair(-zeta)?;
        Ok((base + ln_lead).exp() / self.params.sigma + self.k2 * (base + ln_tail).exp())
    }

    /// As [`eval`](Self::eval) but with both parabolic cylinder factors
    /// integrated directly instead of interpolated.
    pub fn eval_direct(&self, x: f64) -> Result<f64> {
        let zeta = self.params.zeta(x);
        let base = self.ln_prefactor - 0.5 * zeta * zeta;
        let lead = (base + ln_pcf_scaled(self.nu, -zeta)?).exp() / self.params.sigma;
        let tail = self.k2 * (base + ln_pcf_scaled(self.nu - 1.0, -zeta)?).exp();
        Ok(lead + tail)
    }

    /// The `ε`-dependent part `K₁ · (ε/R) · D_{ν-1}(-ζ)` of the dose.
    pub fn epsilon_term(&self, x: f64) -> Result<f64> {
        let zeta = self.params.zeta(x);
        let base = self.ln_prefactor - 0.5 * zeta * zeta;
        Ok(self.params.epsilon / self.params.range * (base + ln_pcf_scaled(self.nu - 1.0, -zeta)?).exp())
    }
}

/// Bortfeld dose `D(x | d)` at depth `x ≥ 0`.
pub fn dose(x: f64, params: &TissueParams, physics: &FixedPhysics) -> Result<f64> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("depth must be finite and >= 0, got {x}")));
    }
    DoseCurve::new(params, physics)?.eval(x)
}

/// Gauss-Legendre order of every emission-grid panel.
pub const PANEL_ORDER: usize = 8;

/// Quadrature nodes over the emission depth axis carrying the normalized
/// emission mass `Q(x_i)·w_i` at each node.
#[derive(Debug, Clone)]
pub struct EmissionGrid {
    pub nodes: Vec<f64>,
    /// `Q(x_i)·w_i`; sums to one.
    pub mass: Vec<f64>,
    /// `∫ D dx` over the domain.
    pub dose_integral: f64,
}

/// One region of the depth axis with its own dose curve.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    pub start: f64,
    pub end: f64,
    pub curve: &'a DoseCurve,
}

impl EmissionGrid {
    /// Builds the grid on contiguous segments. Panels are graded: about `σ/2`
    /// wide around the peak, widening linearly with distance from `R`, and never
    /// wider than `max_panel`.
    pub fn from_segments(segments: &[Segment<'_>], max_panel: f64) -> Result<Self> {
        let rule = gauss_legendre_panel_rule();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut doses = Vec::new();
        for seg in segments {
            let start = nodes.len();
            for (a, b) in panel_edges(seg.start, seg.end, seg.curve.params(), max_panel) {
                rule.push_panel(a, b, &mut nodes, &mut weights);
            }
            for &x in &nodes[start..] {
                doses.push(seg.curve.eval(x)?);
            }
        }
        let dose_integral: f64 = weights.iter().zip(&doses).map(|(w, d)| w * d).sum();
        if !(dose_integral > f64::MIN_POSITIVE) || !dose_integral.is_finite() {
            return Err(Error::DegenerateDose(format!(
                "dose integral {dose_integral:e} over the domain is not usable"
            )));
        }
        let mass = weights
            .iter()
            .zip(&doses)
            .map(|(w, d)| w * d / dose_integral)
            .collect();
        Ok(EmissionGrid {
            nodes,
            mass,
            dose_integral,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn gauss_legendre_panel_rule() -> &'static GaussLegendre {
    use std::sync::OnceLock;
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(PANEL_ORDER))
}

// Beyond this many σ past R the dose is below exp(-70) of its peak.
const DISTAL_CUTOFF_SIGMAS: f64 = 12.0;

pub(crate) fn panel_edges(start: f64, end: f64, params: &TissueParams, max_panel: f64) -> Vec<(f64, f64)> {
    let r = params.range;
    let sigma = params.sigma;
    let width_at = |x: f64| -> f64 {
        if x > r + DISTAL_CUTOFF_SIGMAS * sigma {
            max_panel
        } else {
            (0.5 * sigma).max(0.25 * (x - r).abs()).min(max_panel)
        }
    };
    let mut edges = Vec::new();
    let mut a = start;
    while a < end {
        let w = width_at(a);
        let w = w.min(width_at((a + w).min(end)));
        let mut b = a + w;
        // avoid a sliver panel at the end of the segment
        if b >= end - 0.25 * w {
            b = end;
        }
        edges.push((a, b));
        a = b;
    }
    edges
}

/// Normalized emission density `Q(x | d) = D(x)/∫D` on `domain`.
pub fn emission_density(
    x: f64,
    params: &TissueParams,
    physics: &FixedPhysics,
    domain: (f64, f64),
) -> Result<f64> {
    let (lo, hi) = domain;
    if !(lo < hi) || lo < 0.0 {
        return Err(Error::Domain(format!("invalid emission domain [{lo}, {hi}]")));
    }
    if !(x >= lo && x <= hi) {
        return Err(Error::Domain(format!("x = {x} outside the domain [{lo}, {hi}]")));
    }
    let curve = DoseCurve::new(params, physics)?;
    let grid = EmissionGrid::from_segments(
        &[Segment {
            start: lo,
            end: hi,
            curve: &curve,
        }],
        DEFAULT_MAX_PANEL,
    )?;
    Ok(curve.eval(x)? / grid.dose_integral)
}

/// Panel cap used when no detector geometry constrains the grid.
pub const DEFAULT_MAX_PANEL: f64 = 0.5;
