//! Posterior sampling by iterated batch importance sampling with adaptive
//! Metropolis mutation.
//!
//! Each iteration draws a block of hits from the truth, reweights the
//! particles by the block likelihood, resamples, and moves every particle with
//! Metropolis-Hastings steps targeting the posterior given all data so far.
//! Parameter vectors use the `[R_1..R_n, σ_1..σ_n, ε_1..ε_n]` layout.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{DetectionDistribution, DetectorArray, GammaHit};
use crate::discrimination::kl_atoms;
use crate::error::{Error, Result};
use crate::phantom::{LayeredParams, Medium};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const MAX_PRIOR_DRAWS: usize = 100_000;

/// Diagonal Gaussian prior truncated to the physical box `R > 0`, `σ > 0`,
/// `0 ≤ ε < 1`. Coordinates flagged in `fixed` are pinned at their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prior {
    pub mean: Vec<f64>,
    /// Standard deviations; the covariance is `diag(sd²)`.
    pub sd: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixed: Vec<bool>,
}

impl Prior {
    pub fn new(mean: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        let p = Prior {
            mean,
            sd,
            fixed: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Mean at `center` with every range shifted by `range_shift`, and the
    /// same `(R, σ, ε)` standard deviations in each layer.
    pub fn around(center: &LayeredParams, range_shift: f64, sd: (f64, f64, f64)) -> Result<Self> {
        let n = center.len();
        let mut mean = center.to_vector();
        for r in &mut mean[..n] {
            *r += range_shift;
        }
        let mut sds = vec![sd.0; n];
        sds.extend(std::iter::repeat_n(sd.1, n));
        sds.extend(std::iter::repeat_n(sd.2, n));
        Prior::new(mean, sds)
    }

    pub fn with_fixed(mut self, fixed: Vec<bool>) -> Result<Self> {
        self.fixed = fixed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.mean.len();
        if dim == 0 || !dim.is_multiple_of(3) {
            return Err(Error::InvalidParams(format!(
                "prior dimension {dim} is not a positive multiple of 3"
            )));
        }
        if self.sd.len() != dim {
            return Err(Error::InvalidParams(format!(
                "prior has {dim} means but {} standard deviations",
                self.sd.len()
            )));
        }
        if let Some(i) = self.sd.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "prior sd[{i}] must be positive, got {}",
                self.sd[i]
            )));
        }
        if !self.fixed.is_empty() && self.fixed.len() != dim {
            return Err(Error::InvalidParams(format!(
                "fixed mask has {} entries for a {dim}-dimensional prior",
                self.fixed.len()
            )));
        }
        if !self.in_bounds(&self.mean) {
            return Err(Error::InvalidParams(
                "prior mean lies outside the parameter bounds".into(),
            ));
        }
        if self.free_indices().is_empty() {
            return Err(Error::InvalidParams("every prior coordinate is fixed".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_layers(&self) -> usize {
        self.mean.len() / 3
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        self.fixed.get(i).copied().unwrap_or(false)
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| !self.is_fixed(i)).collect()
    }

    pub fn in_bounds(&self, d: &[f64]) -> bool {
        let n = self.n_layers();
        d.len() == self.dim()
            && d.iter().enumerate().all(|(i, &v)| {
                v.is_finite()
                    && if i < 2 * n {
                        v > 0.0
                    } else {
                        (0.0..1.0).contains(&v)
                    }
            })
    }

    /// Log density; `-inf` outside the bounds or off a pinned coordinate.
    pub fn log_density(&self, d: &[f64]) -> f64 {
        if !self.in_bounds(d) {
            return f64::NEG_INFINITY;
        }
        let mut lp = 0.0;
        for i in 0..self.dim() {
            if self.is_fixed(i) {
                if d[i] != self.mean[i] {
                    return f64::NEG_INFINITY;
                }
                continue;
            }
            let z = (d[i] - self.mean[i]) / self.sd[i];
            lp -= 0.5 * z * z + self.sd[i].ln() + LN_SQRT_2PI;
        }
        lp
    }

    /// A draw from the truncated prior by rejection.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        for _ in 0..MAX_PRIOR_DRAWS {
            let d: Vec<f64> = (0..self.dim())
                .map(|i| {
                    if self.is_fixed(i) {
                        self.mean[i]
                    } else {
                        let z: f64 = StandardNormal.sample(rng);
                        self.mean[i] + self.sd[i] * z
                    }
                })
                .collect();
            if self.in_bounds(&d) {
                return Ok(d);
            }
        }
        Err(Error::InvalidParams(
            "prior puts almost no mass inside the parameter bounds".into(),
        ))
    }
}

pub fn log_prior(d: &[f64], prior: &Prior) -> f64 {
    prior.log_density(d)
}

/// Observed hits as counts per detection atom (bin-major, as in
/// [`DetectionDistribution::atom`]).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HitCounts {
    counts: BTreeMap<usize, u64>,
}

impl HitCounts {
    pub fn from_hits(hits: &[GammaHit], geom: &DetectorArray) -> Result<Self> {
        let n_cells = geom.n_cells();
        let mut counts = BTreeMap::new();
        for h in hits {
            if h.cell >= n_cells || h.bin == 0 || h.bin > geom.bins {
                return Err(Error::Domain(format!(
                    "hit {h:?} lies outside a {n_cells}-cell, {}-bin detector",
                    geom.bins
                )));
            }
            *counts.entry((h.bin - 1) * n_cells + h.cell).or_insert(0) += 1;
        }
        Ok(HitCounts { counts })
    }

    pub fn merge(&mut self, other: &HitCounts) {
        for (&a, &c) in &other.counts {
            *self.counts.entry(a).or_insert(0) += c;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `Σ count · log p` against per-atom conditional log probabilities.
    pub fn log_likelihood(&self, log_cond: &[f64]) -> f64 {
        let mut total = 0.0;
        for (&a, &c) in &self.counts {
            let lp = log_cond[a];
            if lp == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            total += c as f64 * lp;
        }
        total
    }
}

/// `Σ_j log[P_bin_j(cell_j | d) / total detected mass(d)]`.
pub fn log_likelihood(
    hits: &[GammaHit],
    d: &LayeredParams,
    geom: &DetectorArray,
    medium: &Medium,
) -> Result<f64> {
    if hits.is_empty() {
        return Ok(0.0);
    }
    let counts = HitCounts::from_hits(hits, geom)?;
    let dist = DetectionDistribution::compute(d, geom, medium)?;
    Ok(counts.log_likelihood(&dist.log_conditional()))
}

/// Normalized weights `∝ exp(log_w)`, computed with a max shift.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::WeightCollapse);
    }
    let w: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / sum).collect())
}

/// `1 / Σ ŵ²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Multinomial resampling: `weights.len()` ancestor indices drawn with
/// replacement.
pub fn resample_indices<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<Vec<usize>> {
    let pick = WeightedIndex::new(weights).map_err(|_| Error::WeightCollapse)?;
    Ok((0..weights.len()).map(|_| pick.sample(rng)).collect())
}

/// Tuning of the adaptive proposal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Adaptation {
    /// `s_d = scale² / m`.
    pub scale: f64,
    /// Regularizer `δ` in `s_d·cov + s_d·δ·I`.
    pub delta: f64,
    /// Weight of the small fixed component in the phase-two mixture.
    pub beta: f64,
    /// Per-coordinate variance of the fixed component is this over `m`.
    pub fixed_variance: f64,
    /// Phase one lasts while `t ≤ burn_in_factor · m`.
    pub burn_in_factor: usize,
}

impl Default for Adaptation {
    fn default() -> Self {
        Adaptation {
            scale: 2.38,
            delta: 0.1,
            beta: 0.05,
            fixed_variance: 0.01,
            burn_in_factor: 2,
        }
    }
}

impl Adaptation {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !(self.delta >= 0.0) || !(self.fixed_variance > 0.0) {
            return Err(Error::InvalidParams(
                "adaptation needs scale > 0, delta ≥ 0, fixed_variance > 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParams(format!(
                "mixture weight beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        Ok(())
    }

    pub fn s_d(&self, m: usize) -> f64 {
        self.scale * self.scale / m as f64
    }

    pub fn in_burn_in(&self, t: usize, m: usize) -> bool {
        t <= self.burn_in_factor * m
    }
}

/// `C_t = s_d·cov(history) + s_d·δ·I` with the `1/k` sample covariance of the
/// `k+1` history points.
pub fn adaptive_covariance(history: &[Vec<f64>], adapt: &Adaptation) -> Result<DMatrix<f64>> {
    if history.len() < 2 {
        return Err(Error::Domain(format!(
            "covariance needs at least two history points, got {}",
            history.len()
        )));
    }
    let m = history[0].len();
    let points: Vec<DVector<f64>> = history.iter().map(|h| DVector::from_column_slice(h)).collect();
    let mean = points.iter().fold(DVector::zeros(m), |acc, p| acc + p) / points.len() as f64;
    let mut cov = DMatrix::zeros(m, m);
    for p in &points {
        let c = p - &mean;
        cov += &c * c.transpose();
    }
    cov /= (points.len() - 1) as f64;
    let s_d = adapt.s_d(m);
    Ok(cov * s_d + DMatrix::identity(m, m) * (s_d * adapt.delta))
}

/// A Metropolis candidate around `current` (free coordinates only).
///
/// During burn-in, `current + N(0, fixed_variance·I/m)`; afterwards the
/// mixture `(1-β)·N(current, C) + β·N(current, fixed_variance·I/m)`. Both
/// components are centred on `current`, so the proposal is symmetric.
pub fn propose<R: Rng + ?Sized>(
    current: &[f64],
    t: usize,
    cov: Option<&DMatrix<f64>>,
    adapt: &Adaptation,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let m = current.len();
    let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
    let adaptive = if adapt.in_burn_in(t, m) {
        None
    } else {
        let u: f64 = rng.gen();
        if u < adapt.beta {
            None
        } else {
            Some(cov.ok_or_else(|| Error::Domain("adaptive phase reached without a covariance".into()))?)
        }
    };
    match adaptive {
        None => {
            let s = (adapt.fixed_variance / m as f64).sqrt();
            Ok(current.iter().zip(&z).map(|(c, z)| c + s * z).collect())
        }
        Some(cov) => {
            let chol = cov
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Domain("proposal covariance is not positive definite".into()))?;
            let step = chol.l() * DVector::from_vec(z);
            Ok(current.iter().zip(step.iter()).map(|(c, s)| c + s).collect())
        }
    }
}

/// Metropolis test for a symmetric proposal: accept with probability
/// `min(1, exp(log_ratio))`.
pub fn metropolis_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.gen();
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio.is_nan() {
        return false;
    }
    u.ln() < log_ratio
}

/// One Metropolis-Hastings step for `current` under the posterior given
/// `hits`. Returns the resulting vector and whether the candidate was taken.
#[allow(clippy::too_many_arguments)]
pub fn mh_accept<R: Rng + ?Sized>(
    current: &[f64],
    candidate: &[f64],
    hits: &[GammaHit],
    prior: &Prior,
    geom: &DetectorArray,
    medium: &Medium,
    rng: &mut R,
) -> Result<(Vec<f64>, bool)> {
    let log_post = |d: &[f64]| -> Result<f64> {
        let lp = prior.log_density(d);
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        Ok(lp + log_likelihood(hits, &LayeredParams::from_vector(d)?, geom, medium)?)
    };
    let ratio = log_post(candidate)? - log_post(current)?;
    if metropolis_accept(ratio, rng) {
        Ok((candidate.to_vec(), true))
    } else {
        Ok((current.to_vec(), false))
    }
}

/// Forward-model quantities cached per particle.
#[derive(Debug)]
struct Evaluation {
    log_cond: Vec<f64>,
    // cell probabilities of the detection marginal, conditional on detection
    marginal: Vec<f64>,
    // conditional atom probabilities, for the binned divergence
    atoms: Vec<f64>,
}

impl Evaluation {
    fn new(d: &[f64], geom: &DetectorArray, medium: &Medium) -> Result<Self> {
        let dist = DetectionDistribution::compute(&LayeredParams::from_vector(d)?, geom, medium)?;
        if !(dist.total_mass() > 0.0) {
            return Err(Error::ZeroMass);
        }
        let mass = dist.total_mass();
        Ok(Evaluation {
            log_cond: dist.log_conditional(),
            marginal: dist.marginal().into_iter().map(|p| p / mass).collect(),
            atoms: dist.atoms().iter().map(|p| p / mass).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Particle {
    pub params: Vec<f64>,
    /// Post-selection positions, one per completed iteration.
    pub history: Vec<Vec<f64>>,
    /// Index of the RNG stream this particle's slot draws from.
    pub rng_stream: u64,
    log_prior: f64,
    log_lik: f64,
    eval: Arc<Evaluation>,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub particles: Vec<Particle>,
    pub weights: Vec<f64>,
    pub iteration: usize,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn params(&self) -> Vec<Vec<f64>> {
        self.particles.iter().map(|p| p.params.clone()).collect()
    }

    /// Weighted mean and standard deviation of every coordinate.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let dim = self.particles[0].params.len();
        let mut mean = vec![0.0; dim];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            for (m, v) in mean.iter_mut().zip(&p.params) {
                *m += w * v;
            }
        }
        let mut var = vec![0.0; dim];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            for ((s, v), m) in var.iter_mut().zip(&p.params).zip(&mean) {
                *s += w * (v - m) * (v - m);
            }
        }
        (mean, var.into_iter().map(f64::sqrt).collect())
    }
}

/// Which detection distribution the trace's mean divergence compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlTarget {
    /// Cell distribution summed over angular bins, comparable across `b`.
    #[default]
    Marginal,
    /// Full (cell, bin) distribution of the configured detector.
    Binned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmcSettings {
    pub particles: usize,
    pub k_per_block: usize,
    /// Explicit per-iteration block sizes; overrides `k_per_block` and
    /// `iterations` when non-empty.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub block_sizes: Vec<usize>,
    pub iterations: usize,
    /// Resample only when the ESS falls below half the ensemble.
    pub ess_resampling: bool,
    pub mh_moves: usize,
    pub kl_target: KlTarget,
    pub adaptation: Adaptation,
}

impl Default for SmcSettings {
    fn default() -> Self {
        SmcSettings {
            particles: 500,
            k_per_block: 1000,
            block_sizes: Vec::new(),
            iterations: 20,
            ess_resampling: false,
            mh_moves: 1,
            kl_target: KlTarget::Marginal,
            adaptation: Adaptation::default(),
        }
    }
}

impl SmcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::InvalidParams(format!(
                "need at least 2 particles, got {}",
                self.particles
            )));
        }
        if self.blocks().contains(&0) {
            return Err(Error::InvalidParams("data blocks must be non-empty".into()));
        }
        self.adaptation.validate()
    }

    /// Hits drawn at each iteration.
    pub fn blocks(&self) -> Vec<usize> {
        if self.block_sizes.is_empty() {
            vec![self.k_per_block; self.iterations]
        } else {
            self.block_sizes.clone()
        }
    }
}

/// Everything a run needs.
#[derive(Debug, Clone)]
pub struct SmcProblem {
    pub truth: LayeredParams,
    pub prior: Prior,
    pub geometry: DetectorArray,
    pub medium: Medium,
    pub settings: SmcSettings,
    pub seed: u64,
}

impl SmcProblem {
    pub fn validate(&self) -> Result<()> {
        LayeredParams::new(self.truth.per_layer.clone())?;
        self.prior.validate()?;
        self.geometry.validate()?;
        self.settings.validate()?;
        if self.prior.dim() != 3 * self.medium.phantom.len() || self.truth.len() != self.medium.phantom.len()
        {
            return Err(Error::InvalidParams(format!(
                "prior dimension {} and truth ({} layers) must match the {}-layer phantom",
                self.prior.dim(),
                self.truth.len(),
                self.medium.phantom.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_kl: f64,
    pub acceptance_rate: f64,
    /// ESS of the importance weights before selection.
    pub ess: f64,
    pub resampled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SmcTrace {
    pub records: Vec<IterationRecord>,
}

impl SmcTrace {
    /// First iteration whose mean divergence is at or below `level`.
    pub fn first_reaching(&self, level: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.mean_kl <= level)
            .map(|r| r.iteration)
    }
}

/// Particle positions and weights at the end of one iteration (iteration 0 is
/// the prior sample).
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub params: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SmcOutcome {
    pub trace: SmcTrace,
    pub snapshots: Vec<Snapshot>,
    pub ensemble: Ensemble,
    pub hits_observed: u64,
}

// Substream purposes within one (slot, iteration).
const INIT: u64 = 0;
const MUTATE: u64 = 1;
const DATA_STREAM: u64 = u64::MAX;
const SELECT_STREAM: u64 = u64::MAX - 1;

/// Deterministic RNG for a (stream, iteration, purpose) triple.
fn substream(seed: u64, stream: u64, iteration: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos((((iteration as u128) << 4) | purpose as u128) << 40);
    rng
}

fn snapshot(ens: &Ensemble) -> Snapshot {
    Snapshot {
        iteration: ens.iteration,
        params: ens.params(),
        weights: ens.weights.clone(),
    }
}

fn free_coords(d: &[f64], free: &[usize]) -> Vec<f64> {
    free.iter().map(|&i| d[i]).collect()
}

fn mean_divergence(particles: &[Particle], truth: &Evaluation, target: KlTarget) -> Result<f64> {
    let mut total = 0.0;
    for p in particles {
        total += match target {
            KlTarget::Marginal => kl_atoms(&p.eval.marginal, 1.0, &truth.marginal, 1.0)?,
            KlTarget::Binned => kl_atoms(&p.eval.atoms, 1.0, &truth.atoms, 1.0)?,
        };
    }
    Ok(total / particles.len() as f64)
}

/// `(1/N) Σ_j D_KL(P(·|d_j) ‖ P(·|d*))` on the given detector.
pub fn mean_kl(
    particles: &[LayeredParams],
    d_star: &LayeredParams,
    geom: &DetectorArray,
    medium: &Medium,
) -> Result<f64> {
    if particles.is_empty() {
        return Err(Error::InvalidParams(
            "mean divergence of an empty ensemble".into(),
        ));
    }
    let truth = DetectionDistribution::compute(d_star, geom, medium)?;
    let kls = particles
        .par_iter()
        .map(|d| {
            let p = DetectionDistribution::compute(d, geom, medium)?;
            crate::discrimination::kl_between(&p, &truth)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(kls.iter().sum::<f64>() / kls.len() as f64)
}

struct MoveOutcome {
    particle: Particle,
    accepted: usize,
}

fn is_rejectable(e: &Error) -> bool {
    matches!(
        e,
        Error::DegenerateDose(_) | Error::ZeroMass | Error::Quadrature(_)
    )
}

#[allow(clippy::too_many_arguments)]
fn mutate(
    mut particle: Particle,
    slot: usize,
    t: usize,
    free: &[usize],
    data: &HitCounts,
    problem: &SmcProblem,
) -> Result<MoveOutcome> {
    let adapt = &problem.settings.adaptation;
    let m = free.len();
    let mut rng = substream(problem.seed, slot as u64, t, MUTATE);
    let cov = if adapt.in_burn_in(t, m) {
        None
    } else {
        let hist: Vec<Vec<f64>> = particle.history.iter().map(|h| free_coords(h, free)).collect();
        Some(adaptive_covariance(&hist, adapt)?)
    };
    let mut accepted = 0;
    for _ in 0..problem.settings.mh_moves {
        let step = propose(
            &free_coords(&particle.params, free),
            t,
            cov.as_ref(),
            adapt,
            &mut rng,
        )?;
        let mut candidate = particle.params.clone();
        for (&i, v) in free.iter().zip(step) {
            candidate[i] = v;
        }
        let lp = problem.prior.log_density(&candidate);
        let evaluated = if lp == f64::NEG_INFINITY {
            None
        } else {
            match Evaluation::new(&candidate, &problem.geometry, &problem.medium) {
                Ok(e) => Some(e),
                Err(e) if is_rejectable(&e) => {
                    log::debug!("candidate rejected: {e}");
                    None
                }
                Err(e) => return Err(e),
            }
        };
        let (ll, eval) = match evaluated {
            Some(e) => (data.log_likelihood(&e.log_cond), Some(e)),
            None => (f64::NEG_INFINITY, None),
        };
        let ratio = (lp + ll) - (particle.log_prior + particle.log_lik);
        if metropolis_accept(ratio, &mut rng) {
            if let Some(e) = eval {
                particle.params = candidate;
                particle.log_prior = lp;
                particle.log_lik = ll;
                particle.eval = Arc::new(e);
                accepted += 1;
            }
        }
    }
    Ok(MoveOutcome { particle, accepted })
}

/// Runs the sampler: truth → prior sample → [data block → importance →
/// selection → mutation] per iteration. Deterministic given `problem.seed`,
/// whatever the thread count.
pub fn smc_run(problem: &SmcProblem) -> Result<SmcOutcome> {
    problem.validate()?;
    let settings = &problem.settings;
    let n = settings.particles;
    let free = problem.prior.free_indices();
    let truth_vec = problem.truth.to_vector();
    let truth_dist = DetectionDistribution::compute(&problem.truth, &problem.geometry, &problem.medium)?;
    let truth_eval = Evaluation::new(&truth_vec, &problem.geometry, &problem.medium)?;

    let particles = (0..n)
        .into_par_iter()
        .map(|slot| {
            let mut rng = substream(problem.seed, slot as u64, 0, INIT);
            let params = problem.prior.sample(&mut rng)?;
            let eval = Evaluation::new(&params, &problem.geometry, &problem.medium)?;
            Ok(Particle {
                log_prior: problem.prior.log_density(&params),
                params,
                history: Vec::new(),
                rng_stream: slot as u64,
                log_lik: 0.0,
                eval: Arc::new(eval),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ens = Ensemble {
        particles,
        weights: vec![1.0 / n as f64; n],
        iteration: 0,
    };
    let mut snapshots = vec![snapshot(&ens)];
    let mut trace = SmcTrace::default();
    let mut data = HitCounts::default();

    for (idx, &k) in settings.blocks().iter().enumerate() {
        let t = idx + 1;
        let mut data_rng = substream(problem.seed, DATA_STREAM, t, 0);
        let block = HitCounts::from_hits(&truth_dist.sample(k, &mut data_rng)?, &problem.geometry)?;
        data.merge(&block);

        // importance
        let mut log_w = Vec::with_capacity(n);
        for (p, w) in ens.particles.iter_mut().zip(&ens.weights) {
            let ll = block.log_likelihood(&p.eval.log_cond);
            p.log_lik += ll;
            log_w.push(w.ln() + ll);
        }
        ens.weights = normalize_log_weights(&log_w)?;
        let ess = effective_sample_size(&ens.weights);

        // selection
        let resampled = !settings.ess_resampling || ess < 0.5 * n as f64;
        if resampled {
            let mut rng = substream(problem.seed, SELECT_STREAM, t, 0);
            let ancestors = resample_indices(&ens.weights, &mut rng)?;
            ens.particles = ancestors
                .iter()
                .enumerate()
                .map(|(slot, &a)| Particle {
                    rng_stream: slot as u64,
                    ..ens.particles[a].clone()
                })
                .collect();
            ens.weights = vec![1.0 / n as f64; n];
        }
        for p in &mut ens.particles {
            p.history.push(p.params.clone());
        }

        // mutation
        let moved = std::mem::take(&mut ens.particles)
            .into_par_iter()
            .enumerate()
            .map(|(slot, p)| mutate(p, slot, t, &free, &data, problem))
            .collect::<Result<Vec<_>>>()?;
        let accepted: usize = moved.iter().map(|o| o.accepted).sum();
        ens.particles = moved.into_iter().map(|o| o.particle).collect();
        ens.iteration = t;

        let record = IterationRecord {
            iteration: t,
            mean_kl: mean_divergence(&ens.particles, &truth_eval, settings.kl_target)?,
            acceptance_rate: if settings.mh_moves == 0 {
                0.0
            } else {
                accepted as f64 / (n * settings.mh_moves) as f64
            },
            ess,
            resampled,
        };
        log::info!(
            "iteration {t}: mean KL {:.4e}, acceptance {:.3}, ESS {:.1}",
            record.mean_kl,
            record.acceptance_rate,
            record.ess
        );
        trace.records.push(record);
        snapshots.push(snapshot(&ens));
    }

    Ok(SmcOutcome {
        trace,
        snapshots,
        ensemble: ens,
        hits_observed: data.total(),
    })
}

/// Emission density averaged over particles, evaluated at `xs`.
pub fn mean_emission_density(particles: &[Vec<f64>], medium: &Medium, xs: &[f64]) -> Result<Vec<f64>> {
    let layer_of = xs
        .iter()
        .map(|&x| medium.phantom.layer_index(x))
        .collect::<Result<Vec<_>>>()?;
    let per_particle = particles
        .par_iter()
        .map(|d| {
            let d = LayeredParams::from_vector(d)?;
            let curves = medium.curves(&d)?;
            let norm = medium
                .emission_grid(&d, crate::bortfeld::DEFAULT_MAX_PANEL)?
                .dose_integral;
            xs.iter()
                .zip(&layer_of)
                .map(|(&x, &i)| Ok(curves[i].eval(x)? / norm))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; xs.len()];
    for q in &per_particle {
        for (m, v) in mean.iter_mut().zip(q) {
            *m += v;
        }
    }
    let n = particles.len() as f64;
    Ok(mean.into_iter().map(|v| v / n).collect())
}

fn coordinate_names(n_layers: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(3 * n_layers);
    for prefix in ["R", "sigma", "eps"] {
        names.extend((1..=n_layers).map(|i| format!("{prefix}_{i}")));
    }
    names
}

/// Trace CSV: `iteration,mean_kl,acceptance_rate,ess`.
pub fn write_trace_csv<W: Write>(mut out: W, trace: &SmcTrace) -> std::io::Result<()> {
    writeln!(out, "iteration,mean_kl,acceptance_rate,ess")?;
    for r in &trace.records {
        writeln!(
            out,
            "{},{:e},{},{}",
            r.iteration, r.mean_kl, r.acceptance_rate, r.ess
        )?;
    }
    Ok(())
}

/// Ensemble CSV: one row per particle per snapshot.
pub fn write_ensemble_csv<W: Write>(mut out: W, snapshots: &[Snapshot]) -> std::io::Result<()> {
    let Some(first) = snapshots.first().and_then(|s| s.params.first()) else {
        return writeln!(out, "iter,particle_id,weight");
    };
    let names = coordinate_names(first.len() / 3);
    writeln!(out, "iter,particle_id,{},weight", names.join(","))?;
    for s in snapshots {
        for (i, (p, w)) in s.params.iter().zip(&s.weights).enumerate() {
            write!(out, "{},{}", s.iteration, i)?;
            for v in p {
                write!(out, ",{v}")?;
            }
            writeln!(out, ",{w}")?;
        }
    }
    Ok(())
}
