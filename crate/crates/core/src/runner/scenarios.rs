//! Bundled experiment configurations.

use crate::bortfeld::{FixedPhysics, TissueParams};
use crate::detector::DetectorArray;
use crate::error::Result;
use crate::inference::{Prior, SmcSettings};
use crate::phantom::{LayeredParams, Phantom};

use super::config::{DiscriminateSettings, RunConfig, Scenario, SimulateSettings};

pub const DEFAULT_SEED: u64 = 2024;
pub const STANDOFF: f64 = 1.0;
pub const CELL_WIDTH: f64 = 0.2;
/// Prior mean ranges sit this far beyond the truth.
pub const PRIOR_RANGE_SHIFT: f64 = 0.5;
pub const PRIOR_SD: (f64, f64, f64) = (0.5, 0.05, 0.05);

/// Water-phantom truth (R, σ, ε).
pub const WATER_TRUTH: (f64, f64, f64) = (16.9, 0.3, 0.25);
/// Alternative configuration contrasted with the water truth.
pub const WATER_ALT: (f64, f64, f64) = (16.2, 0.25, 0.2);
pub const WATER_DEPTH: f64 = 24.0;

/// Lung truth: range `12 + 0.2·(1 − ρ)` per layer, so denser layers carry a
/// shorter range and the tumour layer (ρ = 1) puts the peak near 12 cm.
pub fn lung_truth(phantom: &Phantom) -> LayeredParams {
    LayeredParams {
        per_layer: phantom
            .layers()
            .iter()
            .map(|l| TissueParams {
                range: 12.0 + 0.2 * (1.0 - l.density),
                sigma: 0.3,
                epsilon: 0.25,
            })
            .collect(),
    }
}

/// Detector from `0` to `1.2 ×` the largest prior-mean range.
pub fn default_geometry(prior: &Prior, bins: usize) -> Result<DetectorArray> {
    let r_max = prior.mean[..prior.n_layers()].iter().copied().fold(0.0, f64::max);
    DetectorArray::covering(STANDOFF, 0.0, 1.2 * r_max, CELL_WIDTH, bins)
}

fn triple((r, s, e): (f64, f64, f64)) -> LayeredParams {
    LayeredParams {
        per_layer: vec![TissueParams {
            range: r,
            sigma: s,
            epsilon: e,
        }],
    }
}

pub fn water(bins: usize) -> Result<RunConfig> {
    let truth = triple(WATER_TRUTH);
    let prior = Prior::around(&truth, PRIOR_RANGE_SHIFT, PRIOR_SD)?;
    Ok(RunConfig {
        scenario: Scenario::WaterPhantom,
        master_seed: DEFAULT_SEED,
        output_dir: None,
        physics: FixedPhysics::default(),
        geometry: default_geometry(&prior, bins)?,
        prior,
        smc: SmcSettings::default(),
        simulate: SimulateSettings::default(),
        discriminate: DiscriminateSettings {
            d_true: Some(triple(WATER_ALT)),
            d_alt: Some(triple(WATER_TRUTH)),
            ..DiscriminateSettings::default()
        },
        phantom: Phantom::homogeneous(WATER_DEPTH, 1.0, "water")?,
        truth,
    })
}

pub fn lung(bins: usize) -> Result<RunConfig> {
    let phantom = Phantom::lung();
    let truth = lung_truth(&phantom);
    let prior = Prior::around(&truth, PRIOR_RANGE_SHIFT, PRIOR_SD)?;
    Ok(RunConfig {
        scenario: Scenario::LungPhantom,
        master_seed: DEFAULT_SEED,
        output_dir: None,
        physics: FixedPhysics::default(),
        geometry: default_geometry(&prior, bins)?,
        prior,
        smc: SmcSettings {
            particles: 200,
            ..SmcSettings::default()
        },
        simulate: SimulateSettings::default(),
        discriminate: DiscriminateSettings::default(),
        phantom,
        truth,
    })
}

pub const NAMES: [&str; 4] = ["water_b1", "water_b6", "lung_b1", "lung_b6"];

pub fn by_name(name: &str) -> Option<Result<RunConfig>> {
    match name {
        "water_b1" => Some(water(1)),
        "water_b6" => Some(water(6)),
        "lung_b1" => Some(lung(1)),
        "lung_b6" => Some(lung(6)),
        _ => None,
    }
}

/// Every bundled configuration with its name.
pub fn bundled_scenarios() -> Result<Vec<(&'static str, RunConfig)>> {
    NAMES
        .iter()
        .map(|&n| Ok((n, by_name(n).expect("listed scenario exists")?)))
        .collect()
}
