//! Run configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bortfeld::FixedPhysics;
use crate::detector::DetectorArray;
use crate::error::{Error, Result};
use crate::inference::{Prior, SmcProblem, SmcSettings};
use crate::phantom::{LayeredParams, Medium, Phantom};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    WaterPhantom,
    LungPhantom,
    Custom,
}

/// Settings of the `simulate` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSettings {
    /// Number of synthetic hits to draw.
    pub hits: usize,
    /// Depth spacing of the dose and emission curves, cm.
    pub grid_step: f64,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings {
            hits: 10_000,
            grid_step: 0.01,
        }
    }
}

/// Settings of the `discriminate` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminateSettings {
    /// Configuration assumed true; defaults to the run's truth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_true: Option<LayeredParams>,
    /// Competing configuration; defaults to the prior mean.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_alt: Option<LayeredParams>,
    pub p0: f64,
    pub delta: f64,
    pub bins: Vec<usize>,
    pub standoffs: Vec<f64>,
}

impl Default for DiscriminateSettings {
    fn default() -> Self {
        DiscriminateSettings {
            d_true: None,
            d_alt: None,
            p0: 0.5,
            delta: 0.05,
            bins: vec![1, 2, 3, 6],
            standoffs: vec![0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub physics: FixedPhysics,
    pub geometry: DetectorArray,
    pub prior: Prior,
    #[serde(default)]
    pub smc: SmcSettings,
    #[serde(default)]
    pub simulate: SimulateSettings,
    #[serde(default)]
    pub discriminate: DiscriminateSettings,
    /// One `[[phantom]]` table per layer.
    pub phantom: Phantom,
    /// One `[[truth]]` table (range, sigma, epsilon) per layer.
    pub truth: LayeredParams,
}

fn at<T>(section: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::config(section, other.to_string()),
    })
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let location = match e.span() {
                Some(span) => {
                    let line = text[..span.start].matches('\n').count() + 1;
                    format!("{origin}:{line}")
                }
                None => origin.to_string(),
            };
            Error::config(location, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<serialize>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        at("physics", self.physics.validate())?;
        at("geometry", self.geometry.validate())?;
        at(
            "truth",
            LayeredParams::new(self.truth.per_layer.clone()).map(|_| ()),
        )?;
        let n = self.phantom.len();
        if self.truth.len() != n {
            return Err(Error::config(
                "truth",
                format!("{} parameter triples for a {n}-layer phantom", self.truth.len()),
            ));
        }
        at("prior", self.prior.validate())?;
        if self.prior.dim() != 3 * n {
            return Err(Error::config(
                "prior.mean",
                format!("dimension {} but the phantom needs {}", self.prior.dim(), 3 * n),
            ));
        }
        at("smc", self.smc.validate())?;
        if !(self.simulate.grid_step > 0.0) {
            return Err(Error::config("simulate.grid_step", "must be positive"));
        }
        let d = &self.discriminate;
        for (name, v) in [("discriminate.p0", d.p0), ("discriminate.delta", d.delta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(name, format!("must lie in (0, 1), got {v}")));
            }
        }
        if d.bins.contains(&0) {
            return Err(Error::config("discriminate.bins", "bin counts must be positive"));
        }
        if d.standoffs.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::config(
                "discriminate.standoffs",
                "standoffs must be positive",
            ));
        }
        for (name, p) in [
            ("discriminate.d_true", &d.d_true),
            ("discriminate.d_alt", &d.d_alt),
        ] {
            if let Some(p) = p {
                at(name, LayeredParams::new(p.per_layer.clone()).map(|_| ()))?;
                if p.len() != n {
                    return Err(Error::config(name, format!("needs {n} layers, has {}", p.len())));
                }
            }
        }
        Ok(())
    }

    pub fn medium(&self) -> Result<Medium> {
        Medium::new(self.phantom.clone(), self.physics)
    }

    pub fn smc_problem(&self) -> Result<SmcProblem> {
        Ok(SmcProblem {
            truth: self.truth.clone(),
            prior: self.prior.clone(),
            geometry: self.geometry,
            medium: self.medium()?,
            settings: self.smc.clone(),
            seed: self.master_seed,
        })
    }

    /// The two configurations compared by `discriminate`.
    pub fn discrimination_pair(&self) -> Result<(LayeredParams, LayeredParams)> {
        let d_true = self
            .discriminate
            .d_true
            .clone()
            .unwrap_or_else(|| self.truth.clone());
        let d_alt = match &self.discriminate.d_alt {
            Some(d) => d.clone(),
            None => LayeredParams::from_vector(&self.prior.mean)?,
        };
        Ok((d_true, d_alt))
    }
}
