//! Experiment orchestration: one function per CLI subcommand, each writing
//! CSV outputs plus a manifest into an output directory.

pub mod cli;
pub mod config;
pub mod output;
pub mod scenarios;

use std::path::{Path, PathBuf};

use crate::detector::{write_hits_csv, DetectionDistribution};
use crate::discrimination::{self, Coordinate, DiscriminationSpec};
use crate::error::{Error, Result};
use crate::inference::{self, SmcOutcome};
use crate::phantom::Medium;

pub use config::RunConfig;
pub use output::{OutputSet, RunManifest};

/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "PROMPT_GAMMA_OUTPUT";

/// Output directory: explicit flag, then the config, then the environment,
/// then `./output`.
pub fn resolve_output_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("output"))
}

fn depth_grid(medium: &Medium, step: f64) -> Vec<f64> {
    let (lo, hi) = medium.phantom.extent();
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| (lo + i as f64 * step).min(hi)).collect()
}

/// Forward model only: dose, emission density, detection probabilities and a
/// synthetic hit list for the truth.
pub fn simulate(cfg: &RunConfig, out: &mut OutputSet) -> Result<()> {
    let medium = cfg.medium()?;
    let xs = depth_grid(&medium, cfg.simulate.grid_step);
    let curves = medium.curves(&cfg.truth)?;
    let grid = medium.emission_grid(&cfg.truth, cfg.geometry.max_panel())?;
    let mut dose = Vec::with_capacity(xs.len());
    for &x in &xs {
        let i = medium.phantom.layer_index(x)?;
        dose.push(curves[i].eval(x)?);
    }
    let q: Vec<f64> = dose.iter().map(|d| d / grid.dose_integral).collect();
    out.emit("dose.csv", |w| output::write_curve_csv(w, &xs, &dose))?;
    out.emit("emission.csv", |w| output::write_curve_csv(w, &xs, &q))?;

    let dist = DetectionDistribution::from_grid(&grid, &cfg.geometry);
    let edges: Vec<f64> = (0..dist.n_cells())
        .map(|c| cfg.geometry.cell_left_edge(c))
        .collect();
    out.emit("detection.csv", |w| {
        output::write_curve_csv(w, &edges, &dist.marginal())
    })?;
    out.emit("detection_binned.csv", |w| {
        use std::io::Write;
        writeln!(w, "x,bin,value")?;
        for bin in 1..=dist.n_bins() {
            for (c, x) in edges.iter().enumerate() {
                writeln!(w, "{x},{bin},{:e}", dist.prob(bin, c))?;
            }
        }
        Ok(())
    })?;
    let hits = crate::detector::sample_hits(
        cfg.simulate.hits,
        &cfg.truth,
        &cfg.geometry,
        &medium,
        cfg.master_seed,
    )?;
    out.emit("hits.csv", |w| write_hits_csv(w, &hits, &cfg.geometry))
}

/// Full sampler run: trace, every ensemble snapshot, and the posterior-mean
/// emission density next to the truth's.
pub fn infer(cfg: &RunConfig, out: &mut OutputSet) -> Result<SmcOutcome> {
    let problem = cfg.smc_problem()?;
    let outcome = inference::smc_run(&problem)?;
    out.emit("trace.csv", |w| inference::write_trace_csv(w, &outcome.trace))?;
    out.emit("ensemble.csv", |w| {
        inference::write_ensemble_csv(w, &outcome.snapshots)
    })?;
    let xs = depth_grid(&problem.medium, cfg.simulate.grid_step);
    let post = inference::mean_emission_density(&outcome.ensemble.params(), &problem.medium, &xs)?;
    let truth = inference::mean_emission_density(&[cfg.truth.to_vector()], &problem.medium, &xs)?;
    out.emit("posterior_emission.csv", |w| {
        output::write_curve_csv(w, &xs, &post)
    })?;
    out.emit("truth_emission.csv", |w| output::write_curve_csv(w, &xs, &truth))?;
    Ok(outcome)
}

/// Observation bounds over the configured `(b, h)` grid.
pub fn discriminate(cfg: &RunConfig, out: &mut OutputSet) -> Result<Vec<discrimination::BoundRow>> {
    let medium = cfg.medium()?;
    let (d_true, d_alt) = cfg.discrimination_pair()?;
    let spec = DiscriminationSpec {
        d_true,
        d_alt,
        p0: cfg.discriminate.p0,
        delta: cfg.discriminate.delta,
        geometry: cfg.geometry,
    };
    let rows = discrimination::bound_table(
        &spec,
        &cfg.discriminate.bins,
        &cfg.discriminate.standoffs,
        &medium,
    )?;
    out.emit("bounds.csv", |w| discrimination::write_bound_csv(w, &rows))?;
    Ok(rows)
}

/// Parses `a:b:steps`.
pub fn parse_range(s: &str) -> Result<(f64, f64, usize)> {
    let bad = || Error::config("--range", format!("expected a:b:steps, got {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    Ok((a, b, steps))
}

/// Divergence from the truth as one coordinate sweeps a range.
pub fn scan(
    cfg: &RunConfig,
    coord: Coordinate,
    (lo, hi, steps): (f64, f64, usize),
    out: &mut OutputSet,
) -> Result<Vec<(f64, f64)>> {
    let medium = cfg.medium()?;
    let curve =
        discrimination::kl_sensitivity_scan(&cfg.truth, coord, (lo, hi), steps, &cfg.geometry, &medium)?;
    let name = format!("scan_{}.csv", coord.name());
    out.emit(&name, |w| discrimination::write_scan_csv(w, coord, &curve))?;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("16.2:17.6:15").unwrap(), (16.2, 17.6, 15));
        assert!(parse_range("1:2").is_err());
        assert!(parse_range("a:2:3").is_err());
        assert!(parse_range("1:2:-3").is_err());
    }

    #[test]
    fn output_dir_precedence() {
        let mut cfg = scenarios::water(1).unwrap();
        cfg.output_dir = Some("from_config".into());
        assert_eq!(
            resolve_output_dir(Some(Path::new("flag")), &cfg),
            PathBuf::from("flag")
        );
        assert_eq!(resolve_output_dir(None, &cfg), PathBuf::from("from_config"));
    }

    #[test]
    fn simulate_writes_declared_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = scenarios::water(6).unwrap();
        cfg.simulate.hits = 200;
        let mut out = OutputSet::create(dir.path()).unwrap();
        simulate(&cfg, &mut out).unwrap();
        let m = out
            .finish("simulate", &cfg.to_toml().unwrap(), cfg.master_seed)
            .unwrap();
        let names: Vec<&str> = m.outputs.iter().map(|f| f.file.as_str()).collect();
        assert_eq!(
            names,
            [
                "dose.csv",
                "emission.csv",
                "detection.csv",
                "detection_binned.csv",
                "hits.csv"
            ]
        );
        assert!(output::verify_manifest(dir.path()).unwrap().is_empty());
        let hits = std::fs::read_to_string(dir.path().join("hits.csv")).unwrap();
        assert_eq!(hits.lines().count(), 201);
    }
}
