//! Beam pattern export from a trained map.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use crate::beam::{codebook_specs, pattern, theta_grid, BeamSpec};
use crate::error::{Error, Result};

use super::config::{ExperimentConfig, Mode};
use super::train::load_beam_module;

pub const PATTERN_HEADER: &str = "beam_index,theta_deg,gain_linear";
pub const PATTERN_POINTS: usize = 1000;

/// Specs to draw: the explicit list if given, otherwise `export_beams`
/// equal-width beams over the full `[-90, 90]` degree range.
pub fn export_specs(cfg: &ExperimentConfig) -> Result<Vec<BeamSpec>> {
    if cfg.export_specs.is_empty() {
        codebook_specs(cfg.export_beams, (-FRAC_PI_2, FRAC_PI_2))
    } else {
        cfg.export_specs.iter().map(|&(a, b)| BeamSpec::from_degrees(a, b)).collect()
    }
}

/// Reference gain of each beam on the dense angle grid, one row per point.
pub fn export_patterns(cfg: &ExperimentConfig) -> Result<(PathBuf, usize)> {
    if cfg.mode != Mode::ExportPatterns {
        return Err(Error::Config(format!("{} is not export-patterns", cfg.mode.as_str())));
    }
    cfg.validate()?;
    let module = load_beam_module(cfg.map_checkpoint.as_deref().expect("validated"))?;
    let thetas = theta_grid(PATTERN_POINTS);
    let mut out = String::from(PATTERN_HEADER);
    out.push('\n');
    let mut rows = 0;
    for (i, spec) in export_specs(cfg)?.iter().enumerate() {
        let w = module.forward(spec)?;
        for (theta, g) in thetas.iter().zip(pattern(&w, &thetas)) {
            writeln!(out, "{i},{},{g}", theta.to_degrees()).expect("string write");
            rows += 1;
        }
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("patterns.csv");
    fs::write(&path, out)?;
    Ok((path, rows))
}
