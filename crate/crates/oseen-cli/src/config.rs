//! Run configuration: one TOML file, every field defaulted.

use std::path::Path;

use anyhow::{bail, Context, Result};
use oseen::grid::{GridSpec, MapKind};
use oseen::nonlinear::RotationTreatment;
use serde::{Deserialize, Serialize};

/// Largest `|β|` accepted by the linear analyses.
pub const MAX_BETA: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_points: usize,
    /// Omitted: grows with `β` for the linear analyses, 30 for the nonlinear ones.
    pub r_max: Option<f64>,
    pub map_kind: MapKind,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_points: 200, r_max: None, map_kind: MapKind::default() }
    }
}

impl GridConfig {
    pub fn spec(&self) -> GridSpec {
        GridSpec { n_points: self.n_points, r_max: self.r_max, map_kind: self.map_kind }
    }

    /// Outer radius of the nonlinear runs.
    pub fn nonlinear_r_max(&self) -> f64 {
        self.r_max.unwrap_or(30.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub alpha: f64,
    /// Omitted: `0.1 α^{1/6}/log α`.
    pub amplitude: Option<f64>,
    pub t_final: f64,
    pub n_theta: usize,
    pub dt_max: f64,
    pub cfl: f64,
    pub sample_interval: f64,
    pub rotation: RotationTreatment,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            alpha: 500.0,
            amplitude: None,
            t_final: 10.0,
            n_theta: 16,
            dt_max: 0.01,
            cfl: 0.5,
            sample_interval: 0.05,
            rotation: RotationTreatment::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand recorded for the manifest; the command line wins.
    pub subcommand: Option<String>,
    pub grid: GridConfig,
    pub modes: Vec<i32>,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Times for the contour cross-check.
    pub taus: Vec<f64>,
    pub tau_step: f64,
    pub tau_max: f64,
    pub evolve: EvolveConfig,
    pub out: String,
    pub seed: u64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            subcommand: None,
            grid: GridConfig::default(),
            modes: vec![2],
            betas: (0..=8).map(|k| 10f64.powf(2.0 + 0.5 * k as f64)).collect(),
            alphas: vec![125.0, 250.0, 500.0, 1000.0, 2000.0],
            taus: vec![0.5, 1.0],
            tau_step: 0.01,
            tau_max: 40.0,
            evolve: EvolveConfig::default(),
            out: "out".into(),
            seed: oseen::corpus::CORPUS_SEED,
            workers: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("parsing configuration")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("modes", self.modes.is_empty()),
            ("betas", self.betas.is_empty()),
            ("alphas", self.alphas.is_empty()),
            ("taus", self.taus.is_empty()),
        ] {
            if empty {
                bail!("list `{name}` must not be empty");
            }
        }
        if self.grid.n_points < oseen::grid::MIN_POINTS {
            bail!("grid.n_points must be at least {}", oseen::grid::MIN_POINTS);
        }
        if let Some(r) = self.grid.r_max {
            if r < oseen::grid::MIN_R_MAX {
                bail!("grid.r_max must be at least {}", oseen::grid::MIN_R_MAX);
            }
        }
        if self.betas.iter().chain(&self.alphas).chain(&self.taus).any(|v| !v.is_finite()) {
            bail!("betas, alphas and taus must be finite");
        }
        if self.betas.iter().any(|b| b.abs() > MAX_BETA) {
            bail!("|beta| above {MAX_BETA:e} is beyond the validated resolution");
        }
        if self.taus.iter().any(|&t| t <= 0.0) {
            bail!("taus must be positive");
        }
        if !(self.tau_step > 0.0 && self.tau_max > self.tau_step) {
            bail!("need 0 < tau_step < tau_max");
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        let e = &self.evolve;
        if !(e.t_final > 0.0 && e.t_final <= oseen::nonlinear::MAX_FINAL_TIME) {
            bail!("evolve.t_final must lie in (0, {}]", oseen::nonlinear::MAX_FINAL_TIME);
        }
        if e.n_theta < 2 {
            bail!("evolve.n_theta must be at least 2");
        }
        Ok(())
    }
}
