//! Experiment configuration.

use std::path::{Path, PathBuf};

use regloss_core::block::BlockOptions;
use regloss_core::data::DataSpec;
use regloss_core::plan::{DensityOptions, PlanOptions};
use regloss_core::track::build_track;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

fn default_dim() -> usize {
    2
}
fn default_alpha() -> f64 {
    0.3
}
fn default_n_steps() -> usize {
    3
}
fn default_n_slots() -> usize {
    5
}
fn default_probe_r() -> f64 {
    0.05
}
fn default_norms() -> Vec<(f64, f64)> {
    vec![(0.0, 2.0), (1.0, 2.0), (1.0, 3.0)]
}
fn default_time_samples() -> Vec<f64> {
    (0..=12).map(|k| 0.25 * k as f64).collect()
}
fn default_out() -> String {
    "out".into()
}

/// Per-meter resolutions; unset entries take dimension-dependent defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quadrature {
    pub shear: Option<usize>,
    pub block: Option<usize>,
    pub mass: Option<usize>,
    pub growth: Option<usize>,
    pub norms: Option<usize>,
    pub density_cells: Option<usize>,
    pub beta_samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShearConfig {
    pub amplitude: f64,
    pub time: f64,
}

impl Default for ShearConfig {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            time: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackConfig {
    pub r_in: f64,
    pub r_out: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        let t = build_track();
        Self {
            r_in: t.r_in,
            r_out: t.r_out,
        }
    }
}

/// RK4 characteristics oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Physical time step.
    pub dt: f64,
    pub seeds: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            dt: 1e-5,
            seeds: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesConfig {
    /// Time at which the solution series is summed.
    pub t: f64,
    /// Terms of the default schedule.
    pub n: usize,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self { t: 0.1, n: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datum: DataSpec,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default = "default_n_slots")]
    pub n_slots: usize,
    #[serde(default = "default_probe_r")]
    pub probe_r: f64,
    #[serde(default)]
    pub quadrature: Quadrature,
    /// Growth-curve sample times as multiples of `τ₁`.
    #[serde(default = "default_time_samples")]
    pub time_samples: Vec<f64>,
    /// `(r, p)` pairs for the velocity norm meters.
    #[serde(default = "default_norms")]
    pub norms: Vec<(f64, f64)>,
    #[serde(default)]
    pub shear: ShearConfig,
    #[serde(default)]
    pub track: TrackConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub series: SeriesConfig,
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            datum: DataSpec::Gaussian {
                center: None,
                width: 1.0,
            },
            dim: default_dim(),
            alpha: default_alpha(),
            n_steps: default_n_steps(),
            n_slots: default_n_slots(),
            probe_r: default_probe_r(),
            quadrature: Quadrature::default(),
            time_samples: default_time_samples(),
            norms: default_norms(),
            shear: ShearConfig::default(),
            track: TrackConfig::default(),
            oracle: OracleConfig::default(),
            series: SeriesConfig::default(),
            out: default_out(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }

    /// Rejects configurations no command can run. Relative grid paths resolve against `base`.
    pub fn validate(&mut self, base: Option<&Path>) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if !(2..=3).contains(&self.dim) {
            return bad(format!("dim must be 2 or 3, got {}", self.dim));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.n_steps == 0 {
            return bad("n_steps must be at least 1".into());
        }
        if self.n_slots == 0 {
            return bad("n_slots must be at least 1".into());
        }
        if !(self.probe_r > 0.0) {
            return bad(format!("probe_r must be positive, got {}", self.probe_r));
        }
        if !(self.oracle.dt > 0.0) || self.oracle.seeds == 0 {
            return bad("oracle needs dt > 0 and at least one seed".into());
        }
        if !(self.series.t >= 0.0) || self.series.n == 0 {
            return bad("series needs t >= 0 and n >= 1".into());
        }
        if self
            .time_samples
            .iter()
            .any(|&t| !(0.0..=self.n_steps as f64).contains(&t))
        {
            return bad(format!(
                "time_samples must lie in [0, n_steps] (units of tau_1), got {:?}",
                self.time_samples
            ));
        }
        if self.norms.iter().any(|&(r, p)| !(r >= 0.0) || !(p >= 1.0)) {
            return bad(format!(
                "norms need r >= 0 and p >= 1, got {:?}",
                self.norms
            ));
        }
        if let DataSpec::Grid { path } = &mut self.datum {
            let mut p = PathBuf::from(&*path);
            if p.is_relative() {
                if let Some(b) = base {
                    p = b.join(p);
                }
            }
            if !p.is_file() {
                return bad(format!("grid file {} does not exist", p.display()));
            }
            *path = p.to_string_lossy().into_owned();
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON with the output directory blanked.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out.clear();
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn block_options(&self) -> BlockOptions {
        let mut b = BlockOptions::for_dim(self.dim);
        if let Some(n) = self.quadrature.block {
            b.n_quad = n;
        }
        b.r_in = self.track.r_in;
        b.r_out = self.track.r_out;
        b
    }

    pub fn plan_options(&self) -> PlanOptions {
        let mut p = PlanOptions::for_dim(self.dim);
        p.alpha = self.alpha;
        p.n_steps = self.n_steps;
        if let Some(n) = self.quadrature.mass {
            p.mass_quad = n;
        }
        if let Some(n) = self.quadrature.beta_samples {
            p.beta_samples = n;
        }
        p.block = self.block_options();
        p
    }

    pub fn density_options(&self) -> DensityOptions {
        let mut o = DensityOptions::for_dim(self.dim);
        if let Some(n) = self.quadrature.density_cells {
            o.cells = n;
        }
        o
    }

    pub fn shear_quad(&self) -> usize {
        self.quadrature
            .shear
            .unwrap_or(if self.dim == 2 { 256 } else { 64 })
    }

    pub fn growth_quad(&self) -> usize {
        self.quadrature
            .growth
            .unwrap_or(if self.dim == 2 { 128 } else { 24 })
    }

    pub fn norms_quad(&self) -> usize {
        self.quadrature
            .norms
            .unwrap_or(if self.dim == 2 { 112 } else { 28 })
    }
}
