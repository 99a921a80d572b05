//! Experiment configuration, read from versioned JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
}

fn field(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Flow,
    SjkoEulerian,
    SjkoLagrangian,
}

impl std::str::FromStr for SchemeName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "flow" => Ok(Self::Flow),
            "sjko_eulerian" => Ok(Self::SjkoEulerian),
            "sjko_lagrangian" => Ok(Self::SjkoLagrangian),
            _ => Err(format!("unknown scheme `{s}` (expected flow, sjko_eulerian or sjko_lagrangian)")),
        }
    }
}

/// The finite base space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceSpec {
    /// `n` equispaced points on `[lo, hi]`.
    Interval { lo: f64, hi: f64, n: usize },
    /// `n x n` grid on `[lo, hi]^2`.
    Square { lo: f64, hi: f64, n: usize },
    Points { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `|x - center|^2`, centered at the origin by default.
    Quadratic {
        #[serde(default)]
        center: Vec<f64>,
    },
    /// Tilted double well on the first coordinate (not taken from any figure;
    /// chosen so that both wells sit inside `[0, 1]`).
    DoubleWell { height: f64, left: f64, right: f64, tilt: f64 },
    /// One value per point of the space.
    Table { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Gaussian weights truncated to the space.
    Gaussian { mean: Vec<f64>, sd: f64 },
    Uniform,
    /// Explicit weights, normalized on load.
    Weights { values: Vec<f64> },
    /// Weights `0.2 + U(0, 1)` drawn from the seed, normalized.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    /// Configuration echo (`config.json`).
    Json,
    /// Per-frame records (`trajectory.jsonl`).
    Jsonl,
    /// Summary table (`summary.csv`).
    Csv,
    /// Frame snapshots (`frame_XXXX.svg`).
    Svg,
}

fn all_formats() -> Vec<Format> {
    vec![Format::Json, Format::Jsonl, Format::Csv, Format::Svg]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    #[serde(default = "all_formats")]
    pub formats: Vec<Format>,
    /// Number of SVG snapshots, spread evenly over the recorded frames.
    #[serde(default = "default_svg_frames")]
    pub svg_frames: usize,
}

fn default_svg_frames() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub lcp_tol: f64,
    pub lcp_accept_tol: f64,
    /// Stopping tolerance of the SJKO inner solver (scheme default if absent).
    pub inner_tol: Option<f64>,
    pub inner_max_iter: usize,
    pub sinkhorn_tol: f64,
    /// Keep every k-th frame in the outputs.
    pub record_every: usize,
    /// Particle count of Lagrangian runs.
    pub particles: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            lcp_tol: 1e-10,
            lcp_accept_tol: 1e-6,
            inner_tol: None,
            inner_max_iter: 20_000,
            sinkhorn_tol: 1e-12,
            record_every: 1,
            particles: 32,
        }
    }
}

/// Side run with the Lagrangian scheme, started from the same initial law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianComparison {
    pub tau: f64,
    pub particles: usize,
}

/// Parameters of the vertical perturbation cost curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerticalSpec {
    pub m_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Preset name, or `custom`.
    pub scenario: String,
    pub space: SpaceSpec,
    pub potential: PotentialSpec,
    pub initial: InitialSpec,
    pub epsilon: f64,
    pub tau: f64,
    pub horizon: f64,
    pub scheme: SchemeName,
    #[serde(default)]
    pub seed: u64,
    pub output: OutputSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lagrangian_comparison: Option<LagrangianComparison>,
    /// Export sphere coordinates (three-point spaces only).
    #[serde(default)]
    pub sphere_export: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertical: Option<VerticalSpec>,
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be positive and finite, got {v}")))
    }
}

impl SpaceSpec {
    pub fn len(&self) -> usize {
        match self {
            Self::Interval { n, .. } => *n,
            Self::Square { n, .. } => n * n,
            Self::Points { points } => points.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Interval { .. } => 1,
            Self::Square { .. } => 2,
            Self::Points { points } => points.first().map_or(0, Vec::len),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != SCHEMA_VERSION {
            return Err(field("version", format!("unsupported version {} (expected {SCHEMA_VERSION})", self.version)));
        }
        match &self.space {
            SpaceSpec::Interval { lo, hi, n } | SpaceSpec::Square { lo, hi, n } => {
                if *n < 2 {
                    return Err(field("space.n", format!("resolution must be at least 2, got {n}")));
                }
                if !(lo < hi) {
                    return Err(field("space.hi", format!("upper bound {hi} must exceed lower bound {lo}")));
                }
            }
            SpaceSpec::Points { points } => {
                if points.len() < 2 {
                    return Err(field("space.points", "need at least 2 points"));
                }
                let d = points[0].len();
                if d == 0 || points.iter().any(|p| p.len() != d) {
                    return Err(field("space.points", "points must share a positive dimension"));
                }
            }
        }
        positive("epsilon", self.epsilon)?;
        positive("tau", self.tau)?;
        positive("horizon", self.horizon)?;
        let s = &self.solver;
        positive("solver.lcp_tol", s.lcp_tol)?;
        positive("solver.lcp_accept_tol", s.lcp_accept_tol)?;
        positive("solver.sinkhorn_tol", s.sinkhorn_tol)?;
        if let Some(t) = s.inner_tol {
            positive("solver.inner_tol", t)?;
        }
        if s.inner_max_iter == 0 {
            return Err(field("solver.inner_max_iter", "must be positive"));
        }
        if s.record_every == 0 {
            return Err(field("solver.record_every", "must be positive"));
        }
        if s.particles == 0 {
            return Err(field("solver.particles", "must be positive"));
        }
        match &self.potential {
            PotentialSpec::Table { values } if values.len() != self.space.len() => {
                return Err(field(
                    "potential.values",
                    format!("{} values for {} points", values.len(), self.space.len()),
                ));
            }
            PotentialSpec::Quadratic { center } if !center.is_empty() && center.len() != self.space.dim() => {
                return Err(field("potential.center", format!("expected {} coordinates", self.space.dim())));
            }
            _ => {}
        }
        match &self.initial {
            InitialSpec::Gaussian { mean, sd } => {
                positive("initial.sd", *sd)?;
                if mean.len() != self.space.dim() {
                    return Err(field("initial.mean", format!("expected {} coordinates", self.space.dim())));
                }
            }
            InitialSpec::Weights { values } => {
                if values.len() != self.space.len() {
                    return Err(field("initial.values", format!("{} values for {} points", values.len(), self.space.len())));
                }
                if values.iter().any(|&w| !(w >= 0.0 && w.is_finite())) || !(values.iter().sum::<f64>() > 0.0) {
                    return Err(field("initial.values", "weights must be nonnegative with positive total"));
                }
            }
            _ => {}
        }
        if let Some(c) = &self.lagrangian_comparison {
            positive("lagrangian_comparison.tau", c.tau)?;
            if c.particles == 0 {
                return Err(field("lagrangian_comparison.particles", "must be positive"));
            }
        }
        if self.sphere_export && self.space.len() != 3 {
            return Err(field("sphere_export", "sphere coordinates need a three-point space"));
        }
        if let Some(v) = &self.vertical {
            if self.space.len() != 2 {
                return Err(field("vertical", "the vertical cost curve needs a two-point space"));
            }
            if v.m_grid.is_empty() || v.m_grid.iter().any(|&m| !(m > 0.0 && m < 1.0)) {
                return Err(field("vertical.m_grid", "values must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}
