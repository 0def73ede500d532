//! Experiment configuration: a single TOML file with sections for the source
//! curve, the grid, the line set, tolerances, the phantom, the reconstruction
//! parameters, and run control. Unknown keys are rejected; command-line flags
//! override the run-control values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Curve;
use crate::grid::Grid3;
use crate::phantom::PhantomSpec;
use crate::reconstruct::ReconParams;
use crate::transform::LineSet;

/// Source-curve block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum CurveConfig {
    Circle { radius: f64 },
    Helix { radius: f64, pitch: f64, turns: u32 },
    Crown { radius: f64, height: f64, harmonic: u32 },
    TwoCircles { radius: f64, offset: f64 },
}

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig::Helix {
            radius: 2.0,
            pitch: 0.5,
            turns: 3,
        }
    }
}

impl CurveConfig {
    pub fn to_curve(&self) -> Result<Curve> {
        let c = match *self {
            CurveConfig::Circle { radius } => Curve::Circle { radius },
            CurveConfig::Helix {
                radius,
                pitch,
                turns,
            } => Curve::Helix {
                radius,
                pitch,
                turns,
            },
            CurveConfig::Crown {
                radius,
                height,
                harmonic,
            } => Curve::Crown {
                radius,
                height,
                harmonic,
            },
            CurveConfig::TwoCircles { radius, offset } => Curve::TwoCircles { radius, offset },
        };
        c.validate()?;
        Ok(c)
    }
}

/// Cube-grid block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// voxels per axis
    pub n: usize,
    /// half edge length of the cube, centered at the origin
    pub half_extent: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n: 16,
            half_extent: 1.2,
        }
    }
}

impl GridConfig {
    pub fn to_grid(&self) -> Result<Grid3> {
        Grid3::cube(self.n, self.half_extent)
    }
}

/// Line-set block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinesConfig {
    pub n_t: usize,
    pub n_alpha: usize,
    pub n_beta: usize,
    /// integration step along each line; when absent, half the minimum voxel
    /// spacing of the grid
    pub h_s: Option<f64>,
    /// clip-sphere radius around the origin
    pub radius: f64,
}

impl Default for LinesConfig {
    fn default() -> Self {
        LinesConfig {
            n_t: 96,
            n_alpha: 48,
            n_beta: 96,
            h_s: None,
            radius: 1.0,
        }
    }
}

impl LinesConfig {
    pub fn to_line_set(&self, curve: Curve, grid: &Grid3) -> Result<LineSet> {
        let h_s = self.h_s.unwrap_or(0.5 * grid.min_spacing());
        LineSet::new(curve, self.n_t, self.n_alpha, self.n_beta, h_s, self.radius)
    }
}

/// Numerical gates used by the checking subcommands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// normalized adjoint pairing defect gate
    pub adjoint_defect: f64,
    /// relative singular-value threshold for symbol rank decisions
    pub tau_rank: f64,
    /// parametrix identity gate on |B0 A0 - P_sol|_F
    pub parametrix_identity: f64,
    /// ellipticity gate on the row-normalized stacked system
    pub elliptic_min_sv: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            adjoint_defect: 1e-12,
            tau_rank: crate::symbol::TAU_RANK,
            parametrix_identity: 1e-8,
            elliptic_min_sv: crate::symbol::ELLIPTIC_MIN_SV,
        }
    }
}

impl Tolerances {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("adjoint_defect", self.adjoint_defect),
            ("tau_rank", self.tau_rank),
            ("parametrix_identity", self.parametrix_identity),
            ("elliptic_min_sv", self.elliptic_min_sv),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "tolerance {name} = {v} must be positive and finite"
                )));
            }
        }
        Ok(())
    }
}

/// Run control: randomness, output location, parallelism, optional noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// worker threads; 0 uses all available cores
    pub threads: usize,
    /// standard deviation of additive Gaussian noise on forward data
    pub noise_sigma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            threads: 0,
            noise_sigma: 0.0,
        }
    }
}

/// Complete experiment configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub curve: CurveConfig,
    pub grid: GridConfig,
    pub lines: LinesConfig,
    pub tolerances: Tolerances,
    pub phantom: PhantomSpec,
    pub reconstruct: ReconParams,
    pub run: RunConfig,
}

impl Config {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.curve.to_curve()?;
        self.grid.to_grid()?;
        self.tolerances.validate()?;
        self.phantom.validate()?;
        if !(self.run.noise_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "run.noise_sigma = {} must be non-negative",
                self.run.noise_sigma
            )));
        }
        Ok(())
    }
}
