//! Synthetic tensor fields for testing and demonstration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{decompose, dprime, lambda_embed};
use crate::grid::{Grid3, ScalarField, Tensor2Field, VectorField};
use crate::vec3::Vec3;

/// Phantom family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    /// anisotropic Gaussian envelope times a constant amplitude matrix
    GaussianTensor,
    /// smooth compactly supported bump times a constant amplitude matrix
    BallTensor,
    /// solenoidal projection of the Gaussian tensor (pure f^s)
    SolenoidalGaussian,
    /// pure potential field d'u with Gaussian vector potential
    PotentialDprime,
    /// pure lambda-part: w Id with Gaussian w
    LambdaScalar,
}

/// Phantom parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    /// 3x3 amplitude matrix, (i, j) row-major
    pub amplitude: [f64; 9],
    pub center: [f64; 3],
    /// per-axis Gaussian width (or bump radius for ball-tensor: widths[0])
    pub widths: [f64; 3],
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            kind: PhantomKind::SolenoidalGaussian,
            amplitude: [1.0, 0.5, -0.3, 0.2, -0.8, 0.6, -0.4, 0.1, 0.9],
            center: [0.0; 3],
            widths: [0.15, 0.15, 0.3],
        }
    }
}

fn envelope(spec: &PhantomSpec, x: Vec3) -> f64 {
    let mut q = 0.0;
    for a in 0..3 {
        let d = (x[a] - spec.center[a]) / spec.widths[a];
        q += d * d;
    }
    (-0.5 * q).exp()
}

fn bump(spec: &PhantomSpec, x: Vec3) -> f64 {
    let r = spec.widths[0];
    let mut q = 0.0;
    for a in 0..3 {
        let d = x[a] - spec.center[a];
        q += d * d;
    }
    let s = q / (r * r);
    if s >= 1.0 {
        0.0
    } else {
        let t = 1.0 - s;
        t * t * t
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.widths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument("phantom widths must be positive".into()));
        }
        if self.amplitude.iter().chain(&self.center).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    /// Realize the phantom on a grid.
    pub fn build(&self, grid: &Grid3) -> Result<Tensor2Field> {
        self.validate()?;
        match self.kind {
            PhantomKind::GaussianTensor => Ok(Tensor2Field::from_fn(grid.clone(), |x| {
                let e = envelope(self, x);
                std::array::from_fn(|k| self.amplitude[k] * e)
            })),
            PhantomKind::BallTensor => Ok(Tensor2Field::from_fn(grid.clone(), |x| {
                let e = bump(self, x);
                std::array::from_fn(|k| self.amplitude[k] * e)
            })),
            PhantomKind::SolenoidalGaussian => {
                let base = Tensor2Field::from_fn(grid.clone(), |x| {
                    let e = envelope(self, x);
                    std::array::from_fn(|k| self.amplitude[k] * e)
                });
                Ok(decompose(&base)?.f_s)
            }
            PhantomKind::PotentialDprime => {
                let u = VectorField::from_fn(grid.clone(), |x| {
                    let e = envelope(self, x);
                    [
                        self.amplitude[0] * e,
                        self.amplitude[4] * e,
                        self.amplitude[8] * e,
                    ]
                });
                Ok(dprime(&u))
            }
            PhantomKind::LambdaScalar => {
                let w = ScalarField::from_fn(grid.clone(), |x| [self.amplitude[0] * envelope(self, x)]);
                Ok(lambda_embed(&w))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{delta_prime, mu_trace};

    fn grid() -> Grid3 {
        Grid3::cube(24, 1.2).unwrap()
    }

    #[test]
    fn gaussian_peak_value() {
        let spec = PhantomSpec {
            kind: PhantomKind::GaussianTensor,
            ..Default::default()
        };
        let f = spec.build(&grid()).unwrap();
        let g = grid();
        // voxel nearest the center carries nearly the full amplitude
        let (mut best, mut bestd) = (0, f64::INFINITY);
        for (v, (ix, iy, iz)) in g.iter_voxels().enumerate() {
            let c = g.voxel_center(ix, iy, iz);
            let d = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
            if d < bestd {
                bestd = d;
                best = v;
            }
        }
        // the nearest center is ~half a voxel off the peak, so allow the
        // corresponding Gaussian falloff
        let vals = f.at(best);
        for k in 0..9 {
            assert!((vals[k] - spec.amplitude[k]).abs() < 0.2 * spec.amplitude[k].abs().max(0.1));
        }
    }

    #[test]
    fn solenoidal_phantom_is_divergence_free_and_trace_free() {
        let spec = PhantomSpec::default();
        let f = spec.build(&grid()).unwrap();
        let div = delta_prime(&f);
        let tr = mu_trace(&f);
        assert!(div.norm_l2() < 1e-8 * f.norm_l2().max(1e-30), "div {}", div.norm_l2());
        assert!(tr.norm_l2() < 1e-8 * f.norm_l2().max(1e-30), "trace {}", tr.norm_l2());
    }

    #[test]
    fn ball_phantom_compact_support() {
        let spec = PhantomSpec {
            kind: PhantomKind::BallTensor,
            widths: [0.5, 0.5, 0.5],
            ..Default::default()
        };
        let g = grid();
        let f = spec.build(&g).unwrap();
        for (v, (ix, iy, iz)) in g.iter_voxels().enumerate() {
            let c = g.voxel_center(ix, iy, iz);
            let r2 = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
            if r2 > 0.26 {
                assert!(f.at(v).iter().all(|x| *x == 0.0));
            }
        }
    }

    #[test]
    fn lambda_phantom_diagonal() {
        let spec = PhantomSpec {
            kind: PhantomKind::LambdaScalar,
            ..Default::default()
        };
        let f = spec.build(&grid()).unwrap();
        let n = f.grid.num_voxels();
        for v in 0..n {
            let t = f.at(v);
            assert_eq!(t[0], t[4]);
            assert_eq!(t[4], t[8]);
            assert_eq!(t[1], 0.0);
            assert_eq!(t[5], 0.0);
        }
    }

    #[test]
    fn validates_widths() {
        let spec = PhantomSpec {
            widths: [0.0, 0.1, 0.1],
            ..Default::default()
        };
        assert!(spec.build(&grid()).is_err());
    }
}
