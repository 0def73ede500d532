//! Regular 3D sampling grids and the scalar / vector / 2-tensor fields living on them.
//!
//! Storage is voxel-major with the x index fastest; tensor components are
//! innermost in (i, j) row-major order, i being the first index of `f_ij`.

use crate::error::{Error, Result};

/// Regular 3D grid. `origin` is the position of voxel (0, 0, 0); voxel
/// (ix, iy, iz) sits at `origin + (ix*dx, iy*dy, iz*dz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid3 {
    pub counts: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
}

impl Grid3 {
    pub fn new(counts: [usize; 3], origin: [f64; 3], spacing: [f64; 3]) -> Result<Self> {
        let g = Grid3 {
            counts,
            origin,
            spacing,
        };
        g.validate()?;
        Ok(g)
    }

    /// Cube grid with `n` voxels per axis whose bounding box is
    /// `[-half_extent, half_extent]^3`.
    pub fn cube(n: usize, half_extent: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("count {n} < 2")));
        }
        let h = 2.0 * half_extent / (n - 1) as f64;
        Self::new([n, n, n], [-half_extent; 3], [h; 3])
    }

    fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.counts[a] < 4 {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} has {} voxels, need at least 4",
                    self.counts[a]
                )));
            }
            if !(self.spacing[a] > 0.0) || !self.spacing[a].is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} spacing {} not positive",
                    self.spacing[a]
                )));
            }
            // bounding box must contain the closed unit ball at the origin
            let lo = self.origin[a];
            let hi = self.origin[a] + self.spacing[a] * (self.counts[a] - 1) as f64;
            if lo > -1.0 || hi < 1.0 {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} spans [{lo:.3}, {hi:.3}], does not contain the unit ball"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn num_voxels(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    #[inline]
    pub fn voxel_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.counts[0] * (iy + self.counts[1] * iz)
    }

    #[inline]
    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        [
            self.origin[0] + self.spacing[0] * ix as f64,
            self.origin[1] + self.spacing[1] * iy as f64,
            self.origin[2] + self.spacing[2] * iz as f64,
        ]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing[0].min(self.spacing[1]).min(self.spacing[2])
    }

    /// Iterate voxel indices in storage order.
    pub fn iter_voxels(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let [nx, ny, nz] = self.counts;
        (0..nz).flat_map(move |iz| (0..ny).flat_map(move |iy| (0..nx).map(move |ix| (ix, iy, iz))))
    }
}

macro_rules! field_type {
    ($name:ident, $ncomp:expr, $doc:expr) => {
        #[doc = $doc]
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            pub grid: Grid3,
            pub values: Vec<f64>,
        }

        impl $name {
            pub const NCOMP: usize = $ncomp;

            pub fn zeros(grid: Grid3) -> Self {
                Self {
                    values: vec![0.0; grid.num_voxels() * $ncomp],
                    grid,
                }
            }

            pub fn from_values(grid: Grid3, values: Vec<f64>) -> Result<Self> {
                let want = grid.num_voxels() * $ncomp;
                if values.len() != want {
                    return Err(Error::LengthMismatch {
                        got: values.len(),
                        want,
                    });
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite);
                }
                Ok(Self { grid, values })
            }

            /// Fill by evaluating `f(position) -> [f64; NCOMP]` at voxel centers.
            pub fn from_fn(grid: Grid3, mut f: impl FnMut([f64; 3]) -> [f64; $ncomp]) -> Self {
                let mut out = Self::zeros(grid);
                let mut idx = 0;
                for (ix, iy, iz) in grid.iter_voxels() {
                    let v = f(grid.voxel_center(ix, iy, iz));
                    out.values[idx * $ncomp..(idx + 1) * $ncomp].copy_from_slice(&v);
                    idx += 1;
                }
                out
            }

            pub fn norm_l2(&self) -> f64 {
                (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.voxel_volume()).sqrt()
            }
        }
    };
}

field_type!(ScalarField, 1, "Scalar field, one value per voxel.");
field_type!(VectorField, 3, "Vector field, components (u1, u2, u3) per voxel.");
field_type!(
    Tensor2Field,
    9,
    "Non-symmetric 2-tensor field, 9 components per voxel in (i, j) row-major order."
);

impl Tensor2Field {
    /// Component slot of `f_ij` within a voxel record.
    #[inline]
    pub fn comp(i: usize, j: usize) -> usize {
        3 * i + j
    }

    #[inline]
    pub fn at(&self, vox: usize) -> &[f64] {
        &self.values[vox * 9..vox * 9 + 9]
    }
}

/// L2 inner product of two fields over the grid (voxel-volume weighted).
pub fn dot_field(a: &[f64], b: &[f64], voxel_volume: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * voxel_volume
}
