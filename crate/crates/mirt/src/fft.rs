//! Discrete Fourier transforms of grid fields and the spectral tensor carrier.
//!
//! Convention: forward DFT is unnormalized, the inverse carries the 1/N factor,
//! and the wavenumber of bin m on an axis with n points and spacing h is
//! `2*pi*m~ / (n*h)` with `m~ = m` for `m < n/2` and `m - n` otherwise.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::grid::{Grid3, Tensor2Field};

/// Angular wavenumbers for one axis in FFT bin order.
pub fn wavenumbers(n: usize, spacing: f64) -> Vec<f64> {
    let len = n as f64 * spacing;
    (0..n)
        .map(|m| {
            let signed = if m <= (n - 1) / 2 {
                m as isize
            } else {
                m as isize - n as isize
            };
            2.0 * std::f64::consts::PI * signed as f64 / len
        })
        .collect()
}

/// In-place 3D FFT of one complex volume stored x-fastest.
pub fn fft3_inplace(data: &mut [Complex64], dims: [usize; 3], inverse: bool) {
    let [nx, ny, nz] = dims;
    assert_eq!(data.len(), nx * ny * nz);
    let mut planner = FftPlanner::new();

    // axis 0: contiguous rows
    {
        let fft = if inverse {
            planner.plan_fft_inverse(nx)
        } else {
            planner.plan_fft_forward(nx)
        };
        for row in data.chunks_exact_mut(nx) {
            fft.process(row);
        }
    }
    // axes 1 and 2: gather strided lines through a scratch buffer
    for axis in 1..3 {
        let n = dims[axis];
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let stride = if axis == 1 { nx } else { nx * ny };
        let mut line = vec![Complex64::default(); n];
        let (outer, inner) = if axis == 1 { (nz, nx) } else { (ny, nx) };
        for o in 0..outer {
            for i in 0..inner {
                let base = if axis == 1 { o * nx * ny + i } else { o * nx + i };
                for (k, l) in line.iter_mut().enumerate() {
                    *l = data[base + k * stride];
                }
                fft.process(&mut line);
                for (k, l) in line.iter().enumerate() {
                    data[base + k * stride] = *l;
                }
            }
        }
    }
    if inverse {
        let scale = 1.0 / (nx * ny * nz) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Fourier coefficients of a 2-tensor field, 9 complex values per frequency,
/// stored like the spatial field (x index fastest, components innermost).
///
/// For real input fields the coefficients are Hermitian: the value at -m is
/// the conjugate of the value at m.
#[derive(Debug, Clone)]
pub struct SpectralTensorField {
    pub grid: Grid3,
    pub values: Vec<Complex64>,
}

impl SpectralTensorField {
    pub fn wavenumbers_axis(&self, axis: usize) -> Vec<f64> {
        wavenumbers(self.grid.counts[axis], self.grid.spacing[axis])
    }

    /// Largest relative deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> f64 {
        let [nx, ny, nz] = self.grid.counts;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let a = self.grid.voxel_index(ix, iy, iz);
                    let b = self.grid.voxel_index(
                        (nx - ix) % nx,
                        (ny - iy) % ny,
                        (nz - iz) % nz,
                    );
                    for c in 0..9 {
                        let d = (self.values[a * 9 + c] - self.values[b * 9 + c].conj()).norm();
                        worst = worst.max(d);
                        scale = scale.max(self.values[a * 9 + c].norm());
                    }
                }
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            0.0
        }
    }
}

/// Forward DFT of each tensor component.
pub fn forward_tensor(f: &Tensor2Field) -> SpectralTensorField {
    let n = f.grid.num_voxels();
    let mut values = vec![Complex64::default(); n * 9];
    let mut scratch = vec![Complex64::default(); n];
    for c in 0..9 {
        for v in 0..n {
            scratch[v] = Complex64::new(f.values[v * 9 + c], 0.0);
        }
        fft3_inplace(&mut scratch, f.grid.counts, false);
        for v in 0..n {
            values[v * 9 + c] = scratch[v];
        }
    }
    SpectralTensorField {
        grid: f.grid,
        values,
    }
}

/// Inverse DFT; keeps the real part (inputs are Hermitian by construction).
pub fn inverse_tensor(f: &SpectralTensorField) -> Tensor2Field {
    let n = f.grid.num_voxels();
    let mut out = Tensor2Field::zeros(f.grid);
    let mut scratch = vec![Complex64::default(); n];
    for c in 0..9 {
        for v in 0..n {
            scratch[v] = f.values[v * 9 + c];
        }
        fft3_inplace(&mut scratch, f.grid.counts, true);
        for v in 0..n {
            out.values[v * 9 + c] = scratch[v].re;
        }
    }
    out
}

/// Forward/inverse DFT of a single-component volume.
pub fn forward_scalar(grid: &Grid3, values: &[f64]) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft3_inplace(&mut data, grid.counts, false);
    data
}

pub fn inverse_scalar(grid: &Grid3, mut data: Vec<Complex64>) -> Vec<f64> {
    fft3_inplace(&mut data, grid.counts, true);
    data.iter().map(|v| v.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_parseval() {
        let g = Grid3::cube(8, 1.2).unwrap();
        let f = Tensor2Field::from_fn(g, |p| {
            let mut t = [0.0; 9];
            for (c, t) in t.iter_mut().enumerate() {
                *t = (p[0] * (c as f64 + 1.0)).sin() + p[1] * p[2];
            }
            t
        });
        let hat = forward_tensor(&f);
        assert!(hat.hermitian_defect() < 1e-12);
        let back = inverse_tensor(&hat);
        let err: f64 = f
            .values
            .iter()
            .zip(&back.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "roundtrip error {err}");
    }

    #[test]
    fn wavenumber_order() {
        let k = wavenumbers(8, 0.5);
        assert!((k[0]).abs() < 1e-15);
        assert!((k[1] - 2.0 * std::f64::consts::PI / 4.0).abs() < 1e-12);
        assert!((k[7] + 2.0 * std::f64::consts::PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_mode_transforms_to_single_bin() {
        let g = Grid3::cube(8, 1.2).unwrap();
        let len = 8.0 * g.spacing[0];
        let k1 = 2.0 * std::f64::consts::PI / len;
        let f = Tensor2Field::from_fn(g, |p| {
            let mut t = [0.0; 9];
            t[0] = (k1 * (p[0] - g.origin[0])).cos();
            t
        });
        let hat = forward_tensor(&f);
        // energy concentrated in bins (1,0,0) and (7,0,0)
        let a = hat.values[g.voxel_index(1, 0, 0) * 9].norm();
        let b = hat.values[g.voxel_index(2, 0, 0) * 9].norm();
        assert!(a > 100.0 * (b + 1e-30));
    }
}
