//! Algebraic and differential operators on tensor fields, and the solenoidal
//! decomposition `f = f^s + d'u + lambda w` realized as a per-frequency
//! projector.
//!
//! Derivatives are spectral on the periodic grid, so the decomposition is an
//! exact per-frequency linear split and its invariants hold to rounding on
//! band-limited inputs. Fields meant to be "compactly supported" must vanish
//! in a margin near the grid boundary; `decompose` checks this.

use nalgebra::SMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{self, forward_tensor, inverse_tensor, wavenumbers};
use crate::grid::{ScalarField, Tensor2Field, VectorField};

pub type Matrix9 = SMatrix<f64, 9, 9>;

/// Relative level below which boundary-shell values count as zero support.
/// Loose on purpose: solenoidal parts of compact fields decay only
/// algebraically, so their boundary tails reach a few percent of the peak.
const MARGIN_REL_TOL: f64 = 0.1;
const MARGIN_VOXELS: usize = 2;

/// Axis wavenumbers for differentiation: the Nyquist bin is zeroed. The sign
/// of the Nyquist frequency is ambiguous for real fields, and an odd
/// multiplier there breaks Hermitian symmetry; every spectral operator in this
/// module shares this convention so the decomposition identities are exact
/// bin by bin.
fn deriv_wavenumbers(n: usize, spacing: f64) -> Vec<f64> {
    let mut k = wavenumbers(n, spacing);
    if n % 2 == 0 {
        k[n / 2] = 0.0;
    }
    k
}

fn spectral_scalar(
    grid: &crate::grid::Grid3,
    values: &[f64],
    ncomp: usize,
    comp: usize,
) -> Vec<Complex64> {
    let n = grid.num_voxels();
    let mut data = vec![Complex64::default(); n];
    for v in 0..n {
        data[v] = Complex64::new(values[v * ncomp + comp], 0.0);
    }
    fft::fft3_inplace(&mut data, grid.counts, false);
    data
}

fn inverse_real(grid: &crate::grid::Grid3, mut data: Vec<Complex64>) -> Vec<f64> {
    fft::fft3_inplace(&mut data, grid.counts, true);
    data.iter().map(|c| c.re).collect()
}

/// Spectral partial derivative d/dx_axis of one component volume.
fn spectral_derivative(
    grid: &crate::grid::Grid3,
    values: &[f64],
    ncomp: usize,
    comp: usize,
    axis: usize,
) -> Vec<f64> {
    let mut hat = spectral_scalar(grid, values, ncomp, comp);
    let ks: [Vec<f64>; 3] = [
        deriv_wavenumbers(grid.counts[0], grid.spacing[0]),
        deriv_wavenumbers(grid.counts[1], grid.spacing[1]),
        deriv_wavenumbers(grid.counts[2], grid.spacing[2]),
    ];
    let [nx, ny, _] = grid.counts;
    for (v, h) in hat.iter_mut().enumerate() {
        let ix = v % nx;
        let iy = (v / nx) % ny;
        let iz = v / (nx * ny);
        let k = match axis {
            0 => ks[0][ix],
            1 => ks[1][iy],
            _ => ks[2][iz],
        };
        *h *= Complex64::new(0.0, k);
    }
    inverse_real(grid, hat)
}

/// Symmetrized derivative (inner differentiation): `(d u)_ij = (du_i/dx_j + du_j/dx_i) / 2`.
pub fn sym_derivative(u: &VectorField) -> Tensor2Field {
    let grid = u.grid;
    let mut partial = Vec::with_capacity(9); // partial[3*i + j] = du_i/dx_j
    for i in 0..3 {
        for j in 0..3 {
            partial.push(spectral_derivative(&grid, &u.values, 3, i, j));
        }
    }
    let mut out = Tensor2Field::zeros(grid);
    for v in 0..grid.num_voxels() {
        for i in 0..3 {
            for j in 0..3 {
                out.values[v * 9 + 3 * i + j] =
                    0.5 * (partial[3 * i + j][v] + partial[3 * j + i][v]);
            }
        }
    }
    out
}

/// `(d' u)_ij = du_j/dx_i`; generally non-symmetric.
pub fn dprime(u: &VectorField) -> Tensor2Field {
    let grid = u.grid;
    let mut out = Tensor2Field::zeros(grid);
    for j in 0..3 {
        for i in 0..3 {
            let d = spectral_derivative(&grid, &u.values, 3, j, i);
            for v in 0..grid.num_voxels() {
                out.values[v * 9 + 3 * i + j] = d[v];
            }
        }
    }
    out
}

/// `(lambda w)_ij = delta_ij w`.
pub fn lambda_embed(w: &ScalarField) -> Tensor2Field {
    let mut out = Tensor2Field::zeros(w.grid);
    for v in 0..w.grid.num_voxels() {
        let val = w.values[v];
        out.values[v * 9] = val;
        out.values[v * 9 + 4] = val;
        out.values[v * 9 + 8] = val;
    }
    out
}

/// `(delta' f)_j = sum_i df_ij/dx_i`.
pub fn delta_prime(f: &Tensor2Field) -> VectorField {
    let grid = f.grid;
    let mut out = VectorField::zeros(grid);
    for j in 0..3 {
        for i in 0..3 {
            let d = spectral_derivative(&grid, &f.values, 9, 3 * i + j, i);
            for v in 0..grid.num_voxels() {
                out.values[v * 3 + j] += d[v];
            }
        }
    }
    out
}

/// Pointwise trace `mu f = f_11 + f_22 + f_33`.
pub fn mu_trace(f: &Tensor2Field) -> ScalarField {
    let mut out = ScalarField::zeros(f.grid);
    for v in 0..f.grid.num_voxels() {
        out.values[v] = f.values[v * 9] + f.values[v * 9 + 4] + f.values[v * 9 + 8];
    }
    out
}

/// Orthogonal projector onto the solenoidal subspace
/// `S(xi) = { f : sum_i xi_i f_ij = 0 for all j, trace f = 0 }`,
/// as a 9x9 matrix acting on row-major flattened tensors.
///
/// Computed as identity minus the Gram-solve projector onto
/// `span{xi0 (x) e_1, xi0 (x) e_2, xi0 (x) e_3, Id}`; depends only on the
/// direction of `xi`.
pub fn sol_projector(xi: [f64; 3]) -> Result<Matrix9> {
    let norm = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroCovector);
    }
    let q = [xi[0] / norm, xi[1] / norm, xi[2] / norm];
    // Basis of the orthogonal complement of S(xi): c_a = q (x) e_a, c_4 = Id.
    let mut c = SMatrix::<f64, 9, 4>::zeros();
    for a in 0..3 {
        for i in 0..3 {
            c[(3 * i + a, a)] = q[i];
        }
    }
    for i in 0..3 {
        c[(3 * i + i, 3)] = 1.0;
    }
    // Gram matrix [[I, q], [q^T, 3]]; closed-form inverse with Schur complement 2.
    let mut ginv = SMatrix::<f64, 4, 4>::zeros();
    for a in 0..3 {
        for b in 0..3 {
            ginv[(a, b)] = if a == b { 1.0 } else { 0.0 } + q[a] * q[b] / 2.0;
        }
        ginv[(a, 3)] = -q[a] / 2.0;
        ginv[(3, a)] = -q[a] / 2.0;
    }
    ginv[(3, 3)] = 0.5;
    Ok(Matrix9::identity() - c * ginv * c.transpose())
}

/// Result of the solenoidal decomposition `f = f^s + d'u + lambda w`.
pub struct Decomposition {
    pub f_s: Tensor2Field,
    pub u: VectorField,
    pub w: ScalarField,
}

fn check_support_margin(f: &Tensor2Field) -> Result<()> {
    let [nx, ny, nz] = f.grid.counts;
    let m = MARGIN_VOXELS;
    let mut max_field: f64 = 0.0;
    let mut max_boundary: f64 = 0.0;
    for (v, (ix, iy, iz)) in f.grid.iter_voxels().enumerate() {
        let mag = f.values[v * 9..v * 9 + 9]
            .iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
        max_field = max_field.max(mag);
        let in_margin = ix < m || iy < m || iz < m || ix >= nx - m || iy >= ny - m || iz >= nz - m;
        if in_margin {
            max_boundary = max_boundary.max(mag);
        }
    }
    if max_boundary > MARGIN_REL_TOL * max_field {
        return Err(Error::SupportMargin {
            margin: m,
            max_boundary,
            max_field,
        });
    }
    Ok(())
}

/// Split `f` into its solenoidal part and the kernel potentials, per frequency:
/// `f^s_hat = Pi_sol(k) f_hat` for k != 0, and the complement
/// `i k (x) u_hat + w_hat Id` solved exactly. At k = 0 the trace goes to `w`
/// and the trace-free remainder to `f^s`.
pub fn decompose(f: &Tensor2Field) -> Result<Decomposition> {
    check_support_margin(f)?;
    let grid = f.grid;
    let hat = forward_tensor(f);
    let n = grid.num_voxels();
    let [nx, ny, _] = grid.counts;
    let ks: [Vec<f64>; 3] = [
        deriv_wavenumbers(grid.counts[0], grid.spacing[0]),
        deriv_wavenumbers(grid.counts[1], grid.spacing[1]),
        deriv_wavenumbers(grid.counts[2], grid.spacing[2]),
    ];

    let mut fs_hat = hat.values.clone();
    let mut u_hat = vec![Complex64::default(); n * 3];
    let mut w_hat = vec![Complex64::default(); n];

    for v in 0..n {
        let ix = v % nx;
        let iy = (v / nx) % ny;
        let iz = v / (nx * ny);
        let k = [ks[0][ix], ks[1][iy], ks[2][iz]];
        let knorm = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
        let fv = &hat.values[v * 9..v * 9 + 9];
        if knorm == 0.0 {
            // DC rule: trace to w, trace-free remainder to f^s, u(0) = 0.
            let tr = (fv[0] + fv[4] + fv[8]) / 3.0;
            w_hat[v] = tr;
            for c in 0..9 {
                fs_hat[v * 9 + c] = fv[c];
            }
            for d in 0..3 {
                fs_hat[v * 9 + 4 * d] -= tr;
            }
            continue;
        }
        let q = [k[0] / knorm, k[1] / knorm, k[2] / knorm];
        // Projection coefficients onto {q (x) e_a, Id} with the closed-form
        // Gram inverse [[I + qq^T/2, -q/2], [-q^T/2, 1/2]].
        let mut b = [Complex64::default(); 4];
        for a in 0..3 {
            for i in 0..3 {
                b[a] += Complex64::new(q[i], 0.0) * fv[3 * i + a];
            }
        }
        b[3] = fv[0] + fv[4] + fv[8];
        let qb = q[0] * b[0] + q[1] * b[1] + q[2] * b[2];
        let mut coef = [Complex64::default(); 4];
        for a in 0..3 {
            coef[a] = b[a] + (qb - b[3]) * (q[a] / 2.0);
        }
        coef[3] = (b[3] - qb) / 2.0;
        // Remainder r = sum_a coef_a q (x) e_a + coef_3 Id; f^s = f - r.
        for i in 0..3 {
            for j in 0..3 {
                let mut r = coef[j] * q[i];
                if i == j {
                    r += coef[3];
                }
                fs_hat[v * 9 + 3 * i + j] = fv[3 * i + j] - r;
            }
        }
        // r = i k (x) u + w Id  =>  u_a = coef_a / (i |k|), w = coef_3.
        for a in 0..3 {
            u_hat[v * 3 + a] = coef[a] * Complex64::new(0.0, -1.0 / knorm);
        }
        w_hat[v] = coef[3];
    }

    let f_s = inverse_tensor(&fft::SpectralTensorField {
        grid,
        values: fs_hat,
    });
    let mut u = VectorField::zeros(grid);
    for a in 0..3 {
        let comp: Vec<Complex64> = (0..n).map(|v| u_hat[v * 3 + a]).collect();
        let real = inverse_real(&grid, comp);
        for v in 0..n {
            u.values[v * 3 + a] = real[v];
        }
    }
    let w = ScalarField {
        grid,
        values: inverse_real(&grid, w_hat),
    };
    Ok(Decomposition { f_s, u, w })
}
