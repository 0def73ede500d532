//! Discrete mixed ray transform: forward, exact adjoint, and normal operator.
//!
//! Lines emanate from the source curve in directions sampled over the sphere
//! (pole band excluded) and are clipped to a bounding sphere around the
//! reconstruction volume. Each line carries two channels: the tensor field
//! contracted with xi (x) xi_alpha and with xi (x) xi_beta. The adjoint is the
//! exact transpose of the forward map with respect to the weighted sinogram
//! inner product (measure dt sin(alpha) dalpha dbeta) and the voxel-volume
//! inner product on fields; trilinear gather and scatter share one weight
//! computation to make the pairing identity hold to rounding.

use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{Curve, SphericalFrame, POLE_BAND};
use crate::grid::{Grid3, Tensor2Field};
use crate::vec3::{self, Vec3};

/// One integration line: origin on the curve, direction frame, clipped range.
#[derive(Debug, Clone)]
pub struct Line {
    pub origin: Vec3,
    pub frame: SphericalFrame,
    /// clipped parameter range along the line; empty when s0 >= s1
    pub s0: f64,
    pub s1: f64,
    /// quadrature weight dt * sin(alpha) * dalpha * dbeta
    pub weight: f64,
}

impl Line {
    pub fn active(&self) -> bool {
        self.s1 > self.s0
    }
}

/// Sampled family of lines through the source curve.
pub struct LineSet {
    pub curve: Curve,
    pub n_t: usize,
    pub n_alpha: usize,
    pub n_beta: usize,
    /// target integration step along each line
    pub h_s: f64,
    /// clip sphere radius around the origin
    pub radius: f64,
    lines: Vec<Line>,
}

impl LineSet {
    pub fn new(
        curve: Curve,
        n_t: usize,
        n_alpha: usize,
        n_beta: usize,
        h_s: f64,
        radius: f64,
    ) -> Result<Self> {
        if n_t == 0 || n_alpha == 0 || n_beta == 0 {
            return Err(Error::InvalidArgument("line counts must be >= 1".into()));
        }
        if !(h_s > 0.0) || !(radius > 0.0) {
            return Err(Error::InvalidArgument(
                "h_s and clip radius must be positive".into(),
            ));
        }
        curve.validate()?;
        let (t0, t1) = curve.interval();
        let dt = (t1 - t0) / n_t as f64;
        let band = PI - 2.0 * POLE_BAND;
        let dalpha = band / n_alpha as f64;
        let dbeta = 2.0 * PI / n_beta as f64;
        let mut lines = Vec::with_capacity(n_t * n_alpha * n_beta);
        for ib in 0..n_beta {
            let beta = (ib as f64 + 0.5) * dbeta;
            for ia in 0..n_alpha {
                let alpha = POLE_BAND + (ia as f64 + 0.5) * dalpha;
                let frame = SphericalFrame::from_angles(alpha, beta);
                let weight = dt * alpha.sin() * dalpha * dbeta;
                for it in 0..n_t {
                    let t = t0 + (it as f64 + 0.5) * dt;
                    let origin = curve.point(t);
                    let (s0, s1) = clip_to_sphere(origin, frame.xi, radius);
                    lines.push(Line {
                        origin,
                        frame,
                        s0,
                        s1,
                        weight,
                    });
                }
            }
        }
        Ok(LineSet {
            curve,
            n_t,
            n_alpha,
            n_beta,
            h_s,
            radius,
            lines,
        })
    }

    /// Default sampling: 96 curve points, 48 x 96 directions.
    pub fn standard(curve: Curve, h_s: f64, radius: f64) -> Result<Self> {
        Self::new(curve, 96, 48, 96, h_s, radius)
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_active(&self) -> usize {
        self.lines.iter().filter(|l| l.active()).count()
    }

    /// Line index with the curve-parameter index fastest.
    pub fn line_index(&self, it: usize, ia: usize, ib: usize) -> usize {
        it + self.n_t * (ia + self.n_alpha * ib)
    }
}

/// Intersection of {origin + s xi} with the sphere |x| = radius; empty range
/// (0, 0) when the line misses.
fn clip_to_sphere(origin: Vec3, xi: Vec3, radius: f64) -> (f64, f64) {
    let b = vec3::dot(origin, xi);
    let c = vec3::dot(origin, origin) - radius * radius;
    let disc = b * b - c;
    if disc <= 0.0 {
        return (0.0, 0.0);
    }
    let sq = disc.sqrt();
    (-b - sq, -b + sq)
}

/// Two-channel data on a line set; channel A pairs with xi_alpha, B with xi_beta.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub n_t: usize,
    pub n_alpha: usize,
    pub n_beta: usize,
    pub values: Vec<[f64; 2]>,
}

impl Sinogram {
    pub fn zeros(ls: &LineSet) -> Self {
        Sinogram {
            n_t: ls.n_t,
            n_alpha: ls.n_alpha,
            n_beta: ls.n_beta,
            values: vec![[0.0; 2]; ls.n_lines()],
        }
    }

    pub fn n_lines(&self) -> usize {
        self.values.len()
    }
}

/// Weighted sinogram inner product.
pub fn dot_sino(ls: &LineSet, a: &Sinogram, b: &Sinogram) -> Result<f64> {
    if a.values.len() != ls.n_lines() || b.values.len() != ls.n_lines() {
        return Err(Error::LengthMismatch {
            got: a.values.len().min(b.values.len()),
            want: ls.n_lines(),
        });
    }
    Ok(ls
        .lines
        .iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(l, (va, vb))| l.weight * (va[0] * vb[0] + va[1] * vb[1]))
        .sum())
}

pub fn norm_sino(ls: &LineSet, a: &Sinogram) -> Result<f64> {
    Ok(dot_sino(ls, a, a)?.sqrt())
}

/// Trilinear interpolation stencil: 8 voxel indices and weights, or None if
/// the point leaves the grid's node hull.
fn trilinear(grid: &Grid3, x: Vec3) -> Option<([usize; 8], [f64; 8])> {
    let mut i0 = [0usize; 3];
    let mut fr = [0.0f64; 3];
    for a in 0..3 {
        let u = (x[a] - grid.origin[a]) / grid.spacing[a];
        if !(u >= 0.0) || u > (grid.counts[a] - 1) as f64 {
            return None;
        }
        let mut i = u.floor() as usize;
        if i >= grid.counts[a] - 1 {
            i = grid.counts[a] - 2;
        }
        i0[a] = i;
        fr[a] = u - i as f64;
    }
    let mut idx = [0usize; 8];
    let mut w = [0.0f64; 8];
    for corner in 0..8 {
        let dx = corner & 1;
        let dy = (corner >> 1) & 1;
        let dz = (corner >> 2) & 1;
        idx[corner] = grid.voxel_index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
        w[corner] = (if dx == 1 { fr[0] } else { 1.0 - fr[0] })
            * (if dy == 1 { fr[1] } else { 1.0 - fr[1] })
            * (if dz == 1 { fr[2] } else { 1.0 - fr[2] });
    }
    Some((idx, w))
}

fn contraction_matrices(frame: &SphericalFrame) -> ([f64; 9], [f64; 9]) {
    let mut ma = [0.0; 9];
    let mut mb = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            ma[3 * i + j] = frame.xi[i] * frame.xi_alpha[j];
            mb[3 * i + j] = frame.xi[i] * frame.xi_beta[j];
        }
    }
    (ma, mb)
}

fn line_steps(line: &Line, h_s: f64) -> (usize, f64) {
    let span = line.s1 - line.s0;
    let n = (span / h_s).ceil().max(1.0) as usize;
    (n, span / n as f64)
}

/// Forward transform: midpoint-rule line integrals of the two contractions.
pub fn mirt_forward(ls: &LineSet, f: &Tensor2Field) -> Result<Sinogram> {
    if f.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let grid = &f.grid;
    let values: Vec<[f64; 2]> = ls
        .lines
        .par_iter()
        .map(|line| {
            if !line.active() {
                return [0.0, 0.0];
            }
            let (ma, mb) = contraction_matrices(&line.frame);
            let (n_steps, hs) = line_steps(line, ls.h_s);
            let mut acc = [0.0f64; 2];
            for m in 0..n_steps {
                let s = line.s0 + (m as f64 + 0.5) * hs;
                let x = vec3::add(line.origin, vec3::scale(line.frame.xi, s));
                let Some((idx, w)) = trilinear(grid, x) else {
                    continue;
                };
                let mut ca = 0.0;
                let mut cb = 0.0;
                for c in 0..8 {
                    let base = 9 * idx[c];
                    for k in 0..9 {
                        let v = f.values[base + k];
                        ca += w[c] * ma[k] * v;
                        cb += w[c] * mb[k] * v;
                    }
                }
                acc[0] += hs * ca;
                acc[1] += hs * cb;
            }
            acc
        })
        .collect();
    Ok(Sinogram {
        n_t: ls.n_t,
        n_alpha: ls.n_alpha,
        n_beta: ls.n_beta,
        values,
    })
}

/// Exact adjoint of `mirt_forward` with respect to `dot_sino` and the
/// voxel-volume field inner product.
pub fn mirt_adjoint(ls: &LineSet, grid: &Grid3, g: &Sinogram) -> Result<Tensor2Field> {
    if g.values.len() != ls.n_lines() {
        return Err(Error::LengthMismatch {
            got: g.values.len(),
            want: ls.n_lines(),
        });
    }
    if g.values.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
        return Err(Error::NonFinite);
    }
    let n_vox = grid.num_voxels();
    let inv_dv = 1.0 / grid.voxel_volume();
    let acc = ls
        .lines
        .par_iter()
        .zip(g.values.par_iter())
        .fold(
            || vec![0.0f64; 9 * n_vox],
            |mut buf, (line, gv)| {
                if !line.active() || (gv[0] == 0.0 && gv[1] == 0.0) {
                    return buf;
                }
                let (ma, mb) = contraction_matrices(&line.frame);
                let (n_steps, hs) = line_steps(line, ls.h_s);
                let wa = gv[0] * line.weight * hs * inv_dv;
                let wb = gv[1] * line.weight * hs * inv_dv;
                for m in 0..n_steps {
                    let s = line.s0 + (m as f64 + 0.5) * hs;
                    let x = vec3::add(line.origin, vec3::scale(line.frame.xi, s));
                    let Some((idx, w)) = trilinear(grid, x) else {
                        continue;
                    };
                    for c in 0..8 {
                        let base = 9 * idx[c];
                        for k in 0..9 {
                            buf[base + k] += w[c] * (wa * ma[k] + wb * mb[k]);
                        }
                    }
                }
                buf
            },
        )
        .reduce(
            || vec![0.0f64; 9 * n_vox],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                a
            },
        );
    Tensor2Field::from_values(grid.clone(), acc)
}

/// Normalized adjoint-pairing defect
/// |<Mf, g> - <f, M*g>| / max(|Mf||g|, |f||M*g|) for one seeded random pair
/// (f, g) with components uniform in [-1, 1]. Normalizing by the norm
/// products (rather than the pairing values, which can cancel for random
/// inputs) makes this a scale-invariant machine-precision gate.
pub fn adjoint_defect(ls: &LineSet, grid: &Grid3, seed: u64) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let f = Tensor2Field::from_fn(grid.clone(), |_| {
        std::array::from_fn(|_| rng.gen_range(-1.0..1.0))
    });
    let mut g = Sinogram::zeros(ls);
    for v in &mut g.values {
        v[0] = rng.gen_range(-1.0..1.0);
        v[1] = rng.gen_range(-1.0..1.0);
    }
    let mf = mirt_forward(ls, &f)?;
    let mtg = mirt_adjoint(ls, grid, &g)?;
    let lhs = dot_sino(ls, &mf, &g)?;
    let rhs = crate::grid::dot_field(&f.values, &mtg.values, grid.voxel_volume());
    let vol = grid.voxel_volume();
    let f_norm = crate::grid::dot_field(&f.values, &f.values, vol).sqrt();
    let mtg_norm = crate::grid::dot_field(&mtg.values, &mtg.values, vol).sqrt();
    let scale = (norm_sino(ls, &mf)? * norm_sino(ls, &g)?)
        .max(f_norm * mtg_norm)
        .max(1e-30);
    Ok(((lhs - rhs) / scale).abs())
}

/// Normal operator: adjoint of the forward applied to the forward.
pub fn normal_op(ls: &LineSet, f: &Tensor2Field) -> Result<Tensor2Field> {
    let g = mirt_forward(ls, f)?;
    mirt_adjoint(ls, &f.grid, &g)
}
