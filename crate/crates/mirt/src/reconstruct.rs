//! Leading-order microlocal reconstruction: variable-coefficient Fourier
//! multipliers built from the principal symbol and its parametrix.
//!
//! The reconstruction applies `B0(x, k) chi(x, k)` to the Fourier transform of
//! the normal-operator output, summing over a truncated frequency set bin by
//! bin (the multiplier depends on x, so a plain FFT does not apply). Bins are
//! grouped by primitive integer direction: all bins in a group share the unit
//! covector, so the curve-plane intersection geometry, the solenoidal basis
//! and the symbol factorization are computed once per (voxel, direction).

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;
use rayon::prelude::*;
use std::collections::HashMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fft::forward_tensor;
use crate::geometry::{Curve, POLE_BAND, TAU_TAN};
use crate::grid::{Grid3, Tensor2Field};
use crate::symbol::{basis5, TAU_SIGMA};
use crate::transform::{mirt_adjoint, LineSet, Sinogram};
use crate::vec3::{self, Vec3};

/// Parameters of the multiplier truncation and cutoffs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconParams {
    /// frequency bins with every |m_a| <= m_max enter the sum (clamped below
    /// the Nyquist index per axis)
    pub m_max: usize,
    /// lower edge of the Sigma-proximity taper on |gamma'(t) . xi0| / |gamma'|
    pub tau_sigma: f64,
    /// pole taper band (radians); directions closer to +-e3 are cut
    pub pole_band: f64,
    /// lower edge of the conditioning taper on the relative smallest
    /// eigenvalue of the reduced 5x5 symbol; covectors where the symbol is
    /// nearly singular are cut instead of amplified
    pub tau_cond: f64,
    /// relative eigenvalue floor of the truncated inverse: eigendirections of
    /// the reduced symbol below tau_trunc * lambda_max are smoothly dropped
    /// rather than inverted
    pub tau_trunc: f64,
    /// curve samples per 2*pi of parameter for the per-direction profiles
    pub samples_per_period: usize,
    /// radial low-pass of the parametrix: bins are weighted by
    /// exp(-(r/rolloff)^6) with r the integer frequency radius; suppresses
    /// backprojection noise that the degree-(+1) parametrix would amplify.
    /// None disables the rolloff.
    pub rolloff: Option<f64>,
    /// divide parametrix weights by the trilinear gather/scatter transfer
    /// sinc^4(pi m_a / n_a) so the parametrix inverts the discrete normal
    /// operator rather than its continuum limit
    pub compensate_interpolation: bool,
}

impl Default for ReconParams {
    fn default() -> Self {
        ReconParams {
            m_max: 7,
            tau_sigma: TAU_SIGMA,
            pole_band: POLE_BAND,
            tau_cond: 3e-4,
            tau_trunc: 2.5e-2,
            samples_per_period: 256,
            rolloff: Some(6.5),
            compensate_interpolation: true,
        }
    }
}

/// Smooth 0-1 ramp: 0 for t <= 0, 1 for t >= 1, cubic in between.
pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * (3.0 - 2.0 * t)
    }
}

/// Pole taper factor of a unit direction.
pub fn pole_factor(xi0: Vec3, band: f64) -> f64 {
    let alpha = xi0[2].clamp(-1.0, 1.0).acos();
    let d = alpha.min(PI - alpha);
    smoothstep((d - band) / band)
}

/// Smooth covector cutoff: pole taper times the Sigma-proximity taper over
/// the plane-curve intersections at (x, xi). Zero when the symbol cannot be
/// inverted (fewer than three usable chords or ill-conditioned).
pub fn cutoff_chi(curve: &Curve, x: Vec3, xi: Vec3, params: &ReconParams) -> Result<f64> {
    let xi0 = vec3::normalize(xi).ok_or(Error::ZeroCovector)?;
    let pf = pole_factor(xi0, params.pole_band);
    if pf == 0.0 {
        return Ok(0.0);
    }
    let group = GroupData::build(curve, xi0, params)?;
    Ok(match group.local_symbol(x, params) {
        Some(loc) => pf * loc.sigma_factor,
        None => 0.0,
    })
}

// ---------------------------------------------------------------------------
// per-direction geometry cache

struct SegArrays {
    t0: f64,
    dt: f64,
    /// gamma . xi0 at samples (wrap sample included for periodic segments)
    h0: Vec<f64>,
    /// maximal monotone runs of h0: (first cell, last cell, increasing)
    pieces: Vec<(usize, usize, bool)>,
}

struct GroupData {
    curve: Curve,
    xi0: Vec3,
    segs: Vec<SegArrays>,
    b5: SMatrix<f64, 9, 5>,
}

/// One intersection chord prepared for symbol assembly.
struct Chord {
    omega: Vec3,
    /// 2*pi / (|gamma' . xi0| |x - gamma(t)|), the unit-covector weight
    w: f64,
}

struct LocalSymbol {
    chords: Vec<Chord>,
    /// Sigma-proximity and conditioning tapers combined
    sigma_factor: f64,
    /// truncated inverse of the reduced symbol B5^T A0 B5
    inv5: SMatrix<f64, 5, 5>,
}

impl GroupData {
    fn build(curve: &Curve, xi0: Vec3, params: &ReconParams) -> Result<GroupData> {
        let (b5, _) = basis5(xi0)?;
        let mut segs = Vec::new();
        for seg in curve.segments() {
            let periods = ((seg.t1 - seg.t0) / (2.0 * PI)).ceil().max(1.0) as usize;
            let n = params.samples_per_period * periods;
            let dt = (seg.t1 - seg.t0) / n as f64;
            let mut h0 = Vec::with_capacity(n + 1);
            for i in 0..=n {
                let t = if seg.periodic && i == n {
                    seg.t0
                } else {
                    seg.t0 + i as f64 * dt
                };
                h0.push(vec3::dot(curve.point(t), xi0));
            }
            // monotone pieces of the sampled profile
            let mut pieces: Vec<(usize, usize, bool)> = Vec::new();
            for c in 0..n {
                let up = h0[c + 1] >= h0[c];
                match pieces.last_mut() {
                    Some((_, last, dir)) if *dir == up && *last + 1 == c => *last = c,
                    _ => pieces.push((c, c, up)),
                }
            }
            segs.push(SegArrays {
                t0: seg.t0,
                dt,
                h0,
                pieces,
            });
        }
        Ok(GroupData {
            curve: curve.clone(),
            xi0,
            segs,
            b5,
        })
    }

    /// Chords and taper of the plane through `x`; None when the symbol is not
    /// invertible there.
    fn local_symbol(&self, x: Vec3, params: &ReconParams) -> Option<LocalSymbol> {
        let level = vec3::dot(x, self.xi0);
        let mut chords: Vec<Chord> = Vec::new();
        let mut sigma_factor = 1.0f64;
        for seg in &self.segs {
            for &(c0, c1, up) in &seg.pieces {
                // binary search the crossing cell in the monotone value range
                let (lo, hi) = (seg.h0[c0], seg.h0[c1 + 1]);
                let inside = if up {
                    level >= lo && level < hi
                } else {
                    level <= lo && level > hi
                };
                if !inside {
                    continue;
                }
                let (mut a, mut b) = (c0, c1 + 1);
                while b - a > 1 {
                    let mid = (a + b) / 2;
                    let below = if up {
                        seg.h0[mid] <= level
                    } else {
                        seg.h0[mid] >= level
                    };
                    if below {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                let denom = seg.h0[a + 1] - seg.h0[a];
                let frac = if denom.abs() > 0.0 {
                    ((level - seg.h0[a]) / denom).clamp(0.0, 1.0)
                } else {
                    0.5
                };
                // Newton refinement of the crossing parameter on the exact
                // curve; stay within the bracketing cell's neighborhood
                let (tlo, thi) = (
                    seg.t0 + (a as f64 - 1.0) * seg.dt,
                    seg.t0 + (a as f64 + 2.0) * seg.dt,
                );
                let mut t = seg.t0 + (a as f64 + frac) * seg.dt;
                for _ in 0..3 {
                    let h = vec3::dot(self.curve.point(t), self.xi0) - level;
                    let d = vec3::dot(self.curve.d1(t), self.xi0);
                    if d.abs() < 1e-14 {
                        break;
                    }
                    t = (t - h / d).clamp(tlo, thi);
                }
                let p = self.curve.point(t);
                let d1 = self.curve.d1(t);
                let s1 = vec3::dot(d1, self.xi0);
                let speed = vec3::norm(d1);
                let chord = vec3::sub(x, p);
                let r = vec3::norm(chord);
                if r < 1e-9 {
                    continue;
                }
                let rel = s1.abs() / speed;
                if rel < TAU_TAN {
                    continue; // tangential contact carries no leading symbol
                }
                sigma_factor *= smoothstep(rel / params.tau_sigma - 1.0);
                if sigma_factor == 0.0 {
                    return None;
                }
                chords.push(Chord {
                    omega: vec3::scale(chord, 1.0 / r),
                    w: 2.0 * PI / (s1.abs() * r),
                });
            }
        }
        if chords.len() < 3 {
            return None;
        }
        // reduced symbol on the solenoidal subspace and its conditioning
        let mut at = SMatrix::<f64, 5, 5>::zeros();
        for ch in &chords {
            let (va, vb) = chord_vectors(ch, self.xi0);
            let a5 = self.b5.transpose() * va;
            let b5 = self.b5.transpose() * vb;
            at += ch.w * (a5 * a5.transpose() + b5 * b5.transpose());
        }
        let eig = at.symmetric_eigen();
        let lmax = eig.eigenvalues.amax();
        if !(lmax > 0.0) {
            return None;
        }
        let lmin = eig.eigenvalues.min();
        sigma_factor *= smoothstep(lmin.max(0.0) / (lmax * params.tau_cond) - 1.0);
        if sigma_factor == 0.0 {
            return None;
        }
        let mut inv5 = SMatrix::<f64, 5, 5>::zeros();
        for i in 0..5 {
            let l = eig.eigenvalues[i];
            let keep = smoothstep(l / (params.tau_trunc * lmax) - 1.0);
            if keep > 0.0 {
                let q = eig.eigenvectors.column(i);
                inv5 += (q * q.transpose()) * (keep / l);
            }
        }
        Some(LocalSymbol {
            chords,
            sigma_factor,
            inv5,
        })
    }
}

fn chord_vectors(chord: &Chord, xi0: Vec3) -> (SVector<f64, 9>, SVector<f64, 9>) {
    // adapted in-plane frame: omega_beta = xi0, omega_alpha = xi0 x omega
    let oa = vec3::cross(xi0, chord.omega);
    let mut va = SVector::<f64, 9>::zeros();
    let mut vb = SVector::<f64, 9>::zeros();
    for i in 0..3 {
        for j in 0..3 {
            va[3 * i + j] = chord.omega[i] * oa[j];
            vb[3 * i + j] = chord.omega[i] * xi0[j];
        }
    }
    (va, vb)
}

// ---------------------------------------------------------------------------
// frequency bookkeeping

struct Bin {
    /// flat voxel index of the FFT bin
    flat: usize,
    /// signed integer frequency per axis (for the phase tables)
    m: [i32; 3],
    knorm: f64,
    /// integer frequency radius |m|
    mrad: f64,
    /// trilinear gather+scatter transfer of this bin
    interp_transfer: f64,
}

struct DirectionGroup {
    data: GroupData,
    chi_dir: f64,
    bins: Vec<Bin>,
}

fn build_groups(curve: &Curve, grid: &Grid3, params: &ReconParams) -> Result<Vec<DirectionGroup>> {
    let mut mmax = [0i32; 3];
    for a in 0..3 {
        let nyq = (grid.counts[a] / 2).saturating_sub(1);
        mmax[a] = params.m_max.min(nyq) as i32;
    }
    let klat = [
        2.0 * PI / (grid.counts[0] as f64 * grid.spacing[0]),
        2.0 * PI / (grid.counts[1] as f64 * grid.spacing[1]),
        2.0 * PI / (grid.counts[2] as f64 * grid.spacing[2]),
    ];
    let mut by_dir: HashMap<[i32; 3], Vec<Bin>> = HashMap::new();
    for mz in -mmax[2]..=mmax[2] {
        for my in -mmax[1]..=mmax[1] {
            for mx in -mmax[0]..=mmax[0] {
                // one bin per conjugate pair
                let half = mz > 0 || (mz == 0 && (my > 0 || (my == 0 && mx > 0)));
                if !half {
                    continue;
                }
                let g = gcd3(mx.unsigned_abs(), my.unsigned_abs(), mz.unsigned_abs()) as i32;
                let p = [mx / g, my / g, mz / g];
                let k = [
                    klat[0] * mx as f64,
                    klat[1] * my as f64,
                    klat[2] * mz as f64,
                ];
                let flat = grid.voxel_index(
                    mx.rem_euclid(grid.counts[0] as i32) as usize,
                    my.rem_euclid(grid.counts[1] as i32) as usize,
                    mz.rem_euclid(grid.counts[2] as i32) as usize,
                );
                let mut interp_transfer = 1.0;
                for (ma, na) in [(mx, grid.counts[0]), (my, grid.counts[1]), (mz, grid.counts[2])] {
                    let a = PI * ma as f64 / na as f64;
                    let s = if a == 0.0 { 1.0 } else { a.sin() / a };
                    interp_transfer *= s.powi(4);
                }
                by_dir.entry(p).or_default().push(Bin {
                    flat,
                    m: [mx, my, mz],
                    knorm: vec3::norm(k),
                    mrad: ((mx * mx + my * my + mz * mz) as f64).sqrt(),
                    interp_transfer,
                });
            }
        }
    }
    let mut dirs: Vec<([i32; 3], Vec<Bin>)> = by_dir.into_iter().collect();
    dirs.sort_by_key(|(p, _)| *p);
    let mut groups = Vec::with_capacity(dirs.len());
    for (p, bins) in dirs {
        let k = [
            klat[0] * p[0] as f64,
            klat[1] * p[1] as f64,
            klat[2] * p[2] as f64,
        ];
        let Some(xi0) = vec3::normalize(k) else {
            continue;
        };
        let chi_dir = pole_factor(xi0, params.pole_band);
        if chi_dir == 0.0 {
            continue;
        }
        groups.push(DirectionGroup {
            data: GroupData::build(curve, xi0, params)?,
            chi_dir,
            bins,
        });
    }
    Ok(groups)
}

fn gcd2(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd2(b, a % b)
    }
}

fn gcd3(a: u32, b: u32, c: u32) -> u32 {
    gcd2(gcd2(a, b), c).max(1)
}

/// e^{2 pi i m v / n} tables per axis, indexed by (m + m_max, v).
fn phase_tables(grid: &Grid3, mmax: usize) -> [Vec<Complex64>; 3] {
    std::array::from_fn(|axis| {
        let n = grid.counts[axis];
        let mut t = Vec::with_capacity((2 * mmax + 1) * n);
        for m in -(mmax as i32)..=(mmax as i32) {
            for v in 0..n {
                let th = 2.0 * PI * m as f64 * v as f64 / n as f64;
                t.push(Complex64::new(th.cos(), th.sin()));
            }
        }
        t
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// apply A0(x, k), homogeneous of degree -1
    Symbol,
    /// apply B0(x, k) = Pi pinv(A0), homogeneous of degree +1
    Parametrix,
}

fn apply_multiplier(
    curve: &Curve,
    field: &Tensor2Field,
    params: &ReconParams,
    mode: Mode,
    frozen_at: Option<Vec3>,
) -> Result<Tensor2Field> {
    curve.validate()?;
    let grid = &field.grid;
    let hat = forward_tensor(field);
    let groups = build_groups(curve, grid, params)?;
    let mmax = params.m_max;
    let tables = phase_tables(grid, mmax);
    let n_total = grid.num_voxels() as f64;

    // frozen-point mode: one local symbol per direction, shared by all voxels
    let frozen: Option<Vec<Option<LocalSymbol>>> = frozen_at.map(|x0| {
        groups
            .iter()
            .map(|g| g.data.local_symbol(x0, params))
            .collect()
    });

    let voxels: Vec<(usize, usize, usize)> = grid.iter_voxels().collect();
    let values: Vec<f64> = voxels
        .par_iter()
        .flat_map_iter(|&(ix, iy, iz)| {
            let x = grid.voxel_center(ix, iy, iz);
            let vidx = [ix, iy, iz];
            let mut out = [0.0f64; 9];
            for (gi, group) in groups.iter().enumerate() {
                let held;
                let loc: Option<&LocalSymbol> = match &frozen {
                    Some(f) => f[gi].as_ref(),
                    None => {
                        held = group.data.local_symbol(x, params);
                        held.as_ref()
                    }
                };
                let Some(loc) = loc else {
                    continue;
                };
                let chi = group.chi_dir * loc.sigma_factor;

                // spectral accumulation over the group's bins
                let mut acc = [Complex64::new(0.0, 0.0); 9];
                for bin in &group.bins {
                    let mut ph = Complex64::new(2.0, 0.0); // conjugate-pair weight
                    for a in 0..3 {
                        let idx = (bin.m[a] + mmax as i32) as usize * grid.counts[a] + vidx[a];
                        ph *= tables[a][idx];
                    }
                    let mut w = match mode {
                        Mode::Symbol => ph / bin.knorm,
                        Mode::Parametrix => ph * bin.knorm,
                    };
                    if mode == Mode::Parametrix {
                        if let Some(rc) = params.rolloff {
                            w *= (-(bin.mrad / rc).powi(6)).exp();
                        }
                        if params.compensate_interpolation {
                            w /= bin.interp_transfer;
                        }
                    }
                    let base = bin.flat * 9;
                    for c in 0..9 {
                        acc[c] += w * hat.values[base + c];
                    }
                }
                let re = SVector::<f64, 9>::from_fn(|c, _| acc[c].re);

                match mode {
                    Mode::Symbol => {
                        for ch in &loc.chords {
                            let (va, vb) = chord_vectors(ch, group.data.xi0);
                            let coef = chi * ch.w;
                            let da = va.dot(&re);
                            let db = vb.dot(&re);
                            for c in 0..9 {
                                out[c] += coef * (da * va[c] + db * vb[c]);
                            }
                        }
                    }
                    Mode::Parametrix => {
                        let y = group.data.b5.transpose() * re;
                        let back = group.data.b5 * (loc.inv5 * y);
                        for c in 0..9 {
                            out[c] += chi * back[c];
                        }
                    }
                }
            }
            out.into_iter().map(move |v| v / n_total)
        })
        .collect();
    Tensor2Field::from_values(grid.clone(), values)
}

/// Apply the parametrix multiplier B0(x, k) chi(x, k) to a field (typically
/// the normal-operator output).
pub fn apply_parametrix(
    curve: &Curve,
    field: &Tensor2Field,
    params: &ReconParams,
) -> Result<Tensor2Field> {
    apply_multiplier(curve, field, params, Mode::Parametrix, None)
}

/// Apply the principal-symbol multiplier A0(x, k) chi(x, k).
pub fn apply_symbol(
    curve: &Curve,
    field: &Tensor2Field,
    params: &ReconParams,
) -> Result<Tensor2Field> {
    apply_multiplier(curve, field, params, Mode::Symbol, None)
}

/// Frozen-coefficient variants: the symbol is evaluated at `x0` for every
/// output voxel, turning the operator into a plain Fourier multiplier.
pub fn apply_parametrix_frozen(
    curve: &Curve,
    x0: Vec3,
    field: &Tensor2Field,
    params: &ReconParams,
) -> Result<Tensor2Field> {
    apply_multiplier(curve, field, params, Mode::Parametrix, Some(x0))
}

pub fn apply_symbol_frozen(
    curve: &Curve,
    x0: Vec3,
    field: &Tensor2Field,
    params: &ReconParams,
) -> Result<Tensor2Field> {
    apply_multiplier(curve, field, params, Mode::Symbol, Some(x0))
}

/// Full pipeline: backproject the sinogram and apply the parametrix.
pub fn reconstruct(
    curve: &Curve,
    ls: &LineSet,
    grid: &Grid3,
    sino: &Sinogram,
    params: &ReconParams,
) -> Result<Tensor2Field> {
    let normal = mirt_adjoint(ls, grid, sino)?;
    apply_parametrix(curve, &normal, params)
}

/// Least-squares scale aligning `rec` to `reference`.
pub fn calibrate(rec: &Tensor2Field, reference: &Tensor2Field) -> Result<f64> {
    if rec.values.len() != reference.values.len() {
        return Err(Error::LengthMismatch {
            got: rec.values.len(),
            want: reference.values.len(),
        });
    }
    let num: f64 = rec.values.iter().zip(&reference.values).map(|(a, b)| a * b).sum();
    let den: f64 = rec.values.iter().map(|a| a * a).sum();
    if den == 0.0 {
        return Err(Error::InvalidArgument("cannot calibrate a zero field".into()));
    }
    Ok(num / den)
}

/// Agreement metrics between a reconstruction and a reference field.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    /// least-squares calibration scale
    pub scale: f64,
    /// relative L2 error of scale*rec over the support mask of the reference
    pub masked_rel_l2: f64,
    /// Pearson correlation of the component values over the mask
    pub correlation: f64,
    /// fraction of voxels in the mask
    pub mask_fraction: f64,
}

impl ErrorReport {
    pub fn to_kv(&self) -> String {
        format!(
            "scale = {:.6e}\nmasked_rel_l2 = {:.6}\ncorrelation = {:.6}\nmask_fraction = {:.6}\n",
            self.scale, self.masked_rel_l2, self.correlation, self.mask_fraction
        )
    }
}

/// Compare `rec` to `reference` over the voxels where the reference's local
/// energy (squared tensor magnitude) exceeds 1% of its maximum.
pub fn error_report(rec: &Tensor2Field, reference: &Tensor2Field) -> Result<ErrorReport> {
    let n = reference.grid.num_voxels();
    let mut vox_energy = vec![0.0f64; n];
    let mut max_energy = 0.0f64;
    for v in 0..n {
        let s: f64 = reference.at(v).iter().map(|x| x * x).sum();
        vox_energy[v] = s;
        max_energy = max_energy.max(s);
    }
    let thresh = 0.01 * max_energy;
    // calibrate over the mask as well
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for v in 0..n {
        if vox_energy[v] >= thresh {
            for c in 0..9 {
                num += rec.values[v * 9 + c] * reference.values[v * 9 + c];
                den += rec.values[v * 9 + c] * rec.values[v * 9 + c];
            }
        }
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("cannot calibrate a zero field".into()));
    }
    let scale = num / den;
    let mut a: Vec<f64> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    for v in 0..n {
        if vox_energy[v] >= thresh {
            for c in 0..9 {
                a.push(scale * rec.values[v * 9 + c]);
                b.push(reference.values[v * 9 + c]);
            }
        }
    }
    if b.is_empty() {
        return Err(Error::InvalidArgument("empty reference mask".into()));
    }
    let m = a.len() as f64;
    let (ma, mb) = (
        a.iter().sum::<f64>() / m,
        b.iter().sum::<f64>() / m,
    );
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    let mut err2 = 0.0;
    let mut ref2 = 0.0;
    for (x, y) in a.iter().zip(&b) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
        err2 += (x - y) * (x - y);
        ref2 += y * y;
    }
    Ok(ErrorReport {
        scale,
        masked_rel_l2: (err2 / ref2).sqrt(),
        correlation: num / (da.sqrt() * db.sqrt()).max(1e-300),
        mask_fraction: (a.len() / 9) as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::forward_tensor;
    use crate::fields::sol_projector;
    use crate::phantom::{PhantomKind, PhantomSpec};
    use crate::symbol::principal_symbol;
    use num_complex::Complex64;

    fn helix() -> Curve {
        Curve::Helix {
            radius: 2.0,
            pitch: 0.5,
            turns: 3,
        }
    }

    fn grid16() -> Grid3 {
        Grid3::cube(16, 1.2).unwrap()
    }

    /// parameters that disable the discrete-operator corrections, leaving the
    /// pure symbol algebra
    fn algebra_params() -> ReconParams {
        ReconParams {
            tau_trunc: 1e-9,
            rolloff: None,
            compensate_interpolation: false,
            ..Default::default()
        }
    }

    #[test]
    fn cutoff_values() {
        let p = ReconParams::default();
        // good helix covector: full weight
        let chi = cutoff_chi(
            &helix(),
            [0.05, 0.02, 0.1],
            vec3::normalize([1.0, 0.3, 0.05]).unwrap(),
            &p,
        )
        .unwrap();
        assert!(chi > 0.99, "chi {chi}");
        // circle: never three chords
        let chi = cutoff_chi(
            &Curve::Circle { radius: 2.0 },
            [0.3, 0.1, -0.2],
            vec3::normalize([0.8, 0.1, 0.5]).unwrap(),
            &p,
        )
        .unwrap();
        assert_eq!(chi, 0.0);
        // near-pole direction: tapered to zero
        let chi = cutoff_chi(
            &helix(),
            [0.1, 0.0, 0.0],
            vec3::normalize([0.01, 0.0, 1.0]).unwrap(),
            &p,
        )
        .unwrap();
        assert_eq!(chi, 0.0);
    }

    #[test]
    fn frozen_symbol_matches_direct_evaluation_on_single_mode() {
        // a pure cosine mode passes through the frozen multiplier as
        // chi * A0(x0, k) E cos(k . x)
        let grid = grid16();
        let m = [2i32, 1, 3];
        let mut e = [0.0f64; 9];
        e[1] = 1.0;
        e[5] = -0.6;
        let mut f = Tensor2Field::zeros(grid.clone());
        for (v, (ix, iy, iz)) in grid.iter_voxels().enumerate() {
            let th = 2.0 * PI
                * (m[0] as f64 * ix as f64 / 16.0
                    + m[1] as f64 * iy as f64 / 16.0
                    + m[2] as f64 * iz as f64 / 16.0);
            for c in 0..9 {
                f.values[v * 9 + c] = e[c] * th.cos();
            }
        }
        let x0 = [0.05, 0.02, 0.1];
        let p = algebra_params();
        let out = apply_symbol_frozen(&helix(), x0, &f, &p).unwrap();

        let l = 16.0 * grid.spacing[0];
        let k = [
            2.0 * PI * m[0] as f64 / l,
            2.0 * PI * m[1] as f64 / l,
            2.0 * PI * m[2] as f64 / l,
        ];
        let a0 = principal_symbol(&helix(), x0, k).unwrap();
        let ev = SVector::<f64, 9>::from_row_slice(&e);
        let want = a0 * ev;
        let chi = cutoff_chi(&helix(), x0, k, &p).unwrap();
        assert!(chi > 0.9);
        // compare on the voxel where the cosine is 1 (index 0)
        let got = out.at(0);
        let scale = want.amax().max(1e-30);
        for c in 0..9 {
            assert!(
                (got[c] - chi * want[c]).abs() < 1e-6 * scale,
                "c {c}: {} vs {}",
                got[c],
                chi * want[c]
            );
        }
    }

    #[test]
    fn frozen_pipeline_equals_projector_multiplier() {
        // With the symbol frozen at x0, parametrix(symbol(f)) must equal the
        // plain Fourier multiplier chi^2 Pi_sol applied to f, because the
        // five-dimensional inversion is exact on the symbol's range.
        let grid = grid16();
        let f = PhantomSpec::default().build(&grid).unwrap();
        let x0 = [0.05, 0.02, 0.1];
        let p = algebra_params();
        let curve = helix();
        let af = apply_symbol_frozen(&curve, x0, &f, &p).unwrap();
        let out = apply_parametrix_frozen(&curve, x0, &af, &p).unwrap();

        let hat = forward_tensor(&f);
        let n = 16i32;
        let l = 16.0 * grid.spacing[0];
        let mut chi_cache: std::collections::HashMap<[i32; 3], f64> =
            std::collections::HashMap::new();
        let mut want = Tensor2Field::zeros(grid.clone());
        // accumulate the reference multiplier output bin by bin
        let mut per_bin: Vec<([i32; 3], [Complex64; 9])> = Vec::new();
        for (v, (ix, iy, iz)) in grid.iter_voxels().enumerate() {
            let s = |i: usize| {
                let m = i as i32;
                if m > n / 2 {
                    m - n
                } else {
                    m
                }
            };
            let (mx, my, mz) = (s(ix), s(iy), s(iz));
            if mx == 0 && my == 0 && mz == 0 {
                continue;
            }
            if mx.abs() > 7 || my.abs() > 7 || mz.abs() > 7 || mx == -8 || my == -8 || mz == -8 {
                continue;
            }
            let g = {
                fn gcd(a: u32, b: u32) -> u32 {
                    if b == 0 {
                        a
                    } else {
                        gcd(b, a % b)
                    }
                }
                gcd(gcd(mx.unsigned_abs(), my.unsigned_abs()), mz.unsigned_abs()).max(1) as i32
            };
            let prim = [mx / g, my / g, mz / g];
            let chi = *chi_cache.entry(prim).or_insert_with(|| {
                let k = [
                    2.0 * PI * prim[0] as f64 / l,
                    2.0 * PI * prim[1] as f64 / l,
                    2.0 * PI * prim[2] as f64 / l,
                ];
                cutoff_chi(&curve, x0, k, &p).unwrap()
            });
            if chi == 0.0 {
                continue;
            }
            let xi0 = vec3::normalize([mx as f64, my as f64, mz as f64]).unwrap();
            let pi9 = sol_projector(xi0).unwrap();
            let mut vals = [Complex64::new(0.0, 0.0); 9];
            let fv = SVector::<f64, 9>::from_fn(|c, _| hat.values[v * 9 + c].re);
            let fi = SVector::<f64, 9>::from_fn(|c, _| hat.values[v * 9 + c].im);
            let pr = pi9 * fv;
            let pim = pi9 * fi;
            for c in 0..9 {
                vals[c] = Complex64::new(pr[c], pim[c]) * chi * chi;
            }
            per_bin.push(([mx, my, mz], vals));
        }
        let n_total = grid.num_voxels() as f64;
        for (v, (ix, iy, iz)) in grid.iter_voxels().enumerate() {
            for (m, vals) in &per_bin {
                let th = 2.0 * PI
                    * (m[0] as f64 * ix as f64 / 16.0
                        + m[1] as f64 * iy as f64 / 16.0
                        + m[2] as f64 * iz as f64 / 16.0);
                let ph = Complex64::new(th.cos(), th.sin());
                for c in 0..9 {
                    want.values[v * 9 + c] += (ph * vals[c]).re / n_total;
                }
            }
        }
        let num: f64 = out
            .values
            .iter()
            .zip(&want.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let den: f64 = want.values.iter().map(|b| b * b).sum();
        let rel = (num / den).sqrt();
        assert!(rel < 1e-6, "frozen pipeline relative error {rel:.3e}");
    }

    #[test]
    fn variable_composition_recovers_solenoidal_field() {
        // symbol model then parametrix, both with x-dependent coefficients
        let grid = grid16();
        let f = PhantomSpec::default().build(&grid).unwrap();
        let p = ReconParams {
            compensate_interpolation: false,
            ..Default::default()
        };
        let af = apply_symbol(&helix(), &f, &p).unwrap();
        let rec = apply_parametrix(&helix(), &af, &p).unwrap();
        let rep = error_report(&rec, &f).unwrap();
        assert!(rep.correlation > 0.85, "correlation {}", rep.correlation);
        assert!(rep.masked_rel_l2 < 0.5, "rel {}", rep.masked_rel_l2);
    }

    #[test]
    fn parametrix_annihilates_lambda_fields() {
        let grid = grid16();
        let sol = PhantomSpec::default().build(&grid).unwrap();
        let lam = PhantomSpec {
            kind: PhantomKind::LambdaScalar,
            ..Default::default()
        }
        .build(&grid)
        .unwrap();
        let p = ReconParams::default();
        let out_lam = apply_parametrix(&helix(), &lam, &p).unwrap();
        let out_sol = apply_parametrix(&helix(), &sol, &p).unwrap();
        let ratio = (out_lam.norm_l2() / lam.norm_l2()) / (out_sol.norm_l2() / sol.norm_l2());
        assert!(ratio < 0.02, "leak ratio {ratio}");
    }

    #[test]
    fn zero_in_zero_out() {
        let grid = grid16();
        let z = Tensor2Field::zeros(grid.clone());
        let out = apply_parametrix(&helix(), &z, &ReconParams::default()).unwrap();
        assert_eq!(out.norm_l2(), 0.0);
    }

    #[test]
    fn calibration_and_report() {
        let grid = grid16();
        let f = PhantomSpec::default().build(&grid).unwrap();
        let half = Tensor2Field::from_values(
            grid.clone(),
            f.values.iter().map(|v| 0.5 * v).collect(),
        )
        .unwrap();
        let c = calibrate(&half, &f).unwrap();
        assert!((c - 2.0).abs() < 1e-12);
        let rep = error_report(&half, &f).unwrap();
        assert!(rep.masked_rel_l2 < 1e-12);
        assert!((rep.correlation - 1.0).abs() < 1e-12);
        assert!(rep.mask_fraction > 0.0 && rep.mask_fraction < 1.0);
    }

    #[test]
    fn uncorrelated_fields_have_small_correlation() {
        use rand::{Rng, SeedableRng};
        let grid = grid16();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = Tensor2Field::from_values(
            grid.clone(),
            (0..grid.num_voxels() * 9).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let b = Tensor2Field::from_values(
            grid.clone(),
            (0..grid.num_voxels() * 9).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let rep = error_report(&a, &b).unwrap();
        assert!(rep.correlation.abs() < 0.1, "corr {}", rep.correlation);
    }
}
