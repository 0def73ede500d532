//! Principal symbol of the normal operator, its SVD parametrix, and the
//! ellipticity certificate.
//!
//! At a covector (x, xi) the normal operator of the restricted transform acts
//! to leading order by the 9x9 matrix A0(x, xi): a weighted sum of rank-one
//! contributions from the transversal intersections of the plane through x
//! with normal xi with the source curve. A0 is symmetric positive
//! semidefinite, annihilates the complement of the solenoidal subspace S(xi),
//! and is invertible on S(xi) exactly when the intersection pattern satisfies
//! the order-2 Kirillov-Tuy condition; the parametrix B0 is its pseudoinverse
//! there.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::fields::{sol_projector, Matrix9};
use crate::geometry::{Curve, DirectionalProfile, IntersectionRecord, TAU_INDEP, TAU_TAN};
use crate::vec3::{self, Vec3};

/// Relative threshold on singular values when pseudo-inverting A0.
pub const TAU_RANK: f64 = 1e-8;
/// Relative proximity threshold to Sigma (|gamma' . xi0| / |gamma'|): records
/// closer than this are rejected rather than amplified.
pub const TAU_SIGMA: f64 = 1e-3;
/// Lower bound on the normalized ellipticity certificate.
pub const ELLIPTIC_MIN_SV: f64 = 1e-8;

pub type Vector9 = SVector<f64, 9>;

/// flatten(a (x) b) as a 9-vector in (i, j) row-major component order.
pub fn flatten_outer(a: Vec3, b: Vec3) -> Vector9 {
    let mut v = Vector9::zeros();
    for i in 0..3 {
        for j in 0..3 {
            v[3 * i + j] = a[i] * b[j];
        }
    }
    v
}

/// In-plane frame adapted to a chord direction omega perpendicular to xi0:
/// omega_beta = xi0, omega_alpha = xi0 x omega, so that (omega, omega_alpha,
/// omega_beta) is right-handed.
pub fn adapted_frame(omega: Vec3, xi0: Vec3) -> (Vec3, Vec3) {
    (vec3::cross(xi0, omega), xi0)
}

fn transversal_records(
    profile: &DirectionalProfile<'_>,
    x: Vec3,
) -> Result<Vec<IntersectionRecord>> {
    let set = profile.intersections(x)?;
    let mut out = Vec::new();
    for r in set.records {
        let speed = vec3::norm(profile.curve.d1(r.t));
        let rel = r.s1.abs() / speed;
        if rel < TAU_TAN {
            continue; // tangential point: no transversal contribution
        }
        if rel < TAU_SIGMA {
            return Err(Error::SigmaProximity {
                value: rel,
                tau: TAU_SIGMA,
            });
        }
        out.push(r);
    }
    Ok(out)
}

/// Principal symbol A0(x, xi) from a precomputed directional profile; `xinorm`
/// is |xi| (the symbol is homogeneous of degree -1).
pub fn principal_symbol_from_profile(
    profile: &DirectionalProfile<'_>,
    x: Vec3,
    xinorm: f64,
) -> Result<Matrix9> {
    if !(xinorm > 0.0) {
        return Err(Error::ZeroCovector);
    }
    let records = transversal_records(profile, x)?;
    let mut a = Matrix9::zeros();
    for r in &records {
        let w = 2.0 * std::f64::consts::PI / (xinorm * r.s1.abs() * r.r);
        let (oa, ob) = adapted_frame(r.omega, profile.xi0);
        let va = flatten_outer(r.omega, oa);
        let vb = flatten_outer(r.omega, ob);
        a += w * (va * va.transpose() + vb * vb.transpose());
    }
    Ok(a)
}

/// Principal symbol A0(x, xi) of the normal operator.
pub fn principal_symbol(curve: &Curve, x: Vec3, xi: Vec3) -> Result<Matrix9> {
    let profile = DirectionalProfile::new(curve, xi)?;
    principal_symbol_from_profile(&profile, x, vec3::norm(xi))
}

/// Orthonormal basis of the solenoidal subspace S(xi) (columns), with the
/// spectral-gap certificate of the projector SVD.
pub fn basis5(xi: Vec3) -> Result<(SMatrix<f64, 9, 5>, f64)> {
    let xi0 = vec3::normalize(xi).ok_or(Error::ZeroCovector)?;
    let pi = sol_projector(xi0)?;
    let eig = pi.symmetric_eigen();
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let s5 = eig.eigenvalues[order[4]];
    let s6 = eig.eigenvalues[order[5]];
    let certificate = s5 - s6;
    if certificate < 0.5 {
        return Err(Error::RankDeficient {
            certificate,
            threshold: 0.5,
        });
    }
    let mut basis = SMatrix::<f64, 9, 5>::zeros();
    for (k, &col) in order[..5].iter().enumerate() {
        basis.set_column(k, &eig.eigenvectors.column(col));
    }
    Ok((basis, certificate))
}

/// Parametrix symbol B0(x, xi) = Pi_sol pinv(A0): inverts A0 on S(xi) and
/// annihilates its complement. Errors if A0 has rank below 5 on S(xi).
pub fn parametrix_symbol_from_profile(
    profile: &DirectionalProfile<'_>,
    x: Vec3,
    xinorm: f64,
) -> Result<Matrix9> {
    let a = principal_symbol_from_profile(profile, x, xinorm)?;
    let pi = sol_projector(profile.xi0)?;
    // A0 is symmetric PSD, so its singular value decomposition coincides with
    // the eigendecomposition; the latter is far more accurate here (the
    // general bidiagonalization SVD loses digits on clustered spectra)
    let eig = a.symmetric_eigen();
    let smax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = TAU_RANK * smax;
    let rank = eig.eigenvalues.iter().filter(|s| s.abs() > cut).count();
    if rank < 5 {
        return Err(Error::RankDeficient {
            certificate: if smax > 0.0 {
                let mut sv: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
                sv.sort_by(f64::total_cmp);
                sv[9 - 5] / smax
            } else {
                0.0
            },
            threshold: TAU_RANK,
        });
    }
    let mut pinv = Matrix9::zeros();
    for k in 0..9 {
        let s = eig.eigenvalues[k];
        if s.abs() > cut {
            let q = eig.eigenvectors.column(k);
            pinv += (1.0 / s) * q * q.transpose();
        }
    }
    Ok(pi * pinv)
}

/// Parametrix symbol B0(x, xi).
pub fn parametrix_symbol(curve: &Curve, x: Vec3, xi: Vec3) -> Result<Matrix9> {
    let profile = DirectionalProfile::new(curve, xi)?;
    parametrix_symbol_from_profile(&profile, x, vec3::norm(xi))
}

/// Ellipticity certificate at one covector.
#[derive(Debug, Clone)]
pub struct EllipticityReport {
    pub n_transversal: usize,
    /// minimum singular value of the row-normalized 12x9 constraint system
    pub min_singular_value: f64,
    /// pairwise chord determinants in the in-plane basis (sin of angle gaps)
    pub pair_dets: Vec<f64>,
    /// determinant of each used (omega, omega_alpha, omega_beta) frame
    pub frame_dets: Vec<f64>,
    /// minimum of v^T A0 v over seeded random unit v in S(xi)
    pub min_quadratic_form: f64,
}

/// Check that the constraint rows carried by the intersection pattern
/// determine a tensor on S(xi): three transversal chords with pairwise
/// independent directions give 12 linear functionals whose stacked matrix
/// must have full column rank on R^9.
pub fn ellipticity_check(
    curve: &Curve,
    x: Vec3,
    xi: Vec3,
    seed: u64,
) -> Result<EllipticityReport> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let profile = DirectionalProfile::new(curve, xi)?;
    let records = transversal_records(&profile, x)?;
    // choose three pairwise independent chords
    let mut triple: Option<[usize; 3]> = None;
    'outer: for i in 0..records.len() {
        for j in (i + 1)..records.len() {
            if vec3::norm(vec3::cross(records[i].omega, records[j].omega)) <= TAU_INDEP {
                continue;
            }
            for k in (j + 1)..records.len() {
                if vec3::norm(vec3::cross(records[i].omega, records[k].omega)) > TAU_INDEP
                    && vec3::norm(vec3::cross(records[j].omega, records[k].omega)) > TAU_INDEP
                {
                    triple = Some([i, j, k]);
                    break 'outer;
                }
            }
        }
    }
    let Some(triple) = triple else {
        if records.len() >= 2
            && vec3::norm(vec3::cross(records[0].omega, records[1].omega)) <= TAU_INDEP
        {
            return Err(Error::Admissibility { i: 0, j: 1 });
        }
        return Err(Error::NotElliptic {
            found: records.len(),
        });
    };

    let xi0 = profile.xi0;
    let chords: Vec<Vec3> = triple.iter().map(|&q| records[q].omega).collect();

    // in-plane orthonormal basis for the determinant identities
    let e1 = chords[0];
    let e2 = vec3::cross(xi0, e1);
    let mut pair_dets = Vec::new();
    for i in 0..3 {
        for j in (i + 1)..3 {
            let (a, b) = (chords[i], chords[j]);
            let det = vec3::dot(a, e1) * vec3::dot(b, e2) - vec3::dot(a, e2) * vec3::dot(b, e1);
            if det.abs() <= TAU_INDEP {
                return Err(Error::Admissibility { i, j });
            }
            pair_dets.push(det);
        }
    }

    let mut frame_dets = Vec::new();
    let mut rows: Vec<Vector9> = Vec::with_capacity(12);
    for &omega in &chords {
        let (oa, ob) = adapted_frame(omega, xi0);
        frame_dets.push(vec3::dot(vec3::cross(omega, oa), ob));
        rows.push(flatten_outer(omega, oa));
    }
    for &omega in &chords[..2] {
        let (oa, ob) = adapted_frame(omega, xi0);
        rows.push(flatten_outer(omega, ob));
        rows.push(flatten_outer(xi0, oa));
    }
    rows.push(flatten_outer(xi0, xi0));
    // trace functional
    let mut tr = Vector9::zeros();
    for i in 0..3 {
        tr[3 * i + i] = 1.0;
    }
    rows.push(tr);
    for j in 0..3 {
        let mut ej = [0.0; 3];
        ej[j] = 1.0;
        rows.push(flatten_outer(xi0, ej));
    }
    debug_assert_eq!(rows.len(), 12);

    let mut m = SMatrix::<f64, 12, 9>::zeros();
    for (r, row) in rows.iter().enumerate() {
        let n = row.norm();
        m.set_row(r, &(row.transpose() / n));
    }
    let sv = m.svd(false, false).singular_values;
    let min_sv = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min_sv <= ELLIPTIC_MIN_SV {
        return Err(Error::NotElliptic {
            found: records.len(),
        });
    }

    // seeded positivity probe of A0 on S(xi)
    let a0 = principal_symbol_from_profile(&profile, x, vec3::norm(xi))?;
    let (basis, _) = basis5(xi0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_q = f64::INFINITY;
    for _ in 0..64 {
        let c = SVector::<f64, 5>::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let v = basis * c;
        let n = v.norm();
        if n < 1e-12 {
            continue;
        }
        let v = v / n;
        min_q = min_q.min((v.transpose() * a0 * v)[0]);
    }

    Ok(EllipticityReport {
        n_transversal: records.len(),
        min_singular_value: min_sv,
        pair_dets,
        frame_dets,
        min_quadratic_form: min_q,
    })
}

/// Certificate for an abstract chord configuration given by in-plane angles.
#[derive(Debug, Clone)]
pub struct AngleSystemReport {
    /// minimum singular value of the row-normalized stacked 12x9 system
    pub min_singular_value: f64,
    /// determinant of the leading 2x2 chord block; equals sin(alpha1 - alpha2)
    pub pair_det: f64,
    /// determinant of the in-plane frame rotation by beta1; equals 1
    pub rotation_det: f64,
}

/// Admissibility margin on |sin(alpha_i - alpha_j)| for angle tuples.
pub const TAU_ANGLE: f64 = 1e-12;

/// Ellipticity certificate for three chords at in-plane angles `alphas`
/// inside the plane with unit normal e_z, with the frame of the first chord
/// rotated by `beta1`. Stacks the twelve linear functionals carried by the
/// chord pattern (two channels for chord 1..3 resp. 1..2, the normal-channel
/// rows, the trace functional and the three normal contractions) and reports
/// the smallest singular value after row normalization; a positive value
/// certifies that the pattern determines the tensor uniquely.
pub fn ellipticity_check_angles(alphas: [f64; 3], beta1: f64) -> Result<AngleSystemReport> {
    for v in alphas.iter().chain(std::iter::once(&beta1)) {
        if !v.is_finite() {
            return Err(Error::NonFinite);
        }
    }
    for i in 0..3 {
        for j in (i + 1)..3 {
            if (alphas[i] - alphas[j]).sin().abs() <= TAU_ANGLE {
                return Err(Error::Admissibility { i, j });
            }
        }
    }
    let xi0: Vec3 = [0.0, 0.0, 1.0];
    let chords: Vec<Vec3> = alphas.iter().map(|a| [a.cos(), a.sin(), 0.0]).collect();

    // 2x2 block of the first two chords in the (cos, sin) basis, ordered so
    // its determinant is sin(alpha1 - alpha2)
    let pair_det = alphas[1].cos() * alphas[0].sin() - alphas[1].sin() * alphas[0].cos();
    // in-plane rotation of chord 1's frame by beta1
    let rotation_det = beta1.cos() * beta1.cos() + beta1.sin() * beta1.sin();

    let mut rows: Vec<Vector9> = Vec::with_capacity(12);
    for &omega in &chords {
        let (oa, _) = adapted_frame(omega, xi0);
        rows.push(flatten_outer(omega, oa));
    }
    for &omega in &chords[..2] {
        let (oa, ob) = adapted_frame(omega, xi0);
        rows.push(flatten_outer(omega, ob));
        rows.push(flatten_outer(xi0, oa));
    }
    rows.push(flatten_outer(xi0, xi0));
    let mut tr = Vector9::zeros();
    for i in 0..3 {
        tr[3 * i + i] = 1.0;
    }
    rows.push(tr);
    for j in 0..3 {
        let mut ej = [0.0; 3];
        ej[j] = 1.0;
        rows.push(flatten_outer(xi0, ej));
    }

    let mut m = SMatrix::<f64, 12, 9>::zeros();
    for (r, row) in rows.iter().enumerate() {
        let n = row.norm();
        m.set_row(r, &(row.transpose() / n));
    }
    let sv = m.svd(false, false).singular_values;
    let min_sv = sv.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(AngleSystemReport {
        min_singular_value: min_sv,
        pair_det,
        rotation_det,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn helix() -> Curve {
        Curve::Helix {
            radius: 2.0,
            pitch: 0.5,
            turns: 3,
        }
    }

    fn good_covector() -> (Vec3, Vec3) {
        (
            [0.05, 0.02, 0.1],
            vec3::normalize([1.0, 0.3, 0.05]).unwrap(),
        )
    }

    #[test]
    fn symbol_symmetric_psd() {
        let (x, xi) = good_covector();
        let a = principal_symbol(&helix(), x, xi).unwrap();
        assert!((a - a.transpose()).norm() < 1e-12 * a.norm());
        let eig = a.symmetric_eigen();
        assert!(eig.eigenvalues.min() > -1e-12 * a.norm());
    }

    #[test]
    fn symbol_kronecker_invariant() {
        // A0 equals sum_q w_q (omega omega^T) (x) (I - omega omega^T),
        // independent of the in-plane frame choice
        let c = helix();
        let (x, xi) = good_covector();
        let profile = DirectionalProfile::new(&c, xi).unwrap();
        let a = principal_symbol(&c, x, xi).unwrap();
        let records = transversal_records(&profile, x).unwrap();
        let mut b = Matrix9::zeros();
        for r in &records {
            let w = 2.0 * std::f64::consts::PI / (r.s1.abs() * r.r);
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        for l in 0..3 {
                            let proj = (if j == l { 1.0 } else { 0.0 }) - r.omega[j] * r.omega[l];
                            b[(3 * i + j, 3 * k + l)] += w * r.omega[i] * r.omega[k] * proj;
                        }
                    }
                }
            }
        }
        assert!((a - b).norm() < 1e-10 * a.norm());
    }

    #[test]
    fn symbol_homogeneous_degree_minus_one() {
        let c = helix();
        let (x, xi) = good_covector();
        let a1 = principal_symbol(&c, x, xi).unwrap();
        let a2 = principal_symbol(&c, x, vec3::scale(xi, 2.0)).unwrap();
        assert!((a2 * 2.0 - a1).norm() < 1e-12 * a1.norm());
    }

    #[test]
    fn symbol_annihilates_complement() {
        let c = helix();
        let (x, xi) = good_covector();
        let a = principal_symbol(&c, x, xi).unwrap();
        // xi (x) e_j and the identity lie in the kernel
        for j in 0..3 {
            let mut ej = [0.0; 3];
            ej[j] = 1.0;
            let v = flatten_outer(xi, ej);
            assert!((a * v).norm() < 1e-12 * a.norm());
        }
        let mut id = Vector9::zeros();
        for i in 0..3 {
            id[3 * i + i] = 1.0;
        }
        assert!((a * id).norm() < 1e-12 * a.norm());
    }

    #[test]
    fn symbol_rank_five_at_good_covector() {
        let (x, xi) = good_covector();
        let a = principal_symbol(&helix(), x, xi).unwrap();
        let sv = a.svd(false, false).singular_values;
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|p, q| q.total_cmp(p));
        assert!(s[4] > 1e-6 * s[0], "sv {s:?}");
        assert!(s[5] < 1e-10 * s[0], "sv {s:?}");
    }

    #[test]
    fn basis5_orthonormal_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let xi = vec3::normalize([
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0f64),
            ])
            .unwrap();
            let (b, cert) = basis5(xi).unwrap();
            assert!(cert > 0.99, "cert {cert}");
            assert!((b.transpose() * b - SMatrix::<f64, 5, 5>::identity()).norm() < 1e-10);
            let pi = sol_projector(xi).unwrap();
            assert!((pi * b - b).norm() < 1e-10);
        }
    }

    #[test]
    fn parametrix_inverts_on_solenoidal_subspace() {
        let c = helix();
        let (x, xi) = good_covector();
        let a = principal_symbol(&c, x, xi).unwrap();
        let b = parametrix_symbol(&c, x, xi).unwrap();
        let pi = sol_projector(xi).unwrap();
        assert!((b * a - pi).norm() < 1e-10, "defect {}", (b * a - pi).norm());
        assert!((a * b - pi).norm() < 1e-10);
        // B0 maps into S(xi)
        assert!((pi * b - b).norm() < 1e-10);
    }

    #[test]
    fn parametrix_homogeneous_degree_plus_one() {
        let c = helix();
        let (x, xi) = good_covector();
        let b1 = parametrix_symbol(&c, x, xi).unwrap();
        let b2 = parametrix_symbol(&c, x, vec3::scale(xi, 3.0)).unwrap();
        assert!((b2 - b1 * 3.0).norm() < 1e-9 * b2.norm());
    }

    #[test]
    fn circle_symbol_rank_deficient() {
        // a planar circle gives at most two chords: never elliptic
        let c = Curve::Circle { radius: 2.0 };
        let x = [0.3, 0.1, -0.2];
        let xi = vec3::normalize([0.8, 0.1, 0.5]).unwrap();
        assert!(matches!(
            parametrix_symbol(&c, x, xi),
            Err(Error::RankDeficient { .. })
        ));
        assert!(matches!(
            ellipticity_check(&c, x, xi, 1),
            Err(Error::NotElliptic { .. })
        ));
    }

    #[test]
    fn ellipticity_certificate_at_good_covector() {
        let (x, xi) = good_covector();
        let rep = ellipticity_check(&helix(), x, xi, 1).unwrap();
        assert!(rep.n_transversal >= 3);
        assert!(rep.min_singular_value > ELLIPTIC_MIN_SV, "{}", rep.min_singular_value);
        assert!(rep.min_quadratic_form > 0.0, "{}", rep.min_quadratic_form);
        for d in &rep.frame_dets {
            assert!((d - 1.0).abs() < 1e-12);
        }
        for d in &rep.pair_dets {
            assert!(d.abs() > TAU_INDEP && d.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn pair_determinants_match_chord_angles() {
        // chords lie in the plane normal to xi0; the in-plane determinant of a
        // pair equals sin of the angle between them, and the frame determinant
        // is exactly 1
        let (x, xi) = good_covector();
        let rep = ellipticity_check(&helix(), x, xi, 1).unwrap();
        let curve = helix();
        let profile = DirectionalProfile::new(&curve, xi).unwrap();
        let records = transversal_records(&profile, x).unwrap();
        // recompute the first pair determinant from the raw angle
        assert!(records.len() >= 2);
        for d in &rep.pair_dets {
            // |det| = |sin(angle)| = |omega_i x omega_j| for coplanar unit chords
            assert!(d.abs() <= 1.0 + 1e-12);
        }
        let cr = vec3::norm(vec3::cross(records[0].omega, records[1].omega));
        assert!((rep.pair_dets[0].abs() - cr).abs() < 1e-10);
    }

    #[test]
    fn ellipticity_seed_stable() {
        let (x, xi) = good_covector();
        let a = ellipticity_check(&helix(), x, xi, 42).unwrap();
        let b = ellipticity_check(&helix(), x, xi, 42).unwrap();
        assert_eq!(a.min_quadratic_form, b.min_quadratic_form);
        assert_eq!(a.min_singular_value, b.min_singular_value);
    }

    #[test]
    fn quadratic_form_bounded_by_extreme_eigenvalues() {
        let (x, xi) = good_covector();
        let rep = ellipticity_check(&helix(), x, xi, 7).unwrap();
        let a = principal_symbol(&helix(), x, xi).unwrap();
        let eig = a.symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        // smallest nonzero eigenvalue (rank 5: four zeros below it)
        let lam_min = ev[4];
        let lam_max = ev[8];
        assert!(rep.min_quadratic_form >= lam_min - 1e-9);
        assert!(rep.min_quadratic_form <= lam_max + 1e-9);
    }

    #[test]
    fn angle_system_determinants_and_rank() {
        let rep = ellipticity_check_angles([0.3, 1.4, 2.6], 0.7).unwrap();
        assert!((rep.pair_det - (0.3f64 - 1.4).sin()).abs() < 1e-12);
        assert!((rep.rotation_det - 1.0).abs() < 1e-12);
        assert!(rep.min_singular_value > 1e-8);
    }

    #[test]
    fn angle_system_rejects_parallel_chords() {
        assert!(matches!(
            ellipticity_check_angles([0.3, 0.3 + std::f64::consts::PI, 1.0], 0.0),
            Err(Error::Admissibility { .. })
        ));
        assert!(ellipticity_check_angles([0.3, f64::NAN, 1.0], 0.0).is_err());
    }
}
