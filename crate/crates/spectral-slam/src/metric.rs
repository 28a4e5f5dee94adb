//! Closed-form metric upgrade: turn an arbitrary linear-frame
//! factorization `Y = U V` into metrically correct landmark and state
//! matrices, determined up to an orthogonal transform, without anchors.
//!
//! The sequence fits an implicit quadric to the rows of `U` and then
//! changes coordinates until the quadric becomes the canonical paraboloid
//! the landmark rows live on:
//!
//! i.   find the direction in which `U` is constant and split it off;
//! ii.  fit an implicit quadric to the remaining three coordinates;
//! iii. rotate so the quadric's Hessian is diagonal;
//! iv.  zero the weakest Hessian axis and solve the surface explicitly;
//! v.   translate and rescale so the quadratic part becomes spherical
//!      with coefficient one half;
//! vi.  fix the remaining scale from the state side so the constant
//!      state row has mean one.
//!
//! Each step is a right-multiplication of `U` by an invertible `T_k`
//! (and `T_k^{-1}` on `V`), so the product `U V` is preserved throughout.
//! Internally the steps use the ordering `[1, r1, r2, q]`; the final
//! output is permuted back to the crate's canonical ordering.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::linalg;
use crate::measurement::{MatrixKind, MeasurementMatrix};
use crate::spectral::{decode_solution, reduce_top_block, FactoredModel, Frame, SlamSolution};

/// Implicit quadric `0 = r^T H r / 2 + l^T r + b00` fitted to point rows.
#[derive(Debug, Clone)]
pub struct QuadricFit {
    pub hessian: Matrix3<f64>,
    pub linear: Vector3<f64>,
    pub constant: f64,
    /// Smallest singular value of the monomial matrix.
    pub residual: f64,
}

/// Outcome of the rank test on the second-order monomial matrix.
#[derive(Debug, Clone)]
pub struct NonsingularityReport {
    pub rank_estimate: usize,
    pub sigma9_over_sigma1: f64,
    pub sigma10_over_sigma1: f64,
    /// Exact rank-9 pattern: sigma9 healthy and sigma10 negligible.
    pub ok: bool,
}

/// Singular-value cutoff used by the nonsingularity rank estimate.
pub const NONSINGULAR_SIGMA9: f64 = 1e-6;
/// Cutoff below which sigma10 counts as numerically zero.
pub const NONSINGULAR_SIGMA10: f64 = 1e-8;


fn dyn4(m: &Matrix4<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(4, 4, m.as_slice())
}

fn dyn3(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 3, m.as_slice())
}

/// Rank test of the `n x 10` second-order monomial matrix built from
/// rows of 4 coordinates. Nonsingular configurations have rank exactly 9.
pub fn check_nonsingular(points: &DMatrix<f64>) -> Result<NonsingularityReport> {
    if points.ncols() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: points.ncols(),
        });
    }
    if points.nrows() < 9 {
        return Err(Error::TooFewPoints {
            needed: 9,
            got: points.nrows(),
        });
    }
    let n = points.nrows();
    let mut monomials = DMatrix::zeros(n, 10);
    for i in 0..n {
        let mut col = 0;
        for j in 0..4 {
            for k in j..4 {
                monomials[(i, col)] = points[(i, j)] * points[(i, k)];
                col += 1;
            }
        }
    }
    let sv = linalg::singular_values(&monomials);
    let s1 = sv[0].max(f64::MIN_POSITIVE);
    let r9 = sv[8] / s1;
    let r10 = sv[9] / s1;
    let rank_estimate = sv.iter().filter(|&&s| s / s1 > NONSINGULAR_SIGMA9).count();
    Ok(NonsingularityReport {
        rank_estimate,
        sigma9_over_sigma1: r9,
        sigma10_over_sigma1: r10,
        ok: r9 > NONSINGULAR_SIGMA9 && r10 < NONSINGULAR_SIGMA10,
    })
}

/// Reduce a rank-7 left factor to the 4-dimensional positional subframe
/// by removing the nullspace of its top block.
pub fn reduce_7_to_4(u_top: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let reduction = reduce_top_block(u_top).map_err(|_| Error::NoNullspace)?;
    Ok((reduction.basis, reduction.restriction))
}

/// Step i: linearly transform the rows of `U` into `(~1, r1, r2, r3)`.
pub fn step_i_normalize_first_coordinate(u: &DMatrix<f64>) -> Result<(DMatrix<f64>, Matrix4<f64>)> {
    if u.ncols() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: u.ncols(),
        });
    }
    let n = u.nrows();
    let ones = DMatrix::from_element(n, 1, 1.0);
    let a = linalg::lstsq(u, &ones);
    let residual = (u * &a - &ones).norm() / (n as f64).sqrt();
    if residual > 1e-3 {
        return Err(Error::NoConstantDirection { residual });
    }

    // Orthonormal basis of the nullspace of a^T, by Gram-Schmidt against
    // the unit a direction.
    let a_unit = a.column(0) / a.column(0).norm();
    let mut basis: Vec<DVector<f64>> = vec![a_unit.clone_owned()];
    for axis in 0..4 {
        if basis.len() == 4 {
            break;
        }
        let mut w = DVector::zeros(4);
        w[axis] = 1.0;
        for q in &basis {
            let dot = q.dot(&w);
            w -= q * dot;
        }
        let norm = w.norm();
        if norm > 1e-8 {
            basis.push(w / norm);
        }
    }
    debug_assert_eq!(basis.len(), 4);

    let mut t1 = Matrix4::zeros();
    for row in 0..4 {
        t1[(row, 0)] = a[(row, 0)];
        for col in 1..4 {
            t1[(row, col)] = basis[col][row];
        }
    }
    Ok((u * dyn4(&t1), t1))
}

/// Step ii: fit an implicit quadric to rows of the `n x 3` matrix `R`.
/// The coefficient vector is the right singular vector of the monomial
/// matrix for its smallest singular value.
pub fn step_ii_fit_quadric(r: &DMatrix<f64>) -> Result<QuadricFit> {
    let n = r.nrows();
    if n < 9 {
        return Err(Error::TooFewPoints { needed: 9, got: n });
    }
    // Monomials r_j r_k for 0 <= j <= k <= 3 with r_0 = 1:
    // [1, r1, r2, r3, r1^2, r1 r2, r1 r3, r2^2, r2 r3, r3^2]
    let mut monomials = DMatrix::zeros(n, 10);
    for i in 0..n {
        let (r1, r2, r3) = (r[(i, 0)], r[(i, 1)], r[(i, 2)]);
        let row = [
            1.0,
            r1,
            r2,
            r3,
            r1 * r1,
            r1 * r2,
            r1 * r3,
            r2 * r2,
            r2 * r3,
            r3 * r3,
        ];
        for (col, v) in row.iter().enumerate() {
            monomials[(i, col)] = *v;
        }
    }
    let svd = monomials.svd(false, true);
    let sv = &svd.singular_values;
    let v_t = svd.v_t.expect("v_t requested");
    let b = v_t.row(9);

    // 0 = b0 + b1 r1 + b2 r2 + b3 r3 + b4 r1^2 + b5 r1 r2 + b6 r1 r3
    //       + b7 r2^2 + b8 r2 r3 + b9 r3^2
    // written as r^T H r / 2 + l^T r + b00 with H the true Hessian
    // (diagonal entries 2 b_jj, off-diagonal b_jk).
    let hessian = Matrix3::new(
        2.0 * b[4],
        b[5],
        b[6],
        b[5],
        2.0 * b[7],
        b[8],
        b[6],
        b[8],
        2.0 * b[9],
    );
    Ok(QuadricFit {
        hessian,
        linear: Vector3::new(b[1], b[2], b[3]),
        constant: b[0],
        residual: sv[9],
    })
}

/// Step iii: rotate coordinates so the quadric Hessian becomes diagonal.
/// Returns the rotated points, rotated linear part, diagonal, and `T_2`.
pub fn step_iii_diagonalize(
    fit: &QuadricFit,
    r: &DMatrix<f64>,
) -> (DMatrix<f64>, Vector3<f64>, Vector3<f64>, Matrix4<f64>) {
    let off_diag = (fit.hessian - Matrix3::from_diagonal(&fit.hessian.diagonal())).norm();
    let (m, h_diag) = if off_diag <= 1e-14 * fit.hessian.norm().max(f64::MIN_POSITIVE) {
        (Matrix3::identity(), fit.hessian.diagonal())
    } else {
        let eigen = nalgebra::SymmetricEigen::new(fit.hessian);
        (eigen.eigenvectors, eigen.eigenvalues)
    };
    let ell = m.transpose() * fit.linear;
    let mut t2 = Matrix4::identity();
    t2.view_mut((1, 1), (3, 3)).copy_from(&m);
    (r * dyn3(&m), ell, h_diag, t2)
}

/// Steps iv and v combined: pick the weakest Hessian axis, write the
/// quadric as an explicit function of the other two coordinates, then
/// translate and rescale until the rows satisfy `c1 ~ 1` and
/// `c4 ~ (c2^2 + c3^2) / 2`.
///
/// `u` is the full `n x 4` factor after steps i and iii (first column the
/// constant coordinate, the rest the rotated `R'`).
pub fn step_iv_v_explicit_and_normalize(
    u: &DMatrix<f64>,
    h_diag: &Vector3<f64>,
    ell: &Vector3<f64>,
    b00: f64,
) -> Result<(DMatrix<f64>, Matrix4<f64>, f64)> {
    // Zero the minimal-|H'_jj| axis; lowest index wins ties.
    let mut j_min = 0;
    for j in 1..3 {
        if h_diag[j].abs() < h_diag[j_min].abs() {
            j_min = j;
        }
    }

    // Reorder so the zeroed axis is last.
    let mut perm = Matrix4::<f64>::identity();
    if j_min != 2 {
        perm.swap_columns(j_min + 1, 3);
    }
    let mut h = *h_diag;
    let mut l = *ell;
    if j_min != 2 {
        h.swap_rows(j_min, 2);
        l.swap_rows(j_min, 2);
    }

    if l[2].abs() <= 1e-10 {
        return Err(Error::DegenerateAxis(
            "linear coefficient of the zeroed axis vanishes".into(),
        ));
    }
    let h_scale: f64 = h[0].abs().max(h[1].abs());
    if h_scale <= 0.0 || h[0].abs() < 1e-12 * h_scale || h[1].abs() < 1e-12 * h_scale {
        return Err(Error::DegenerateAxis(
            "quadratic coefficient of a kept axis vanishes".into(),
        ));
    }

    // Orient the zeroed axis so the explicit surface opens upward,
    // making the scale factors real.
    let mut flip = Matrix4::<f64>::identity();
    if -h[0] / l[2] < 0.0 {
        flip[(3, 3)] = -1.0;
        l[2] = -l[2];
    }
    if -h[0] / l[2] < 0.0 || -h[1] / l[2] < 0.0 {
        return Err(Error::DegenerateAxis(
            "quadric is a saddle in the kept axes".into(),
        ));
    }

    // Translation killing the linear and constant terms, then scales
    // bringing the quadratic coefficients to 1/2.
    let c1 = l[0] / h[0];
    let c2 = l[1] / h[1];
    let c3 = (0.5 * h[0] * c1 * c1 + 0.5 * h[1] * c2 * c2 - l[0] * c1 - l[1] * c2 + b00) / l[2];
    let s1 = (-h[0] / l[2]).sqrt();
    let s2 = (-h[1] / l[2]).sqrt();

    let translate_scale = Matrix4::new(
        1.0,
        s1 * c1,
        s2 * c2,
        c3,
        0.0,
        s1,
        0.0,
        0.0,
        0.0,
        0.0,
        s2,
        0.0,
        0.0,
        0.0,
        0.0,
        1.0,
    );
    let t3 = perm * flip * translate_scale;
    let u_prime = u * dyn4(&t3);

    let mut max_residual: f64 = 0.0;
    for i in 0..u_prime.nrows() {
        let row = u_prime.row(i);
        let quad = (row[3] - 0.5 * (row[1] * row[1] + row[2] * row[2])).abs();
        max_residual = max_residual.max(quad).max((row[0] - 1.0).abs());
    }
    Ok((u_prime, t3, max_residual))
}

/// Step vi: choose the scale `mu` so the constant state row has mean one,
/// then permute both factors back to the canonical ordering.
pub fn step_vi_scale_mu(
    u_prime: &DMatrix<f64>,
    v_prime: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Matrix4<f64>)> {
    let mut u = u_prime.clone();
    let mut v = v_prime.clone();
    let mut mean = v.row(3).mean();
    if mean <= 0.0 {
        // Stated policy: flip the quadratic coordinate jointly and retry.
        u.column_mut(3).neg_mut();
        v.row_mut(3).neg_mut();
        mean = v.row(3).mean();
        if mean <= 0.0 {
            return Err(Error::NegativeScale { mean });
        }
    }
    let mu = mean.sqrt();
    let t4 = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, mu, mu, mu * mu));
    let mut c = &u * dyn4(&t4);
    let t4_inv = Matrix4::from_diagonal(&nalgebra::Vector4::new(
        1.0,
        1.0 / mu,
        1.0 / mu,
        1.0 / (mu * mu),
    ));
    let mut x = dyn4(&t4_inv) * v;

    // Appendix ordering -> canonical ordering: swap coordinate 1 and 4.
    c.swap_columns(0, 3);
    x.swap_rows(0, 3);
    Ok((c, x, t4))
}

/// Full upgrade outcome, with the per-step transforms kept for
/// diagnostics.
#[derive(Debug, Clone)]
pub struct MetricUpgradeOutcome {
    pub solution: SlamSolution,
    pub transforms: [Matrix4<f64>; 4],
    /// Largest row residual against the explicit surface after step v.
    pub surface_residual: f64,
}

/// Metric upgrade of a factored measurement model (rank 4 or 7).
pub fn metric_upgrade(
    model: &FactoredModel,
    matrix: &MeasurementMatrix,
) -> Result<MetricUpgradeOutcome> {
    let n = matrix.landmark_ids.len();
    let (u4, v4) = match matrix.kind {
        MatrixKind::Rank4 => (model.u.clone(), model.latent_states()),
        MatrixKind::Rank7 => {
            let top = model.u.rows(0, n).into_owned();
            let (basis, restriction) = reduce_7_to_4(&top)?;
            (basis, restriction.transpose() * model.latent_states())
        }
    };
    let (c, x, transforms, surface_residual) = upgrade_factors(&u4, &v4)?;
    let solution = decode_solution(c, x, Frame::UpToOrthogonal, matrix);
    Ok(MetricUpgradeOutcome {
        solution,
        transforms,
        surface_residual,
    })
}

/// Steps i-vi on bare `U (n x 4)`, `V (4 x t)` factors.
pub fn upgrade_factors(
    u4: &DMatrix<f64>,
    v4: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, [Matrix4<f64>; 4], f64)> {
    let n = u4.nrows();
    let t = v4.ncols();
    if n < 9 || t < 9 {
        return Err(Error::SingularConfiguration(format!(
            "metric upgrade needs at least 9 landmarks and 9 time steps (got {n} and {t})"
        )));
    }
    let landmarks_report = check_nonsingular(u4)?;
    if landmarks_report.sigma9_over_sigma1 <= NONSINGULAR_SIGMA9 {
        return Err(Error::SingularConfiguration(format!(
            "landmark rows lie on an extra quadric (sigma9/sigma1 = {:.3e})",
            landmarks_report.sigma9_over_sigma1
        )));
    }
    let states_report = check_nonsingular(&v4.transpose())?;
    if states_report.sigma9_over_sigma1 <= NONSINGULAR_SIGMA9 {
        return Err(Error::SingularConfiguration(format!(
            "robot states lie on an extra quadric (sigma9/sigma1 = {:.3e})",
            states_report.sigma9_over_sigma1
        )));
    }

    let invert = |m: &Matrix4<f64>| -> Result<Matrix4<f64>> {
        m.try_inverse().ok_or_else(|| {
            Error::SingularConfiguration("step transform not invertible".into())
        })
    };

    let (u1, t1) = step_i_normalize_first_coordinate(u4)?;
    let v1 = dyn4(&invert(&t1)?) * v4;

    let r = u1.columns(1, 3).into_owned();
    let fit = step_ii_fit_quadric(&r)?;
    let (_, ell, h_diag, t2) = step_iii_diagonalize(&fit, &r);
    let u2 = &u1 * dyn4(&t2);
    let v2 = dyn4(&invert(&t2)?) * v1;

    let (u3, t3, surface_residual) =
        step_iv_v_explicit_and_normalize(&u2, &h_diag, &ell, fit.constant)?;
    let v3 = dyn4(&invert(&t3)?) * v2;

    let (c, x, t4) = step_vi_scale_mu(&u3, &v3)?;
    Ok((c, x, [t1, t2, t3, t4], surface_residual))
}
