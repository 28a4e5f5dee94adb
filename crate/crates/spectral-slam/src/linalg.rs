//! Small dense linear algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Singular values of `a`, descending.
pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    a.clone().svd(false, false).singular_values
}

/// Minimum-norm least squares solution of `a x = b` via SVD, with a
/// relative cutoff on small singular values.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(b, eps).expect("SVD solve with U and V computed")
}

/// Moore-Penrose pseudo-inverse with a relative singular value cutoff.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.pseudo_inverse(eps).expect("U and V computed")
}

/// Ratio of largest to smallest singular value.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = singular_values(a);
    let smallest = sv[sv.len() - 1];
    if smallest == 0.0 {
        f64::INFINITY
    } else {
        sv[0] / smallest
    }
}

/// Orthonormal basis for the column space of `a` (thin QR).
pub fn orthonormal_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = a.clone().qr();
    qr.q()
}

/// Principal angles (radians, ascending) between the column spaces of two
/// matrices with the same row count.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = orthonormal_columns(a);
    let qb = orthonormal_columns(b);
    let cosines = singular_values(&(qa.transpose() * qb));
    let mut angles: Vec<f64> = cosines.iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect();
    angles.sort_by(|x, y| x.partial_cmp(y).unwrap());
    angles
}

/// `|| sin Psi ||_2`: the sine of the largest principal angle.
pub fn sin_largest_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    principal_angles(a, b)
        .last()
        .map(|t| t.sin())
        .unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lstsq_recovers_exact_solution() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let x_true = DMatrix::from_row_slice(2, 1, &[2.0, -3.0]);
        let b = &a * &x_true;
        let x = lstsq(&a, &b);
        assert_relative_eq!(x[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(x[(1, 0)], -3.0, epsilon = 1e-12);
    }

    #[test]
    fn principal_angles_of_rotated_plane() {
        // xy-plane vs a plane rotated 30 degrees about the x axis.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let t = 30f64.to_radians();
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, t.cos(), 0.0, t.sin()]);
        let angles = principal_angles(&a, &b);
        assert_relative_eq!(angles[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(angles[1], t, epsilon = 1e-12);
        assert_relative_eq!(sin_largest_principal_angle(&a, &b), t.sin(), epsilon = 1e-12);
    }
}
