use nalgebra::{DMatrix, DVector};

/// Relative singular value cutoff of the dense solve.
pub const SVD_RCOND: f64 = 1e-8;

/// Minimum-norm solution of `N x = g` through a truncated SVD. An all-zero
/// matrix yields `x = 0`.
pub fn solve_dense_block(normal: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let m = rhs.len();
    if m == 0 || normal.amax() == 0.0 {
        return DVector::zeros(m);
    }
    let svd = normal.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = SVD_RCOND * sigma_max;
    let (u, vt) = match (&svd.u, &svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return DVector::zeros(m),
    };
    let mut coeffs = u.transpose() * rhs;
    for (c, s) in coeffs.iter_mut().zip(svd.singular_values.iter()) {
        *c = if *s > cutoff { *c / s } else { 0.0 };
    }
    vt.transpose() * coeffs
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hand_solved_three_by_three() {
        // diag(2, 4, 5) x = (2, 2, 10) -> (1, 0.5, 2)
        let n = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0, 5.0]));
        let x = solve_dense_block(&n, &DVector::from_vec(vec![2.0, 2.0, 10.0]));
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(x[2], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_gives_minimum_norm() {
        let n = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let x = solve_dense_block(&n, &DVector::from_vec(vec![2.0, 2.0]));
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-12);
        let zero = solve_dense_block(&DMatrix::zeros(3, 3), &DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(zero, DVector::zeros(3));
    }
}
