//! Dense linear-algebra helpers shared by every module.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative residual tolerance for [`spectral_norm`].
pub const POWER_TOL: f64 = 1e-12;
/// Iteration cap for [`spectral_norm`].
pub const POWER_MAX_ITER: usize = 10_000;

/// Largest singular value by power iteration on `MᵀM`.
///
/// The iteration starts from the normalized all-ones vector and stops once
/// `‖MᵀMv − λv‖ ≤ tol·λ`. `MᵀM` is never formed; each sweep applies `M` and
/// then `Mᵀ`.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    power_iteration(m, POWER_TOL, POWER_MAX_ITER)
}

pub fn power_iteration(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::Empty("spectral norm of an empty matrix".into()));
    }
    if m.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let cols = m.ncols();
    let mut v = Vector::from_element(cols, 1.0 / (cols as f64).sqrt());
    // The all-ones start can lie in the null space (e.g. [1, -1]); fall back to
    // the basis vector of the heaviest column.
    if (m * &v).norm() == 0.0 {
        let heaviest = (0..cols)
            .max_by(|&a, &b| m.column(a).norm().total_cmp(&m.column(b).norm()))
            .unwrap_or(0);
        v = Vector::zeros(cols);
        v[heaviest] = 1.0;
    }

    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let w = m * &v;
        let z = m.tr_mul(&w);
        lambda = w.norm_squared();
        if lambda == 0.0 {
            return Ok(0.0);
        }
        residual = (&z - &v * lambda).norm() / lambda;
        if residual <= tol {
            return Ok(lambda.sqrt());
        }
        v = &z / z.norm();
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        estimate: lambda.sqrt(),
        residual,
        last_iterate: v.iter().copied().collect(),
    })
}

/// Largest singular value from a full dense SVD. Used for error metrics where
/// a convergence failure would be worse than the extra cost.
pub fn dense_spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Frobenius inner product `⟨X, Y⟩ = tr(XᵀY)`.
pub fn frobenius_dot(x: &Matrix, y: &Matrix) -> f64 {
    x.dot(y)
}

/// Spectral radius from the complex eigenvalues of the real Schur form.
pub fn spectral_radius(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|row| row.iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn identity_has_unit_norm() {
        let m = Matrix::identity(3, 3);
        assert!((spectral_norm(&m).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_norm_is_largest_abs_entry() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, -4.0]));
        assert!((spectral_norm(&m).unwrap() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn random_matrix_matches_svd() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = Matrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let svd = m.clone().svd(false, false).singular_values.max();
            let pi = spectral_norm(&m).unwrap();
            assert!((pi - svd).abs() <= 1e-9, "{pi} vs {svd}");
        }
    }

    #[test]
    fn null_space_start_vector_is_recovered() {
        let m = Matrix::from_row_slice(1, 2, &[1.0, -1.0]);
        assert!((spectral_norm(&m).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_and_empty() {
        assert_eq!(spectral_norm(&Matrix::zeros(2, 3)).unwrap(), 0.0);
        assert!(matches!(
            spectral_norm(&Matrix::zeros(0, 0)),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.999_999]));
        match power_iteration(&m, 1e-15, 3) {
            Err(Error::NoConvergence {
                iterations,
                last_iterate,
                ..
            }) => {
                assert_eq!(iterations, 3);
                assert_eq!(last_iterate.len(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let theta = 0.3f64;
        let a = Matrix::from_row_slice(
            2,
            2,
            &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
        ) * 0.5;
        assert!((spectral_radius(&a) - 0.5).abs() < 1e-12);
    }
}
