//! Numerical-rank, least-squares, and nullspace helpers shared by the
//! analysis modules.
//!
//! Singular values are computed through the Hermitian dilation
//! `[[0, M], [M^H, 0]]`, whose eigenvalues are exactly the pairs `+-sigma_i`:
//! the symmetric eigensolver resolves small singular values to machine
//! precision where a bidiagonalization SVD can lose accuracy on structured
//! near-rank-deficient inputs. Rank conventions: the exact-analysis cutoff is
//! `scale * max(rows, cols) * rel` with `rel = 1e-12` and `scale` the largest
//! singular value (optionally floored by the parent problem's scale when
//! ranking a submatrix); the empirical Gramian uses the looser
//! `sigma_max * 1e-6` since it sits on a finite-difference noise floor.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Default relative cutoff for exact (symbolic/spectral) rank decisions.
pub const RANK_REL_EXACT: f64 = 1e-12;
/// Default relative cutoff for the empirical Gramian.
pub const RANK_REL_GRAMIAN: f64 = 1e-6;

/// Singular values of a complex matrix, descending.
pub fn singular_values_c(m: &DMatrix<Complex64>) -> Vec<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let size = rows + cols;
    let mut h = DMatrix::<Complex64>::zeros(size, size);
    for r in 0..rows {
        for c in 0..cols {
            h[(r, rows + c)] = m[(r, c)];
            h[(rows + c, r)] = m[(r, c)].conj();
        }
    }
    // Eigenvalues of the dilation are +-sigma_i plus |rows - cols| zeros; the
    // top min(rows, cols) of the signed spectrum are the singular values.
    let mut sv: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    sv.truncate(rows.min(cols));
    sv.iter_mut().for_each(|v| *v = v.max(0.0));
    sv
}

/// Singular values of a real matrix, descending.
pub fn singular_values_r(m: &DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let size = rows + cols;
    let mut h = DMatrix::<f64>::zeros(size, size);
    for r in 0..rows {
        for c in 0..cols {
            h[(r, rows + c)] = m[(r, c)];
            h[(rows + c, r)] = m[(r, c)];
        }
    }
    let mut sv: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    sv.truncate(rows.min(cols));
    sv.iter_mut().for_each(|v| *v = v.max(0.0));
    sv
}

fn rank_with_cutoff(sv: &[f64], cutoff: f64) -> usize {
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Rank of a complex matrix with cutoff `sigma_max * max(dims) * rel`.
pub fn numerical_rank_c(m: &DMatrix<Complex64>, rel: f64) -> (usize, Vec<f64>) {
    numerical_rank_c_floored(m, rel, 0.0)
}

/// Rank with the cutoff scale floored by `scale_floor`: used when `m` is a
/// slice of a larger problem, so that a submatrix made of pure numerical
/// noise does not promote its own noise to signal.
pub fn numerical_rank_c_floored(
    m: &DMatrix<Complex64>,
    rel: f64,
    scale_floor: f64,
) -> (usize, Vec<f64>) {
    let sv = singular_values_c(m);
    let smax = sv.first().copied().unwrap_or(0.0).max(scale_floor);
    let cutoff = smax * m.nrows().max(m.ncols()) as f64 * rel;
    (rank_with_cutoff(&sv, cutoff), sv)
}

/// Rank of a real matrix with cutoff `sigma_max * max(dims) * rel`.
pub fn numerical_rank_r(m: &DMatrix<f64>, rel: f64) -> (usize, Vec<f64>) {
    let sv = singular_values_r(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    let cutoff = smax * m.nrows().max(m.ncols()) as f64 * rel;
    (rank_with_cutoff(&sv, cutoff), sv)
}

/// Rank with a cutoff relative to the largest singular value only
/// (`sigma_max * rel`); the convention for noisy estimators.
pub fn numerical_rank_noisy(m: &DMatrix<f64>, rel: f64) -> (usize, Vec<f64>) {
    let sv = singular_values_r(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    (rank_with_cutoff(&sv, smax * rel), sv)
}

/// Least-squares solution of `A c = b` via SVD.
/// Returns the solution and the residual norm `||A c - b||_2`.
pub fn lstsq_c(a: &DMatrix<Complex64>, b: &DVector<Complex64>) -> (DVector<Complex64>, f64) {
    let svd = a.clone().svd(true, true);
    let eps = svd.singular_values.max() * a.nrows().max(a.ncols()) as f64 * f64::EPSILON;
    let c = svd
        .solve(b, eps)
        .expect("SVD solve with U and V computed")
        .column(0)
        .into_owned();
    let residual = (a * &c - b).norm();
    (c, residual)
}

/// The `count` left singular vectors of `m` with the smallest singular
/// values, each returned with its directly evaluated residual `||M^H u||`.
///
/// Computed from the Hermitian eigendecomposition of `M M^H`; the residual is
/// re-evaluated against `M` itself, so callers can trust it even though the
/// squared spectrum cannot resolve tiny singular values.
pub fn smallest_left_singular_vectors(
    m: &DMatrix<Complex64>,
    count: usize,
) -> Vec<(DVector<Complex64>, f64)> {
    let h = m * m.adjoint();
    let se = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..se.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| {
        se.eigenvalues[i]
            .partial_cmp(&se.eigenvalues[j])
            .expect("finite eigenvalues")
    });
    order
        .into_iter()
        .take(count)
        .map(|i| {
            let u = se.eigenvectors.column(i).into_owned();
            let residual = (m.adjoint() * &u).norm();
            (u, residual)
        })
        .collect()
}

/// Modified Gram-Schmidt. Returns `None` if the vectors are numerically
/// dependent (a norm collapses below `1e-12` of its original size).
pub fn gram_schmidt(vectors: &[DVector<Complex64>]) -> Option<Vec<DVector<Complex64>>> {
    let mut basis: Vec<DVector<Complex64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let original = v.norm();
        let mut w = v.clone();
        for b in &basis {
            let proj = b.dotc(&w);
            w -= b * proj;
        }
        // Second pass for orthogonality to working precision.
        for b in &basis {
            let proj = b.dotc(&w);
            w -= b * proj;
        }
        let norm = w.norm();
        if norm <= 1e-12 * original.max(1.0) {
            return None;
        }
        basis.push(w / Complex64::new(norm, 0.0));
    }
    Some(basis)
}

/// 2-norm condition number.
pub fn condition_number_c(m: &DMatrix<Complex64>) -> f64 {
    let sv = singular_values_c(m);
    match (sv.first(), sv.last()) {
        (Some(&smax), Some(&smin)) if smin > 0.0 => smax / smin,
        _ => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_a_rank_one_matrix() {
        let m = DMatrix::<f64>::from_row_slice(3, 3, &[1., 2., 3., 2., 4., 6., 3., 6., 9.]);
        let (rank, _) = numerical_rank_r(&m, RANK_REL_EXACT);
        assert_eq!(rank, 1);
    }

    #[test]
    fn dilation_singular_values_match_on_a_known_case() {
        let m = DMatrix::<f64>::from_row_slice(2, 3, &[3., 0., 0., 0., 2., 0.]);
        let sv = singular_values_r(&m);
        assert_eq!(sv.len(), 2);
        assert!((sv[0] - 3.0).abs() < 1e-12);
        assert!((sv[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dilation_survives_the_structured_near_rank_one_case() {
        // ones(3,3) + 1e-15 I: singular values {3, ~0, ~0}. A naive
        // bidiagonalization SVD miscomputes this matrix badly.
        let eps = 1e-15;
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[1. + eps, 1., 1., 1., 1. + eps, 1., 1., 1., 1. + eps],
        );
        let sv = singular_values_r(&m);
        assert!((sv[0] - 3.0).abs() < 1e-12, "sigma_max {}", sv[0]);
        assert!(sv[1] < 1e-12);
        let (rank, _) = numerical_rank_r(&m, RANK_REL_EXACT);
        assert_eq!(rank, 1);
    }

    #[test]
    fn complex_rank() {
        let i = Complex64::new(0.0, 1.0);
        let one = Complex64::new(1.0, 0.0);
        // Second column is i times the first: rank 1.
        let m = DMatrix::from_row_slice(2, 2, &[one, i, i, -one]);
        let (rank, _) = numerical_rank_c(&m, RANK_REL_EXACT);
        assert_eq!(rank, 1);
    }

    #[test]
    fn floored_rank_ignores_pure_noise_submatrices() {
        let eps = Complex64::new(3e-13, 0.0);
        let m = DMatrix::from_row_slice(1, 2, &[eps, eps]);
        let (rank, _) = numerical_rank_c(&m, RANK_REL_EXACT);
        assert_eq!(rank, 1, "self-relative cutoff keeps the noise");
        let (rank, _) = numerical_rank_c_floored(&m, RANK_REL_EXACT, 2.0);
        assert_eq!(rank, 0, "parent-scale floor suppresses it");
    }

    #[test]
    fn least_squares_recovers_exact_coefficients() {
        let a = DMatrix::from_fn(6, 2, |r, c| {
            Complex64::new((r as f64 + 1.0).powi(c as i32 + 1), 0.0)
        });
        let truth = DVector::from_vec(vec![Complex64::new(2.0, 0.0), Complex64::new(-0.5, 0.0)]);
        let b = &a * &truth;
        let (c, residual) = lstsq_c(&a, &b);
        assert!((c - truth).norm() < 1e-10);
        assert!(residual < 1e-10);
    }

    #[test]
    fn smallest_left_singular_vectors_find_the_left_nullspace() {
        // ones(3,3) + eps I at the structured degeneracy.
        let eps = 1e-15;
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[1. + eps, 1., 1., 1., 1. + eps, 1., 1., 1., 1. + eps],
        )
        .map(|v| Complex64::new(v, 0.0));
        let vecs = smallest_left_singular_vectors(&m, 2);
        assert_eq!(vecs.len(), 2);
        for (u, residual) in &vecs {
            assert!(*residual < 1e-12, "residual {residual}");
            assert!((u.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_schmidt_orthonormalizes() {
        let v1 = DVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)]);
        let v2 = DVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]);
        let basis = gram_schmidt(&[v1, v2]).unwrap();
        assert!((basis[0].norm() - 1.0).abs() < 1e-14);
        assert!((basis[1].norm() - 1.0).abs() < 1e-14);
        assert!(basis[0].dotc(&basis[1]).norm() < 1e-14);

        let w1 = DVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        let w2 = w1.clone() * Complex64::new(2.0, 0.0);
        assert!(gram_schmidt(&[w1, w2]).is_none());
    }
}
