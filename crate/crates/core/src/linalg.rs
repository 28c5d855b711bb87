//! Small dense complex linear algebra on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

pub fn cmatrix(rows: &[Vec<Complex64>]) -> CMatrix {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    CMatrix::from_fn(n, m, |i, j| rows[i][j])
}

pub fn to_rows(m: &CMatrix) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Solves `a x = b`; `None` when `a` is numerically singular.
pub fn solve(a: &CMatrix, b: &[Complex64]) -> Option<Vec<Complex64>> {
    let lu = a.clone().lu();
    let rhs = DVector::from_column_slice(b);
    lu.solve(&rhs).map(|x| x.iter().copied().collect()).filter(|x: &Vec<Complex64>| x.iter().all(|z| z.is_finite()))
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Takagi factorization of a complex symmetric matrix: `a = U Σ Uᵀ` with `U`
/// unitary and `Σ` nonnegative diagonal, singular values sorted descending.
///
/// Uses the real symmetric embedding `[[X, Y], [Y, -X]]` of `a = X + iY`:
/// its eigenpairs with positive eigenvalue σ, written `(p, q)`, give Takagi
/// vectors `u = p + i q` with `a ū = σ u`. Eigenvectors from distinct ±σ
/// eigenspaces are orthogonal, which makes the recovered columns unitary
/// even for repeated σ.
pub fn takagi(a: &CMatrix) -> (CMatrix, Vec<f64>) {
    let n = a.nrows();
    let m = DMatrix::<f64>::from_fn(2 * n, 2 * n, |i, j| {
        let (bi, ii) = (i / n, i % n);
        let (bj, jj) = (j / n, j % n);
        let z = a[(ii, jj)];
        match (bi, bj) {
            (0, 0) => z.re,
            (1, 1) => -z.re,
            _ => z.im,
        }
    });
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .partial_cmp(&eig.eigenvalues[x])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });
    let mut u = CMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (col, &idx) in order.iter().take(n).enumerate() {
        sigma.push(eig.eigenvalues[idx].max(0.0));
        let vec = eig.eigenvectors.column(idx);
        for r in 0..n {
            u[(r, col)] = Complex64::new(vec[r], vec[n + r]);
        }
    }
    (u, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn takagi_reconstructs() {
        let a = cmatrix(&[
            vec![c(1.0, 2.0), c(0.5, -1.0), c(0.0, 0.3)],
            vec![c(0.5, -1.0), c(-2.0, 0.1), c(1.0, 1.0)],
            vec![c(0.0, 0.3), c(1.0, 1.0), c(0.2, -0.7)],
        ]);
        let (u, s) = takagi(&a);
        let sig = CMatrix::from_diagonal(&DVector::from_iterator(3, s.iter().map(|&x| c(x, 0.0))));
        let rec = &u * sig * u.transpose();
        assert!(max_abs(&(rec - &a)) < 1e-12);
        let id = u.adjoint() * &u;
        assert!(max_abs(&(id - CMatrix::identity(3, 3))) < 1e-12);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn takagi_of_scaled_identity() {
        let a = CMatrix::identity(2, 2) * c(0.0, -1.0);
        let (u, s) = takagi(&a);
        assert!((s[0] - 1.0).abs() < 1e-14 && (s[1] - 1.0).abs() < 1e-14);
        let rec = &u * u.transpose();
        assert!(max_abs(&(rec - &a)) < 1e-12);
    }

    #[test]
    fn singular_solve_is_none() {
        let a = cmatrix(&[vec![c(1.0, 0.0), c(2.0, 0.0)], vec![c(2.0, 0.0), c(4.0, 0.0)]]);
        assert!(solve(&a, &[c(1.0, 0.0), c(0.0, 0.0)]).is_none());
    }
}
