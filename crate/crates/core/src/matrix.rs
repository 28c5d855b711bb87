//! Square matrices of polynomials: determinant and adjugate by cofactor
//! expansion. Operator sizes in practice are small (N ≤ 6), where Laplace
//! expansion is exact and cheap enough.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::poly::CPoly;

#[derive(Clone, Debug, PartialEq)]
pub struct PolyMatrix {
    n: usize,
    dim: usize,
    entries: Vec<CPoly>,
}

impl PolyMatrix {
    /// Builds a matrix from rows; rejects ragged, non-square or mixed-dimension input.
    pub fn new(rows: Vec<Vec<CPoly>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidProblem("empty operator matrix".into()));
        }
        let dim = rows[0][0].dim();
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::InvalidProblem(format!(
                    "operator matrix is not square: row of length {} in a {n}-row matrix",
                    row.len()
                )));
            }
            for p in row {
                if p.dim() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: p.dim() });
                }
                entries.push(p);
            }
        }
        Ok(PolyMatrix { n, dim, entries })
    }

    pub fn scalar(p: CPoly) -> Self {
        PolyMatrix { n: 1, dim: p.dim(), entries: vec![p] }
    }

    pub fn diagonal(diag: Vec<CPoly>) -> Result<Self> {
        let n = diag.len();
        let dim = diag.first().map(CPoly::dim).unwrap_or(0);
        let mut rows = vec![vec![CPoly::zero(dim); n]; n];
        for (i, p) in diag.into_iter().enumerate() {
            rows[i][i] = p;
        }
        PolyMatrix::new(rows)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> &CPoly {
        &self.entries[i * self.n + j]
    }

    fn minor(&self, skip_row: usize, skip_col: usize) -> PolyMatrix {
        let n = self.n;
        let mut entries = Vec::with_capacity((n - 1) * (n - 1));
        for i in (0..n).filter(|&i| i != skip_row) {
            for j in (0..n).filter(|&j| j != skip_col) {
                entries.push(self.get(i, j).clone());
            }
        }
        PolyMatrix { n: n - 1, dim: self.dim, entries }
    }

    /// Exact determinant by Laplace expansion along the sparsest row.
    pub fn determinant(&self) -> CPoly {
        match self.n {
            0 => CPoly::constant(self.dim, Complex64::new(1.0, 0.0)),
            1 => self.entries[0].clone(),
            2 => &(self.get(0, 0) * self.get(1, 1)) - &(self.get(0, 1) * self.get(1, 0)),
            n => {
                let row = (0..n)
                    .max_by_key(|&i| (0..n).filter(|&j| self.get(i, j).is_zero()).count())
                    .unwrap_or(0);
                let mut acc = CPoly::zero(self.dim);
                for j in 0..n {
                    let a = self.get(row, j);
                    if a.is_zero() {
                        continue;
                    }
                    let term = a * &self.minor(row, j).determinant();
                    acc = if (row + j) % 2 == 0 { &acc + &term } else { &acc - &term };
                }
                acc
            }
        }
    }

    /// Transposed cofactor matrix: `m · adj(m) = det(m) · I`.
    pub fn adjugate(&self) -> PolyMatrix {
        let n = self.n;
        if n == 1 {
            return PolyMatrix::scalar(CPoly::constant(self.dim, Complex64::new(1.0, 0.0)));
        }
        let mut entries = vec![CPoly::zero(self.dim); n * n];
        for i in 0..n {
            for j in 0..n {
                let cof = self.minor(i, j).determinant();
                let cof = if (i + j) % 2 == 0 { cof } else { -&cof };
                // adj[j][i] = cofactor(i, j)
                entries[j * n + i] = cof;
            }
        }
        PolyMatrix { n, dim: self.dim, entries }
    }

    pub fn mul(&self, rhs: &PolyMatrix) -> PolyMatrix {
        assert_eq!(self.n, rhs.n);
        let n = self.n;
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = CPoly::zero(self.dim);
                for l in 0..n {
                    acc = &acc + &(self.get(i, l) * rhs.get(l, j));
                }
                entries.push(acc);
            }
        }
        PolyMatrix { n, dim: self.dim, entries }
    }

    /// Evaluates every entry at `k`, row-major.
    pub fn eval(&self, k: &[Complex64]) -> Result<Vec<Complex64>> {
        if k.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: k.len() });
        }
        Ok(self.entries.iter().map(|p| p.eval_unchecked(k)).collect())
    }

    /// True when every off-diagonal entry is a constant zero and the diagonal
    /// entries are the constant one.
    pub fn is_identity_scaled_by(&self, s: &CPoly) -> bool {
        (0..self.n).all(|i| {
            (0..self.n).all(|j| {
                if i == j {
                    self.get(i, j) == s
                } else {
                    self.get(i, j).is_zero()
                }
            })
        })
    }
}
