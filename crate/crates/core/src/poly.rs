//! Sparse multivariate polynomials with complex coefficients.
//!
//! Variables are indexed `0..dim`; variable 0 is the temporal wavenumber
//! `k0` and `1..dim` are the spatial components. Terms are kept in a
//! `BTreeMap` keyed by exponent vectors under graded lexicographic order so
//! that printing and iteration are deterministic.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Exponent multi-index of a monomial, ordered graded-lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn one(dim: usize) -> Self {
        Monomial(vec![0; dim])
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse polynomial in `dim` complex variables.
///
/// No stored coefficient is zero, and every key has length `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct CPoly {
    dim: usize,
    terms: BTreeMap<Monomial, Complex64>,
}

impl CPoly {
    pub fn zero(dim: usize) -> Self {
        CPoly { dim, terms: BTreeMap::new() }
    }

    pub fn constant(dim: usize, c: Complex64) -> Self {
        let mut p = CPoly::zero(dim);
        p.add_term(Monomial::one(dim), c);
        p
    }

    /// The coordinate polynomial `k_index`.
    pub fn var(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::IndexOutOfRange { index, len: dim });
        }
        let mut e = vec![0; dim];
        e[index] = 1;
        let mut p = CPoly::zero(dim);
        p.add_term(Monomial(e), Complex64::new(1.0, 0.0));
        Ok(p)
    }

    /// Builds a polynomial from `(exponents, coefficient)` pairs, merging duplicates.
    pub fn from_terms<I>(dim: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, Complex64)>,
    {
        let mut p = CPoly::zero(dim);
        for (e, c) in terms {
            if e.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: e.len() });
            }
            p.add_term(Monomial(e), c);
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Complex64)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, exponents: &[u32]) -> Complex64 {
        self.terms
            .get(&Monomial(exponents.to_vec()))
            .copied()
            .unwrap_or_default()
    }

    pub fn add_term(&mut self, m: Monomial, c: Complex64) {
        debug_assert_eq!(m.0.len(), self.dim);
        if c == Complex64::new(0.0, 0.0) {
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = *o.get() + c;
                if sum == Complex64::new(0.0, 0.0) {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn max_coeff_abs(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(Monomial::total_degree).max().unwrap_or(0)
    }

    /// Highest power of variable `index` appearing in any term.
    pub fn degree_in(&self, index: usize) -> u32 {
        self.terms.keys().map(|m| m.0[index]).max().unwrap_or(0)
    }

    pub fn scale(&self, s: Complex64) -> CPoly {
        let mut out = CPoly::zero(self.dim);
        for (m, c) in &self.terms {
            out.add_term(m.clone(), c * s);
        }
        out
    }

    pub fn pow(&self, n: u32) -> CPoly {
        let mut acc = CPoly::constant(self.dim, Complex64::new(1.0, 0.0));
        let mut base = self.clone();
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                acc = &acc * &base;
            }
            n >>= 1;
            if n > 0 {
                base = &base * &base;
            }
        }
        acc
    }

    /// Formal partial derivative with respect to variable `mu`.
    pub fn partial(&self, mu: usize) -> Result<CPoly> {
        if mu >= self.dim {
            return Err(Error::IndexOutOfRange { index: mu, len: self.dim });
        }
        let mut out = CPoly::zero(self.dim);
        for (m, c) in &self.terms {
            let e = m.0[mu];
            if e == 0 {
                continue;
            }
            let mut m2 = m.0.clone();
            m2[mu] -= 1;
            out.add_term(Monomial(m2), c * e as f64);
        }
        Ok(out)
    }

    /// Evaluates the polynomial at `k`.
    pub fn eval(&self, k: &[Complex64]) -> Result<Complex64> {
        if k.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: k.len() });
        }
        Ok(self.eval_unchecked(k))
    }

    pub(crate) fn eval_unchecked(&self, k: &[Complex64]) -> Complex64 {
        let mut sum = Complex64::new(0.0, 0.0);
        for (m, c) in &self.terms {
            let mut t = *c;
            for (x, &e) in k.iter().zip(&m.0) {
                if e > 0 {
                    t *= x.powu(e);
                }
            }
            sum += t;
        }
        sum
    }

    /// Sum of |c|·Π|k_i|^e over terms: the magnitude scale of the terms at `k`.
    pub fn term_scale(&self, k: &[Complex64]) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| {
                c.norm()
                    * k.iter()
                        .zip(&m.0)
                        .map(|(x, &e)| x.norm().powi(e as i32))
                        .product::<f64>()
            })
            .sum()
    }

    /// Splits the polynomial as Σ_j c_j(k1..kd) k0^j, returning `[c_0, c_1, ..]`.
    /// The returned coefficient polynomials keep `dim` variables with zero
    /// exponent in slot 0.
    pub fn coefficients_in_k0(&self) -> Vec<CPoly> {
        let deg = self.degree_in(0) as usize;
        let mut out = vec![CPoly::zero(self.dim); deg + 1];
        for (m, c) in &self.terms {
            let j = m.0[0] as usize;
            let mut m2 = m.0.clone();
            m2[0] = 0;
            out[j].add_term(Monomial(m2), *c);
        }
        out
    }

    /// True when every coefficient is real.
    pub fn has_real_coefficients(&self) -> bool {
        self.terms.values().all(|c| c.im == 0.0)
    }
}

impl Add for &CPoly {
    type Output = CPoly;
    fn add(self, rhs: &CPoly) -> CPoly {
        assert_eq!(self.dim, rhs.dim, "polynomial dimension mismatch");
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), *c);
        }
        out
    }
}

impl Sub for &CPoly {
    type Output = CPoly;
    fn sub(self, rhs: &CPoly) -> CPoly {
        assert_eq!(self.dim, rhs.dim, "polynomial dimension mismatch");
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -*c);
        }
        out
    }
}

impl Mul for &CPoly {
    type Output = CPoly;
    fn mul(self, rhs: &CPoly) -> CPoly {
        assert_eq!(self.dim, rhs.dim, "polynomial dimension mismatch");
        let mut out = CPoly::zero(self.dim);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }
}

impl Neg for &CPoly {
    type Output = CPoly;
    fn neg(self) -> CPoly {
        self.scale(Complex64::new(-1.0, 0.0))
    }
}

fn write_monomial(f: &mut fmt::Formatter<'_>, m: &Monomial) -> fmt::Result {
    let mut first = true;
    for (i, &e) in m.0.iter().enumerate() {
        if e == 0 {
            continue;
        }
        if !first {
            write!(f, "*")?;
        }
        first = false;
        if e == 1 {
            write!(f, "k{i}")?;
        } else {
            write!(f, "k{i}^{e}")?;
        }
    }
    Ok(())
}

/// Prints in the same grammar the parser accepts, highest-degree terms first.
/// Coefficients use the shortest round-trip decimal form, so
/// `parse(p.to_string()) == p` holds term-exactly.
impl fmt::Display for CPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (idx, (m, c)) in self.terms.iter().rev().enumerate() {
            let is_const = m.total_degree() == 0;
            // (negative, body) where body carries no leading sign.
            let (negative, body) = if c.im == 0.0 {
                let a = c.re.abs();
                let body = if a == 1.0 && !is_const { String::new() } else { format!("{a}") };
                (c.re.is_sign_negative(), body)
            } else if c.re == 0.0 && !c.re.is_sign_negative() {
                let a = c.im.abs();
                let body = if a == 1.0 { "i".to_string() } else { format!("{a}i") };
                (c.im.is_sign_negative(), body)
            } else {
                let sign = if c.im.is_sign_negative() { "-" } else { "+" };
                (false, format!("({}{}{}i)", c.re, sign, c.im.abs()))
            };
            if idx == 0 {
                if negative {
                    write!(f, "-")?;
                }
            } else if negative {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            write!(f, "{body}")?;
            if !is_const {
                if !body.is_empty() {
                    write!(f, "*")?;
                }
                write_monomial(f, m)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_coefficients_are_not_stored() {
        let x = CPoly::var(2, 0).unwrap();
        let d = &x - &x;
        assert!(d.is_zero());
        assert_eq!(d.num_terms(), 0);
    }

    #[test]
    fn graded_order_puts_higher_degree_last() {
        let a = Monomial(vec![0, 2]);
        let b = Monomial(vec![1, 0]);
        assert!(b < a);
        assert!(Monomial(vec![1, 1]) > Monomial(vec![0, 2]));
    }

    #[test]
    fn partial_of_constant_is_zero() {
        let one = CPoly::constant(3, c(1.0, 0.0));
        assert!(one.partial(0).unwrap().is_zero());
        assert!(matches!(one.partial(3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn pow_matches_repeated_product() {
        let x = CPoly::var(2, 0).unwrap();
        let y = CPoly::var(2, 1).unwrap();
        let s = &(&x + &y) + &CPoly::constant(2, c(0.0, 1.0));
        let mut prod = CPoly::constant(2, c(1.0, 0.0));
        for _ in 0..5 {
            prod = &prod * &s;
        }
        assert_eq!(s.pow(5), prod);
    }

    #[test]
    fn eval_rejects_wrong_length() {
        let x = CPoly::var(3, 1).unwrap();
        assert!(matches!(
            x.eval(&[c(0.0, 0.0); 2]),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn display_forms() {
        let p = CPoly::from_terms(
            2,
            vec![
                (vec![2, 0], c(-1.0, 0.0)),
                (vec![1, 1], c(0.5, -2.0)),
                (vec![0, 1], c(0.0, 1.0)),
                (vec![0, 0], c(3.0, 0.0)),
            ],
        )
        .unwrap();
        assert_eq!(p.to_string(), "-k0^2 + (0.5-2i)*k0*k1 + i*k1 + 3");
    }

    #[test]
    fn k0_coefficient_split() {
        // (k0 - k1)^2 = k0^2 - 2 k0 k1 + k1^2
        let x = CPoly::var(2, 0).unwrap();
        let y = CPoly::var(2, 1).unwrap();
        let p = (&x - &y).pow(2);
        let cs = p.coefficients_in_k0();
        assert_eq!(cs.len(), 3);
        assert_eq!(cs[2], CPoly::constant(2, c(1.0, 0.0)));
        assert_eq!(cs[1], y.scale(c(-2.0, 0.0)));
        assert_eq!(cs[0], y.pow(2));
    }
}
