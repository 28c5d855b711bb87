//! Problem definition: the operator matrix D(k), its determinant Δ(k) and
//! cached derivatives, plus the wavevector and observer-velocity types.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::PolyMatrix;
use crate::parse::{parse_operator, parse_poly};
use crate::poly::CPoly;

/// Complex (d+1)-wavevector; index 0 is the temporal component k⁰.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KPoint(pub Vec<Complex64>);

impl KPoint {
    pub fn new(components: Vec<Complex64>) -> Self {
        KPoint(components)
    }

    pub fn zeros(n: usize) -> Self {
        KPoint(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn spatial(&self) -> &[Complex64] {
        &self.0[1..]
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Max-norm distance.
    pub fn distance_max(&self, other: &KPoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn conj(&self) -> KPoint {
        KPoint(self.0.iter().map(|z| z.conj()).collect())
    }
}

impl fmt::Display for KPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, z) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{:.6}{:+.6}i", z.re, z.im)?;
        }
        write!(f, ")")
    }
}

/// Real observer velocity v⃗ (components vⁱ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Velocity(pub Vec<f64>);

impl Velocity {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidProblem("velocity components must be finite".into()));
        }
        Ok(Velocity(v))
    }

    pub fn zero(d: usize) -> Self {
        Velocity(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    /// Lowered covector v_μ = (1, −v⃗).
    pub fn covector(&self) -> Vec<f64> {
        std::iter::once(1.0).chain(self.0.iter().map(|x| -x)).collect()
    }

    /// Minkowski contraction k·v = k⁰ − k⃗·v⃗.
    pub fn contract(&self, k: &[Complex64]) -> Complex64 {
        let mut acc = k[0];
        for (ki, vi) in k[1..].iter().zip(&self.0) {
            acc -= ki * vi;
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl fmt::Display for Velocity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|x| format!("{x}")).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// A dispersion-relation problem in (d+1)-dimensional spacetime.
#[derive(Clone, Debug)]
pub struct Problem {
    d: usize,
    label: String,
    operator: PolyMatrix,
    delta: CPoly,
    adjugate: PolyMatrix,
    grad: Vec<CPoly>,
    second: Vec<Vec<CPoly>>,
    k0_coeffs: Vec<CPoly>,
    jitter: f64,
}

impl Problem {
    pub fn from_operator(d: usize, operator: PolyMatrix, label: impl Into<String>) -> Result<Self> {
        if operator.dim() != d + 1 {
            return Err(Error::DimensionMismatch { expected: d + 1, got: operator.dim() });
        }
        let delta = operator.determinant();
        Problem::assemble(d, operator, delta, label.into(), 0.0)
    }

    pub fn from_delta(d: usize, delta: CPoly, label: impl Into<String>) -> Result<Self> {
        Problem::from_operator(d, PolyMatrix::scalar(delta), label)
    }

    fn assemble(d: usize, operator: PolyMatrix, delta: CPoly, label: String, jitter: f64) -> Result<Self> {
        if delta.degree_in(0) == 0 {
            return Err(Error::ConstantInK0);
        }
        let n = d + 1;
        let grad: Vec<CPoly> = (0..n).map(|mu| delta.partial(mu)).collect::<Result<_>>()?;
        let second = grad
            .iter()
            .map(|g| (0..n).map(|nu| g.partial(nu)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let adjugate = operator.adjugate();
        let k0_coeffs = delta.coefficients_in_k0();
        Ok(Problem { d, label, operator, delta, adjugate, grad, second, k0_coeffs, jitter })
    }

    /// Adds `eps · k0` to Δ to lift points where dΔ vanishes on the locus.
    /// For a scalar operator the entry itself is shifted so Δ stays equal
    /// to det D; for matrices only Δ is shifted.
    pub fn with_jitter(&self, eps: f64) -> Result<Problem> {
        let shift = CPoly::var(self.d + 1, 0)?.scale(Complex64::new(eps, 0.0));
        let delta = &self.delta + &shift;
        let operator = if self.operator.size() == 1 {
            PolyMatrix::scalar(delta.clone())
        } else {
            self.operator.clone()
        };
        Problem::assemble(self.d, operator, delta, self.label.clone(), self.jitter + eps)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn operator(&self) -> &PolyMatrix {
        &self.operator
    }

    pub fn delta(&self) -> &CPoly {
        &self.delta
    }

    pub fn adjugate(&self) -> &PolyMatrix {
        &self.adjugate
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n(&self) -> usize {
        self.operator.size()
    }

    /// 1 + largest coefficient magnitude of Δ; the scale used in residual tolerances.
    pub fn coeff_scale(&self) -> f64 {
        1.0 + self.delta.max_coeff_abs()
    }

    pub fn grad_polys(&self) -> &[CPoly] {
        &self.grad
    }

    pub fn second_polys(&self) -> &[Vec<CPoly>] {
        &self.second
    }

    /// Coefficient polynomials c_j(k⃗) with Δ = Σ_j c_j k0^j.
    pub fn k0_coefficients(&self) -> &[CPoly] {
        &self.k0_coeffs
    }

    pub fn check_point(&self, k: &[Complex64]) -> Result<()> {
        if k.len() != self.d + 1 {
            return Err(Error::DimensionMismatch { expected: self.d + 1, got: k.len() });
        }
        Ok(())
    }

    pub fn check_velocity(&self, v: &Velocity) -> Result<()> {
        if v.dim() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: v.dim() });
        }
        Ok(())
    }

    pub fn eval_delta(&self, k: &[Complex64]) -> Complex64 {
        self.delta.eval_unchecked(k)
    }

    pub fn eval_grad(&self, k: &[Complex64]) -> Vec<Complex64> {
        self.grad.iter().map(|g| g.eval_unchecked(k)).collect()
    }

    pub fn eval_second(&self, k: &[Complex64]) -> Vec<Vec<Complex64>> {
        self.second
            .iter()
            .map(|row| row.iter().map(|p| p.eval_unchecked(k)).collect())
            .collect()
    }

    /// Magnitude scale of the terms of Δ at `k`, used for relative tolerances
    /// far from the origin.
    pub fn delta_scale(&self, k: &[Complex64]) -> f64 {
        1.0 + self.delta.term_scale(k)
    }

    /// adj D(k), row-major.
    pub fn eval_adjugate(&self, k: &[Complex64]) -> Vec<Complex64> {
        self.adjugate.eval(k).expect("dimension checked by caller")
    }
}

/// On-disk problem description.
///
/// Either `operator` (an N×N matrix of expressions) or `delta` (a scalar
/// expression) must be given. `defaults` holds optional run settings that
/// front ends may honour.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemFile {
    pub d: usize,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub operator: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub delta: Option<String>,
    #[serde(default)]
    pub defaults: BTreeMap<String, serde_json::Value>,
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidProblem(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidProblem(format!("{}: {e}", path.display())))?;
        ProblemFile::from_json(&text)
    }

    pub fn to_problem(&self) -> Result<Problem> {
        let label = self.label.clone().unwrap_or_default();
        match (&self.operator, &self.delta) {
            (Some(rows), None) => {
                let rows = rows
                    .iter()
                    .map(|r| r.iter().map(|e| parse_poly(e, self.d)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                Problem::from_operator(self.d, PolyMatrix::new(rows)?, label)
            }
            (None, Some(expr)) => Problem::from_operator(self.d, parse_operator(expr, self.d)?, label),
            (Some(_), Some(_)) => Err(Error::InvalidProblem("give either `operator` or `delta`, not both".into())),
            (None, None) => Err(Error::InvalidProblem("missing `operator` or `delta`".into())),
        }
    }
}

/// Parses a dispersion relation from text: a scalar Δ or a bracketed matrix.
pub fn parse_dispersion(text: &str, d: usize) -> Result<Problem> {
    Problem::from_operator(d, parse_operator(text, d)?, text.trim())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contraction_uses_minkowski_signature() {
        let v = Velocity::new(vec![1.0, 2.0]).unwrap();
        let k = [Complex64::new(3.0, 1.0), Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];
        assert_eq!(v.contract(&k), Complex64::new(3.0 - 1.0, 1.0 - 2.0));
        assert_eq!(v.covector(), vec![1.0, -1.0, -2.0]);
    }

    #[test]
    fn constant_in_k0_rejected() {
        assert!(matches!(parse_dispersion("k1^2 + 1", 1), Err(Error::ConstantInK0)));
    }

    #[test]
    fn problem_file_variants() {
        let f = ProblemFile::from_json(r#"{"d": 1, "delta": "k0 - k1"}"#).unwrap();
        let p = f.to_problem().unwrap();
        assert_eq!(p.d(), 1);
        let g = ProblemFile::from_json(r#"{"d": 1, "label": "m", "operator": [["k0", "1"], ["1", "k0"]]}"#).unwrap();
        let q = g.to_problem().unwrap();
        assert_eq!(q.delta(), &parse_poly("k0^2 - 1", 1).unwrap());
        assert_eq!(q.n(), 2);
        assert!(ProblemFile::from_json(r#"{"d": 1}"#).unwrap().to_problem().is_err());
    }

    #[test]
    fn jitter_shifts_delta() {
        let p = parse_dispersion("k0^2 - k1^2", 1).unwrap();
        let q = p.with_jitter(1e-3).unwrap();
        assert_eq!(q.delta(), &parse_poly("k0^2 - k1^2 + 0.001*k0", 1).unwrap());
        assert_eq!(q.operator().determinant(), *q.delta());
    }
}
