//! Roots of Δ as a univariate polynomial in k⁰ at fixed spatial wavevector.

use nalgebra::Schur;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::problem::Problem;

/// Relative size below which the leading coefficient counts as vanished.
const LEADING_TOL: f64 = 1e-13;

fn horner(coeffs: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// All roots of `Σ_j coeffs[j] z^j` via companion-matrix eigenvalues, each
/// polished by Newton on the original coefficients.
pub fn polynomial_roots(coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let deg = coeffs.len().saturating_sub(1);
    if deg == 0 || scale == 0.0 {
        return Ok(Vec::new());
    }
    let lead = coeffs[deg];
    if lead.norm() <= LEADING_TOL * scale {
        let to = (0..deg).rev().find(|&j| coeffs[j].norm() > LEADING_TOL * scale).unwrap_or(0);
        return Err(Error::DegreeReduced { from: deg, to });
    }
    let monic: Vec<Complex64> = coeffs.iter().map(|c| c / lead).collect();
    let mut roots = if deg == 1 {
        vec![-monic[0]]
    } else {
        let mut comp = CMatrix::zeros(deg, deg);
        for i in 1..deg {
            comp[(i, i - 1)] = Complex64::new(1.0, 0.0);
        }
        for i in 0..deg {
            comp[(i, deg - 1)] = -monic[i];
        }
        let schur = Schur::try_new(comp, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numerical("companion Schur decomposition did not converge".into()))?;
        let (_, t) = schur.unpack();
        (0..deg).map(|i| t[(i, i)]).collect::<Vec<_>>()
    };
    for r in &mut roots {
        for _ in 0..8 {
            let (p, dp) = horner(&monic, *r);
            if dp.norm() == 0.0 {
                break;
            }
            let step = p / dp;
            let next = *r - step;
            if horner(&monic, next).0.norm() <= p.norm() {
                *r = next;
            } else {
                break;
            }
            if step.norm() <= 1e-15 * (1.0 + r.norm()) {
                break;
            }
        }
    }
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(roots)
}

/// Coefficients of k⁰ ↦ Δ(k⁰, k⃗) at a spatial wavevector.
pub fn k0_polynomial(problem: &Problem, kvec: &[Complex64]) -> Result<Vec<Complex64>> {
    if kvec.len() != problem.d() {
        return Err(Error::DimensionMismatch { expected: problem.d(), got: kvec.len() });
    }
    let mut k = Vec::with_capacity(kvec.len() + 1);
    k.push(Complex64::new(0.0, 0.0));
    k.extend_from_slice(kvec);
    Ok(problem.k0_coefficients().iter().map(|c| c.eval_unchecked(&k)).collect())
}

/// All k⁰ roots of Δ(·, k⃗) for a real spatial wavevector.
pub fn roots_k0(problem: &Problem, kvec: &[f64]) -> Result<Vec<Complex64>> {
    let kc: Vec<Complex64> = kvec.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    polynomial_roots(&k0_polynomial(problem, &kc)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::parse_dispersion;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn printed_demo_at_origin() {
        let p = parse_dispersion("k1^2 + k2^2 - (k0 - k1 - k2)^2 + 1", 2).unwrap();
        let r = roots_k0(&p, &[0.0, 0.0]).unwrap();
        assert!((r[0] - c(-1.0, 0.0)).norm() < 1e-14 && (r[1] - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn tachyonic_demo_at_origin() {
        let p = parse_dispersion("k1^2 + k2^2 - (k0 - k1 - k2)^2 - 1", 2).unwrap();
        let r = roots_k0(&p, &[0.0, 0.0]).unwrap();
        assert!((r[0] - c(0.0, -1.0)).norm() < 1e-14 && (r[1] - c(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn advection_diffusion_single_root() {
        let (mu, cc) = (1.0, 1.0);
        let p = parse_dispersion("-i*k0 + i*k1 + k1^2 - 1", 1).unwrap();
        for &k1 in &[-2.0, -0.3, 0.0, 0.7, 3.0] {
            let r = roots_k0(&p, &[k1]).unwrap();
            assert_eq!(r.len(), 1);
            let expected = c(cc * k1, mu - k1 * k1);
            assert!((r[0] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn cubic_roots() {
        // (z - 1)(z + 2i)(z - 3 + i)
        let r = polynomial_roots(&[
            c(2.0, 6.0),
            c(1.0, -9.0),
            c(-4.0, 3.0),
            c(1.0, 0.0),
        ]);
        let r = r.unwrap();
        let expected = [c(0.0, -2.0), c(1.0, 0.0), c(3.0, -1.0)];
        for (a, b) in r.iter().zip(&expected) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn vanishing_leading_coefficient() {
        let p = parse_dispersion("k1*k0^2 + k0 + 1", 1).unwrap();
        assert!(matches!(roots_k0(&p, &[0.0]), Err(Error::DegreeReduced { from: 2, to: 1 })));
    }
}
