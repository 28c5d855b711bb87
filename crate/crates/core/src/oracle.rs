//! Reference Green function by direct quadrature of the residue-reduced
//! integral
//!
//! ```text
//! G(t, x⃗ + v⃗t) = 1/((2π)^d i) ∫ d^d k⃗  Σ_{roots k⁰} e^{−ik·vt} e^{ik⃗·x⃗} adj D(k) / ∂₀Δ(k)
//! ```
//!
//! over real k⃗, valid for t > 0.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Problem, Velocity};
use crate::roots::{k0_polynomial, polynomial_roots};

/// Roots closer than this (relative) are integrated together on a small
/// circle instead of through individual residues.
const CLUSTER_TOL: f64 = 1e-4;
const CIRCLE_NODES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    /// Half-width of the cube [−L, L]^d.
    pub l: f64,
    /// Nodes per axis.
    pub m: usize,
    /// Fraction of the half-width covered by the cosine taper.
    pub taper: f64,
}

impl QuadratureGrid {
    pub fn default_for(d: usize) -> Self {
        let m = match d {
            1 => 512,
            2 => 256,
            _ => 96,
        };
        QuadratureGrid { l: 12.0, m, taper: 0.1 }
    }

    fn nodes(&self) -> Vec<(f64, f64)> {
        let h = 2.0 * self.l / self.m as f64;
        let inner = (1.0 - self.taper) * self.l;
        (0..self.m)
            .map(|j| {
                let k = -self.l + (j as f64 + 0.5) * h;
                let w = if k.abs() <= inner || self.taper <= 0.0 {
                    1.0
                } else {
                    0.5 * (1.0 + (std::f64::consts::PI * (k.abs() - inner) / (self.l - inner)).cos())
                };
                (k, h * w)
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidueSum {
    /// Row-major N×N.
    pub value: Vec<Complex64>,
    /// Largest Im k⁰ over the roots (= Im(k·v) for real k⃗): the integrand
    /// grows like e^{envelope·t}.
    pub envelope: f64,
    pub clusters: usize,
}

fn add_scaled(acc: &mut [Complex64], m: &[Complex64], s: Complex64) {
    for (a, b) in acc.iter_mut().zip(m) {
        *a += b * s;
    }
}

/// Σ over the k⁰-roots of e^{−ik·vt} e^{ik⃗·x⃗} adj D(k)/∂₀Δ(k) at real `kvec`.
///
/// Nearly coincident roots are summed together as (1/2πi)∮ f adj D/Δ dk⁰
/// over a small circle around the cluster.
pub fn residue_sum(problem: &Problem, kvec: &[f64], v: &Velocity, t: f64, x: &[f64]) -> Result<ResidueSum> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTime(t));
    }
    let d = problem.d();
    if kvec.len() != d || x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: kvec.len().min(x.len()) });
    }
    problem.check_velocity(v)?;
    let kc: Vec<Complex64> = kvec.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    let roots = polynomial_roots(&k0_polynomial(problem, &kc)?)?;
    let n = problem.n();
    let i_unit = Complex64::new(0.0, 1.0);
    let kv_spatial: f64 = kvec.iter().zip(v.components()).map(|(a, b)| a * b).sum();
    let kx: f64 = kvec.iter().zip(x).map(|(a, b)| a * b).sum();
    let f = |z: Complex64| (-i_unit * (z - kv_spatial) * t + i_unit * kx).exp();
    let point = |z: Complex64| {
        let mut k = Vec::with_capacity(d + 1);
        k.push(z);
        k.extend_from_slice(&kc);
        k
    };

    // Group roots into clusters of mutually close roots.
    let mut cluster_of: Vec<usize> = (0..roots.len()).collect();
    for i in 0..roots.len() {
        for j in 0..i {
            if (roots[i] - roots[j]).norm() < CLUSTER_TOL * (1.0 + roots[i].norm()) {
                let (ci, cj) = (cluster_of[i], cluster_of[j]);
                for c in cluster_of.iter_mut() {
                    if *c == ci {
                        *c = cj;
                    }
                }
            }
        }
    }
    let mut value = vec![Complex64::new(0.0, 0.0); n * n];
    let mut envelope = f64::NEG_INFINITY;
    let mut clusters = 0;
    let mut seen = vec![false; roots.len()];
    for i in 0..roots.len() {
        envelope = envelope.max(roots[i].im);
        if seen[i] {
            continue;
        }
        let members: Vec<usize> = (0..roots.len()).filter(|&j| cluster_of[j] == cluster_of[i]).collect();
        members.iter().for_each(|&j| seen[j] = true);
        if members.len() == 1 {
            let k = point(roots[i]);
            let d0 = problem.eval_grad(&k)[0];
            add_scaled(&mut value, &problem.eval_adjugate(&k), f(roots[i]) / d0);
            continue;
        }
        clusters += 1;
        let center = members.iter().map(|&j| roots[j]).sum::<Complex64>() / members.len() as f64;
        let spread = members.iter().map(|&j| (roots[j] - center).norm()).fold(0.0, f64::max);
        let gap = (0..roots.len())
            .filter(|j| !members.contains(j))
            .map(|j| (roots[j] - center).norm())
            .fold(f64::INFINITY, f64::min);
        let radius = (4.0 * spread).max(1e-3 * (1.0 + center.norm())).min(0.5 * gap);
        for q in 0..CIRCLE_NODES {
            let e = Complex64::from_polar(1.0, std::f64::consts::TAU * q as f64 / CIRCLE_NODES as f64);
            let z = center + e * radius;
            let k = point(z);
            // (1/2πi) ∮ g dz with dz = i r e dθ and dθ = 2π/nodes.
            let w = f(z) * e * radius / problem.eval_delta(&k) / CIRCLE_NODES as f64;
            add_scaled(&mut value, &problem.eval_adjugate(&k), w);
        }
    }
    Ok(ResidueSum { value, envelope, clusters })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreenEstimate {
    pub t: f64,
    pub v: Velocity,
    pub x: Vec<f64>,
    /// N×N.
    pub value: Vec<Vec<Complex64>>,
    /// max |G_M − G_{M/2}|.
    pub quadrature_error: f64,
    pub grid: QuadratureGrid,
    /// Nodes where near-double roots were integrated on a circle.
    pub cluster_nodes: usize,
}

/// Pairwise summation in index order, independent of thread scheduling.
fn pairwise(vals: &[Vec<Complex64>], len: usize) -> Vec<Complex64> {
    match vals.len() {
        0 => vec![Complex64::new(0.0, 0.0); len],
        1 => vals[0].clone(),
        n => {
            let (a, b) = vals.split_at(n / 2);
            let mut left = pairwise(a, len);
            for (x, y) in left.iter_mut().zip(pairwise(b, len)) {
                *x += y;
            }
            left
        }
    }
}

struct Integral {
    value: Vec<Complex64>,
    clusters: usize,
    inner_envelope: f64,
    outer_envelope: f64,
}

fn integrate(problem: &Problem, v: &Velocity, t: f64, x: &[f64], grid: &QuadratureGrid) -> Result<Integral> {
    let d = problem.d();
    let nodes = grid.nodes();
    let m = grid.m;
    let total = m.checked_pow(d as u32).ok_or_else(|| Error::Numerical("quadrature grid too large".into()))?;
    let inner = (1.0 - grid.taper) * grid.l;
    let n2 = problem.n() * problem.n();
    let evals: Vec<(Vec<Complex64>, usize, f64, bool)> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut rem = idx;
            let mut k = Vec::with_capacity(d);
            let mut w = 1.0;
            let mut outer = false;
            for _ in 0..d {
                let (kj, wj) = nodes[rem % m];
                rem /= m;
                k.push(kj);
                w *= wj;
                outer |= kj.abs() > inner;
            }
            let r = residue_sum(problem, &k, v, t, x)?;
            Ok((r.value.into_iter().map(|z| z * w).collect(), r.clusters, r.envelope, outer))
        })
        .collect::<Result<Vec<_>>>()?;
    let clusters = evals.iter().map(|e| e.1).sum();
    let inner_envelope = evals.iter().filter(|e| !e.3).map(|e| e.2).fold(f64::NEG_INFINITY, f64::max);
    let outer_envelope = evals.iter().filter(|e| e.3).map(|e| e.2).fold(f64::NEG_INFINITY, f64::max);
    let vals: Vec<Vec<Complex64>> = evals.into_iter().map(|e| e.0).collect();
    let i_unit = Complex64::new(0.0, 1.0);
    let prefactor = 1.0 / ((2.0 * std::f64::consts::PI).powi(d as i32) * i_unit);
    let value = pairwise(&vals, n2).into_iter().map(|z| z * prefactor).collect();
    Ok(Integral { value, clusters, inner_envelope, outer_envelope })
}

/// Trapezoidal quadrature over [−L, L]^d with a cosine taper, compared
/// against the same rule with M/2 nodes.
///
/// Fails with [`Error::DomainTooSmall`] when the root envelope Im k⁰ is
/// larger in the taper zone than inside it.
pub fn green_quadrature(
    problem: &Problem,
    v: &Velocity,
    t: f64,
    x: &[f64],
    grid: &QuadratureGrid,
) -> Result<GreenEstimate> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTime(t));
    }
    problem.check_velocity(v)?;
    if x.len() != problem.d() {
        return Err(Error::DimensionMismatch { expected: problem.d(), got: x.len() });
    }
    if grid.m < 4 || !(grid.l > 0.0) || !(0.0..1.0).contains(&grid.taper) {
        return Err(Error::InvalidProblem(format!("invalid quadrature grid {grid:?}")));
    }
    let fine = integrate(problem, v, t, x, grid)?;
    if fine.outer_envelope > fine.inner_envelope + 1e-12 * (1.0 + fine.inner_envelope.abs()) {
        return Err(Error::DomainTooSmall { suggested_l: 2.0 * grid.l });
    }
    let coarse_grid = QuadratureGrid { m: grid.m / 2, ..grid.clone() };
    let coarse = integrate(problem, v, t, x, &coarse_grid)?;
    let quadrature_error =
        fine.value.iter().zip(&coarse.value).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let n = problem.n();
    let value = (0..n).map(|r| fine.value[r * n..(r + 1) * n].to_vec()).collect();
    Ok(GreenEstimate {
        t,
        v: v.clone(),
        x: x.to_vec(),
        value,
        quadrature_error,
        grid: grid.clone(),
        cluster_nodes: fine.clusters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::parse_dispersion;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn advection_diffusion_residue() {
        let (mu, cc) = (1.0, 1.0);
        let p = parse_dispersion("-i*k0 + i*k1 + k1^2 - 1", 1).unwrap();
        let v = Velocity::zero(1);
        for &k in &[-1.3, 0.0, 0.4, 2.0] {
            let t = 3.0;
            let r = residue_sum(&p, &[k], &v, t, &[0.0]).unwrap();
            // One root k⁰ = ck + i(μ − k²) and ∂₀Δ = −i.
            let expected = c(0.0, 1.0) * c((mu - k * k) * t, -cc * k * t).exp();
            assert!((r.value[0] - expected).norm() < 1e-12 * expected.norm(), "{:?} vs {expected}", r.value);
        }
    }

    #[test]
    fn real_roots_have_unit_modulus_factors() {
        let p = parse_dispersion("k1^2 + k2^2 - (k0 - k1 - k2)^2 + 1", 2).unwrap();
        let v = Velocity::new(vec![0.3, -0.2]).unwrap();
        let r = residue_sum(&p, &[0.7, -1.1], &v, 5.0, &[0.0, 0.0]).unwrap();
        assert!(r.envelope.abs() < 1e-12);
    }

    #[test]
    fn diagonal_operator_residues_split() {
        let d = 1;
        let a = "-i*k0 + k1^2 - 1";
        let b = "-i*k0 + 2*k1^2";
        let diag = crate::parse::parse_operator(&format!("[[{a}, 0], [0, {b}]]"), d).unwrap();
        let p = Problem::from_operator(d, diag, "diag").unwrap();
        let pa = parse_dispersion(a, d).unwrap();
        let pb = parse_dispersion(b, d).unwrap();
        let v = Velocity::new(vec![0.2]).unwrap();
        let (k, t, x) = ([0.6], 2.0, [0.3]);
        let r = residue_sum(&p, &k, &v, t, &x).unwrap();
        let ra = residue_sum(&pa, &k, &v, t, &x).unwrap();
        let rb = residue_sum(&pb, &k, &v, t, &x).unwrap();
        assert!((r.value[0] - ra.value[0]).norm() < 1e-12);
        assert!((r.value[3] - rb.value[0]).norm() < 1e-12);
        assert!(r.value[1].norm() < 1e-14 && r.value[2].norm() < 1e-14);
    }

    #[test]
    fn double_root_uses_contour() {
        // Roots k⁰ = k1 ± (k1² − 1)^{1/2} coincide at |k1| = 1; the combined
        // residue is i sin(wt)/w → i t as w → 0.
        let p = parse_dispersion("k1^2 - (k0 - k1)^2 - 1", 1).unwrap();
        let v = Velocity::new(vec![1.0]).unwrap();
        let t = 2.0;
        let r = residue_sum(&p, &[1.0], &v, t, &[0.0]).unwrap();
        assert_eq!(r.clusters, 1);
        assert!((r.value[0] - c(0.0, t)).norm() < 1e-9, "{:?}", r.value);
        let near = residue_sum(&p, &[1.0 + 1e-3], &v, t, &[0.0]).unwrap();
        let w = ((1.0f64 + 1e-3).powi(2) - 1.0).sqrt();
        assert!((near.value[0] - c(0.0, (w * t).sin() / w)).norm() < 1e-9);
    }

    #[test]
    fn heat_kernel_quadrature() {
        let p = parse_dispersion("-i*k0 + i*k1 + k1^2 - 1", 1).unwrap();
        let g = green_quadrature(&p, &Velocity::zero(1), 10.0, &[0.0], &QuadratureGrid::default_for(1)).unwrap();
        let exact = 7.5f64.exp() / (40.0 * std::f64::consts::PI).sqrt();
        let val = g.value[0][0];
        assert!((val.re - exact).abs() < 1e-8 * exact, "{val} vs {exact}");
        assert!(val.im.abs() < 1e-6 * exact);
        assert!(g.quadrature_error < 1e-6 * exact);
    }

    #[test]
    fn rejects_nonpositive_time_and_growing_envelope() {
        let p = parse_dispersion("-i*k0 + i*k1 + k1^2 - 1", 1).unwrap();
        let grid = QuadratureGrid::default_for(1);
        assert!(matches!(
            green_quadrature(&p, &Velocity::zero(1), 0.0, &[0.0], &grid),
            Err(Error::NonPositiveTime(_))
        ));
        // Im k⁰ = k1² grows without bound.
        let bad = parse_dispersion("-i*k0 - k1^2", 1).unwrap();
        assert!(matches!(
            green_quadrature(&bad, &Velocity::zero(1), 1.0, &[0.0], &grid),
            Err(Error::DomainTooSmall { .. })
        ));
    }
}
