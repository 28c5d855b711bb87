//! Critical points of the height h(k) = Im(k·v) restricted to the locus Δ = 0.
//!
//! A critical point solves the square system
//!
//! ```text
//! Δ(k) = 0,    ∂ᵢΔ(k) + vⁱ ∂₀Δ(k) = 0   (i = 1..d)
//! ```
//!
//! which is found by multi-start damped Newton in ℂ^{d+1}, followed by a
//! few rounds of deflated Newton to pick up roots the plain starts missed.

use std::cmp::Ordering;

use log::{debug, warn};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cmatrix, solve, takagi, CMatrix};
use crate::problem::{KPoint, Problem, Velocity};

/// Absolute threshold on |det H| below which a critical point is degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;
/// Max-norm distance under which two roots are merged.
pub const DEDUP_TOL: f64 = 1e-8;
/// Residual bound relative to `1 + max |coeff|`.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Height and phase of the exponent e^{-i k·v t}: `h = Im(k·v)`, `phase = Re(k·v)`.
pub fn morse_height(k: &[Complex64], v: &Velocity) -> (f64, f64) {
    let kv = v.contract(k);
    (kv.im, kv.re)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchConfig {
    pub starts: usize,
    pub box_radius: f64,
    pub newton_tol: f64,
    pub newton_maxiter: usize,
    pub seed: u64,
    pub deflation_rounds: usize,
    pub deflation_starts: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            starts: 256,
            box_radius: 3.0,
            newton_tol: 1e-13,
            newton_maxiter: 100,
            seed: 0x5eed,
            deflation_rounds: 3,
            deflation_starts: 64,
        }
    }
}

/// Result of the factorization H = -(Jᵀ)⁻¹ J⁻¹.
#[derive(Clone, Debug)]
pub struct HessianFactor {
    pub j: CMatrix,
    pub detj: Complex64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub k: KPoint,
    pub height: f64,
    pub phase: f64,
    pub residual: f64,
    pub hessian: Vec<Vec<Complex64>>,
    pub jfactor: Vec<Vec<Complex64>>,
    pub detj: Complex64,
    pub det_hessian: Complex64,
    pub degenerate: bool,
    pub is_real_spatial: bool,
}

impl CriticalPoint {
    pub fn jfactor_matrix(&self) -> CMatrix {
        cmatrix(&self.jfactor)
    }

    pub fn hessian_matrix(&self) -> CMatrix {
        cmatrix(&self.hessian)
    }
}

/// Outcome of a root search. An empty `points` list is flagged rather than
/// treated as an error.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalSearch {
    pub points: Vec<CriticalPoint>,
    pub empty: bool,
    pub dropped_singular: usize,
    pub dropped_slice: usize,
}

/// Residual vector of the critical-point system.
pub fn critical_residual(problem: &Problem, v: &Velocity, k: &[Complex64]) -> Vec<Complex64> {
    let g = problem.eval_grad(k);
    let mut f = Vec::with_capacity(k.len());
    f.push(problem.eval_delta(k));
    for (i, vi) in v.components().iter().enumerate() {
        f.push(g[i + 1] + g[0] * vi);
    }
    f
}

fn critical_jacobian(problem: &Problem, v: &Velocity, k: &[Complex64]) -> CMatrix {
    let n = k.len();
    let g = problem.eval_grad(k);
    let s = problem.eval_second(k);
    let vv = v.components();
    CMatrix::from_fn(n, n, |r, c| {
        if r == 0 {
            g[c]
        } else {
            s[r][c] + s[0][c] * vv[r - 1]
        }
    })
}

fn max_norm(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Damped Newton, optionally with multiplicative deflation of known roots.
fn newton(
    problem: &Problem,
    v: &Velocity,
    start: Vec<Complex64>,
    cfg: &SearchConfig,
    deflate: &[KPoint],
) -> Option<Vec<Complex64>> {
    let mut k = start;
    let mut f = critical_residual(problem, v, &k);
    let tol = RESIDUAL_TOL * problem.coeff_scale();
    for _ in 0..cfg.newton_maxiter {
        let jac = critical_jacobian(problem, v, &k);
        let neg_f: Vec<Complex64> = f.iter().map(|z| -z).collect();
        let mut step = solve(&jac, &neg_f)?;
        if !deflate.is_empty() {
            // Farrell-style deflation with η(k) = Π (1/‖k−r‖² + 1):
            // the deflated step is the Newton step scaled by 1/(1 − γ).
            let mut gamma = 0.0;
            for r in deflate {
                let diff: Vec<Complex64> = k.iter().zip(r.as_slice()).map(|(a, b)| a - b).collect();
                let q: f64 = diff.iter().map(|z| z.norm_sqr()).sum();
                if q == 0.0 {
                    return None;
                }
                let dir: f64 = diff.iter().zip(&step).map(|(a, b)| (a.conj() * b).re).sum();
                gamma += -2.0 * dir / (q * (1.0 + q));
            }
            let scale = 1.0 / (1.0 - gamma);
            if !scale.is_finite() {
                return None;
            }
            for z in &mut step {
                *z *= scale;
            }
        }
        let fnorm = max_norm(&f);
        let mut lambda = 1.0;
        let mut accepted = None;
        while lambda > 1e-6 {
            let trial: Vec<Complex64> = k.iter().zip(&step).map(|(a, b)| a + b * lambda).collect();
            let ft = critical_residual(problem, v, &trial);
            let fnorm_t = max_norm(&ft);
            if fnorm_t.is_finite() && (fnorm_t < fnorm || fnorm <= tol || !deflate.is_empty()) {
                accepted = Some((trial, ft));
                break;
            }
            lambda *= 0.5;
        }
        let (trial, ft) = accepted?;
        let moved = max_norm(&step) * lambda;
        k = trial;
        f = ft;
        if k.iter().any(|z| !z.is_finite() || z.norm() > 1e8) {
            return None;
        }
        if max_norm(&f) <= tol && moved <= cfg.newton_tol * (1.0 + max_norm(&k)) {
            return Some(k);
        }
    }
    (max_norm(&f) <= tol).then_some(k)
}

/// Plain Newton polish from a root estimate.
fn polish(problem: &Problem, v: &Velocity, k: Vec<Complex64>, cfg: &SearchConfig) -> Option<Vec<Complex64>> {
    newton(problem, v, k, cfg, &[])
}

fn lex_cmp(a: &[Complex64], b: &[Complex64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

fn dedup(mut roots: Vec<Vec<Complex64>>) -> Vec<KPoint> {
    roots.sort_by(|a, b| lex_cmp(a, b));
    let mut out: Vec<KPoint> = Vec::new();
    for r in roots {
        let kp = KPoint(r);
        if !out.iter().any(|o| o.distance_max(&kp) < DEDUP_TOL * (1.0 + kp.norm())) {
            out.push(kp);
        }
    }
    out
}

/// Hessian of h on the locus at a critical point:
/// `H_ij = i (∂ᵢ + vⁱ∂₀)(∂ⱼ + vʲ∂₀)Δ / ∂₀Δ`.
pub fn hessian(problem: &Problem, v: &Velocity, k: &[Complex64]) -> Result<CMatrix> {
    problem.check_point(k)?;
    problem.check_velocity(v)?;
    let g = problem.eval_grad(k);
    if g[0].norm() <= 1e-14 * problem.delta_scale(k) {
        return Err(Error::SingularSlice { at: KPoint(k.to_vec()).to_string() });
    }
    let s = problem.eval_second(k);
    let vv = v.components();
    let d = vv.len();
    let i_unit = Complex64::new(0.0, 1.0);
    Ok(CMatrix::from_fn(d, d, |a, b| {
        let (ia, ib) = (a + 1, b + 1);
        let dab = s[ia][ib] + s[0][ib] * vv[a] + s[ia][0] * vv[b] + s[0][0] * (vv[a] * vv[b]);
        i_unit * dab / g[0]
    }))
}

/// Factors `-H⁻¹ = J Jᵀ` through a Takagi decomposition `-H⁻¹ = U Σ Uᵀ`,
/// `J = U Σ^{1/2}`.
///
/// Columns are sign-normalized (largest entry has positive real part) and
/// the first column is flipped if needed so that `arg det J ∈ (-π/2, π/2]`.
/// The same `J` must be used for seeding dual thimbles so that the product
/// of the intersection coefficient and `det J` is branch independent.
pub fn factor_hessian(h: &CMatrix) -> HessianFactor {
    let d = h.nrows();
    let det_h = if d == 0 { Complex64::new(1.0, 0.0) } else { h.determinant() };
    if !(det_h.norm() > DEGENERACY_THRESHOLD) || !det_h.is_finite() {
        return HessianFactor { j: CMatrix::zeros(d, d), detj: Complex64::new(0.0, 0.0), degenerate: true };
    }
    let Some(h_inv) = h.clone().try_inverse() else {
        return HessianFactor { j: CMatrix::zeros(d, d), detj: Complex64::new(0.0, 0.0), degenerate: true };
    };
    let a = -h_inv;
    // Symmetrize against round-off before factoring.
    let a = (&a + a.transpose()) * Complex64::new(0.5, 0.0);
    let (u, sigma) = takagi(&a);
    let mut j = u * CMatrix::from_diagonal(&DVector::from_iterator(
        d,
        sigma.iter().map(|s| Complex64::new(s.sqrt(), 0.0)),
    ));
    for c in 0..d {
        let mut best = Complex64::new(0.0, 0.0);
        for r in 0..d {
            if j[(r, c)].norm() > best.norm() + 1e-12 {
                best = j[(r, c)];
            }
        }
        let flip = if best.re.abs() > 1e-12 { best.re < 0.0 } else { best.im < 0.0 };
        if flip {
            for r in 0..d {
                j[(r, c)] = -j[(r, c)];
            }
        }
    }
    let mut detj = j.determinant();
    let arg = detj.arg();
    if d > 0 && !(arg > -std::f64::consts::FRAC_PI_2 + 1e-12 && arg <= std::f64::consts::FRAC_PI_2 + 1e-12) {
        for r in 0..d {
            j[(r, 0)] = -j[(r, 0)];
        }
        detj = -detj;
    }
    HessianFactor { j, detj, degenerate: false }
}

/// Evaluates every per-point quantity at a (presumed) critical point.
pub fn analyze_point(problem: &Problem, v: &Velocity, k: &KPoint) -> Result<CriticalPoint> {
    problem.check_point(k.as_slice())?;
    problem.check_velocity(v)?;
    let (height, phase) = morse_height(k.as_slice(), v);
    let residual = max_norm(&critical_residual(problem, v, k.as_slice()));
    let h = hessian(problem, v, k.as_slice())?;
    let det_h = if h.nrows() == 0 { Complex64::new(1.0, 0.0) } else { h.determinant() };
    let fac = factor_hessian(&h);
    let real_tol = 1e-8 * (1.0 + k.norm());
    let is_real_spatial = k.spatial().iter().all(|z| z.im.abs() < real_tol);
    Ok(CriticalPoint {
        k: k.clone(),
        height,
        phase,
        residual,
        hessian: crate::linalg::to_rows(&h),
        jfactor: crate::linalg::to_rows(&fac.j),
        detj: fac.detj,
        det_hessian: det_h,
        degenerate: fac.degenerate,
        is_real_spatial,
    })
}

/// Ordering used for reported critical points: descending height (ties within
/// 1e-9), then descending lexicographic (Re k⁰, Im k⁰, Re k¹, …).
pub fn height_order(a: &CriticalPoint, b: &CriticalPoint) -> Ordering {
    if (a.height - b.height).abs() > 1e-9 * (1.0 + a.height.abs().max(b.height.abs())) {
        return b.height.total_cmp(&a.height);
    }
    lex_cmp(b.k.as_slice(), a.k.as_slice())
}

fn random_start(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.gen_range(-r..=r), rng.gen_range(-r..=r)))
        .collect()
}

/// Multi-start Newton search for all isolated critical points.
pub fn find_critical_points(problem: &Problem, v: &Velocity, cfg: &SearchConfig) -> Result<CriticalSearch> {
    problem.check_velocity(v)?;
    if problem.delta().degree_in(0) == 0 {
        return Err(Error::ConstantInK0);
    }
    let n = problem.d() + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts: Vec<Vec<Complex64>> = (0..cfg.starts).map(|_| random_start(&mut rng, n, cfg.box_radius)).collect();

    let found: Vec<Vec<Complex64>> = starts
        .par_iter()
        .filter_map(|s| newton(problem, v, s.clone(), cfg, &[]))
        .collect();
    let mut roots = dedup(found);

    for round in 0..cfg.deflation_rounds {
        if roots.is_empty() {
            break;
        }
        let known = roots.clone();
        let extra: Vec<Vec<Complex64>> = starts
            .par_iter()
            .take(cfg.deflation_starts)
            .filter_map(|s| newton(problem, v, s.clone(), cfg, &known))
            .filter_map(|r| polish(problem, v, r, cfg))
            .collect();
        let before = roots.len();
        let mut all: Vec<Vec<Complex64>> = roots.into_iter().map(|k| k.0).collect();
        all.extend(extra);
        roots = dedup(all);
        debug!("deflation round {round}: {} -> {} roots", before, roots.len());
        if roots.len() == before {
            break;
        }
    }

    let tol = RESIDUAL_TOL * problem.coeff_scale();
    let mut points = Vec::new();
    let mut dropped_singular = 0;
    let mut dropped_slice = 0;
    for k in roots {
        let residual = max_norm(&critical_residual(problem, v, k.as_slice()));
        if residual > tol {
            dropped_singular += 1;
            continue;
        }
        match analyze_point(problem, v, &k) {
            Ok(cp) => points.push(cp),
            Err(Error::SingularSlice { at }) => {
                warn!("critical point at {at} lies on a singular slice (d0 Delta = 0); dropped");
                dropped_slice += 1;
            }
            Err(e) => return Err(e),
        }
    }
    points.sort_by(height_order);
    if points.is_empty() {
        warn!("no critical points found in the search box (R = {})", cfg.box_radius);
    }
    Ok(CriticalSearch { empty: points.is_empty(), points, dropped_singular, dropped_slice })
}

/// Suggested rerun settings when some critical point is degenerate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MorseAdvisory {
    pub degenerate: Vec<usize>,
    pub suggested_velocity: Velocity,
    pub jitter_norm: f64,
}

/// Checks the Morse condition; on failure proposes `v + δv` with a random
/// direction and `|δv| = 1e-6 (1 + |v|)`.
pub fn check_morse(v: &Velocity, points: &[CriticalPoint], seed: u64) -> Option<MorseAdvisory> {
    let degenerate: Vec<usize> = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.degenerate)
        .map(|(i, _)| i)
        .collect();
    if degenerate.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = v.dim();
    let jitter_norm = 1e-6 * (1.0 + v.norm());
    let dir = loop {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let nrm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        if d == 0 || (nrm > 1e-3 && nrm <= 1.0) {
            break x.into_iter().map(|a| if nrm > 0.0 { a / nrm } else { a }).collect::<Vec<_>>();
        }
    };
    let suggested = Velocity(v.components().iter().zip(&dir).map(|(a, b)| a + b * jitter_norm).collect());
    Some(MorseAdvisory { degenerate, suggested_velocity: suggested, jitter_norm })
}
