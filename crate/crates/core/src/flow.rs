//! Upward flow of the height h = Im(k·v) constrained to the locus Δ = 0.
//!
//! The flow field is
//!
//! ```text
//! dKᵅ/ds = i ( v_α − conj(∂_αΔ) (Σ_β v_β ∂_βΔ) / Σ_β |∂_βΔ|² )
//! ```
//!
//! with the lowered covector `v_α = (1, −v⃗)` and flat contractions. It is
//! tangent to the locus, keeps Re(K·v) fixed and never decreases h. Lines are
//! integrated with Dormand–Prince 5(4); after every accepted step the state
//! is projected back onto {Δ = 0, Re(K·v) = const} by a minimum-norm
//! Gauss–Newton correction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critical::CriticalPoint;
use crate::error::{Error, Result};
use crate::problem::{KPoint, Problem, Velocity};

/// The constrained upward-flow vector at `k`.
pub fn flow_field(problem: &Problem, v: &Velocity, k: &[Complex64]) -> Result<Vec<Complex64>> {
    problem.check_point(k)?;
    problem.check_velocity(v)?;
    field_unchecked(problem, &v.covector(), k)
        .ok_or_else(|| Error::SingularPoint { at: KPoint(k.to_vec()).to_string() })
}

fn field_unchecked(problem: &Problem, vl: &[f64], k: &[Complex64]) -> Option<Vec<Complex64>> {
    let a = problem.eval_grad(k);
    let norm2: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    let scale = problem.delta_scale(k);
    if !(norm2 > 1e-28 * scale * scale) {
        return None;
    }
    let va: Complex64 = a.iter().zip(vl).map(|(ai, vi)| ai * vi).sum();
    let ratio = va / norm2;
    let i_unit = Complex64::new(0.0, 1.0);
    Some(
        a.iter()
            .zip(vl)
            .map(|(ai, &vi)| i_unit * (Complex64::new(vi, 0.0) - ai.conj() * ratio))
            .collect(),
    )
}

/// Initial point of a dual-thimble flow line: `K(0) = k_σ + κ` with
/// `κ⃗ = i J δ⃗` and `κ⁰ = v⃗·κ⃗`, so that `κ·v = 0`.
pub fn seed(critical: &CriticalPoint, delta: &[f64], v: &Velocity) -> Result<KPoint> {
    if critical.degenerate {
        return Err(Error::Degenerate);
    }
    let d = v.dim();
    if delta.len() != d || critical.k.len() != d + 1 {
        return Err(Error::DimensionMismatch { expected: d, got: delta.len() });
    }
    let i_unit = Complex64::new(0.0, 1.0);
    let kappa: Vec<Complex64> = (0..d)
        .map(|r| i_unit * (0..d).map(|c| critical.jfactor[r][c] * delta[c]).sum::<Complex64>())
        .collect();
    let kappa0: Complex64 = kappa.iter().zip(v.components()).map(|(k, vi)| k * vi).sum();
    let mut out = critical.k.0.clone();
    out[0] += kappa0;
    for (o, k) in out[1..].iter_mut().zip(&kappa) {
        *o += k;
    }
    Ok(KPoint(out))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowConfig {
    pub rtol: f64,
    pub atol: f64,
    pub projection_iters: usize,
    pub projection_tol: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            rtol: 1e-9,
            atol: 1e-12,
            projection_iters: 5,
            projection_tol: 1e-12,
            min_step: 1e-12,
            max_steps: 200_000,
        }
    }
}

/// One sampled upward flow line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowLine {
    pub seed_delta: Vec<f64>,
    pub samples: Vec<(f64, KPoint)>,
    pub heights: Vec<f64>,
    /// Max |Δ(K(s))| over accepted steps.
    pub drift_max: f64,
    /// Max |Re(K·v) − Re(K(0)·v)| over accepted steps.
    pub phase_drift: f64,
    /// Largest single-step decrease of h (0 when h never decreased).
    pub max_height_drop: f64,
    pub steps: usize,
    pub failure: Option<String>,
    /// First point at the bundle's target height, when one was requested
    /// and reached: `(s, K(s))`.
    pub level_hit: Option<(f64, KPoint)>,
}

impl FlowLine {
    pub fn is_complete(&self, checkpoints: usize) -> bool {
        self.failure.is_none() && self.samples.len() == checkpoints
    }
}

struct Projector<'a> {
    problem: &'a Problem,
    vl: Vec<f64>,
    phase: f64,
    tol: f64,
}

impl Projector<'_> {
    fn constraints(&self, k: &[Complex64]) -> [f64; 3] {
        let delta = self.problem.eval_delta(k);
        let kv: f64 = k.iter().zip(&self.vl).map(|(z, v)| z.re * v).sum();
        [delta.re, delta.im, kv - self.phase]
    }

    fn converged(&self, k: &[Complex64], g: &[f64; 3]) -> bool {
        let scale = self.problem.delta_scale(k);
        let knorm = k.iter().map(|z| z.norm()).fold(0.0, f64::max);
        g[0].hypot(g[1]) <= self.tol * scale && g[2].abs() <= 1e-14 * (1.0 + knorm)
    }

    /// Minimum-norm Gauss–Newton onto {Δ = 0, Re(k·v) = phase}.
    fn project(&self, k: &mut [Complex64], iters: usize) -> bool {
        let n = k.len();
        for _ in 0..iters {
            let g = self.constraints(k);
            if self.converged(k, &g) {
                return true;
            }
            let a = self.problem.eval_grad(k);
            let jac = DMatrix::<f64>::from_fn(3, 2 * n, |r, c| {
                let (idx, imag) = (c % n, c >= n);
                match (r, imag) {
                    (0, false) => a[idx].re,
                    (0, true) => -a[idx].im,
                    (1, false) => a[idx].im,
                    (1, true) => a[idx].re,
                    (2, false) => self.vl[idx],
                    _ => 0.0,
                }
            });
            let gram = &jac * jac.transpose();
            let eig = SymmetricEigen::new(gram);
            let emax = eig.eigenvalues.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
            let rhs = DVector::from_column_slice(&[-g[0], -g[1], -g[2]]);
            let proj = eig.eigenvectors.transpose() * rhs;
            let scaled = DVector::from_iterator(
                3,
                proj.iter().zip(eig.eigenvalues.iter()).map(|(p, &l)| if l.abs() > 1e-12 * emax { p / l } else { 0.0 }),
            );
            let y = &eig.eigenvectors * scaled;
            let dx = jac.transpose() * y;
            for (i, z) in k.iter_mut().enumerate() {
                *z += Complex64::new(dx[i], dx[n + i]);
            }
        }
        let g = self.constraints(k);
        self.converged(k, &g) || g[0].hypot(g[1]) <= 1e3 * self.tol * self.problem.delta_scale(k)
    }
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One DP5 step of size `h`; returns (5th-order state, scaled error norm).
fn dp_step(
    problem: &Problem,
    vl: &[f64],
    y: &[Complex64],
    h: f64,
    cfg: &FlowConfig,
) -> Option<(Vec<Complex64>, f64)> {
    let n = y.len();
    let mut ks: Vec<Vec<Complex64>> = Vec::with_capacity(7);
    for stage in 0..7 {
        let mut yi = y.to_vec();
        for (j, kj) in ks.iter().enumerate() {
            let aij = A[stage][j];
            if aij != 0.0 {
                for (a, b) in yi.iter_mut().zip(kj) {
                    *a += b * (h * aij);
                }
            }
        }
        ks.push(field_unchecked(problem, vl, &yi)?);
    }
    let mut y5 = y.to_vec();
    let mut err = 0.0f64;
    for i in 0..n {
        let mut inc5 = Complex64::new(0.0, 0.0);
        let mut inc4 = Complex64::new(0.0, 0.0);
        for s in 0..7 {
            inc5 += ks[s][i] * B5[s];
            inc4 += ks[s][i] * B4[s];
        }
        y5[i] += inc5 * h;
        let e = ((inc5 - inc4) * h).norm();
        let sc = cfg.atol + cfg.rtol * y[i].norm().max(y5[i].norm());
        err = err.max(e / sc);
    }
    Some((y5, err))
}

/// Adaptive DP5 stepper that projects every accepted state back onto the
/// locus and accumulates the line diagnostics.
struct Stepper<'a> {
    problem: &'a Problem,
    v: &'a Velocity,
    proj: Projector<'a>,
    cfg: &'a FlowConfig,
    y: Vec<Complex64>,
    s: f64,
    step: f64,
    h_prev: f64,
}

impl<'a> Stepper<'a> {
    fn new(problem: &'a Problem, v: &'a Velocity, start: &KPoint, cfg: &'a FlowConfig) -> Result<Self> {
        problem.check_point(start.as_slice())?;
        problem.check_velocity(v)?;
        let vl = v.covector();
        let phase = v.contract(start.as_slice()).re;
        let proj = Projector { problem, vl, phase, tol: cfg.projection_tol };
        let mut y = start.0.clone();
        if !proj.project(&mut y, 50) {
            let residual = problem.eval_delta(&y).norm();
            return Err(Error::ProjectionFailure { s: 0.0, residual });
        }
        let h_prev = v.contract(&y).im;
        Ok(Stepper { problem, v, proj, cfg, y, s: 0.0, step: 1e-3, h_prev })
    }

    fn height(&self) -> f64 {
        self.v.contract(&self.y).im
    }

    fn record(&self, line: &mut FlowLine) {
        line.drift_max = line.drift_max.max(self.problem.eval_delta(&self.y).norm());
        line.phase_drift = line.phase_drift.max((self.v.contract(&self.y).re - self.proj.phase).abs());
    }

    /// One projected DP5 step of size `h` from the current state, without
    /// committing it.
    fn trial(&self, h: f64) -> std::result::Result<(Vec<Complex64>, f64), String> {
        let Some((mut y_new, err)) = dp_step(self.problem, &self.proj.vl, &self.y, h, self.cfg) else {
            return Err(Error::SingularPoint { at: KPoint(self.y.clone()).to_string() }.to_string());
        };
        if err <= 1.0 && !self.proj.project(&mut y_new, self.cfg.projection_iters) {
            let residual = self.problem.eval_delta(&y_new).norm();
            return Err(Error::ProjectionFailure { s: self.s + h, residual }.to_string());
        }
        Ok((y_new, err))
    }

    fn commit(&mut self, line: &mut FlowLine, y_new: Vec<Complex64>, h: f64) {
        let h_new = self.v.contract(&y_new).im;
        line.max_height_drop = line.max_height_drop.max(self.h_prev - h_new);
        self.h_prev = h_new;
        self.y = y_new;
        self.s += h;
        line.steps += 1;
        self.record(line);
    }

    /// Attempts one step of at most `h_max`; returns the accepted step size,
    /// or 0 when the step was rejected and will be retried smaller.
    fn advance(&mut self, line: &mut FlowLine, h_max: f64) -> std::result::Result<f64, String> {
        if line.steps >= self.cfg.max_steps {
            return Err(format!("step budget exhausted at s = {}", self.s));
        }
        let h = self.step.min(h_max);
        let (y_new, err) = self.trial(h)?;
        let accepted = err <= 1.0;
        if accepted {
            self.commit(line, y_new, h);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        // Only grow the step from a full (not clamped) step.
        if !accepted || h >= self.step {
            self.step = h * factor;
        }
        if self.step < self.cfg.min_step {
            return Err(Error::StepUnderflow { s: self.s }.to_string());
        }
        Ok(if accepted { h } else { 0.0 })
    }
}

fn empty_line() -> FlowLine {
    FlowLine {
        seed_delta: Vec::new(),
        samples: Vec::new(),
        heights: Vec::new(),
        drift_max: 0.0,
        phase_drift: 0.0,
        max_height_drop: 0.0,
        steps: 0,
        failure: None,
        level_hit: None,
    }
}

/// Integrates one flow line from `start`, recording samples at each value of
/// `s_grid` (which must be ascending and start at 0).
///
/// The start point is first projected onto the locus at its own phase
/// `Re(start·v)`. A failure leaves the samples collected so far and sets
/// `failure`.
pub fn integrate_flow(
    problem: &Problem,
    v: &Velocity,
    start: &KPoint,
    s_grid: &[f64],
    cfg: &FlowConfig,
) -> Result<FlowLine> {
    let mut st = Stepper::new(problem, v, start, cfg)?;
    let mut line = empty_line();
    st.record(&mut line);
    for &target in s_grid {
        while st.s < target {
            if let Err(msg) = st.advance(&mut line, target - st.s) {
                line.failure = Some(msg);
                return Ok(line);
            }
            if (target - st.s).abs() <= 1e-12 * target.max(1.0) {
                st.s = target;
            }
        }
        line.samples.push((target, KPoint(st.y.clone())));
        line.heights.push(st.height());
    }
    Ok(line)
}

/// Follows the flow line from `start` until h first reaches `level`, for at
/// most `s_cap` units of flow time.
///
/// Returns `(s, K(s))` with h(K(s)) = `level` to within 1e-10 (1 + |level|),
/// or the start itself when it already lies at or above the level. Returns
/// `Ok(None)` when the line ends (failure or `s_cap`) below the level.
pub fn integrate_to_height(
    problem: &Problem,
    v: &Velocity,
    start: &KPoint,
    level: f64,
    s_cap: f64,
    cfg: &FlowConfig,
) -> Result<Option<(f64, KPoint)>> {
    let mut st = Stepper::new(problem, v, start, cfg)?;
    if st.height() >= level {
        return Ok(Some((0.0, KPoint(st.y))));
    }
    let tol = 1e-10 * (1.0 + level.abs());
    let mut line = empty_line();
    loop {
        if st.s >= s_cap {
            return Ok(None);
        }
        let (y0, s0, h0) = (st.y.clone(), st.s, st.height());
        let Ok(h) = st.advance(&mut line, s_cap - st.s) else {
            return Ok(None);
        };
        if h == 0.0 || st.height() < level {
            continue;
        }
        // Secant search for the crossing inside the accepted step.
        let (mut lo, mut hi) = ((0.0, h0), (h, st.height()));
        let mut best = (h, st.y.clone(), st.height());
        for _ in 0..40 {
            if (best.2 - level).abs() <= tol {
                break;
            }
            let frac = ((level - lo.1) / (hi.1 - lo.1)).clamp(0.05, 0.95);
            let hs = lo.0 + frac * (hi.0 - lo.0);
            st.y = y0.clone();
            st.s = s0;
            let Ok((y_new, _)) = st.trial(hs) else { break };
            let hh = v.contract(&y_new).im;
            best = (hs, y_new, hh);
            if hh < level {
                lo = (hs, hh);
            } else {
                hi = (hs, hh);
            }
        }
        return Ok(Some((s0 + best.0, KPoint(best.1))));
    }
}

/// How the seed directions on S^{d−1} are connected.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum SeedTopology {
    /// d = 1: the two points ±1.
    Pair,
    /// d = 2: a closed loop in increasing angle; `angles[j]` is the seed angle.
    Loop { angles: Vec<f64> },
    /// d = 3: outward-oriented triangles of an icosphere.
    Mesh { triangles: Vec<[usize; 3]> },
}

/// Linearized upward flow at a critical point in the seed coordinates δ⃗ of
/// [`seed`]: `dδ⃗/ds ≈ A δ⃗` for small real δ⃗. `None` if the field cannot be
/// evaluated.
pub fn linearized_flow(problem: &Problem, v: &Velocity, critical: &CriticalPoint) -> Option<DMatrix<f64>> {
    let d = v.dim();
    let j = crate::linalg::cmatrix(&critical.jfactor);
    let j_inv = j.try_inverse()?;
    let eps = 1e-6 * (1.0 + critical.k.norm());
    let i_unit = Complex64::new(0.0, 1.0);
    let mut a = DMatrix::zeros(d, d);
    for col in 0..d {
        let mut e = vec![0.0; d];
        e[col] = eps;
        let plus = flow_field(problem, v, seed(critical, &e, v).ok()?.as_slice()).ok()?;
        e[col] = -eps;
        let minus = flow_field(problem, v, seed(critical, &e, v).ok()?.as_slice()).ok()?;
        // κ⃗ = i J δ⃗, so δ̇ = −i J⁻¹ κ̇.
        let kdot = DVector::from_iterator(d, (1..=d).map(|r| (plus[r] - minus[r]) / (2.0 * eps)));
        let ddot = (&j_inv * kdot) * (-i_unit);
        for r in 0..d {
            a[(r, col)] = ddot[r].re;
        }
    }
    Some(a)
}

/// Pre-compensation of seed directions for the anisotropic linear flow.
///
/// Near σ, h − h_σ = |δ⃗|²/2 and `dδ⃗/ds ≈ A δ⃗`, so uniform seeds on a small
/// sphere |δ⃗| = κ arrive at a height sphere |δ⃗| = r bunched around the
/// fastest direction of `A`, the more so the smaller κ. A seed direction `u`
/// is therefore read as the direction in which the line should cross radius
/// r, and the line is started from `exp(−A s) u` scaled to κ, with `s`
/// chosen so that `|exp(−A s) u| = κ/r`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedWarp {
    pub a: Vec<Vec<f64>>,
    /// κ/r.
    pub ratio: f64,
}

impl SeedWarp {
    fn pull_back(&self, dir: &[f64]) -> Option<Vec<f64>> {
        let d = dir.len();
        let a = DMatrix::from_fn(d, d, |r, c| self.a[r][c]);
        let u = DVector::from_column_slice(dir);
        let back = |s: f64| (&a * (-s)).exp() * &u;
        let (mut lo, mut hi) = (0.0, 1.0);
        while back(hi).norm() > self.ratio * u.norm() {
            lo = hi;
            hi *= 2.0;
            if hi > 1e6 {
                return None;
            }
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if back(mid).norm() > self.ratio * u.norm() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let out = back(hi);
        out.iter().all(|x| x.is_finite()).then(|| out.iter().copied().collect())
    }
}

/// The warp for seeds at distance `seed_scale` climbing to `level`, with
/// `r = min(√(2g), 0.1 (1 + |k_σ|))` where `g` is the height still to climb.
/// `None` when no correction applies (d = 1, σ at or above the level, or a
/// flow that is not expanding in every direction).
pub fn seed_warp(
    problem: &Problem,
    v: &Velocity,
    critical: &CriticalPoint,
    seed_scale: f64,
    level: Option<f64>,
) -> Option<SeedWarp> {
    let d = v.dim();
    if d < 2 {
        return None;
    }
    let mut reach = 0.1 * (1.0 + critical.k.norm());
    if let Some(l) = level {
        let gap = l - critical.height;
        if !(gap > 0.0) {
            return None;
        }
        reach = reach.min((2.0 * gap).sqrt());
    }
    if !(reach > seed_scale) {
        return None;
    }
    let a = linearized_flow(problem, v, critical)?;
    if a.iter().any(|x| !x.is_finite()) || a.complex_eigenvalues().iter().any(|z| !(z.re > 0.0)) {
        return None;
    }
    Some(SeedWarp { a: (0..d).map(|r| (0..d).map(|c| a[(r, c)]).collect()).collect(), ratio: seed_scale / reach })
}

/// Seed displacement of length `scale` for the seed direction `dir`.
fn seed_delta(warp: &Option<SeedWarp>, dir: &[f64], scale: f64) -> Vec<f64> {
    let u = warp.as_ref().and_then(|w| w.pull_back(dir)).unwrap_or_else(|| dir.to_vec());
    let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter().map(|x| x * scale / n).collect()
}

/// Unit seed directions and their adjacency for `n_seeds` requested lines.
///
/// For d = 3 the smallest icosphere with at least `n_seeds` vertices is used
/// (12, 42, 162, 642, … vertices).
pub fn seed_directions(d: usize, n_seeds: usize) -> Result<(Vec<Vec<f64>>, SeedTopology)> {
    match d {
        1 => Ok((vec![vec![1.0], vec![-1.0]], SeedTopology::Pair)),
        2 => {
            let n = n_seeds.max(3);
            let angles: Vec<f64> = (0..n).map(|j| std::f64::consts::TAU * j as f64 / n as f64).collect();
            let dirs = angles.iter().map(|a| vec![a.cos(), a.sin()]).collect();
            Ok((dirs, SeedTopology::Loop { angles }))
        }
        3 => {
            let mut level = 0;
            while 10 * 4usize.pow(level) + 2 < n_seeds {
                level += 1;
            }
            let (verts, tris) = icosphere(level);
            Ok((verts.into_iter().map(|v| v.to_vec()).collect(), SeedTopology::Mesh { triangles: tris }))
        }
        _ => Err(Error::UnsupportedDimension(d)),
    }
}

/// Icosphere with `level` midpoint subdivisions; triangles oriented with
/// outward normals.
pub fn icosphere(level: u32) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    for v in &mut verts {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    }
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut cache = std::collections::HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let (p, q) = (verts[a], verts[b]);
                let mut m = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0];
                let n = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                m.iter_mut().for_each(|x| *x /= n);
                verts.push(m);
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    for tri in &mut tris {
        let [a, b, c] = *tri;
        let (p, q, r) = (verts[a], verts[b], verts[c]);
        let u = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
        let w = [r[0] - p[0], r[1] - p[1], r[2] - p[2]];
        let nrm = [u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0]];
        if nrm[0] * p[0] + nrm[1] * p[1] + nrm[2] * p[2] < 0.0 {
            tri.swap(1, 2);
        }
    }
    (verts, tris)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleConfig {
    pub n_seeds: usize,
    /// |δ⃗|; `None` uses `seed_scale_rel (1 + |k_σ|)`.
    pub seed_scale: Option<f64>,
    pub seed_scale_rel: f64,
    pub s_max: f64,
    pub checkpoints: usize,
    pub flow: FlowConfig,
    /// Also follow every line to this height; see [`FlowLine::level_hit`].
    pub level: Option<f64>,
    /// Flow-time limit for reaching `level`.
    pub level_s_cap: f64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        BundleConfig {
            n_seeds: 64,
            seed_scale: None,
            seed_scale_rel: 1e-2,
            s_max: 10.0,
            checkpoints: 32,
            flow: FlowConfig::default(),
            level: None,
            level_s_cap: 1000.0,
        }
    }
}

impl BundleConfig {
    pub fn seed_scale_for(&self, critical: &CriticalPoint) -> f64 {
        self.seed_scale.unwrap_or(self.seed_scale_rel * (1.0 + critical.k.norm()))
    }
}

/// `[0]` followed by `checkpoints − 1` geometrically spaced values from
/// `s_max/1000` to `s_max`.
pub fn checkpoint_grid(s_max: f64, checkpoints: usize) -> Vec<f64> {
    let m = checkpoints.max(2) - 1;
    let mut grid = vec![0.0];
    for j in 0..m {
        let frac = if m == 1 { 1.0 } else { j as f64 / (m - 1) as f64 };
        grid.push(s_max * 10f64.powf(-3.0 * (1.0 - frac)));
    }
    grid
}

/// A dual thimble represented by flow lines sharing common checkpoints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThimbleBundle {
    pub critical: CriticalPoint,
    pub velocity: Velocity,
    pub lines: Vec<FlowLine>,
    pub s_grid: Vec<f64>,
    pub seed_scale: f64,
    pub topology: SeedTopology,
    /// See [`SeedWarp`].
    pub warp: Option<SeedWarp>,
    /// Target height of the lines' `level_hit`s.
    pub level: Option<f64>,
}

impl ThimbleBundle {
    pub fn failed_lines(&self) -> usize {
        let n = self.s_grid.len();
        self.lines.iter().filter(|l| !l.is_complete(n)).count()
    }
}

/// Continues `line` from its last sample below `level` until it reaches it,
/// within a total flow time `s_cap`.
pub fn line_crossing(
    problem: &Problem,
    v: &Velocity,
    line: &FlowLine,
    level: f64,
    s_cap: f64,
    cfg: &FlowConfig,
) -> Option<(f64, KPoint)> {
    let below = line.heights.iter().take_while(|&&h| h < level).count();
    let (s0, from) = &line.samples[below.saturating_sub(1)];
    let s0 = *s0;
    if below == 0 {
        return Some((s0, from.clone()));
    }
    let hit = integrate_to_height(problem, v, from, level, s_cap - s0, cfg).ok()??;
    Some((s0 + hit.0, hit.1))
}

fn integrate_seed(
    problem: &Problem,
    v: &Velocity,
    critical: &CriticalPoint,
    delta: Vec<f64>,
    s_grid: &[f64],
    cfg: &BundleConfig,
) -> FlowLine {
    let start = match seed(critical, &delta, v) {
        Ok(s) => s,
        Err(e) => return failed_line(delta, e.to_string()),
    };
    match integrate_flow(problem, v, &start, s_grid, &cfg.flow) {
        Ok(mut line) => {
            if let Some(level) = cfg.level {
                if !line.samples.is_empty() {
                    line.level_hit = line_crossing(problem, v, &line, level, cfg.level_s_cap, &cfg.flow);
                }
            }
            line.seed_delta = delta;
            line
        }
        Err(e) => failed_line(delta, e.to_string()),
    }
}

fn failed_line(delta: Vec<f64>, msg: String) -> FlowLine {
    FlowLine {
        seed_delta: delta,
        samples: Vec::new(),
        heights: Vec::new(),
        drift_max: 0.0,
        phase_drift: 0.0,
        max_height_drop: 0.0,
        steps: 0,
        failure: Some(msg),
        level_hit: None,
    }
}

/// Integrates one flow line per seed direction on S^{d−1}, scaled by the
/// seed scale. Bundles with more than 10% failed lines are rejected.
pub fn build_dual_thimble(
    problem: &Problem,
    v: &Velocity,
    critical: &CriticalPoint,
    cfg: &BundleConfig,
) -> Result<ThimbleBundle> {
    problem.check_velocity(v)?;
    if critical.degenerate {
        return Err(Error::Degenerate);
    }
    let (dirs, topology) = seed_directions(problem.d(), cfg.n_seeds)?;
    let seed_scale = cfg.seed_scale_for(critical);
    let s_grid = checkpoint_grid(cfg.s_max, cfg.checkpoints);
    let warp = seed_warp(problem, v, critical, seed_scale, cfg.level);
    let lines: Vec<FlowLine> = dirs
        .into_par_iter()
        .map(|dir| {
            let delta = seed_delta(&warp, &dir, seed_scale);
            integrate_seed(problem, v, critical, delta, &s_grid, cfg)
        })
        .collect();
    let bundle = ThimbleBundle { critical: critical.clone(), velocity: v.clone(), lines, s_grid, seed_scale, topology, warp, level: cfg.level };
    let failed = bundle.failed_lines();
    if failed * 10 > bundle.lines.len() {
        return Err(Error::BundleRejected { failed, total: bundle.lines.len() });
    }
    Ok(bundle)
}

/// Adds flow lines between adjacent d = 2 seeds whose images at some
/// checkpoint subtend more than `max_angle` at the origin of the projected
/// plane, until no such edge remains or `max_lines` is reached.
///
/// Returns the number of lines added.
pub fn refine_loop(
    problem: &Problem,
    bundle: &mut ThimbleBundle,
    max_angle: f64,
    max_lines: usize,
    cfg: &BundleConfig,
) -> usize {
    let SeedTopology::Loop { angles } = &bundle.topology else {
        return 0;
    };
    let mut angles = angles.clone();
    let mut added = 0;
    let n_ck = bundle.s_grid.len();
    loop {
        let n = bundle.lines.len();
        let mut split = Vec::new();
        for j in 0..n {
            let (a, b) = (&bundle.lines[j], &bundle.lines[(j + 1) % n]);
            if !a.is_complete(n_ck) || !b.is_complete(n_ck) {
                continue;
            }
            let hits = a.level_hit.iter().zip(&b.level_hit);
            let wide = a.samples.iter().zip(&b.samples).chain(hits).any(|((_, ka), (_, kb))| {
                let (xa, ya) = (ka.0[1].im, ka.0[2].im);
                let (xb, yb) = (kb.0[1].im, kb.0[2].im);
                let cross = xa * yb - ya * xb;
                let dot = xa * xb + ya * yb;
                cross.atan2(dot).abs() > max_angle
            });
            if wide {
                split.push(j);
            }
        }
        if split.is_empty() || bundle.lines.len() + split.len() > max_lines {
            break;
        }
        let new_angles: Vec<(usize, f64)> = split
            .iter()
            .map(|&j| {
                let a0 = angles[j];
                let a1 = if j + 1 == n { angles[0] + std::f64::consts::TAU } else { angles[j + 1] };
                (j, 0.5 * (a0 + a1))
            })
            .collect();
        let scale = bundle.seed_scale;
        let new_lines: Vec<FlowLine> = new_angles
            .par_iter()
            .map(|&(_, ang)| {
                let delta = seed_delta(&bundle.warp, &[ang.cos(), ang.sin()], scale);
                integrate_seed(problem, &bundle.velocity, &bundle.critical, delta, &bundle.s_grid, cfg)
            })
            .collect();
        // Insert from the back so earlier indices stay valid.
        for ((j, ang), line) in new_angles.into_iter().zip(new_lines).rev() {
            bundle.lines.insert(j + 1, line);
            angles.insert(j + 1, ang);
            added += 1;
        }
    }
    bundle.topology = SeedTopology::Loop { angles };
    added
}
