//! Saddle-point asymptotics of the retarded Green function, per-frame growth
//! classification, growth maps and the maximum-growth frame.
//!
//! In the frame moving with velocity v⃗,
//!
//! ```text
//! G(t, x⃗ + v⃗t) ~ (2πt)^{-d/2} i^{-1} Σ_σ ⟨C,K_σ⟩ e^{-i k_σ·v t} e^{i k⃗_σ·x⃗} det J_σ adj D(k_σ) / ∂₀Δ(k_σ)
//! ```

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critical::{find_critical_points, CriticalPoint, SearchConfig};
use crate::error::{Error, Result};
use crate::pipeline::{analyze_frame, AnalysisConfig};
use crate::problem::{KPoint, Problem, Velocity};
use crate::roots::{polynomial_roots, k0_polynomial};

/// Rates within this distance of zero count as marginal.
pub const RATE_TOL: f64 = 1e-8;

/// One summand of the asymptotic expansion at a given (t, x⃗).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoticTerm {
    pub sigma_id: usize,
    /// h(k_σ, v): the term grows like e^{rate·t}.
    pub rate: f64,
    /// −Re(k_σ·v): the term oscillates like e^{i·phase_rate·t}.
    pub phase_rate: f64,
    /// Prefactor excluding e^{−ik_σ·vt}; row-major N×N.
    pub amplitude: Vec<Vec<Complex64>>,
    pub coefficient: i32,
}

impl AsymptoticTerm {
    /// The term's value at time `t`, including the exponential factor.
    pub fn value(&self, t: f64) -> Vec<Vec<Complex64>> {
        let e = Complex64::new(self.rate * t, self.phase_rate * t).exp();
        self.amplitude.iter().map(|row| row.iter().map(|a| a * e).collect()).collect()
    }
}

/// Builds the summand of critical point `cp` (with intersection coefficient
/// `coefficient`) at time `t` and offset `x` from the moving frame.
pub fn asymptotic_term(
    problem: &Problem,
    sigma_id: usize,
    cp: &CriticalPoint,
    coefficient: i32,
    t: f64,
    x: &[f64],
) -> Result<AsymptoticTerm> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTime(t));
    }
    let d = problem.d();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    let n = problem.n();
    let zero = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    let (rate, phase_rate) = (cp.height, -cp.phase);
    if coefficient == 0 {
        return Ok(AsymptoticTerm { sigma_id, rate, phase_rate, amplitude: zero, coefficient });
    }
    if cp.degenerate {
        return Err(Error::Degenerate);
    }
    let k = cp.k.as_slice();
    let d0 = problem.eval_grad(k)[0];
    if d0.norm() <= 1e-14 * problem.delta_scale(k) {
        return Err(Error::SingularSlice { at: cp.k.to_string() });
    }
    let i_unit = Complex64::new(0.0, 1.0);
    let kx: Complex64 = k[1..].iter().zip(x).map(|(a, b)| a * b).sum();
    let scalar = (2.0 * std::f64::consts::PI * t).powf(-(d as f64) / 2.0) / i_unit
        * f64::from(coefficient)
        * (i_unit * kx).exp()
        * cp.detj
        / d0;
    let adj = problem.eval_adjugate(k);
    let amplitude = (0..n).map(|r| (0..n).map(|c| adj[r * n + c] * scalar).collect()).collect();
    Ok(AsymptoticTerm { sigma_id, rate, phase_rate, amplitude, coefficient })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoticGreen {
    pub t: f64,
    pub x: Vec<f64>,
    pub value: Vec<Vec<Complex64>>,
    pub terms: Vec<AsymptoticTerm>,
    /// Set when |k_σ·v t| ≫ |k⃗_σ·x⃗| does not hold for a contributing term.
    pub warning: Option<String>,
}

/// Sums the asymptotic terms of `points` paired with their coefficients.
pub fn green_asymptotic(
    problem: &Problem,
    points: &[(usize, &CriticalPoint, i32)],
    t: f64,
    x: &[f64],
) -> Result<AsymptoticGreen> {
    let n = problem.n();
    let mut value = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    let mut terms = Vec::with_capacity(points.len());
    let mut warning = None;
    for &(id, cp, coefficient) in points {
        let term = asymptotic_term(problem, id, cp, coefficient, t, x)?;
        if coefficient != 0 {
            let kv = Complex64::new(cp.phase, cp.height).norm() * t;
            let kx: Complex64 = cp.k.spatial().iter().zip(x).map(|(a, b)| a * b).sum();
            if kv < 10.0 * kx.norm() {
                warning = Some(format!(
                    "critical point {id}: |k·v t| = {kv:.3e} is not large against |k·x| = {:.3e}",
                    kx.norm()
                ));
            }
            for (row, trow) in value.iter_mut().zip(term.value(t)) {
                for (a, b) in row.iter_mut().zip(trow) {
                    *a += b;
                }
            }
        }
        terms.push(term);
    }
    Ok(AsymptoticGreen { t, x: x.to_vec(), value, terms, warning })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Growing,
    Marginal,
    Decaying,
    Zero,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Growing => "growing",
            Verdict::Marginal => "marginal",
            Verdict::Decaying => "decaying",
            Verdict::Zero => "zero",
            Verdict::Inconclusive => "inconclusive",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameClassification {
    pub verdict: Verdict,
    /// Largest contributing height, when some critical point contributes.
    pub rate: Option<f64>,
    pub contributing: Vec<usize>,
}

/// Classifies a frame from `(height, coefficient)` per critical point;
/// `None` marks an inconclusive intersection form.
///
/// Inconclusive points below the highest contributor cannot change the
/// leading rate and are ignored; any inconclusive point above it makes the
/// verdict inconclusive.
pub fn classify(points: &[(f64, Option<i32>)]) -> FrameClassification {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[b].0.total_cmp(&points[a].0));
    let contributing: Vec<usize> =
        order.iter().copied().filter(|&i| matches!(points[i].1, Some(c) if c != 0)).collect();
    let top = contributing.first().map(|&i| points[i].0);
    let blocked = order
        .iter()
        .any(|&i| points[i].1.is_none() && top.map_or(true, |h| points[i].0 >= h - RATE_TOL));
    let verdict = if blocked {
        Verdict::Inconclusive
    } else {
        match top {
            None => Verdict::Zero,
            Some(h) if h > RATE_TOL => Verdict::Growing,
            Some(h) if h < -RATE_TOL => Verdict::Decaying,
            Some(_) => Verdict::Marginal,
        }
    };
    FrameClassification { verdict, rate: top, contributing }
}

/// ψ(k⃗): the largest Im k⁰ over the k⁰-roots at real k⃗, with that root.
pub fn psi(problem: &Problem, kvec: &[f64]) -> Result<(f64, Complex64)> {
    let kc: Vec<Complex64> = kvec.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let roots = polynomial_roots(&k0_polynomial(problem, &kc)?)?;
    roots
        .into_iter()
        .map(|r| (r.im, r))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| Error::Numerical("no k0 roots".into()))
}

/// ∇ψ from implicit differentiation of the top root: ∂ᵢk⁰ = −∂ᵢΔ/∂₀Δ.
fn psi_gradient(problem: &Problem, kvec: &[f64], root: Complex64) -> Option<Vec<f64>> {
    let mut k = vec![root];
    k.extend(kvec.iter().map(|&x| Complex64::new(x, 0.0)));
    let g = problem.eval_grad(&k);
    if g[0].norm() <= 1e-12 * problem.delta_scale(&k) {
        return None;
    }
    Some(g[1..].iter().map(|gi| (-gi / g[0]).im).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaxGrowthConfig {
    pub starts: usize,
    pub box_radius: f64,
    pub seed: u64,
    /// Best candidates refined by local ascent.
    pub ascents: usize,
}

impl Default for MaxGrowthConfig {
    fn default() -> Self {
        MaxGrowthConfig { starts: 256, box_radius: 3.0, seed: 0x5eed, ascents: 32 }
    }
}

impl MaxGrowthConfig {
    pub fn from_search(search: &SearchConfig) -> Self {
        MaxGrowthConfig { starts: search.starts, box_radius: search.box_radius, seed: search.seed, ..Default::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaxGrowthResult {
    pub k_m: KPoint,
    pub v_m: Velocity,
    pub rate: f64,
    pub attained: bool,
    /// sup ψ when ψ is bounded on the probed shells; every point of C has
    /// h = Im k⁰ ≤ this value.
    pub contour_bound: Option<f64>,
}

fn ascend(problem: &Problem, start: &[f64], radius: f64) -> Option<(Vec<f64>, f64, Complex64)> {
    let mut x = start.to_vec();
    let (mut f, mut root) = psi(problem, &x).ok()?;
    let mut step = 0.1;
    for _ in 0..400 {
        let Some(g) = psi_gradient(problem, &x, root) else { break };
        let gn = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        if gn < 1e-11 {
            break;
        }
        let mut moved = false;
        while step > 1e-14 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + step * b / gn).collect();
            if trial.iter().any(|t| t.abs() > 4.0 * radius) {
                step *= 0.5;
                continue;
            }
            match psi(problem, &trial) {
                Ok((ft, rt)) if ft > f => {
                    x = trial;
                    f = ft;
                    root = rt;
                    step *= 2.0;
                    moved = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !moved {
            break;
        }
    }
    Some((x, f, root))
}

fn fd_hessian(problem: &Problem, x: &[f64]) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let d = x.len();
    let grad_at = |p: &[f64]| -> Option<Vec<f64>> {
        let (_, r) = psi(problem, p).ok()?;
        psi_gradient(problem, p, r)
    };
    let g0 = grad_at(x)?;
    let h = 1e-5 * (1.0 + x.iter().fold(0.0f64, |m, a| m.max(a.abs())));
    let mut hess = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (gp, gm) = (grad_at(&xp)?, grad_at(&xm)?);
        for i in 0..d {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    Some((g0, sym))
}

/// Newton polish of ∇ψ = 0, used only where the Hessian is negative definite.
fn polish(problem: &Problem, x: &mut Vec<f64>) -> Option<DMatrix<f64>> {
    let mut last = None;
    for _ in 0..20 {
        let (g, hess) = fd_hessian(problem, x)?;
        let eig = SymmetricEigen::new(hess.clone());
        if eig.eigenvalues.iter().any(|&l| l >= -1e-8) {
            return last.or(Some(hess));
        }
        let step = hess.lu().solve(&nalgebra::DVector::from_column_slice(&g))?;
        let f0 = psi(problem, x).ok()?.0;
        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a - b).collect();
        if psi(problem, &trial).ok()?.0 < f0 - 1e-14 * (1.0 + f0.abs()) {
            return Some(fd_hessian(problem, x)?.1);
        }
        *x = trial;
        let done = step.iter().fold(0.0f64, |m, a| m.max(a.abs())) < 1e-13;
        last = Some(fd_hessian(problem, x)?.1);
        if done {
            break;
        }
    }
    last
}

/// Maximizes ψ over real k⃗: a coarse grid plus random starts, local ascent
/// from the best candidates, and Newton polish on ∇ψ = 0.
pub fn max_growth(problem: &Problem, cfg: &MaxGrowthConfig) -> Result<MaxGrowthResult> {
    let d = problem.d();
    let r = cfg.box_radius;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_axis: usize = match d {
        1 => 81,
        2 => 41,
        _ => 17,
    };
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    let total = per_axis.pow(d as u32);
    for idx in 0..total {
        let mut rem = idx;
        let mut p = Vec::with_capacity(d);
        for _ in 0..d {
            p.push(-r + 2.0 * r * (rem % per_axis) as f64 / (per_axis - 1) as f64);
            rem /= per_axis;
        }
        candidates.push(p);
    }
    for _ in 0..cfg.starts {
        candidates.push((0..d).map(|_| rng.gen_range(-r..=r)).collect());
    }
    let mut scored: Vec<(f64, Vec<f64>)> = candidates
        .into_par_iter()
        .filter_map(|p| psi(problem, &p).ok().map(|(f, _)| (f, p)))
        .collect();
    if scored.is_empty() {
        return Err(Error::Numerical("ψ could not be evaluated at any start".into()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal)));
    let grid_max = scored[0].0;
    let ascents: Vec<(Vec<f64>, f64, Complex64)> = scored
        .iter()
        .take(cfg.ascents.max(1))
        .collect::<Vec<_>>()
        .into_par_iter()
        .filter_map(|(_, p)| ascend(problem, p, r))
        .collect();
    let (mut best_x, mut best_f, _) = ascents
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal)))
        .ok_or_else(|| Error::Numerical("ψ ascent failed".into()))?;
    let hess = polish(problem, &mut best_x);
    let (f_polished, root) = psi(problem, &best_x)?;
    best_f = best_f.max(f_polished);
    let isolated = hess
        .map(|h| SymmetricEigen::new(h).eigenvalues.iter().all(|&l| l < -1e-6))
        .unwrap_or(false);
    let interior = best_x.iter().all(|a| a.abs() < 0.95 * r);

    // ψ on far shells: growth there means sup ψ is not captured by the box.
    let mut shell_max = f64::NEG_INFINITY;
    for scale in [2.0, 4.0] {
        for _ in 0..64 {
            let dir: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let n = dir.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            let p: Vec<f64> = dir.iter().map(|a| a / n * scale * r).collect();
            if let Ok((f, _)) = psi(problem, &p) {
                shell_max = shell_max.max(f);
            }
        }
    }
    let sup = best_f.max(grid_max);
    let bounded = shell_max <= sup + 1e-9 * (1.0 + sup.abs());
    let attained = isolated && interior && bounded;

    let mut k = vec![root];
    k.extend(best_x.iter().map(|&a| Complex64::new(a, 0.0)));
    let g = problem.eval_grad(&k);
    let vm: Vec<Complex64> = g[1..].iter().map(|gi| -gi / g[0]).collect();
    let imag = vm.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    let vnorm = vm.iter().map(|z| z.re * z.re).sum::<f64>().sqrt();
    if attained && imag > 1e-8 * (1.0 + vnorm) {
        return Err(Error::ComplexVelocity { imag });
    }
    Ok(MaxGrowthResult {
        k_m: KPoint(k),
        v_m: Velocity(vm.iter().map(|z| z.re).collect()),
        rate: root.im,
        attained,
        contour_bound: bounded.then_some(sup),
    })
}

/// Uniform grid with `n` nodes per axis over `[vmin, vmax]^d`, first axis
/// slowest.
pub fn velocity_grid(d: usize, vmin: f64, vmax: f64, n: usize) -> Vec<Velocity> {
    let n = n.max(1);
    let coord = |j: usize| if n == 1 { vmin } else { vmin + (vmax - vmin) * j as f64 / (n - 1) as f64 };
    (0..n.pow(d as u32))
        .map(|idx| {
            let mut v = vec![0.0; d];
            let mut rem = idx;
            for axis in (0..d).rev() {
                v[axis] = coord(rem % n);
                rem /= n;
            }
            Velocity(v)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthMapRow {
    pub v: Velocity,
    /// Height of the highest critical point found.
    pub h: Option<f64>,
    pub verdict: Option<Verdict>,
    pub rate: Option<f64>,
    pub error: Option<String>,
}

/// Height of the highest critical point at every grid node; with `full`,
/// also the complete frame verdict. Node failures are recorded per row.
pub fn growth_map(
    problem: &Problem,
    grid: &[Velocity],
    search: &SearchConfig,
    full: Option<&AnalysisConfig>,
) -> Vec<GrowthMapRow> {
    grid.par_iter()
        .map(|v| {
            let mut row = GrowthMapRow { v: v.clone(), h: None, verdict: None, rate: None, error: None };
            match full {
                None => match find_critical_points(problem, v, search) {
                    Ok(s) => row.h = s.points.first().map(|p| p.height),
                    Err(e) => row.error = Some(e.to_string()),
                },
                Some(cfg) => match analyze_frame(problem, v, cfg) {
                    Ok(a) => {
                        row.h = a.sigmas.first().map(|s| s.critical.height);
                        row.verdict = Some(a.classification.verdict);
                        row.rate = a.classification.rate;
                    }
                    Err(e) => row.error = Some(e.to_string()),
                },
            }
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::analyze_point;
    use crate::problem::parse_dispersion;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn classification_rules() {
        assert_eq!(classify(&[(1.0, Some(1)), (-1.0, Some(0))]).verdict, Verdict::Growing);
        assert_eq!(classify(&[(0.0, Some(-1))]).verdict, Verdict::Marginal);
        assert_eq!(classify(&[(-0.3, Some(1))]).verdict, Verdict::Decaying);
        assert_eq!(classify(&[(0.5, Some(0)), (-0.5, Some(0))]).verdict, Verdict::Zero);
        assert_eq!(classify(&[(1.0, Some(1)), (-1.0, None)]).verdict, Verdict::Growing);
        assert_eq!(classify(&[(1.0, None), (-1.0, Some(1))]).verdict, Verdict::Inconclusive);
        assert_eq!(classify(&[(1.0, Some(0)), (-1.0, None)]).verdict, Verdict::Inconclusive);
        let cl = classify(&[(-1.0, Some(1)), (0.7, Some(-1))]);
        assert_eq!(cl.contributing, vec![1, 0]);
        assert_eq!(cl.rate, Some(0.7));
    }

    #[test]
    fn advection_diffusion_term_is_heat_kernel() {
        let (mu, cc) = (1.0, 1.0);
        let p = parse_dispersion("-i*k0 + i*k1 + k1^2 - 1", 1).unwrap();
        let v = Velocity::zero(1);
        let kp = KPoint(vec![c(0.0, mu - cc * cc / 4.0), c(0.0, -cc / 2.0)]);
        let cp = analyze_point(&p, &v, &kp).unwrap();
        for t in [1.0, 10.0, 30.0] {
            let g = green_asymptotic(&p, &[(0, &cp, 1)], t, &[0.0]).unwrap();
            let exact = ((mu - cc * cc / 4.0) * t).exp() / (4.0 * std::f64::consts::PI * t).sqrt();
            let val = g.value[0][0];
            assert!((val.re - exact).abs() < 1e-10 * exact, "{val} vs {exact}");
            assert!(val.im.abs() < 1e-10 * exact);
        }
    }

    #[test]
    fn tachyonic_term_magnitude() {
        let p = parse_dispersion("k1^2 + k2^2 - (k0 - k1 - k2)^2 - 1", 2).unwrap();
        let v = Velocity::new(vec![1.0, 1.0]).unwrap();
        let cp = analyze_point(&p, &v, &KPoint(vec![c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0)])).unwrap();
        let t = 20.0;
        let g = green_asymptotic(&p, &[(0, &cp, 1)], t, &[0.0, 0.0]).unwrap();
        let exact = t.exp() / (4.0 * std::f64::consts::PI * t);
        assert!((g.value[0][0].norm() - exact).abs() < 1e-10 * exact);
        let zero = green_asymptotic(&p, &[(0, &cp, 0)], t, &[0.0, 0.0]).unwrap();
        assert_eq!(zero.value[0][0], c(0.0, 0.0));
        assert!(green_asymptotic(&p, &[(0, &cp, 1)], 0.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn max_growth_examples() {
        let ad = parse_dispersion("-i*k0 + i*k1 + k1^2 - 1", 1).unwrap();
        let m = max_growth(&ad, &MaxGrowthConfig::default()).unwrap();
        assert!(m.attained);
        assert!((m.rate - 1.0).abs() < 1e-8);
        assert!((m.k_m.0[0] - c(0.0, 1.0)).norm() < 1e-8 && m.k_m.0[1].norm() < 1e-8);
        assert!((m.v_m.0[0] - 1.0).abs() < 1e-8);

        let printed = parse_dispersion("k1^2 + k2^2 - (k0 - k1 - k2)^2 + 1", 2).unwrap();
        let m = max_growth(&printed, &MaxGrowthConfig::default()).unwrap();
        assert!(!m.attained);
        assert!(m.rate.abs() < 1e-10);
        assert_eq!(m.contour_bound.map(|b| b.abs() < 1e-10), Some(true));
    }

    #[test]
    fn grid_layout() {
        let g = velocity_grid(2, 0.0, 1.0, 3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[1].0, vec![0.0, 0.5]);
        assert_eq!(g[3].0, vec![0.5, 0.0]);
    }
}
