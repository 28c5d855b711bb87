mod common;

use common::*;
use num_complex::Complex64;
use proptest::prelude::*;
use thimble_core::critical::{critical_residual, find_critical_points, hessian, SearchConfig};
use thimble_core::linalg::cmatrix;
use thimble_core::{Problem, Velocity};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// k⁰(k⃗) on the locus near `k`, by Newton in k⁰.
fn k0_on_locus(problem: &Problem, k: &[Complex64], spatial: &[Complex64]) -> Complex64 {
    let mut x: Vec<Complex64> = std::iter::once(k[0]).chain(spatial.iter().copied()).collect();
    for _ in 0..50 {
        let step = problem.eval_delta(&x) / problem.eval_grad(&x)[0];
        x[0] -= step;
        if step.norm() < 1e-15 * (1.0 + x[0].norm()) {
            break;
        }
    }
    x[0]
}

/// −i ∂ᵢ∂ⱼ(k⁰(k⃗) − k⃗·v⃗) by central differences of the implicit k⁰.
fn fd_hessian(problem: &Problem, v: &Velocity, k: &[Complex64]) -> Vec<Vec<Complex64>> {
    let d = v.dim();
    let step = 1e-4;
    let f = |da: Option<(usize, f64)>, db: Option<(usize, f64)>| {
        let mut s = k[1..].to_vec();
        for (i, h) in [da, db].into_iter().flatten() {
            s[i] += h;
        }
        let k0 = k0_on_locus(problem, k, &s);
        let kv: Complex64 = s.iter().zip(v.components()).map(|(a, b)| a * b).sum();
        k0 - kv
    };
    let mut out = vec![vec![c(0.0, 0.0); d]; d];
    for a in 0..d {
        for b in 0..d {
            let second = (f(Some((a, step)), Some((b, step))) - f(Some((a, step)), Some((b, -step)))
                - f(Some((a, -step)), Some((b, step)))
                + f(Some((a, -step)), Some((b, -step))))
                / (4.0 * step * step);
            out[a][b] = -c(0.0, 1.0) * second;
        }
    }
    out
}

#[test]
fn demo_points_solve_the_critical_system() {
    for (p, v) in demo_frames() {
        let s = find_critical_points(&p, &v, &SearchConfig::default()).unwrap();
        assert!(!s.empty, "no points at {v}");
        for cp in &s.points {
            let scale = p.delta_scale(cp.k.as_slice());
            let r = critical_residual(&p, &v, cp.k.as_slice());
            assert!(r.iter().all(|z| z.norm() < 1e-10 * scale), "residual {r:?} at {} for {v}", cp.k);
        }
        for w in s.points.windows(2) {
            assert!(w[0].height >= w[1].height - 1e-9);
        }
        // Δ has real coefficients, so critical points come in conjugate pairs.
        for cp in &s.points {
            let mirror = cp.k.conj();
            assert!(
                s.points.iter().any(|q| q.k.distance_max(&mirror) < 1e-8 * (1.0 + cp.k.norm())),
                "conjugate of {} missing at {v}",
                cp.k
            );
        }
    }
}

#[test]
fn tachyonic_top_point_is_closed_form() {
    let p = problem(TACHYONIC_2D, 2);
    let s = find_critical_points(&p, &vel(&[1.0, 1.0]), &SearchConfig::default()).unwrap();
    assert_eq!(s.points.len(), 2);
    let top = &s.points[0].k;
    let expected = [c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0)];
    assert!(top.as_slice().iter().zip(&expected).all(|(a, b)| (a - b).norm() < 1e-10), "{top}");
    assert!((s.points[0].height - 1.0).abs() < 1e-10);
}

#[test]
fn advection_diffusion_closed_form() {
    for (mu, cc) in [(1.0, 1.0), (0.2, 1.0), (0.5, -2.0)] {
        let expr = format!("-i*k0 + i*{cc}*k1 + k1^2 - {mu}");
        let p = problem(&expr, 1);
        let s = find_critical_points(&p, &vel(&[0.0]), &SearchConfig::default()).unwrap();
        assert_eq!(s.points.len(), 1, "{expr}");
        let k = s.points[0].k.as_slice();
        let h = mu - cc * cc / 4.0;
        assert!((k[0] - c(0.0, h)).norm() < 1e-10, "{expr}: {:?}", k);
        assert!((k[1] - c(0.0, -cc / 2.0)).norm() < 1e-10, "{expr}: {:?}", k);
        assert!((s.points[0].height - h).abs() < 1e-10);
        assert!((s.points[0].hessian[0][0] - c(-2.0, 0.0)).norm() < 1e-10);
    }
}

#[test]
fn hessian_factor_and_finite_differences() {
    for (p, v) in demo_frames() {
        let s = find_critical_points(&p, &v, &SearchConfig::default()).unwrap();
        for cp in &s.points {
            assert!(!cp.degenerate, "{} at {v}", cp.k);
            let h = cmatrix(&cp.hessian);
            let j = cmatrix(&cp.jfactor);
            let h_inv = h.clone().try_inverse().unwrap();
            let residual = (&j * j.transpose() + &h_inv).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(residual < 1e-10, "J Jᵀ + H⁻¹ = {residual:e} at {} for {v}", cp.k);
            let det_gap = (cp.detj.norm() - cp.det_hessian.norm().powf(-0.5)).abs();
            assert!(det_gap < 1e-10, "|det J| gap {det_gap:e} at {v}");
            assert!((j.determinant() - cp.detj).norm() < 1e-10);

            let direct = hessian(&p, &v, cp.k.as_slice()).unwrap();
            let fd = fd_hessian(&p, &v, cp.k.as_slice());
            for a in 0..v.dim() {
                for b in 0..v.dim() {
                    let gap = (direct[(a, b)] - fd[a][b]).norm();
                    assert!(gap < 1e-6 * (1.0 + direct[(a, b)].norm()), "H[{a}][{b}] gap {gap:e} at {v}");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_frames_give_valid_points(v1 in -2.0..3.0f64, v2 in -2.0..3.0f64, tachyonic in any::<bool>()) {
        let p = problem(if tachyonic { TACHYONIC_2D } else { PRINTED_2D }, 2);
        let v = vel(&[v1, v2]);
        let cfg = SearchConfig { starts: 64, ..SearchConfig::default() };
        let s = find_critical_points(&p, &v, &cfg).unwrap();
        for cp in &s.points {
            let scale = p.delta_scale(cp.k.as_slice());
            prop_assert!(cp.residual < 1e-10 * scale);
            let (h, phase) = thimble_core::critical::morse_height(cp.k.as_slice(), &v);
            prop_assert_eq!((h, phase), (cp.height, cp.phase));
        }
    }
}
