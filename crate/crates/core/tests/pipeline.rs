mod common;

use common::*;
use thimble_core::asymptotics::{green_asymptotic, Verdict};
use thimble_core::pipeline::{analyze_frame, AnalysisConfig, FrameAnalysis};
use thimble_core::{Problem, Velocity};

fn run(p: &Problem, v: &Velocity) -> FrameAnalysis {
    let cfg = AnalysisConfig::default().with_contour_bound(p).unwrap();
    analyze_frame(p, v, &cfg).unwrap()
}

#[test]
fn advection_diffusion_verdict_follows_pinch_rate() {
    for (mu, verdict) in [(1.0, Verdict::Growing), (0.2, Verdict::Decaying), (0.25, Verdict::Marginal)] {
        let p = problem(&format!("-i*k0 + i*k1 + k1^2 - {mu}"), 1);
        let f = run(&p, &vel(&[0.0]));
        assert_eq!(f.classification.verdict, verdict, "mu = {mu}");
        assert_eq!(f.sigmas.len(), 1);
        assert_eq!(f.sigmas[0].coefficient.map(i32::abs), Some(1));
        assert!((f.classification.rate.unwrap() - (mu - 0.25)).abs() < 1e-10);
    }
}

#[test]
fn advection_diffusion_asymptotics_are_exact_at_the_origin() {
    let p = problem(ADVECTION_DIFFUSION, 1);
    let f = run(&p, &vel(&[0.0]));
    let s = &f.sigmas[0];
    for t in [1.0, 10.0, 30.0] {
        let g = green_asymptotic(&p, &[(s.sigma_id, &s.critical, s.coefficient.unwrap())], t, &[0.0]).unwrap();
        let exact = (0.75 * t).exp() / (4.0 * std::f64::consts::PI * t).sqrt();
        let z = g.value[0][0];
        assert!((z.norm() - exact).abs() < 1e-10 * exact, "t = {t}: {z} vs {exact}");
        assert!(z.im.abs() < 1e-10 * exact);
    }
}

#[test]
fn frames_outside_the_cone_vanish() {
    for (expr, d, v) in [(TACHYONIC_2D, 2, vec![0.0, 0.0]), (TACHYONIC_2D, 2, vec![2.5, -0.5]), (TACHYONIC_3D, 3, vec![0.0, 0.0, 0.0])] {
        let f = run(&problem(expr, d), &vel(&v));
        assert_eq!(f.classification.verdict, Verdict::Zero, "{expr} at {v:?}");
    }
}

#[test]
fn analysis_is_deterministic() {
    let p = problem(TACHYONIC_2D, 2);
    let v = vel(&[0.5, 0.5]);
    let a = serde_json::to_string(&run(&p, &v)).unwrap();
    let b = serde_json::to_string(&run(&p, &v)).unwrap();
    assert_eq!(a, b);
}
