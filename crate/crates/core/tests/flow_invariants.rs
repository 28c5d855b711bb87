mod common;

use common::*;
use thimble_core::pipeline::{analyze_frame, AnalysisConfig, FrameAnalysis};
use thimble_core::{Problem, Velocity};

const VELOCITIES_2D: [[f64; 2]; 8] = [
    [1.0, 1.0],
    [0.5, 0.5],
    [0.5, 0.0],
    [0.0, 0.0],
    [1.5, 0.8],
    [2.0, 1.0],
    [1.0, 0.2],
    [-0.3, 0.4],
];

const VELOCITIES_3D: [[f64; 3]; 8] = [
    [1.0, 1.0, 1.0],
    [0.5, 0.5, 0.5],
    [0.5, 0.25, 0.0],
    [0.0, 0.0, 0.0],
    [1.2, 0.8, 1.0],
    [0.3, 1.0, 0.6],
    [1.5, 0.5, 0.5],
    [-0.2, 0.1, 0.3],
];

fn cases() -> Vec<(&'static str, Problem, Vec<Velocity>)> {
    let two: Vec<Velocity> = VELOCITIES_2D.iter().map(|v| vel(v)).collect();
    let three: Vec<Velocity> = VELOCITIES_3D.iter().map(|v| vel(v)).collect();
    vec![
        ("tachyonic 2-D", problem(TACHYONIC_2D, 2), two.clone()),
        ("printed 2-D", problem(PRINTED_2D, 2), two),
        ("tachyonic 3-D", problem(TACHYONIC_3D, 3), three.clone()),
        ("printed 3-D", problem(PRINTED_3D, 3), three),
    ]
}

fn config(problem: &Problem) -> AnalysisConfig {
    AnalysisConfig::default().with_contour_bound(problem).unwrap()
}

fn check_invariants(name: &str, frame: &FrameAnalysis) {
    let v = &frame.v;
    for s in &frame.sigmas {
        let Some(bundle) = &s.bundle else { continue };
        assert!(bundle.lines.len() >= 64, "{name} {v}: only {} lines", bundle.lines.len());
        for line in &bundle.lines {
            let Some((_, k_start)) = line.samples.first() else { continue };
            let phase0 = v.contract(k_start.as_slice()).re;
            let mut scale: f64 = 1.0;
            for (_, k) in &line.samples {
                let k = k.as_slice();
                let delta_scale = bundle_problem_scale(k);
                scale = scale.max(delta_scale);
                let kv = v.contract(k);
                assert!((kv.re - phase0).abs() < 1e-8 * (1.0 + kv.norm()), "{name} {v}: phase moved to {}", kv.re);
            }
            assert!(line.drift_max < 1e-8 * scale, "{name} {v}: drift {:e}", line.drift_max);
            assert!(line.max_height_drop <= 1e-10, "{name} {v}: height dropped by {:e}", line.max_height_drop);
            for w in line.heights.windows(2) {
                assert!(w[1] >= w[0] - 1e-10, "{name} {v}: sampled h decreased");
            }
        }
    }
}

/// 1 + Σ|terms| of the demo determinants: all coefficients are at most 2
/// in magnitude, so 1 + 2 (1 + |k|)² bounds the term sum.
fn bundle_problem_scale(k: &[num_complex::Complex64]) -> f64 {
    let r: f64 = k.iter().map(|z| z.norm()).sum();
    1.0 + 2.0 * (1.0 + r).powi(2)
}

#[test]
fn flow_lines_keep_the_locus_phase_and_height_order() {
    for (name, p, vs) in cases() {
        let mut cfg = config(&p);
        cfg.keep_bundles = true;
        for v in &vs {
            let frame = analyze_frame(&p, v, &cfg).unwrap();
            check_invariants(name, &frame);
        }
    }
}
