#![allow(dead_code)]

use thimble_core::{parse_dispersion, Problem, Velocity};

pub const TACHYONIC_2D: &str = "k1^2 + k2^2 - (k0 - k1 - k2)^2 - 1";
pub const PRINTED_2D: &str = "k1^2 + k2^2 - (k0 - k1 - k2)^2 + 1";
pub const TACHYONIC_3D: &str = "k1^2 + k2^2 + k3^2 - (k0 - k1 - k2 - k3)^2 - 1";
pub const PRINTED_3D: &str = "k1^2 + k2^2 + k3^2 - (k0 - k1 - k2 - k3)^2 + 1";
pub const ADVECTION_DIFFUSION: &str = "-i*k0 + i*k1 + k1^2 - 1";

pub const DEMO_2D: [[f64; 2]; 4] = [[1.0, 1.0], [0.5, 0.5], [0.5, 0.0], [0.0, 0.0]];
pub const DEMO_3D: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [0.5, 0.5, 0.5], [0.5, 0.25, 0.0], [0.0, 0.0, 0.0]];

pub fn problem(expr: &str, d: usize) -> Problem {
    parse_dispersion(expr, d).unwrap()
}

pub fn vel(v: &[f64]) -> Velocity {
    Velocity::new(v.to_vec()).unwrap()
}

/// Every demo problem paired with its four demo velocities.
pub fn demo_frames() -> Vec<(Problem, Velocity)> {
    let mut out = Vec::new();
    for expr in [TACHYONIC_2D, PRINTED_2D] {
        out.extend(DEMO_2D.iter().map(|v| (problem(expr, 2), vel(v))));
    }
    for expr in [TACHYONIC_3D, PRINTED_3D] {
        out.extend(DEMO_3D.iter().map(|v| (problem(expr, 3), vel(v))));
    }
    out
}
