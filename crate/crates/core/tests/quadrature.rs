mod common;

use common::*;
use thimble_core::oracle::{green_quadrature, QuadratureGrid};

fn heat_kernel(mu: f64, c: f64, t: f64, x: f64) -> f64 {
    (mu * t - (x - c * t).powi(2) / (4.0 * t)).exp() / (4.0 * std::f64::consts::PI * t).sqrt()
}

#[test]
fn advection_diffusion_matches_heat_kernel() {
    let p = problem(ADVECTION_DIFFUSION, 1);
    let grid = QuadratureGrid::default_for(1);
    for (t, x) in [(1.0, 0.0), (10.0, 0.0), (5.0, 1.5), (5.0, -2.0)] {
        let g = green_quadrature(&p, &vel(&[0.0]), t, &[x], &grid).unwrap();
        let exact = heat_kernel(1.0, 1.0, t, x);
        let z = g.value[0][0];
        assert!((z.re - exact).abs() < 1e-8 * exact, "t = {t}, x = {x}: {z} vs {exact}");
        assert!(z.im.abs() < 1e-6 * z.norm());
    }
}

#[test]
fn moving_frame_is_a_shift() {
    // G(x⃗ + v⃗t, t) seen from a frame moving at v⃗ equals the rest-frame value.
    let p = problem(ADVECTION_DIFFUSION, 1);
    let grid = QuadratureGrid::default_for(1);
    let (t, v) = (4.0, 0.7);
    let moving = green_quadrature(&p, &vel(&[v]), t, &[0.3], &grid).unwrap();
    let exact = heat_kernel(1.0, 1.0, t, 0.3 + v * t);
    assert!((moving.value[0][0].re - exact).abs() < 1e-8 * exact);
}

#[test]
fn tachyonic_light_cone_value_and_causality() {
    let p = problem(TACHYONIC_2D, 2);
    let grid = QuadratureGrid { m: 512, ..QuadratureGrid::default_for(2) };
    let t = 20.0;
    let inside = green_quadrature(&p, &vel(&[1.0, 1.0]), t, &[0.0, 0.0], &grid).unwrap();
    let exact = t.cosh() / (2.0 * std::f64::consts::PI * t);
    let z = inside.value[0][0];
    assert!((z.norm() - exact).abs() < 1e-6 * exact, "{z} vs {exact}");
    assert!(inside.quadrature_error < 1e-6 * exact);
    let outside = green_quadrature(&p, &vel(&[0.0, 0.0]), t, &[0.0, 0.0], &grid).unwrap();
    assert!(outside.value[0][0].norm() < 1e-6 * z.norm());
}

#[test]
fn quadrature_is_reproducible() {
    let p = problem(PRINTED_2D, 2);
    let grid = QuadratureGrid { m: 64, ..QuadratureGrid::default_for(2) };
    let a = green_quadrature(&p, &vel(&[0.5, 0.5]), 5.0, &[0.0, 0.0], &grid).unwrap();
    let b = green_quadrature(&p, &vel(&[0.5, 0.5]), 5.0, &[0.0, 0.0], &grid).unwrap();
    assert_eq!(a.value, b.value);
}
