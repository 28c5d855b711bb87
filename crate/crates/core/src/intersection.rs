//! Intersection form ⟨C, K_σ⟩ from the degree of large-s sections of the
//! dual thimble, projected onto Im k⃗.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{SeedTopology, ThimbleBundle};
use crate::problem::KPoint;

/// Sections closer than this to the origin have no reliable degree.
pub const BOUNDARY_TOL: f64 = 1e-9;
/// Allowed distance of the d = 3 solid-angle sum / 4π from an integer.
pub const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Adjacency {
    Pair,
    /// Points in loop order; the last connects back to the first.
    Loop,
    Mesh(Vec<[usize; 3]>),
}

/// The projection (Im k¹, …, Im k^d) of a bundle at one checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThimbleSection {
    pub s: f64,
    pub points: Vec<Vec<f64>>,
    pub adjacency: Adjacency,
}

/// Extracts the section at checkpoint `s`.
///
/// For d = 2 the points of failed lines are dropped, which keeps the loop
/// closed; for d = 1 and d = 3 any missing point breaks the adjacency and
/// the section is rejected.
pub fn section(bundle: &ThimbleBundle, s: f64) -> Result<ThimbleSection> {
    let idx = bundle
        .s_grid
        .iter()
        .position(|&x| x == s)
        .ok_or_else(|| Error::SectionRejected(format!("s = {s} is not a checkpoint")))?;
    section_at(bundle, idx)
}

fn project(k: &KPoint) -> Vec<f64> {
    k.0[1..].iter().map(|z| z.im).collect()
}

pub fn section_at(bundle: &ThimbleBundle, idx: usize) -> Result<ThimbleSection> {
    let s = *bundle
        .s_grid
        .get(idx)
        .ok_or(Error::IndexOutOfRange { index: idx, len: bundle.s_grid.len() })?;
    let pts = bundle.lines.iter().map(|l| l.samples.get(idx).map(|(_, k)| project(k))).collect();
    assemble(bundle, s, pts)
}

/// The section through the lines' level hits, i.e. the slice of the thimble
/// at constant height `bundle.level`. Its `s` is the largest hit time.
pub fn level_section(bundle: &ThimbleBundle) -> Result<ThimbleSection> {
    if bundle.level.is_none() {
        return Err(Error::SectionRejected("the bundle has no target height".into()));
    }
    let s = bundle.lines.iter().filter_map(|l| l.level_hit.as_ref().map(|h| h.0)).fold(0.0, f64::max);
    let pts = bundle.lines.iter().map(|l| l.level_hit.as_ref().map(|(_, k)| project(k))).collect();
    assemble(bundle, s, pts)
}

fn assemble(bundle: &ThimbleBundle, s: f64, pts: Vec<Option<Vec<f64>>>) -> Result<ThimbleSection> {
    let missing = pts.iter().filter(|p| p.is_none()).count();
    match &bundle.topology {
        SeedTopology::Loop { .. } => {
            let points: Vec<Vec<f64>> = pts.into_iter().flatten().collect();
            if points.len() < 3 {
                return Err(Error::SectionRejected(format!("only {} points survive at s = {s}", points.len())));
            }
            Ok(ThimbleSection { s, points, adjacency: Adjacency::Loop })
        }
        topo => {
            if missing > 0 {
                return Err(Error::SectionRejected(format!("{missing} flow lines missing at s = {s}")));
            }
            let adjacency = match topo {
                SeedTopology::Pair => Adjacency::Pair,
                SeedTopology::Mesh { triangles } => Adjacency::Mesh(triangles.clone()),
                SeedTopology::Loop { .. } => unreachable!(),
            };
            Ok(ThimbleSection { s, points: pts.into_iter().flatten().collect(), adjacency })
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sub3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn segment_distance(a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let len2 = dot(&ab, &ab);
    let t = if len2 > 0.0 { (-dot(a, &ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let p: Vec<f64> = a.iter().zip(&ab).map(|(x, y)| x + t * y).collect();
    norm(&p)
}

/// Distance from the origin to the closed triangle `abc`.
fn triangle_distance(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let n = cross3(&sub3(b, a), &sub3(c, a));
    let nn = dot(&n, &n);
    if nn > 0.0 {
        // Projection of the origin onto the plane of the triangle.
        let t = dot(a, &n) / nn;
        let p = [t * n[0], t * n[1], t * n[2]];
        let inside = [(a, b), (b, c), (c, a)]
            .iter()
            .all(|(u, w)| dot(&cross3(&sub3(w, u), &sub3(&p, u)), &n) >= 0.0);
        if inside {
            return norm(&p);
        }
    }
    segment_distance(a, b).min(segment_distance(b, c)).min(segment_distance(c, a))
}

/// Closest approach of the section (including its edges/faces) to the origin.
pub fn min_distance(sec: &ThimbleSection) -> f64 {
    let p = &sec.points;
    match &sec.adjacency {
        Adjacency::Pair => p.iter().map(|x| norm(x)).fold(f64::INFINITY, f64::min),
        Adjacency::Loop => (0..p.len())
            .map(|j| segment_distance(&p[j], &p[(j + 1) % p.len()]))
            .fold(f64::INFINITY, f64::min),
        Adjacency::Mesh(tris) => tris
            .iter()
            .map(|t| triangle_distance(&p[t[0]], &p[t[1]], &p[t[2]]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Signed solid angle of triangle `abc` seen from the origin.
pub fn solid_angle(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let (la, lb, lc) = (norm(a), norm(b), norm(c));
    let num = dot(a, &cross3(b, c));
    let den = la * lb * lc + dot(a, b) * lc + dot(a, c) * lb + dot(b, c) * la;
    2.0 * num.atan2(den)
}

/// Unrounded degree: winding number (d = 2) or solid-angle sum / 4π (d = 3).
pub fn raw_degree(sec: &ThimbleSection) -> f64 {
    let p = &sec.points;
    match &sec.adjacency {
        Adjacency::Pair => {
            let side = |x: &[f64]| if x[0] > 0.0 { 1.0 } else { -1.0 };
            (side(&p[0]) - side(&p[1])) / 2.0
        }
        Adjacency::Loop => {
            let total: f64 = (0..p.len())
                .map(|j| {
                    let (a, b) = (&p[j], &p[(j + 1) % p.len()]);
                    (a[0] * b[1] - a[1] * b[0]).atan2(a[0] * b[0] + a[1] * b[1])
                })
                .sum();
            total / std::f64::consts::TAU
        }
        Adjacency::Mesh(tris) => {
            let total: f64 = tris.iter().map(|t| solid_angle(&p[t[0]], &p[t[1]], &p[t[2]])).sum();
            total / (4.0 * std::f64::consts::PI)
        }
    }
}

/// Degree of the section map around the origin.
pub fn degree(sec: &ThimbleSection) -> Result<i32> {
    let dist = min_distance(sec);
    if !(dist > BOUNDARY_TOL) {
        return Err(Error::OriginOnBoundary { distance: dist });
    }
    let raw = raw_degree(sec);
    let rounded = raw.round();
    if (raw - rounded).abs() > INTEGRALITY_TOL {
        return Err(Error::SectionRejected(format!("degree {raw} is not an integer")));
    }
    Ok(rounded as i32)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntersectionResult {
    /// ⟨C, K_σ⟩: the degree at the last checkpoint.
    pub coefficient: i32,
    pub stabilized: bool,
    /// `(s, degree)`; `None` where the section had no reliable degree.
    pub history: Vec<(f64, Option<i32>)>,
    pub min_distance: f64,
    /// |coefficient| > 1, which the pairing should not produce.
    pub flagged: bool,
    /// Lowest height h over the final section.
    pub section_min_height: f64,
    /// The coefficient comes from a certified section.
    pub certified: bool,
    /// Checkpoint of the certified section, when not a level section.
    pub certified_s: Option<f64>,
    /// The degree is constant over the final 20% of checkpoints.
    pub tail_agrees: bool,
    /// Degree of the constant-height section, when the bundle has a target
    /// height above the contour bound.
    pub level_degree: Option<i32>,
    pub level_min_distance: Option<f64>,
}

/// Number of trailing checkpoints that must agree for a stabilized verdict.
pub fn tail_len(checkpoints: usize) -> usize {
    ((checkpoints as f64 * 0.2).ceil() as usize).clamp(2.min(checkpoints), checkpoints)
}

/// Margin by which a section must clear the contour height bound.
pub fn height_margin(bound: f64) -> f64 {
    1e-6 * (1.0 + bound.abs())
}

/// Evaluates the degree at every checkpoint and on the level section.
///
/// Every point of C has h ≤ `height_bound` (the supremum of Im k⁰ over real
/// k⃗) and h increases along flow lines, so once a closed section of K_σ lies
/// entirely above the bound its degree is final.
///
/// With a bound the coefficient is the degree of the constant-height section
/// when the bundle has a target height above the bound, and otherwise the
/// degree at the earliest checkpoint lying above it; it is stabilized exactly
/// when that degree exists. Without a bound the coefficient is the last
/// checkpoint's degree, stabilized when constant over the final 20% of
/// checkpoints.
pub fn intersection_form(bundle: &ThimbleBundle, height_bound: Option<f64>) -> IntersectionResult {
    let n = bundle.s_grid.len();
    let evals: Vec<(Option<i32>, f64)> = (0..n)
        .into_par_iter()
        .map(|j| match section_at(bundle, j) {
            Ok(sec) => (degree(&sec).ok(), min_distance(&sec)),
            Err(_) => (None, 0.0),
        })
        .collect();
    let history: Vec<(f64, Option<i32>)> = bundle.s_grid.iter().zip(&evals).map(|(&s, e)| (s, e.0)).collect();
    let last = evals.last().copied().unwrap_or((None, 0.0));
    let tail = &evals[n - tail_len(n)..];
    let tail_agrees = last.0.is_some() && tail.iter().all(|e| e.0 == last.0 && e.1 > BOUNDARY_TOL);
    let section_min_height = bundle
        .lines
        .iter()
        .filter(|l| l.samples.len() == n)
        .filter_map(|l| l.heights.last().copied())
        .fold(f64::INFINITY, f64::min);
    let clears = |h: f64| height_bound.is_some_and(|b| h > b + height_margin(b));
    let level = bundle.level.filter(|&h| clears(h)).and_then(|_| level_section(bundle).ok());
    let level_degree = level.as_ref().and_then(|sec| degree(sec).ok());
    let level_min_distance = level.as_ref().map(min_distance);
    let certified_at = match height_bound {
        Some(_) if bundle.level.is_none() => (0..n).find(|&j| {
            evals[j].0.is_some()
                && bundle
                    .lines
                    .iter()
                    .filter(|l| l.failure.is_none() || l.samples.len() > j)
                    .all(|l| l.heights.get(j).is_some_and(|&h| clears(h)))
        }),
        _ => None,
    };
    let (coefficient, certified, min_dist) = match (level_degree, certified_at) {
        (Some(d), _) => (d, true, level_min_distance.unwrap_or(0.0)),
        (None, Some(j)) => (evals[j].0.unwrap_or(0), true, evals[j].1),
        (None, None) => (last.0.unwrap_or(0), false, last.1),
    };
    let stabilized = if height_bound.is_some() { certified } else { tail_agrees };
    IntersectionResult {
        coefficient,
        stabilized,
        history,
        min_distance: min_dist,
        flagged: coefficient.abs() > 1,
        section_min_height,
        certified,
        certified_s: certified_at.map(|j| bundle.s_grid[j]),
        tail_agrees,
        level_degree,
        level_min_distance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::icosphere;

    fn circle(cx: f64, cy: f64, n: usize, ccw: bool) -> ThimbleSection {
        let points = (0..n)
            .map(|j| {
                let a = std::f64::consts::TAU * j as f64 / n as f64 * if ccw { 1.0 } else { -1.0 };
                vec![cx + a.cos(), cy + a.sin()]
            })
            .collect();
        ThimbleSection { s: 0.0, points, adjacency: Adjacency::Loop }
    }

    #[test]
    fn winding_examples() {
        assert_eq!(degree(&circle(0.0, 0.0, 64, true)).unwrap(), 1);
        assert_eq!(degree(&circle(0.0, 0.0, 64, false)).unwrap(), -1);
        assert_eq!(degree(&circle(3.0, 0.0, 64, true)).unwrap(), 0);
        assert!(matches!(degree(&circle(1.0, 0.0, 64, true)), Err(Error::OriginOnBoundary { .. })));
    }

    #[test]
    fn pair_examples() {
        let sec = |a: f64, b: f64| ThimbleSection { s: 0.0, points: vec![vec![a], vec![b]], adjacency: Adjacency::Pair };
        assert_eq!(degree(&sec(1.0, -2.0)).unwrap(), 1);
        assert_eq!(degree(&sec(-1.0, 2.0)).unwrap(), -1);
        assert_eq!(degree(&sec(1.0, 2.0)).unwrap(), 0);
        assert_eq!(degree(&sec(-1.0, -2.0)).unwrap(), 0);
        assert!(degree(&sec(0.0, 1.0)).is_err());
    }

    #[test]
    fn icosphere_degree() {
        let (v, t) = icosphere(2);
        let mk = |shift: f64, tris: Vec<[usize; 3]>| ThimbleSection {
            s: 0.0,
            points: v.iter().map(|p| vec![p[0] + shift, p[1], p[2]]).collect(),
            adjacency: Adjacency::Mesh(tris),
        };
        assert_eq!(degree(&mk(0.0, t.clone())).unwrap(), 1);
        assert!((raw_degree(&mk(0.3, t.clone())) - 1.0).abs() < 1e-12);
        assert_eq!(degree(&mk(2.5, t.clone())).unwrap(), 0);
        let flipped = t.iter().map(|&[a, b, c]| [a, c, b]).collect();
        assert_eq!(degree(&mk(0.0, flipped)).unwrap(), -1);
        let d = min_distance(&mk(0.0, t));
        assert!(d > 0.9 && d < 1.0);
    }

    #[test]
    fn triangle_distance_cases() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0];
        let c = [0.0, 0.0, 1.0];
        assert!((triangle_distance(&a, &b, &c) - 1.0 / 3f64.sqrt()).abs() < 1e-14);
        let a = [1.0, 1.0, 0.0];
        let b = [2.0, 1.0, 0.0];
        let c = [1.0, 2.0, 0.0];
        assert!((triangle_distance(&a, &b, &c) - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn tail_lengths() {
        assert_eq!(tail_len(32), 7);
        assert_eq!(tail_len(10), 2);
        assert_eq!(tail_len(5), 2);
        assert_eq!(tail_len(1), 1);
    }
}
