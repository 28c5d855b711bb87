//! Per-frame analysis: critical points → dual thimbles → intersection forms →
//! classification, with adaptive flow length and one automatic retry.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{classify, max_growth, FrameClassification, MaxGrowthConfig, Verdict};
use crate::critical::{check_morse, find_critical_points, CriticalPoint, MorseAdvisory, SearchConfig};
use crate::error::Result;
use crate::flow::{build_dual_thimble, line_crossing, refine_loop, BundleConfig, ThimbleBundle};
use crate::intersection::{height_margin, intersection_form, IntersectionResult};
use crate::problem::{Problem, Velocity};

/// Relative phase tolerance for Stokes partners.
pub const STOKES_PHASE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub search: SearchConfig,
    /// Initial bundle settings; `bundle.s_max` is the first flow length tried.
    pub bundle: BundleConfig,
    pub s_max_hard: f64,
    pub s_max_growth: f64,
    /// Rerun an inconclusive bundle once with 2× seeds (and 1.5× `s_max_hard`
    /// when no contour bound is known).
    pub retry: bool,
    /// Bisect d = 2 seed angles whose images subtend more than this angle.
    pub refine_angle: Option<f64>,
    /// sup Im k⁰ over real k⃗; see [`AnalysisConfig::with_contour_bound`].
    pub contour_bound: Option<f64>,
    /// With a contour bound b, lines are followed to the height
    /// b + level_offset (1 + |b|).
    pub level_offset: f64,
    pub keep_bundles: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            search: SearchConfig::default(),
            bundle: BundleConfig::default(),
            s_max_hard: 50.0,
            s_max_growth: 1.5,
            retry: true,
            refine_angle: Some(std::f64::consts::FRAC_PI_2),
            contour_bound: None,
            level_offset: 1e-2,
            keep_bundles: false,
        }
    }
}

impl AnalysisConfig {
    /// Fills `contour_bound` from a maximum-growth survey of the problem.
    pub fn with_contour_bound(mut self, problem: &Problem) -> Result<Self> {
        let m = max_growth(problem, &MaxGrowthConfig::from_search(&self.search))?;
        self.contour_bound = m.contour_bound;
        Ok(self)
    }

    /// Target height for the constant-height section, if a bound is known.
    pub fn level(&self) -> Option<f64> {
        self.contour_bound.map(|b| b + self.level_offset * (1.0 + b.abs()))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SigmaAnalysis {
    pub sigma_id: usize,
    pub critical: CriticalPoint,
    pub intersection: Option<IntersectionResult>,
    /// ⟨C, K_σ⟩ when conclusive.
    pub coefficient: Option<i32>,
    pub s_max: f64,
    pub n_lines: usize,
    /// Higher critical points of the same phase that K_σ runs into.
    pub stokes_partners: Vec<usize>,
    pub note: Option<String>,
    #[serde(skip)]
    pub bundle: Option<ThimbleBundle>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameAnalysis {
    pub v: Velocity,
    pub sigmas: Vec<SigmaAnalysis>,
    pub classification: FrameClassification,
    pub morse: Option<MorseAdvisory>,
    /// No critical point was found in the search box.
    pub empty_search: bool,
}

fn run_bundle(
    problem: &Problem,
    v: &Velocity,
    cp: &CriticalPoint,
    bcfg: &BundleConfig,
    cfg: &AnalysisConfig,
) -> Result<(ThimbleBundle, IntersectionResult)> {
    let mut bundle = build_dual_thimble(problem, v, cp, bcfg)?;
    if let Some(angle) = cfg.refine_angle {
        refine_loop(problem, &mut bundle, angle, 16 * bcfg.n_seeds, bcfg);
    }
    let r = intersection_form(&bundle, cfg.contour_bound);
    Ok((bundle, r))
}

/// Critical points above `cp` with the same phase Re(k·v).
pub fn stokes_partners(cp: &CriticalPoint, others: &[CriticalPoint]) -> Vec<usize> {
    let scale = |c: &CriticalPoint| c.k.0.iter().map(|z| z.norm()).fold(0.0, f64::max);
    others
        .iter()
        .enumerate()
        .filter(|(_, o)| {
            let tol = STOKES_PHASE_TOL * (1.0 + scale(cp) + scale(o));
            o.height > cp.height + tol && (o.phase - cp.phase).abs() <= tol
        })
        .map(|(i, _)| i)
        .collect()
}

/// Whether some line of the bundle passes within one seed scale of `tau`, or
/// never climbs past its height.
pub fn connects_to(
    problem: &Problem,
    v: &Velocity,
    bundle: &ThimbleBundle,
    tau: &CriticalPoint,
    cfg: &AnalysisConfig,
) -> bool {
    let radius = cfg.bundle.seed_scale_for(tau);
    bundle.lines.par_iter().filter(|l| !l.samples.is_empty()).any(|l| {
        match line_crossing(problem, v, l, tau.height, cfg.bundle.level_s_cap, &cfg.bundle.flow) {
            Some((_, k)) => k.distance_max(&tau.k) < radius,
            None => l.failure.is_none(),
        }
    })
}

/// Builds K_σ and evaluates ⟨C, K_σ⟩.
///
/// With a contour bound the lines are followed to the level above it.
/// Without one, s_max grows geometrically until the checkpoint degrees
/// agree. One retry with 2× seeds follows a failure.
///
/// `partners` lists higher critical points of the same phase (by index into
/// the frame) whose own coefficient is not known to vanish. If K_σ runs into
/// one of them, the coefficient jumps across this frame and is withheld.
pub fn analyze_sigma(
    problem: &Problem,
    v: &Velocity,
    sigma_id: usize,
    cp: &CriticalPoint,
    partners: &[(usize, &CriticalPoint)],
    cfg: &AnalysisConfig,
) -> SigmaAnalysis {
    let mut out = SigmaAnalysis {
        sigma_id,
        critical: cp.clone(),
        intersection: None,
        coefficient: None,
        s_max: 0.0,
        n_lines: 0,
        stokes_partners: Vec::new(),
        note: None,
        bundle: None,
    };
    if let Some(b) = cfg.contour_bound {
        if cp.height > b + height_margin(b) {
            // All of K_σ lies above every point of C.
            out.coefficient = Some(0);
            out.note = Some(format!("height {} exceeds the contour bound {b}", cp.height));
            if cfg.keep_bundles {
                if let Ok((bundle, r)) = run_bundle(problem, v, cp, &cfg.bundle, cfg) {
                    out.s_max = cfg.bundle.s_max;
                    out.n_lines = bundle.lines.len();
                    out.intersection = Some(r);
                    out.bundle = Some(bundle);
                }
            }
            return out;
        }
    }
    if cp.degenerate {
        out.note = Some("degenerate critical point".into());
        return out;
    }
    let mut bcfg = cfg.bundle.clone();
    bcfg.level = cfg.level();
    let mut attempts = vec![];
    loop {
        let res = run_bundle(problem, v, cp, &bcfg, cfg);
        let done = matches!(&res, Ok((_, r)) if r.stabilized);
        attempts.push((bcfg.s_max, res));
        if done || bcfg.level.is_some() || bcfg.s_max >= cfg.s_max_hard {
            break;
        }
        bcfg.s_max = (bcfg.s_max * cfg.s_max_growth).min(cfg.s_max_hard);
    }
    let stabilized = matches!(attempts.last(), Some((_, Ok((_, r)))) if r.stabilized);
    if !stabilized && cfg.retry {
        bcfg.n_seeds *= 2;
        if bcfg.level.is_none() {
            bcfg.s_max = cfg.s_max_hard * 1.5;
        }
        let res = run_bundle(problem, v, cp, &bcfg, cfg);
        attempts.push((bcfg.s_max, res));
    }
    let (s_max, last) = attempts.pop().expect("at least one attempt");
    out.s_max = s_max;
    match last {
        Ok((bundle, r)) => {
            out.n_lines = bundle.lines.len();
            out.stokes_partners = partners
                .iter()
                .filter(|(_, tau)| connects_to(problem, v, &bundle, tau, cfg))
                .map(|&(i, _)| i)
                .collect();
            if let Some(&tau) = out.stokes_partners.first() {
                out.note = Some(format!(
                    "Stokes connection to critical point {tau}: the coefficient jumps across this frame"
                ));
            } else if r.stabilized {
                out.coefficient = Some(r.coefficient);
            }
            out.intersection = Some(r);
            if cfg.keep_bundles {
                out.bundle = Some(bundle);
            }
        }
        Err(e) => out.note = Some(e.to_string()),
    }
    out
}

/// Full analysis of one frame.
pub fn analyze_frame(problem: &Problem, v: &Velocity, cfg: &AnalysisConfig) -> Result<FrameAnalysis> {
    let search = find_critical_points(problem, v, &cfg.search)?;
    let morse = check_morse(v, &search.points, cfg.search.seed);
    let pts = &search.points;
    // Descending height, so that every partner is settled first.
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| pts[b].height.total_cmp(&pts[a].height));
    let mut done: Vec<Option<SigmaAnalysis>> = vec![None; pts.len()];
    for &i in &order {
        let partners: Vec<(usize, &CriticalPoint)> = stokes_partners(&pts[i], pts)
            .into_iter()
            .filter(|&j| done[j].as_ref().map_or(true, |a| a.coefficient != Some(0)))
            .map(|j| (j, &pts[j]))
            .collect();
        done[i] = Some(analyze_sigma(problem, v, i, &pts[i], &partners, cfg));
    }
    let sigmas: Vec<SigmaAnalysis> = done.into_iter().flatten().collect();
    let summary: Vec<(f64, Option<i32>)> = sigmas.iter().map(|s| (s.critical.height, s.coefficient)).collect();
    let mut classification = classify(&summary);
    if search.empty {
        classification.verdict = Verdict::Inconclusive;
    }
    Ok(FrameAnalysis { v: v.clone(), sigmas, classification, morse, empty_search: search.empty })
}
