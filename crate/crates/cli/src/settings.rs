//! Run settings: command-line flags over problem-file `defaults` over
//! built-in values.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde_json::Value;
use thimble_core::critical::SearchConfig;
use thimble_core::oracle::QuadratureGrid;
use thimble_core::pipeline::AnalysisConfig;
use thimble_core::{parse_dispersion, Problem, ProblemFile, Velocity};

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Problem file (JSON with `d` and `delta` or `operator`).
    pub problem: Option<PathBuf>,
    /// Inline dispersion relation instead of a problem file; needs --d.
    #[arg(long, requires = "d", conflicts_with = "problem", allow_hyphen_values = true)]
    pub expr: Option<String>,
    /// Number of spatial dimensions for --expr.
    #[arg(long)]
    pub d: Option<usize>,
    /// Output directory for results.json and CSV artifacts.
    #[arg(long, short = 'o', default_value = "thimble-out")]
    pub out: PathBuf,
    /// Do not echo results.json on stdout.
    #[arg(long, short = 'q')]
    pub quiet: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Newton starts per critical-point search.
    #[arg(long)]
    pub starts: Option<usize>,
    /// Half-width of the Newton start box.
    #[arg(long = "box")]
    pub box_radius: Option<f64>,
    /// Residual tolerance of the Newton solver.
    #[arg(long)]
    pub newton_tol: Option<f64>,
    /// Newton iteration cap per start.
    #[arg(long)]
    pub newton_maxiter: Option<usize>,
    /// Random seed for Newton starts.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flow lines per dual thimble.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Seed displacement |δ| from the critical point.
    #[arg(long)]
    pub seed_scale: Option<f64>,
    /// Largest flow time.
    #[arg(long)]
    pub smax: Option<f64>,
    /// Relative tolerance of the flow integrator.
    #[arg(long)]
    pub rk_tol: Option<f64>,
    /// Quadrature half-width.
    #[arg(long = "L")]
    pub l: Option<f64>,
    /// Quadrature nodes per axis.
    #[arg(long = "M")]
    pub m: Option<usize>,
    /// Add eps*k0 to Δ.
    #[arg(long)]
    pub jitter_eps: Option<f64>,
}

/// Problem plus fully resolved settings.
pub struct Setup {
    pub problem: Problem,
    pub source: String,
    pub analysis: AnalysisConfig,
    pub grid: QuadratureGrid,
    pub threads: Option<usize>,
}

struct Defaults(BTreeMap<String, Value>);

impl Defaults {
    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v.as_f64().map(Some).with_context(|| format!("defaults.{key} must be a number")),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|x| Some(x as usize))
                .with_context(|| format!("defaults.{key} must be a non-negative integer")),
        }
    }
}

fn positive(name: &str, x: f64) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        bail!("--{name} must be positive and finite, got {x}");
    }
    Ok(x)
}

impl Common {
    pub fn setup(&self) -> Result<Setup> {
        let (problem, source, defaults) = match (&self.problem, &self.expr) {
            (Some(path), None) => {
                let file = ProblemFile::load(path)?;
                let problem = file.to_problem().with_context(|| format!("loading {}", path.display()))?;
                (problem, path.display().to_string(), Defaults(file.defaults))
            }
            (None, Some(expr)) => {
                let d = self.d.context("--expr needs --d")?;
                (parse_dispersion(expr, d)?, expr.clone(), Defaults(BTreeMap::new()))
            }
            _ => bail!("give a problem file or --expr with --d"),
        };

        let mut analysis = AnalysisConfig::default();
        let search: &mut SearchConfig = &mut analysis.search;
        if let Some(x) = self.starts.or(defaults.usize("starts")?) {
            search.starts = x.max(1);
        }
        if let Some(x) = self.box_radius.or(defaults.f64("box")?) {
            search.box_radius = positive("box", x)?;
        }
        if let Some(x) = self.newton_tol.or(defaults.f64("newton_tol")?) {
            search.newton_tol = positive("newton-tol", x)?;
        }
        if let Some(x) = self.newton_maxiter.or(defaults.usize("newton_maxiter")?) {
            search.newton_maxiter = x.max(1);
        }
        if let Some(x) = self.seed.or(defaults.usize("seed")?.map(|s| s as u64)) {
            search.seed = x;
        }
        if let Some(x) = self.seeds.or(defaults.usize("seeds")?) {
            analysis.bundle.n_seeds = x.max(2);
        }
        if let Some(x) = self.seed_scale.or(defaults.f64("seed_scale")?) {
            analysis.bundle.seed_scale = Some(positive("seed-scale", x)?);
        }
        if let Some(x) = self.smax.or(defaults.f64("smax")?) {
            let x = positive("smax", x)?;
            analysis.s_max_hard = x;
            analysis.bundle.s_max = analysis.bundle.s_max.min(x);
        }
        if let Some(x) = self.rk_tol.or(defaults.f64("rk_tol")?) {
            analysis.bundle.flow.rtol = positive("rk-tol", x)?;
        }

        let problem = match self.jitter_eps.or(defaults.f64("jitter_eps")?) {
            Some(eps) if eps != 0.0 => problem.with_jitter(eps)?,
            _ => problem,
        };

        let mut grid = QuadratureGrid::default_for(problem.d());
        if let Some(x) = self.l.or(defaults.f64("L")?) {
            grid.l = positive("L", x)?;
        }
        if let Some(x) = self.m.or(defaults.usize("M")?) {
            grid.m = x;
        }
        let threads = self.threads.or(defaults.usize("threads")?);
        Ok(Setup { problem, source, analysis, grid, threads })
    }
}

/// Parses `"1,0.5"` into a velocity or offset vector.
pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad number `{s}` in `{text}`")))
        .collect::<Result<Vec<f64>>>()
        .and_then(|v| {
            if v.iter().any(|x| !x.is_finite()) {
                bail!("non-finite component in `{text}`");
            }
            Ok(v)
        })
}

pub fn velocities(raw: &[String], problem: &Problem) -> Result<Vec<Velocity>> {
    if raw.is_empty() {
        bail!("at least one --v is required");
    }
    raw.iter()
        .map(|s| {
            let v = Velocity::new(parse_vector(s)?)?;
            problem.check_velocity(&v)?;
            Ok(v)
        })
        .collect()
}

pub fn offset(raw: &Option<String>, d: usize) -> Result<Vec<f64>> {
    match raw {
        None => Ok(vec![0.0; d]),
        Some(s) => {
            let x = parse_vector(s)?;
            if x.len() != d {
                bail!("--x has {} components, expected {d}", x.len());
            }
            Ok(x)
        }
    }
}

pub fn times(raw: &str) -> Result<Vec<f64>> {
    let t = parse_vector(raw)?;
    if let Some(bad) = t.iter().find(|&&x| x <= 0.0) {
        bail!("times must be positive, got {bad}");
    }
    Ok(t)
}
