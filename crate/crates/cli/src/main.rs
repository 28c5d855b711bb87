//! `thimble`: command-line front end for dual-thimble instability analysis.
//!
//! Exit status: 0 on success, 2 when some verdict or coefficient is
//! inconclusive, 1 on errors.

mod artifacts;
mod settings;

use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde_json::{json, Value};
use thimble_core::asymptotics::{green_asymptotic, growth_map, max_growth, velocity_grid, MaxGrowthConfig, Verdict};
use thimble_core::critical::{check_morse, find_critical_points};
use thimble_core::oracle::green_quadrature;
use thimble_core::pipeline::{analyze_frame, AnalysisConfig, FrameAnalysis};
use thimble_core::{Problem, Velocity};

use artifacts::{Artifacts, SCHEMA_VERSION};
use settings::{offset, times, velocities, Common, Setup};

#[derive(Parser)]
#[command(name = "thimble", version, about = "Spatio-temporal instability analysis with dual Lefschetz thimbles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Frames {
    /// Observer velocity, comma separated; repeat for several frames.
    #[arg(long = "v", required = true, allow_hyphen_values = true)]
    v: Vec<String>,
}

#[derive(Args, Clone, Debug)]
struct Evaluation {
    /// Observer velocity, comma separated; repeat for several frames.
    #[arg(long = "v", required = true, allow_hyphen_values = true)]
    v: Vec<String>,
    /// Times, comma separated.
    #[arg(long, default_value = "20")]
    t: String,
    /// Offset from the moving frame, comma separated (default 0).
    #[arg(long, allow_hyphen_values = true)]
    x: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a problem and report Δ.
    ParseCheck {
        #[command(flatten)]
        common: Common,
        /// Also print every operator entry and the adjugate.
        #[arg(long)]
        dump_poly: bool,
    },
    /// Critical points of Im(k·v) on Δ = 0.
    Critical {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        frames: Frames,
    },
    /// Dual-thimble flow lines (writes flows/*.csv).
    Flow {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        frames: Frames,
        /// Only write flows of this critical point.
        #[arg(long)]
        sigma: Option<usize>,
    },
    /// Intersection numbers with the integration contour (writes sections/*.csv).
    Intersect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        frames: Frames,
    },
    /// Growth verdict per frame.
    Classify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        frames: Frames,
    },
    /// Leading-order Green function.
    Asymptotic {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: Evaluation,
    },
    /// Height of the top critical point over a velocity grid (writes growthmap.csv).
    GrowthMap {
        #[command(flatten)]
        common: Common,
        /// vmin vmax n
        #[arg(long, num_args = 3, required = true, allow_hyphen_values = true, value_names = ["VMIN", "VMAX", "N"])]
        grid: Vec<String>,
        /// Run the full analysis at every node and record verdicts.
        #[arg(long)]
        full: bool,
    },
    /// Maximal temporal growth rate over real wavevectors.
    MaxGrowth {
        #[command(flatten)]
        common: Common,
    },
    /// Green function by direct quadrature.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: Evaluation,
    },
    /// Asymptotic against quadrature Green function.
    OracleCompare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: Evaluation,
    },
    /// Critical points, flows, intersections, verdict, asymptotics and oracle check.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: Evaluation,
        /// Skip the quadrature cross-check.
        #[arg(long)]
        no_oracle: bool,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::ParseCheck { common, .. }
            | Command::Critical { common, .. }
            | Command::Flow { common, .. }
            | Command::Intersect { common, .. }
            | Command::Classify { common, .. }
            | Command::Asymptotic { common, .. }
            | Command::GrowthMap { common, .. }
            | Command::MaxGrowth { common }
            | Command::Oracle { common, .. }
            | Command::OracleCompare { common, .. }
            | Command::Analyze { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::ParseCheck { .. } => "parse-check",
            Command::Critical { .. } => "critical",
            Command::Flow { .. } => "flow",
            Command::Intersect { .. } => "intersect",
            Command::Classify { .. } => "classify",
            Command::Asymptotic { .. } => "asymptotic",
            Command::GrowthMap { .. } => "growth-map",
            Command::MaxGrowth { .. } => "max-growth",
            Command::Oracle { .. } => "oracle",
            Command::OracleCompare { .. } => "oracle-compare",
            Command::Analyze { .. } => "analyze",
        }
    }
}

/// What a command produced: the JSON body and whether anything was
/// inconclusive.
struct Outcome {
    body: Value,
    inconclusive: bool,
}

fn frobenius(m: &[Vec<Complex64>]) -> f64 {
    m.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn header(command: &str, setup: &Setup) -> Value {
    let p = &setup.problem;
    json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "problem": {
            "source": setup.source,
            "label": p.label(),
            "d": p.d(),
            "n": p.n(),
            "delta": p.delta().to_string(),
            "jitter": p.jitter(),
        },
        "config": {
            "analysis": setup.analysis,
            "quadrature": setup.grid,
        },
    })
}

fn bounded(setup: &Setup) -> AnalysisConfig {
    match setup.analysis.clone().with_contour_bound(&setup.problem) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("warning: no contour bound ({e}); sections are judged by tail agreement");
            setup.analysis.clone()
        }
    }
}

fn frames(problem: &Problem, vs: &[Velocity], cfg: &AnalysisConfig) -> Result<Vec<FrameAnalysis>> {
    vs.iter()
        .map(|v| analyze_frame(problem, v, cfg).with_context(|| format!("analysing frame v = {v}")))
        .collect()
}

fn asymptotic_json(problem: &Problem, frame: &FrameAnalysis, t: f64, x: &[f64]) -> Result<(Value, f64)> {
    let points: Vec<_> = frame
        .sigmas
        .iter()
        .filter_map(|s| s.coefficient.map(|c| (s.sigma_id, &s.critical, c)))
        .collect();
    let g = green_asymptotic(problem, &points, t, x)?;
    let norm = frobenius(&g.value);
    let mut value = serde_json::to_value(&g)?;
    value["norm"] = json!(norm);
    Ok((value, norm))
}

fn oracle_json(setup: &Setup, v: &Velocity, t: f64, x: &[f64]) -> Result<(Value, f64)> {
    let g = green_quadrature(&setup.problem, v, t, x, &setup.grid)?;
    let norm = frobenius(&g.value);
    let mut value = serde_json::to_value(&g)?;
    value["norm"] = json!(norm);
    Ok((value, norm))
}

/// Asymptotic values, and unless `oracle` is off, quadrature values and
/// their ratio, at every requested time.
fn evaluations(setup: &Setup, frame: &FrameAnalysis, ts: &[f64], x: &[f64], oracle: bool) -> Result<Vec<Value>> {
    let mut out = Vec::new();
    for &t in ts {
        let (asym, asym_norm) = asymptotic_json(&setup.problem, frame, t, x)?;
        let mut entry = json!({ "t": t, "asymptotic": asym });
        if oracle {
            match oracle_json(setup, &frame.v, t, x) {
                Ok((o, onorm)) => {
                    entry["oracle"] = o;
                    let ratio = asym_norm / onorm;
                    entry["ratio"] = json!(ratio.is_finite().then_some(ratio));
                }
                Err(e) => entry["oracle_error"] = json!(e.to_string()),
            }
        }
        out.push(entry);
    }
    Ok(out)
}

fn any_inconclusive(frames: &[FrameAnalysis]) -> bool {
    frames.iter().any(|f| f.classification.verdict == Verdict::Inconclusive)
}

fn run(command: &Command, setup: &Setup, art: &Artifacts) -> Result<Outcome> {
    let problem = &setup.problem;
    let mut body = header(command.name(), setup);
    let mut inconclusive = false;
    match command {
        Command::ParseCheck { dump_poly, .. } => {
            let delta = problem.delta();
            body["degree"] = json!(delta.total_degree());
            body["degree_k0"] = json!(delta.degree_in(0));
            body["terms"] = json!(delta.num_terms());
            body["real_coefficients"] = json!(delta.has_real_coefficients());
            if *dump_poly {
                let n = problem.n();
                let entries = |m: &thimble_core::PolyMatrix| -> Vec<Vec<String>> {
                    (0..n).map(|i| (0..n).map(|j| m.get(i, j).to_string()).collect()).collect()
                };
                body["operator"] = json!(entries(problem.operator()));
                body["adjugate"] = json!(entries(problem.adjugate()));
                body["gradient"] = json!(problem.grad_polys().iter().map(|p| p.to_string()).collect::<Vec<_>>());
            }
        }
        Command::Critical { frames: f, .. } => {
            let vs = velocities(&f.v, problem)?;
            let mut out = Vec::new();
            for v in &vs {
                let s = find_critical_points(problem, v, &setup.analysis.search)
                    .with_context(|| format!("critical points at v = {v}"))?;
                let morse = check_morse(v, &s.points, setup.analysis.search.seed);
                let mut entry = serde_json::to_value(&s)?;
                entry["v"] = json!(v);
                entry["morse"] = json!(morse);
                out.push(entry);
            }
            body["frames"] = Value::Array(out);
        }
        Command::Flow { frames: f, sigma, .. } => {
            let vs = velocities(&f.v, problem)?;
            let mut cfg = bounded(setup);
            cfg.keep_bundles = true;
            let fr = frames(problem, &vs, &cfg)?;
            let mut out = Vec::new();
            for (i, frame) in fr.iter().enumerate() {
                let mut lines = Vec::new();
                for s in frame.sigmas.iter().filter(|s| sigma.map_or(true, |j| j == s.sigma_id)) {
                    let Some(b) = &s.bundle else { continue };
                    art.flows(i, s.sigma_id, b)?;
                    lines.push(json!({
                        "sigma_id": s.sigma_id,
                        "k": s.critical.k,
                        "height": s.critical.height,
                        "lines": b.lines.len(),
                        "failed_lines": b.failed_lines(),
                        "s_max": s.s_max,
                        "level": b.level,
                        "drift_max": b.lines.iter().map(|l| l.drift_max).fold(0.0, f64::max),
                        "phase_drift_max": b.lines.iter().map(|l| l.phase_drift).fold(0.0, f64::max),
                        "max_height_drop": b.lines.iter().map(|l| l.max_height_drop).fold(0.0, f64::max),
                        "note": s.note,
                    }));
                }
                out.push(json!({ "v": frame.v, "bundles": lines }));
            }
            body["contour_bound"] = json!(cfg.contour_bound);
            body["frames"] = Value::Array(out);
        }
        Command::Intersect { frames: f, .. } | Command::Classify { frames: f, .. } => {
            let vs = velocities(&f.v, problem)?;
            let mut cfg = bounded(setup);
            let sections = matches!(command, Command::Intersect { .. });
            cfg.keep_bundles = sections;
            let fr = frames(problem, &vs, &cfg)?;
            if sections {
                for (i, frame) in fr.iter().enumerate() {
                    for s in &frame.sigmas {
                        if let Some(b) = &s.bundle {
                            art.sections(i, s.sigma_id, b)?;
                        }
                    }
                }
                inconclusive = fr.iter().flat_map(|f| &f.sigmas).any(|s| s.coefficient.is_none());
            } else {
                inconclusive = any_inconclusive(&fr);
            }
            body["contour_bound"] = json!(cfg.contour_bound);
            body["frames"] = serde_json::to_value(&fr)?;
        }
        Command::Asymptotic { eval, .. } | Command::OracleCompare { eval, .. } => {
            let vs = velocities(&eval.v, problem)?;
            let ts = times(&eval.t)?;
            let x = offset(&eval.x, problem.d())?;
            let cfg = bounded(setup);
            let fr = frames(problem, &vs, &cfg)?;
            let oracle = matches!(command, Command::OracleCompare { .. });
            let mut out = Vec::new();
            for frame in &fr {
                out.push(json!({
                    "v": frame.v,
                    "verdict": frame.classification.verdict,
                    "rate": frame.classification.rate,
                    "coefficients": frame.sigmas.iter().map(|s| json!({
                        "sigma_id": s.sigma_id,
                        "k": s.critical.k,
                        "height": s.critical.height,
                        "coefficient": s.coefficient,
                        "note": s.note,
                    })).collect::<Vec<_>>(),
                    "evaluations": evaluations(setup, frame, &ts, &x, oracle)?,
                }));
            }
            inconclusive = any_inconclusive(&fr);
            body["contour_bound"] = json!(cfg.contour_bound);
            body["frames"] = Value::Array(out);
        }
        Command::GrowthMap { grid, full, .. } => {
            let vmin: f64 = grid[0].parse().context("grid vmin")?;
            let vmax: f64 = grid[1].parse().context("grid vmax")?;
            let n: usize = grid[2].parse().context("grid n")?;
            if !(vmin.is_finite() && vmax.is_finite()) || n == 0 {
                bail!("--grid needs finite bounds and n >= 1");
            }
            let nodes = velocity_grid(problem.d(), vmin, vmax, n);
            let cfg = full.then(|| bounded(setup));
            let rows = growth_map(problem, &nodes, &setup.analysis.search, cfg.as_ref());
            art.growth_map(problem.d(), &rows)?;
            inconclusive = *full && rows.iter().any(|r| r.verdict.map_or(true, |v| v == Verdict::Inconclusive));
            body["grid"] = json!({ "vmin": vmin, "vmax": vmax, "n": n, "full": full });
            body["rows"] = serde_json::to_value(&rows)?;
        }
        Command::MaxGrowth { .. } => {
            let m = max_growth(problem, &MaxGrowthConfig::from_search(&setup.analysis.search))?;
            body["max_growth"] = serde_json::to_value(&m)?;
        }
        Command::Oracle { eval, .. } => {
            let vs = velocities(&eval.v, problem)?;
            let ts = times(&eval.t)?;
            let x = offset(&eval.x, problem.d())?;
            let mut out = Vec::new();
            for v in &vs {
                for &t in &ts {
                    out.push(oracle_json(setup, v, t, &x).with_context(|| format!("quadrature at v = {v}, t = {t}"))?.0);
                }
            }
            body["estimates"] = Value::Array(out);
        }
        Command::Analyze { eval, no_oracle, .. } => {
            let vs = velocities(&eval.v, problem)?;
            let ts = times(&eval.t)?;
            let x = offset(&eval.x, problem.d())?;
            let mut cfg = bounded(setup);
            cfg.keep_bundles = true;
            let fr = frames(problem, &vs, &cfg)?;
            let mut out = Vec::new();
            for (i, frame) in fr.iter().enumerate() {
                for s in &frame.sigmas {
                    if let Some(b) = &s.bundle {
                        art.flows(i, s.sigma_id, b)?;
                        art.sections(i, s.sigma_id, b)?;
                    }
                }
                let mut entry = serde_json::to_value(frame)?;
                entry["evaluations"] = json!(evaluations(setup, frame, &ts, &x, !no_oracle)?);
                out.push(entry);
            }
            inconclusive = any_inconclusive(&fr);
            body["contour_bound"] = json!(cfg.contour_bound);
            body["frames"] = Value::Array(out);
        }
    }
    Ok(Outcome { body, inconclusive })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let common = cli.command.common();
    let result = (|| -> Result<Outcome> {
        let setup = common.setup()?;
        if let Some(n) = setup.threads {
            rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
        }
        let art = Artifacts::new(&common.out)?;
        let outcome = run(&cli.command, &setup, &art)?;
        let text = art.results(&outcome.body)?;
        if !common.quiet {
            print!("{text}");
        }
        Ok(outcome)
    })();
    match result {
        Ok(o) if o.inconclusive => ExitCode::from(2),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
