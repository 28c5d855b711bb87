use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn problem(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name)
}

fn thimble(args: &[&str], out: &Path) -> (i32, Value) {
    let status = Command::new(env!("CARGO_BIN_EXE_thimble"))
        .args(args)
        .arg("--quiet")
        .arg("--out")
        .arg(out)
        .status()
        .unwrap();
    let code = status.code().unwrap();
    let results = std::fs::read_to_string(out.join("results.json"))
        .map(|t| serde_json::from_str(&t).unwrap())
        .unwrap_or(Value::Null);
    (code, results)
}

fn sigmas(frame: &Value) -> Vec<Value> {
    frame["sigmas"].as_array().unwrap().clone()
}

#[test]
fn analyze_printed_demo() {
    let dir = tempfile::tempdir().unwrap();
    let file = problem("eq13.json");
    let (code, r) = thimble(&["analyze", file.to_str().unwrap(), "--v", "1,1"], dir.path());
    assert_eq!(code, 0);
    assert_eq!(r["schema_version"], 1);
    let frame = &r["frames"][0];
    assert!(sigmas(frame).iter().any(|s| s["coefficient"].as_i64().map(i64::abs) == Some(1)));
    assert!(dir.path().join("flows/v0_sigma0.csv").exists());
    assert!(dir.path().join("sections/v0_sigma0.csv").exists());

    let (code, r) = thimble(&["analyze", file.to_str().unwrap(), "--v", "0,0"], dir.path());
    assert_eq!(code, 0);
    let frame = &r["frames"][0];
    assert_eq!(frame["classification"]["verdict"], "zero");
    assert!(sigmas(frame).iter().all(|s| s["coefficient"] == 0));
}

#[test]
fn oracle_compare_tachyonic() {
    let dir = tempfile::tempdir().unwrap();
    let file = problem("eq13-tachyonic.json");
    let (code, r) = thimble(&["oracle-compare", file.to_str().unwrap(), "--v", "1,1", "--t", "30"], dir.path());
    assert_eq!(code, 0);
    let ratio = r["frames"][0]["evaluations"][0]["ratio"].as_f64().unwrap();
    assert!((0.9..=1.1).contains(&ratio), "ratio {ratio}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = thimble(&["critical", "/nonexistent.json", "--v", "0"], dir.path());
    assert_eq!(code, 1);
    let (code, _) = thimble(&["critical", "--expr", "k0 +", "--d", "1", "--v", "0"], dir.path());
    assert_eq!(code, 1);
    let (code, _) = thimble(&["classify", "--expr", "k0 + k1^2", "--d", "1"], dir.path());
    assert_eq!(code, 1, "missing --v is a usage error");
    let tachyonic = problem("eq13-tachyonic.json");
    // The lower point's coefficient is withheld at a Stokes frame.
    let (code, r) = thimble(&["intersect", tachyonic.to_str().unwrap(), "--v", "0.5,0.5"], dir.path());
    assert_eq!(code, 2);
    assert!(sigmas(&r["frames"][0]).iter().any(|s| s["coefficient"].is_null()));
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = walk(dir).into_iter().map(|p| (p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap())).collect();
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn artifacts_are_reproducible_and_finite() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let file = problem("eq14-tachyonic.json");
    let args = ["analyze", file.to_str().unwrap(), "--v", "1,1,1", "--v", "0.5,0.25,0", "--t", "20"];
    let (code, _) = thimble(&args, a.path());
    assert_eq!(code, 0);
    thimble(&args, b.path());
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.len(), sb.len());
    for ((pa, ca), (pb, cb)) in sa.iter().zip(&sb) {
        assert_eq!(pa, pb);
        assert!(ca == cb, "{} differs between runs", pa.display());
    }
    assert!(sa.iter().any(|(p, _)| p.ends_with("v0_sigma0_mesh.csv")));
    for (path, bytes) in &sa {
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(!text.contains("NaN") && !text.contains("inf"), "{}", path.display());
        if path.extension().is_some_and(|e| e == "csv") {
            let mut rows = csv::Reader::from_reader(text.as_bytes());
            for rec in rows.records() {
                for cell in rec.unwrap().iter() {
                    if let Ok(x) = cell.parse::<f64>() {
                        assert!(x.is_finite());
                    }
                }
            }
        }
    }
}

#[test]
fn growth_map_csv() {
    let dir = tempfile::tempdir().unwrap();
    let file = problem("eq13-tachyonic.json");
    let (code, _) = thimble(&["growth-map", file.to_str().unwrap(), "--grid", "-0.5", "2.5", "5"], dir.path());
    assert_eq!(code, 0);
    let mut rows = csv::Reader::from_path(dir.path().join("growthmap.csv")).unwrap();
    assert_eq!(rows.headers().unwrap(), vec!["v1", "v2", "h", "verdict", "rate"]);
    let recs: Vec<_> = rows.records().map(|r| r.unwrap()).collect();
    assert_eq!(recs.len(), 25);
    let centre = recs.iter().find(|r| &r[0] == "1" && &r[1] == "1").unwrap();
    assert!((centre[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-8);
}

#[test]
fn flags_override_file_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.json");
    std::fs::write(&file, r#"{"d": 1, "delta": "-i*k0 + i*k1 + k1^2 - 1", "defaults": {"starts": 8, "M": 128}}"#).unwrap();
    let out = dir.path().join("out");
    let (code, r) = thimble(&["critical", file.to_str().unwrap(), "--v", "0"], &out);
    assert_eq!(code, 0);
    assert_eq!(r["config"]["analysis"]["search"]["starts"], 8);
    assert_eq!(r["config"]["quadrature"]["m"], 128);
    let (_, r) = thimble(&["critical", file.to_str().unwrap(), "--v", "0", "--starts", "16"], &out);
    assert_eq!(r["config"]["analysis"]["search"]["starts"], 16);
    assert_eq!(r["config"]["quadrature"]["m"], 128);
    let (_, r) = thimble(&["critical", "--expr", "-i*k0 + k1^2 - 1", "--d", "1", "--v", "0"], &out);
    assert_eq!(r["config"]["analysis"]["search"]["starts"], 256);
}

#[test]
fn parse_check_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (code, r) = thimble(&["parse-check", "--expr", "[[k0 - k1, 1], [1, k0 + k1]]", "--d", "1", "--dump-poly"], dir.path());
    assert_eq!(code, 0);
    assert_eq!(r["problem"]["n"], 2);
    assert_eq!(r["problem"]["delta"], "k0^2 - k1^2 - 1");
    assert_eq!(r["adjugate"][0][0], "k0 + k1");
}
