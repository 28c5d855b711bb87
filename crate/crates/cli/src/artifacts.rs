//! results.json and CSV artifacts. Every number is finite; a non-finite
//! value becomes `null` in JSON and an empty cell in CSV.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::Value;
use thimble_core::asymptotics::GrowthMapRow;
use thimble_core::critical::morse_height;
use thimble_core::flow::ThimbleBundle;
use thimble_core::intersection::{level_section, section_at, Adjacency, ThimbleSection};

pub const SCHEMA_VERSION: u32 = 1;

pub struct Artifacts {
    root: PathBuf,
}

fn cell(x: f64) -> String {
    if !x.is_finite() {
        String::new()
    } else if x == 0.0 || (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

impl Artifacts {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Artifacts { root: root.to_path_buf() })
    }

    fn subdir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.root.join(name);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    pub fn results(&self, body: &Value) -> Result<String> {
        let text = serde_json::to_string_pretty(body)? + "\n";
        let path = self.root.join("results.json");
        fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
        Ok(text)
    }

    /// `flows/v{frame}_sigma{sigma}.csv`: one row per sample, plus one
    /// `level` row per line that reached the target height.
    pub fn flows(&self, frame: usize, sigma: usize, bundle: &ThimbleBundle) -> Result<()> {
        let path = self.subdir("flows")?.join(format!("v{frame}_sigma{sigma}.csv"));
        let mut w = writer(&path)?;
        let n = bundle.critical.k.len();
        let mut header = vec!["line".to_string(), "kind".into(), "s".into(), "h".into()];
        for mu in 0..n {
            header.push(format!("re_k{mu}"));
            header.push(format!("im_k{mu}"));
        }
        w.write_record(&header)?;
        let v = &bundle.velocity;
        for (i, line) in bundle.lines.iter().enumerate() {
            let level = line.level_hit.iter().map(|(s, k)| ("level", s, k));
            for (kind, s, k) in line.samples.iter().map(|(s, k)| ("sample", s, k)).chain(level) {
                let mut rec = vec![i.to_string(), kind.to_string(), cell(*s), cell(morse_height(k.as_slice(), v).0)];
                for z in k.as_slice() {
                    rec.push(cell(z.re));
                    rec.push(cell(z.im));
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `sections/v{frame}_sigma{sigma}.csv` with the projection at every
    /// checkpoint and at the target height, and for d = 3 the triangles of
    /// each section in `sections/v{frame}_sigma{sigma}_mesh.csv`.
    pub fn sections(&self, frame: usize, sigma: usize, bundle: &ThimbleBundle) -> Result<()> {
        let dir = self.subdir("sections")?;
        let d = bundle.velocity.dim();
        let mut sections: Vec<(&str, usize, ThimbleSection)> = Vec::new();
        for idx in 0..bundle.s_grid.len() {
            if let Ok(sec) = section_at(bundle, idx) {
                sections.push(("checkpoint", idx, sec));
            }
        }
        if bundle.level.is_some() {
            if let Ok(sec) = level_section(bundle) {
                sections.push(("level", bundle.s_grid.len(), sec));
            }
        }
        let mut w = writer(&dir.join(format!("v{frame}_sigma{sigma}.csv")))?;
        let mut header = vec!["section".to_string(), "kind".into(), "s".into(), "point".into()];
        header.extend((1..=d).map(|i| format!("im_k{i}")));
        w.write_record(&header)?;
        for (kind, id, sec) in &sections {
            for (p, x) in sec.points.iter().enumerate() {
                let mut rec = vec![id.to_string(), kind.to_string(), cell(sec.s), p.to_string()];
                rec.extend(x.iter().map(|&c| cell(c)));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        if d == 3 {
            let mut m = writer(&dir.join(format!("v{frame}_sigma{sigma}_mesh.csv")))?;
            m.write_record(["section", "a", "b", "c"])?;
            for (_, id, sec) in &sections {
                if let Adjacency::Mesh(tris) = &sec.adjacency {
                    for t in tris {
                        m.write_record([id.to_string(), t[0].to_string(), t[1].to_string(), t[2].to_string()])?;
                    }
                }
            }
            m.flush()?;
        }
        Ok(())
    }

    /// `growthmap.csv`: v1..vd, h, verdict, rate.
    pub fn growth_map(&self, d: usize, rows: &[GrowthMapRow]) -> Result<()> {
        let mut w = writer(&self.root.join("growthmap.csv"))?;
        let mut header: Vec<String> = (1..=d).map(|i| format!("v{i}")).collect();
        header.extend(["h".into(), "verdict".into(), "rate".into()]);
        w.write_record(&header)?;
        for r in rows {
            let mut rec: Vec<String> = r.v.0.iter().map(|&x| cell(x)).collect();
            rec.push(r.h.map_or(String::new(), cell));
            rec.push(r.verdict.map_or(String::new(), |v| v.to_string()));
            rec.push(r.rate.map_or(String::new(), cell));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
