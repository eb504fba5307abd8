//! Results document and flat tables for plotting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::init::InitSource;

use super::metrics::{finite_or_tag, opt_finite_or_tag};
use super::matrix::{BenchmarkRun, MatrixOutcome, SceneBudget, LPIPS_NOTE};
use super::write_atomic;

pub const SCHEMA_VERSION: u32 = 1;

/// The canonical results document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub lpips_note: String,
    pub scenes: Vec<SceneBudget>,
    pub runs: Vec<BenchmarkRun>,
    /// Means over scenes, each scene weighted equally.
    pub scene_means: Vec<SceneMean>,
}

/// Unweighted mean over scenes of one (init, strategy, cap fraction) group. Seeds are
/// averaged within a scene first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMean {
    pub init: String,
    pub strategy: String,
    pub cap_fraction: f64,
    pub scenes: usize,
    #[serde(with = "opt_finite_or_tag")]
    pub test_psnr: Option<f64>,
    pub test_ssim: Option<f64>,
    #[serde(with = "finite_or_tag")]
    pub train_psnr: f64,
    pub train_ssim: f64,
}

/// One completed run as a flat table row. Empty optional fields are written as empty cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub key: String,
    pub scene: String,
    pub init: String,
    pub source: String,
    pub size: String,
    pub noise: f64,
    pub strategy: String,
    pub seed: u64,
    pub gmax: usize,
    pub cap_fraction: f64,
    pub cap: usize,
    pub n_init: Option<usize>,
    pub final_n: usize,
    pub max_n: usize,
    pub train_psnr: String,
    pub train_ssim: f64,
    pub test_psnr: Option<String>,
    pub test_ssim: Option<f64>,
    pub lpips: Option<f64>,
    pub wall_time_s: f64,
}

fn db(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn source_name(s: &InitSource) -> String {
    match s {
        InitSource::Sfm => "sfm".into(),
        InitSource::Random => "random".into(),
        InitSource::DensePly(p) => format!("ply:{}", p.display()),
        InitSource::EdgsFile(p) => format!("edgs:{}", p.display()),
    }
}

impl RunRow {
    /// `None` for runs without results.
    pub fn of(run: &BenchmarkRun) -> Option<Self> {
        let r = run.results.as_ref()?;
        Some(Self {
            key: run.key.clone(),
            scene: run.scene.clone(),
            init: run.init_label.clone(),
            source: source_name(&run.init.source),
            size: run.init.size.to_string(),
            noise: run.init.noise,
            strategy: run.strategy.kind.to_string(),
            seed: run.seed,
            gmax: run.gmax,
            cap_fraction: run.cap_fraction,
            cap: run.cap,
            n_init: run.n_init,
            final_n: r.final_n,
            max_n: r.max_n,
            train_psnr: db(r.train.psnr),
            train_ssim: r.train.ssim,
            test_psnr: r.test.as_ref().map(|t| db(t.psnr)),
            test_ssim: r.test.as_ref().map(|t| t.ssim),
            lpips: r.lpips,
            wall_time_s: r.wall_time_s,
        })
    }
}

fn completed_rows(runs: &[BenchmarkRun]) -> Vec<(RunRow, &BenchmarkRun)> {
    runs.iter().filter(|r| r.is_completed()).filter_map(|r| RunRow::of(r).map(|row| (row, r))).collect()
}

/// Rows grouped into curves. A curve holds runs of one scene, strategy and cap
/// fraction that differ only along the curve's axis; every run in a curve must share
/// the same cap.
fn curve_rows(runs: &[BenchmarkRun], by_noise: bool) -> Result<Vec<RunRow>> {
    let mut groups: BTreeMap<String, Vec<(RunRow, &BenchmarkRun)>> = BTreeMap::new();
    for (row, run) in completed_rows(runs) {
        let fixed = if by_noise { row.size.clone() } else { format!("noise{}", row.noise) };
        let key = format!("{}|{}|{}|{}|{}", row.scene, row.strategy, row.cap_fraction, row.source, fixed);
        groups.entry(key).or_default().push((row, run));
    }
    let mut out = Vec::new();
    for (key, mut rows) in groups {
        let cap = rows[0].0.cap;
        if let Some((bad, _)) = rows.iter().find(|(r, _)| r.cap != cap) {
            return Err(Error::Pipeline(format!(
                "curve {key} mixes caps {cap} and {}; refusing to aggregate runs with different budgets",
                bad.cap
            )));
        }
        if by_noise {
            rows.sort_by(|a, b| a.0.noise.total_cmp(&b.0.noise).then(a.0.seed.cmp(&b.0.seed)));
        } else {
            rows.sort_by(|a, b| a.0.n_init.cmp(&b.0.n_init).then(a.0.seed.cmp(&b.0.seed)));
        }
        out.extend(rows.into_iter().map(|(r, _)| r));
    }
    Ok(out)
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn scene_means(runs: &[BenchmarkRun]) -> Vec<SceneMean> {
    // group → scene → runs
    let mut groups: BTreeMap<(String, String, String), BTreeMap<String, Vec<&BenchmarkRun>>> = BTreeMap::new();
    for r in runs.iter().filter(|r| r.is_completed()) {
        let g = (r.init_label.clone(), r.strategy.kind.to_string(), format!("{}", r.cap_fraction));
        groups.entry(g).or_default().entry(r.scene.clone()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((init, strategy, _), scenes)| {
            let per_scene = |f: &dyn Fn(&BenchmarkRun) -> Option<f64>| -> Vec<Option<f64>> {
                scenes.values().map(|rs| mean(rs.iter().filter_map(|r| f(r)))).collect()
            };
            let all = |v: Vec<Option<f64>>| -> Option<f64> {
                if v.iter().any(|x| x.is_none()) {
                    None
                } else {
                    mean(v.into_iter().flatten())
                }
            };
            let res = |r: &BenchmarkRun| r.results.clone().unwrap();
            let cap_fraction = scenes.values().next().unwrap()[0].cap_fraction;
            SceneMean {
                init,
                strategy,
                cap_fraction,
                scenes: scenes.len(),
                test_psnr: all(per_scene(&|r| res(r).test.map(|t| t.psnr))),
                test_ssim: all(per_scene(&|r| res(r).test.map(|t| t.ssim))),
                train_psnr: all(per_scene(&|r| Some(res(r).train.psnr))).unwrap_or(f64::NAN),
                train_ssim: all(per_scene(&|r| Some(res(r).train.ssim))).unwrap_or(f64::NAN),
            }
        })
        .collect()
}

impl BenchReport {
    pub fn new(outcome: &MatrixOutcome) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            lpips_note: LPIPS_NOTE.into(),
            scenes: outcome.scenes.clone(),
            runs: outcome.runs.clone(),
            scene_means: scene_means(&outcome.runs),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn run_rows(&self) -> Vec<RunRow> {
        completed_rows(&self.runs).into_iter().map(|(r, _)| r).collect()
    }

    /// Metric against initial size, one curve per scene, strategy, cap, source and noise.
    pub fn size_curves(&self) -> Result<Vec<RunRow>> {
        curve_rows(&self.runs, false)
    }

    /// Metric against noise level, one curve per scene, strategy, cap, source and size.
    pub fn noise_curves(&self) -> Result<Vec<RunRow>> {
        curve_rows(&self.runs, true)
    }

    /// Write `results.json`, `runs.csv`, `curves_size.csv`, `curves_noise.csv` and
    /// `scene_means.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let size = self.size_curves()?;
        let noise = self.noise_curves()?;
        write_atomic(&dir.join("results.json"), self.to_json()?.as_bytes())?;
        write_atomic(&dir.join("runs.csv"), &csv_bytes(&self.run_rows())?)?;
        write_atomic(&dir.join("curves_size.csv"), &csv_bytes(&size)?)?;
        write_atomic(&dir.join("curves_noise.csv"), &csv_bytes(&noise)?)?;
        write_atomic(&dir.join("scene_means.csv"), &csv_bytes(&self.scene_means)?)
    }
}

fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Pipeline(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Pipeline(format!("csv: {e}")))
}
