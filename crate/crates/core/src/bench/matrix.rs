//! The init × size × noise × strategy × cap × seed run matrix.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::densify::{StrategyConfig, StrategyKind};
use crate::error::{Error, IoContext, Result};
use crate::init::{build_init, read_edgs, read_ply_points, subsample_indices, InitInputs, InitSize, InitSource, InitSpec};
use crate::optim::{train, write_ndjson, TrainConfig};
use crate::raster::RenderSettings;
use crate::scalar::Real;
use crate::scene::Split;

use super::gmax::derive_gmax;
use super::metrics::{evaluate, SplitMetrics};
use super::scene_io::{hex, load_scene, BenchScene, DEFAULT_HOLDOUT_EVERY};
use super::write_atomic;

/// Why the LPIPS column is always empty.
pub const LPIPS_NOTE: &str = "LPIPS needs a pretrained network and is not computed; the column is always null";

fn default_inits() -> Vec<String> {
    vec!["sfm".into()]
}
fn default_sizes() -> Vec<String> {
    vec!["match-sfm".into()]
}
fn default_noise() -> Vec<f64> {
    vec![0.0]
}
fn default_strategies() -> Vec<StrategyKind> {
    StrategyKind::ALL.to_vec()
}
fn default_cap_fractions() -> Vec<f64> {
    vec![1.0]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_holdout() -> usize {
    DEFAULT_HOLDOUT_EVERY
}
fn default_sh_degree() -> usize {
    3
}

/// Matrix description, read from TOML. Relative scene and init paths resolve against
/// the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub scenes: Vec<PathBuf>,
    /// Init sources: `sfm`, `random`, `dense-ply:<path>`, `edgs:<path>`.
    #[serde(default = "default_inits")]
    pub inits: Vec<String>,
    /// Init sizes: a count, `<f>x` for a fraction of G_max, `match-sfm`, `compare` or `all`.
    #[serde(default = "default_sizes")]
    pub sizes: Vec<String>,
    /// Position noise as a fraction of the scene extent.
    #[serde(default = "default_noise")]
    pub noise: Vec<f64>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyKind>,
    #[serde(default = "default_cap_fractions")]
    pub cap_fractions: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_holdout")]
    pub holdout_every: usize,
    #[serde(default = "default_sh_degree")]
    pub sh_degree: usize,
    /// Keep only cells whose label contains one of these substrings; empty keeps all.
    #[serde(default)]
    pub include: Vec<String>,
    /// Known G_max per scene id; other scenes are derived (and cached).
    #[serde(default)]
    pub gmax: BTreeMap<String, usize>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Strategy constants; `kind` is overridden per cell.
    #[serde(default)]
    pub strategy: StrategyConfig,
}

impl MatrixConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read a config file and resolve relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for s in &mut self.scenes {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        for init in &mut self.inits {
            if let Ok(src) = init.parse::<InitSource>() {
                let fixed = match src {
                    InitSource::DensePly(p) if p.is_relative() => Some(InitSource::DensePly(base.join(p))),
                    InitSource::EdgsFile(p) if p.is_relative() => Some(InitSource::EdgsFile(base.join(p))),
                    _ => None,
                };
                if let Some(f) = fixed {
                    *init = f.to_string();
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scenes.is_empty() {
            return bad("no scenes".into());
        }
        let axes = [
            ("inits", self.inits.len()),
            ("sizes", self.sizes.len()),
            ("noise", self.noise.len()),
            ("strategies", self.strategies.len()),
            ("cap_fractions", self.cap_fractions.len()),
            ("seeds", self.seeds.len()),
        ];
        for (name, len) in axes {
            if len == 0 {
                return bad(format!("axis '{name}' is empty"));
            }
        }
        for s in &self.inits {
            s.parse::<InitSource>()?;
        }
        for s in &self.sizes {
            s.parse::<InitSize>()?;
        }
        if self.noise.iter().any(|n| !(*n >= 0.0)) {
            return bad("noise levels must be nonnegative".into());
        }
        if self.cap_fractions.iter().any(|f| !(*f > 0.0)) {
            return bad("cap fractions must be positive".into());
        }
        self.train.validate()?;
        self.strategy.validate()
    }

    /// Number of cells before filtering.
    pub fn cell_count(&self) -> usize {
        self.scenes.len()
            * self.inits.len()
            * self.sizes.len()
            * self.noise.len()
            * self.strategies.len()
            * self.cap_fractions.len()
            * self.seeds.len()
    }
}

/// One cell of the matrix for a loaded scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub init: InitSpec,
    pub strategy: StrategyKind,
    pub cap_fraction: f64,
    pub seed: u64,
}

impl Cell {
    pub fn label(&self, scene: &str) -> String {
        format!("{scene}/{}/{}/cap{}/seed{}", self.init.label(), self.strategy, self.cap_fraction, self.seed)
    }
}

/// Cells of one scene in axis order: init, size, noise, strategy, cap fraction, seed.
pub fn cells_for(config: &MatrixConfig) -> Result<Vec<Cell>> {
    let mut out = Vec::new();
    for src in &config.inits {
        let source: InitSource = src.parse()?;
        for size in &config.sizes {
            let size: InitSize = size.parse()?;
            for &noise in &config.noise {
                for &strategy in &config.strategies {
                    for &cap_fraction in &config.cap_fractions {
                        for &seed in &config.seeds {
                            let init = InitSpec {
                                source: source.clone(),
                                size: size.clone(),
                                noise,
                                seed,
                                sh_degree: config.sh_degree,
                            };
                            out.push(Cell { init, strategy, cap_fraction, seed });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub train: SplitMetrics,
    /// Null when the scene has no test views.
    pub test: Option<SplitMetrics>,
    /// Always null; see [`LPIPS_NOTE`].
    pub lpips: Option<f64>,
    pub final_n: usize,
    pub max_n: usize,
    pub wall_time_s: f64,
    /// Per-step log, relative to the output directory.
    pub log_path: Option<String>,
}

/// One executed (or failed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub key: String,
    pub scene: String,
    pub init: InitSpec,
    pub init_label: String,
    pub strategy: StrategyConfig,
    /// Initial count actually trained from; null when the init could not be built.
    pub n_init: Option<usize>,
    /// True when the requested size exceeded the cap and was reduced to it.
    pub n_init_clamped: bool,
    pub gmax: usize,
    pub cap_fraction: f64,
    pub cap: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Present only for completed runs.
    pub results: Option<RunResults>,
}

impl BenchmarkRun {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed && self.results.is_some()
    }
}

/// Cap for a fraction of G_max (floor, at least 1).
pub fn cap_for(gmax: usize, fraction: f64) -> usize {
    ((gmax as f64 * fraction).floor() as usize).max(1)
}

#[derive(Serialize)]
struct CellKeyInput<'a> {
    fingerprint: &'a str,
    cell: &'a Cell,
    strategy: &'a StrategyConfig,
    train: &'a TrainConfig,
    gmax: usize,
    holdout_every: usize,
}

/// Hex SHA-256 identifying a cell's full configuration.
pub fn cell_key(scene: &BenchScene<impl Real>, cell: &Cell, config: &MatrixConfig, gmax: usize) -> String {
    let strategy = StrategyConfig { kind: cell.strategy, ..config.strategy.clone() };
    let input = CellKeyInput {
        fingerprint: &scene.fingerprint,
        cell,
        strategy: &strategy,
        train: &config.train,
        gmax,
        holdout_every: config.holdout_every,
    };
    hex(&Sha256::digest(serde_json::to_vec(&input).expect("key input serializes")))
}

fn source_size<T: Real>(source: &InitSource, scene: &BenchScene<T>) -> Option<usize> {
    match source {
        InitSource::Sfm => Some(scene.sfm.len()),
        InitSource::DensePly(p) => read_ply_points::<f64>(p).ok().map(|pc| pc.len()),
        InitSource::EdgsFile(p) => read_edgs::<f64>(p).ok().map(|c| c.len()),
        InitSource::Random => None,
    }
}

/// Train and evaluate one cell. Errors are returned, not recorded.
fn execute<T: Real>(
    scene: &BenchScene<T>,
    cell: &Cell,
    config: &MatrixConfig,
    gmax: usize,
    compare_sizes: &[usize],
    run: &mut BenchmarkRun,
    out_dir: &Path,
) -> Result<RunResults> {
    let t0 = Instant::now();
    let cap = run.cap;
    // sizes given as fractions refer to G_max; the result is then clamped to this run's cap
    let inputs = InitInputs {
        cameras: &scene.scene.cameras,
        sfm: &scene.sfm,
        cap: Some(gmax),
        compare_sizes: compare_sizes.to_vec(),
    };
    let mut init = build_init(&cell.init, &inputs)?;
    if init.len() > cap {
        init = init.select(&subsample_indices(init.len(), cap, cell.seed)?);
        run.n_init_clamped = true;
    }
    run.n_init = Some(init.len());
    let train_cfg = TrainConfig { cap: Some(cap), seed: cell.seed, ..config.train.clone() };
    let out = train(&scene.scene, init, &run.strategy, &train_cfg)?;
    let settings = RenderSettings { background: train_cfg.background.map(T::lit), parallel: train_cfg.parallel };
    let train_m = evaluate(&out.cloud, &scene.scene, Split::Train, &settings)?;
    let test_m = if scene.scene.test.is_empty() {
        None
    } else {
        Some(evaluate(&out.cloud, &scene.scene, Split::Test, &settings)?)
    };
    let rel = format!("logs/{}.ndjson", run.key);
    let log_path = out_dir.join(&rel);
    let mut buf = Vec::new();
    write_ndjson(&out.log, &mut buf)?;
    write_atomic(&log_path, &buf)?;
    Ok(RunResults {
        train: train_m,
        test: test_m,
        lpips: None,
        final_n: out.cloud.len(),
        max_n: out.max_n(),
        wall_time_s: t0.elapsed().as_secs_f64(),
        log_path: Some(rel),
    })
}

/// Options for [`run_matrix`].
#[derive(Clone, Debug, Default)]
pub struct MatrixOptions {
    /// Directory for G_max records; none disables that cache.
    pub cache_dir: Option<PathBuf>,
    /// Extra label filter on top of the config's `include`.
    pub include: Vec<String>,
}

/// Summary of one scene's budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBudget {
    pub scene: String,
    pub fingerprint: String,
    /// Null when the scene could not be loaded or its G_max derived.
    pub gmax: Option<usize>,
    pub error: Option<String>,
}

/// Everything a matrix run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixOutcome {
    pub scenes: Vec<SceneBudget>,
    pub runs: Vec<BenchmarkRun>,
    /// Cells that could not even be set up (scene failed to load or no G_max).
    pub skipped: usize,
}

impl MatrixOutcome {
    pub fn all_completed(&self) -> bool {
        self.skipped == 0 && self.runs.iter().all(|r| r.is_completed())
    }
}

fn wanted(label: &str, filters: &[&String]) -> bool {
    filters.is_empty() || filters.iter().any(|f| label.contains(f.as_str()))
}

/// Run every selected cell. Completed cells found in `<out>/cells/<key>.json` are reused.
/// Failures are recorded and the matrix continues.
pub fn run_matrix<T: Real>(config: &MatrixConfig, out_dir: &Path, opts: &MatrixOptions) -> Result<MatrixOutcome> {
    config.validate()?;
    let cells = cells_for(config)?;
    let filters: Vec<&String> = config.include.iter().chain(&opts.include).collect();
    let cell_dir = out_dir.join("cells");
    fs::create_dir_all(&cell_dir).at(&cell_dir)?;
    let mut outcome = MatrixOutcome { scenes: Vec::new(), runs: Vec::new(), skipped: 0 };
    for scene_path in &config.scenes {
        let loaded = load_scene::<T>(scene_path, config.holdout_every);
        let scene = match loaded {
            Ok(s) => s,
            Err(e) => {
                log::error!("scene {}: {e}", scene_path.display());
                outcome.scenes.push(SceneBudget {
                    scene: scene_path.display().to_string(),
                    fingerprint: String::new(),
                    gmax: None,
                    error: Some(e.to_string()),
                });
                outcome.skipped += cells.len();
                continue;
            }
        };
        let selected: Vec<&Cell> = cells.iter().filter(|c| wanted(&c.label(&scene.id), &filters)).collect();
        if selected.is_empty() {
            continue;
        }
        let derived = match config.gmax.get(&scene.id) {
            Some(&g) => Ok(g),
            None => derive_gmax(&scene, &config.strategy, &config.train, config.sh_degree, opts.cache_dir.as_deref())
                .map(|r| r.gmax),
        }
        .and_then(|g| if g == 0 { Err(Error::Pipeline("reference run ended with no Gaussians".into())) } else { Ok(g) });
        let gmax = match derived {
            Ok(g) => g,
            Err(e) => {
                log::error!("G_max for {}: {e}", scene.id);
                outcome.scenes.push(SceneBudget {
                    scene: scene.id.clone(),
                    fingerprint: scene.fingerprint.clone(),
                    gmax: None,
                    error: Some(e.to_string()),
                });
                outcome.skipped += selected.len();
                continue;
            }
        };
        outcome.scenes.push(SceneBudget {
            scene: scene.id.clone(),
            fingerprint: scene.fingerprint.clone(),
            gmax: Some(gmax),
            error: None,
        });
        let compare_sizes: Vec<usize> =
            config.inits.iter().filter_map(|s| s.parse().ok()).filter_map(|s| source_size(&s, &scene)).collect();
        for cell in selected {
            let key = cell_key(&scene, cell, config, gmax);
            let path = cell_dir.join(format!("{key}.json"));
            if let Ok(bytes) = fs::read(&path) {
                if let Ok(run) = serde_json::from_slice::<BenchmarkRun>(&bytes) {
                    if run.is_completed() && run.key == key {
                        log::info!("{}: cached", cell.label(&scene.id));
                        outcome.runs.push(run);
                        continue;
                    }
                }
            }
            let mut run = BenchmarkRun {
                key: key.clone(),
                scene: scene.id.clone(),
                init: cell.init.clone(),
                init_label: cell.init.label(),
                strategy: StrategyConfig { kind: cell.strategy, ..config.strategy.clone() },
                n_init: None,
                n_init_clamped: false,
                gmax,
                cap_fraction: cell.cap_fraction,
                cap: cap_for(gmax, cell.cap_fraction),
                seed: cell.seed,
                status: RunStatus::Failed,
                error: None,
                results: None,
            };
            log::info!("{}: training (cap {})", cell.label(&scene.id), run.cap);
            match execute(&scene, cell, config, gmax, &compare_sizes, &mut run, out_dir) {
                Ok(res) => {
                    run.status = RunStatus::Completed;
                    run.results = Some(res);
                }
                Err(e) => {
                    log::error!("{}: {e}", cell.label(&scene.id));
                    run.error = Some(e.to_string());
                }
            }
            write_atomic(&path, &serde_json::to_vec_pretty(&run)?)?;
            outcome.runs.push(run);
        }
    }
    Ok(outcome)
}
