//! Per-scene Gaussian budget from an uncapped AbsGS run on the SfM initializer.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::densify::{StrategyConfig, StrategyKind};
use crate::error::{IoContext, Result};
use crate::init::{build_init, InitInputs, InitSize, InitSource, InitSpec};
use crate::optim::{train, TrainConfig};
use crate::scalar::Real;

use super::scene_io::{hex, BenchScene};
use super::write_atomic;

/// Environment variable naming the cache directory.
pub const CACHE_ENV: &str = "SPLATBENCH_CACHE";

/// The cache directory from [`CACHE_ENV`], if set and nonempty.
pub fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Outcome of one reference run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmaxRecord {
    pub scene: String,
    pub key: String,
    pub gmax: usize,
    pub seed: u64,
    pub sh_degree: usize,
    pub wall_time_s: f64,
}

#[derive(Serialize)]
struct KeyInput<'a> {
    purpose: &'static str,
    fingerprint: &'a str,
    strategy: &'a StrategyConfig,
    train: &'a TrainConfig,
    sh_degree: usize,
}

/// Cache key: hex SHA-256 over the scene fingerprint, the reference strategy and
/// training configs (cap removed, seed included) and the SH degree.
pub fn gmax_key(fingerprint: &str, strategy: &StrategyConfig, train: &TrainConfig, sh_degree: usize) -> String {
    let strategy = StrategyConfig { kind: StrategyKind::Absgs, ..strategy.clone() };
    let train = TrainConfig { cap: None, ..train.clone() };
    let input = KeyInput { purpose: "gmax", fingerprint, strategy: &strategy, train: &train, sh_degree };
    hex(&Sha256::digest(serde_json::to_vec(&input).expect("key input serializes")))
}

fn cache_path(cache: &Path, key: &str) -> PathBuf {
    cache.join("gmax").join(format!("{key}.json"))
}

/// Train AbsGS uncapped from the full SfM cloud and return the final count. With a cache
/// directory, a previous result under the same key is reused and new results are stored.
pub fn derive_gmax<T: Real>(
    scene: &BenchScene<T>,
    strategy: &StrategyConfig,
    train_config: &TrainConfig,
    sh_degree: usize,
    cache: Option<&Path>,
) -> Result<GmaxRecord> {
    let key = gmax_key(&scene.fingerprint, strategy, train_config, sh_degree);
    if let Some(dir) = cache {
        let path = cache_path(dir, &key);
        if path.exists() {
            let rec: GmaxRecord = serde_json::from_slice(&fs::read(&path).at(&path)?)?;
            if rec.key == key {
                log::info!("G_max for {} from cache: {}", scene.id, rec.gmax);
                return Ok(rec);
            }
        }
    }
    let t0 = Instant::now();
    let strategy = StrategyConfig { kind: StrategyKind::Absgs, ..strategy.clone() };
    let cfg = TrainConfig { cap: None, ..train_config.clone() };
    let spec = InitSpec { seed: cfg.seed, sh_degree, ..InitSpec::new(InitSource::Sfm, InitSize::All) };
    let inputs = InitInputs { cameras: &scene.scene.cameras, sfm: &scene.sfm, cap: None, compare_sizes: vec![] };
    let init = build_init(&spec, &inputs)?;
    let out = train(&scene.scene, init, &strategy, &cfg)?;
    let rec = GmaxRecord {
        scene: scene.id.clone(),
        key: key.clone(),
        gmax: out.cloud.len(),
        seed: cfg.seed,
        sh_degree,
        wall_time_s: t0.elapsed().as_secs_f64(),
    };
    log::info!("G_max for {}: {} ({:.1} s)", scene.id, rec.gmax, rec.wall_time_s);
    if let Some(dir) = cache {
        let path = cache_path(dir, &key);
        write_atomic(&path, &serde_json::to_vec_pretty(&rec)?)?;
    }
    Ok(rec)
}
