//! Benchmark protocol: fixed-budget cap derivation, run matrix, evaluation, reports.

pub mod gmax;
pub mod matrix;
pub mod metrics;
pub mod report;
pub mod scene_io;
pub mod synth;

use std::fs;
use std::path::Path;

use crate::error::{IoContext, Result};

pub use gmax::{cache_dir_from_env, derive_gmax, gmax_key, GmaxRecord, CACHE_ENV};
pub use matrix::{
    cap_for, cells_for, run_matrix, BenchmarkRun, Cell, MatrixConfig, MatrixOptions, MatrixOutcome, RunResults,
    RunStatus, SceneBudget, LPIPS_NOTE,
};
pub use metrics::{evaluate, psnr, ssim, SplitMetrics, ViewMetrics};
pub use report::{BenchReport, RunRow, SceneMean};
pub use scene_io::{load_scene, BenchScene, DEFAULT_HOLDOUT_EVERY};
pub use synth::{synth_scene, SynthConfig, SynthScene};

/// Write through a temporary sibling and rename, so concurrent readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}
