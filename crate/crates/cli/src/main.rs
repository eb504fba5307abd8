#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use splatbench::bench::{
    cache_dir_from_env, derive_gmax, evaluate, load_scene, run_matrix, synth_scene, BenchReport, MatrixConfig,
    MatrixOptions, SynthConfig, CACHE_ENV, DEFAULT_HOLDOUT_EVERY,
};
use splatbench::densify::{StrategyConfig, StrategyKind};
use splatbench::init::{build_init, write_gaussian_ply, write_ply_points, InitInputs, InitSize, InitSource, InitSpec, PlyFormat};
use splatbench::monodepth::{load_depth_dir, monodepth_pipeline, MonodepthConfig, MonodepthInput};
use splatbench::optim::{train, write_ndjson, TrainConfig};
use splatbench::raster::RenderSettings;
use splatbench::Split;

/// CPU Gaussian splatting benchmark: fixed-budget comparisons of initializers and
/// densification strategies.
#[derive(Parser)]
#[command(name = "splatbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive the per-scene Gaussian budget from an uncapped AbsGS run on the SfM points.
    DeriveGmax {
        scene: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Directory for cached budgets.
        #[arg(long, env = CACHE_ENV)]
        cache: Option<PathBuf>,
    },
    /// Build an initial Gaussian cloud and write it as PLY.
    Init {
        /// `<source>[@<size>]`: source is sfm, random, dense-ply:<path> or edgs:<path>; size
        /// is a count, `<f>x` (fraction of --gmax), match-sfm or all (default).
        spec: String,
        scene: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Position noise as a fraction of the scene extent.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Budget that fractional sizes refer to.
        #[arg(long)]
        gmax: Option<usize>,
        #[arg(long, default_value_t = 3)]
        sh_degree: usize,
    },
    /// Dense initialization from per-image depth maps aligned to the SfM points.
    Monodepth {
        scene: PathBuf,
        /// Directory of `<camera id>.pfm` depth maps.
        #[arg(long)]
        depth_dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = splatbench::monodepth::DEFAULT_CAMERA_LIMIT)]
        camera_limit: usize,
        /// Skip piecewise refinement after the global alignment.
        #[arg(long)]
        no_refine: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the per-image report here as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train one model and evaluate it on both splits.
    Train {
        scene: PathBuf,
        /// Initializer, as for `init`.
        #[arg(long, default_value = "sfm@match-sfm")]
        init: String,
        #[arg(long, default_value = "absgs")]
        strategy: StrategyKind,
        /// Hard Gaussian budget; omit for uncapped.
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[command(flatten)]
        common: Common,
        /// Output directory for cloud.ply, log.ndjson and metrics.json.
        #[arg(short, long, default_value = "train_out")]
        output: PathBuf,
    },
    /// Run a benchmark matrix described by a TOML file.
    Bench {
        config: PathBuf,
        #[arg(short, long, default_value = "bench_out")]
        output: PathBuf,
        /// Only run cells whose label contains this text (repeatable).
        #[arg(long)]
        include: Vec<String>,
        #[arg(long, env = CACHE_ENV)]
        cache: Option<PathBuf>,
        /// Render on one thread; training logs are then bitwise reproducible.
        #[arg(long)]
        single_threaded: bool,
    },
    /// Write a synthetic scene directory (images, sparse model, depth maps).
    Synth {
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Written depth is `(z − shift)/scale`.
        #[arg(long, default_value_t = 1.0)]
        depth_scale: f64,
        #[arg(long, default_value_t = 0.0)]
        depth_shift: f64,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training steps (2000 by default); the densify schedule is scaled to match.
    #[arg(long)]
    steps: Option<usize>,
    /// TOML file with training settings; flags override it.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_HOLDOUT_EVERY)]
    holdout_every: usize,
    #[arg(long, default_value_t = 3)]
    sh_degree: usize,
    /// Render on one thread.
    #[arg(long)]
    single_threaded: bool,
}

impl Common {
    fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.train_config {
            Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => TrainConfig::desk(),
        };
        if let Some(s) = self.steps {
            // keep the densify schedule at the same fractions of the run
            let f = s as f64 / cfg.total_steps.max(1) as f64;
            let at = |v: usize| (v as f64 * f).round() as usize;
            cfg.densify_start = at(cfg.densify_start);
            cfg.densify_interval = at(cfg.densify_interval).max(1);
            cfg.densify_stop = cfg.densify_stop.map(at);
            cfg.total_steps = s;
        }
        cfg.seed = self.seed;
        if self.single_threaded {
            cfg.parallel = false;
        }
        Ok(cfg)
    }
}

fn parse_init(spec: &str, noise: f64, seed: u64, sh_degree: usize) -> Result<InitSpec> {
    let (src, size) = match spec.rsplit_once('@') {
        Some((a, b)) => (a, b),
        None => (spec, "all"),
    };
    let source: InitSource = src.parse()?;
    let size: InitSize = size.parse()?;
    let spec = InitSpec { source, size, noise, seed, sh_degree };
    spec.validate()?;
    Ok(spec)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::DeriveGmax { scene, common, cache } => {
            let s = load_scene::<f64>(&scene, common.holdout_every)?;
            let rec = derive_gmax(&s, &StrategyConfig::default(), &common.train_config()?, common.sh_degree, cache.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&rec)?);
        }
        Command::Init { spec, scene, output, noise, seed, gmax, sh_degree } => {
            let s = load_scene::<f64>(&scene, DEFAULT_HOLDOUT_EVERY)?;
            let spec = parse_init(&spec, noise, seed, sh_degree)?;
            let inputs = InitInputs { cameras: &s.scene.cameras, sfm: &s.sfm, cap: gmax, compare_sizes: vec![] };
            let cloud = build_init(&spec, &inputs)?;
            write_gaussian_ply(&output, &cloud)?;
            eprintln!("wrote {} Gaussians to {}", cloud.len(), output.display());
        }
        Command::Monodepth { scene, depth_dir, output, camera_limit, no_refine, seed, report } => {
            let s = load_scene::<f64>(&scene, DEFAULT_HOLDOUT_EVERY)?;
            let depths = load_depth_dir(&depth_dir, &s.scene.cameras)?;
            let cfg = MonodepthConfig { camera_limit, refine: !no_refine, seed, ..MonodepthConfig::default() };
            let input = MonodepthInput {
                cameras: &s.scene.cameras,
                images: Some(&s.scene.images),
                sfm: &s.sfm,
                observed: Some(&s.observed),
                depths: &depths,
            };
            let (pc, rep) = monodepth_pipeline(&input, &cfg)?;
            write_ply_points(&output, &pc, PlyFormat::BinaryLittleEndian)?;
            if let Some(p) = report {
                write_json(&p, &rep)?;
            }
            eprintln!("wrote {} points to {} ({} floaters removed)", pc.len(), output.display(), rep.floaters_removed);
        }
        Command::Train { scene, init, strategy, cap, noise, common, output } => {
            let s = load_scene::<f64>(&scene, common.holdout_every)?;
            let spec = parse_init(&init, noise, common.seed, common.sh_degree)?;
            let mut cfg = common.train_config()?;
            cfg.cap = cap;
            let inputs = InitInputs { cameras: &s.scene.cameras, sfm: &s.sfm, cap, compare_sizes: vec![] };
            let cloud = build_init(&spec, &inputs)?;
            if let Some(c) = cap {
                if cloud.len() > c {
                    bail!("initializer has {} Gaussians, above the cap of {c}", cloud.len());
                }
            }
            let out = train(&s.scene, cloud, &StrategyConfig::of_kind(strategy), &cfg)?;
            fs::create_dir_all(&output).with_context(|| format!("creating {}", output.display()))?;
            write_gaussian_ply(&output.join("cloud.ply"), &out.cloud)?;
            let log_path = output.join("log.ndjson");
            write_ndjson(&out.log, fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?)?;
            let settings = RenderSettings { background: cfg.background, parallel: cfg.parallel };
            let mut metrics = vec![evaluate(&out.cloud, &s.scene, Split::Train, &settings)?];
            if !s.scene.test.is_empty() {
                metrics.push(evaluate(&out.cloud, &s.scene, Split::Test, &settings)?);
            }
            write_json(&output.join("metrics.json"), &metrics)?;
            for m in &metrics {
                println!("{}: PSNR {:.2} dB, SSIM {:.4}", m.split, m.psnr, m.ssim);
            }
            println!("final N {} (max {})", out.cloud.len(), out.max_n());
        }
        Command::Bench { config, output, include, cache, single_threaded } => {
            let mut cfg = MatrixConfig::load(&config)?;
            if single_threaded {
                cfg.train.parallel = false;
            }
            let opts = MatrixOptions { cache_dir: cache.or_else(cache_dir_from_env), include };
            let outcome = run_matrix::<f64>(&cfg, &output, &opts)?;
            let report = BenchReport::new(&outcome);
            report.write(&output)?;
            let done = outcome.runs.iter().filter(|r| r.is_completed()).count();
            println!(
                "{done} of {} runs completed, {} cells skipped; results in {}",
                outcome.runs.len(),
                outcome.skipped,
                output.display()
            );
            return Ok(outcome.all_completed());
        }
        Command::Synth { output, seed, depth_scale, depth_shift } => {
            if !(depth_scale > 0.0) {
                bail!("depth scale must be positive");
            }
            let s = synth_scene::<f64>(&SynthConfig { seed, ..SynthConfig::default() })?;
            s.write_dir(&output, depth_scale, depth_shift)?;
            eprintln!("wrote synthetic scene to {}", output.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
