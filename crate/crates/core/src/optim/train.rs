use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::densify::{build_densifier, MutationReport, StepContext, StrategyConfig, ViewData};
use crate::error::{invalid, Error, Result};
use crate::gaussians::{CloudGrads, GaussianCloud};
use crate::raster::{render, render_backward, RenderSettings, ViewspaceGrads};
use crate::scalar::Real;
use crate::scene::TrainScene;

use super::{photometric_loss, position_lr, Adam, LearningRates, TrainConfig};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Camera id of the view trained on.
    pub view: u32,
    pub loss: f64,
    /// Gaussian count after the step's callbacks.
    pub n: usize,
    /// Present when the strategy edited the cloud or evaluated a densify event.
    pub event: Option<MutationReport>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput<T> {
    pub cloud: GaussianCloud<T>,
    pub log: Vec<StepRecord>,
}

impl<T: Real> TrainOutput<T> {
    /// Largest Gaussian count recorded during training.
    pub fn max_n(&self) -> usize {
        self.log.iter().map(|r| r.n).max().unwrap_or(self.cloud.len())
    }
}

/// Per-step view handed to an observer of [`train_observed`].
pub struct StepObservation<'a, T> {
    pub step: usize,
    pub view: usize,
    pub cloud: &'a GaussianCloud<T>,
    pub viewspace: &'a ViewspaceGrads<T>,
}

/// Shuffled passes over the training views.
struct ViewSampler {
    views: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl ViewSampler {
    fn new(views: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut views = views.to_vec();
        views.shuffle(&mut rng);
        Self { views, pos: 0, rng }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.views.len() {
            self.views.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.views[self.pos - 1]
    }
}

pub fn train<T: Real>(
    scene: &TrainScene<T>,
    init: GaussianCloud<T>,
    strategy: &StrategyConfig,
    config: &TrainConfig,
) -> Result<TrainOutput<T>> {
    train_observed(scene, init, strategy, config, &mut |_| {})
}

/// [`train`] with a callback that sees every step's view-space gradients before the
/// strategy runs.
pub fn train_observed<T: Real>(
    scene: &TrainScene<T>,
    init: GaussianCloud<T>,
    strategy: &StrategyConfig,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&StepObservation<'_, T>),
) -> Result<TrainOutput<T>> {
    config.validate()?;
    strategy.validate()?;
    let cap = config.cap_value();
    if init.len() > cap {
        return invalid(format!("initial cloud has {} Gaussians, above the cap of {cap}", init.len()));
    }
    init.check_lengths()?;
    init.check_finite()?;
    let mut cloud = init;
    let settings = RenderSettings { background: config.background.map(T::lit), parallel: config.parallel };
    let schedule = config.schedule();
    let extent = if scene.extent > T::zero() { scene.extent } else { T::one() };
    let lr0 = T::lit(config.lr.means) * extent;
    let final_factor = T::lit(config.lr.position_final_factor);
    let lambda = T::lit(config.lambda_ssim);

    let mut densifier = build_densifier::<T>(strategy, cloud.len())?;
    let mut adam = Adam::new(&cloud);
    let mut sampler = ViewSampler::new(&scene.train, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut accum: Option<(CloudGrads<T>, usize)> = None;
    let mut log = Vec::with_capacity(config.total_steps);

    for step in 1..=config.total_steps {
        let view = sampler.next();
        let camera = &scene.cameras[view];
        let out = render(&cloud, camera, &settings)?;
        let (loss, d_image) = photometric_loss(&out.image, &scene.images[view], lambda)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                message: format!("loss is {} on camera {}", loss.as_f64(), camera.id),
            });
        }
        let (mut grads, vs) = render_backward(&cloud, camera, &out, &d_image, &settings)?;
        observer(&StepObservation { step, view, cloud: &cloud, viewspace: &vs });

        let pos_lr = position_lr(lr0, final_factor, step, config.total_steps);
        let ctx = StepContext { step, schedule, scene, settings: &settings, position_lr: pos_lr, cap };
        densifier.before_update(&ctx, &cloud, &mut grads, &ViewData { view, render: &out, viewspace: &vs })?;

        let lrs = LearningRates {
            means: pos_lr,
            log_scales: T::lit(config.lr.scales),
            rotations: T::lit(config.lr.rotations),
            opacity: T::lit(config.lr.opacity),
            sh_dc: T::lit(config.lr.sh_dc),
            sh_rest: T::lit(config.lr.sh_rest),
        };
        let window = densifier.accumulation_window(&ctx);
        match accum.as_mut() {
            None if window <= 1 => adam.step(&mut cloud, &grads, &lrs)?,
            None => accum = Some((grads, 1)),
            Some((sum, count)) => {
                sum.add_assign(&grads);
                *count += 1;
            }
        }
        if let Some((sum, count)) = accum.as_mut() {
            if *count >= window {
                sum.scale(T::one() / T::from_usize_lossy(*count));
                adam.step(&mut cloud, sum, &lrs)?;
                accum = None;
            }
        }

        let report = densifier.after_update(&ctx, &mut cloud, &mut adam, &mut rng)?;
        if report.size_before != report.size_after || report.relocated > 0 {
            accum = None;
        }
        if cloud.len() > cap {
            return Err(Error::Lockstep(format!(
                "step {step}: {} Gaussians exceed the cap of {cap}",
                cloud.len()
            )));
        }
        adam.check_lockstep(&cloud)?;
        if densifier.tracked_len() != cloud.len() {
            return Err(Error::Lockstep(format!(
                "step {step}: strategy tracks {} rows, cloud has {}",
                densifier.tracked_len(),
                cloud.len()
            )));
        }
        cloud.debug_check();
        log.push(StepRecord {
            step,
            view: camera.id,
            loss: loss.as_f64(),
            n: cloud.len(),
            event: (!report.is_empty()).then_some(report),
        });
    }
    Ok(TrainOutput { cloud, log })
}

/// Write the log as newline-delimited JSON.
pub fn write_ndjson(log: &[StepRecord], mut out: impl Write) -> Result<()> {
    for r in log {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::Pipeline(format!("writing log: {e}")))?;
    }
    Ok(())
}

pub fn read_ndjson(text: &str) -> Result<Vec<StepRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
