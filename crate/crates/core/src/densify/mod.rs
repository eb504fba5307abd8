//! Densification strategies: AbsGS-style adaptive density control, MCMC relocation,
//! IDHFR edge-guided splitting, and a prune-only baseline.
//!
//! Every strategy sees two callbacks per training step. [`Densifier::before_update`]
//! runs after the backward pass and may add regularization gradients;
//! [`Densifier::after_update`] runs after the optimizer step and performs structural
//! edits, keeping the optimizer state and its own statistics in lockstep with the cloud.

mod absgs;
mod idhfr;
mod mcmc;
mod none;
mod stats;

pub use absgs::{absgs_densify, AbsGs};
pub use idhfr::{edge_aware_scores, growth_budget, laplacian_edge_map, weighted_sample_without_replacement, Idhfr};
pub use mcmc::{mcmc_add, mcmc_relocate, relocation_params, Mcmc};
pub use none::NoDensify;
pub use stats::GradStats;

use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gaussians::{CloudGrads, GaussianCloud};
use crate::optim::Adam;
use crate::raster::{RenderOutput, RenderSettings, ViewspaceGrads};
use crate::scalar::Real;
use crate::scene::TrainScene;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Absgs,
    Mcmc,
    Idhfr,
    None,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [Self::Absgs, Self::Mcmc, Self::Idhfr, Self::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Absgs => "absgs",
            Self::Mcmc => "mcmc",
            Self::Idhfr => "idhfr",
            Self::None => "none",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown strategy '{s}' (expected absgs, mcmc, idhfr or none)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    /// Fractional growth per densify event.
    pub growth_rate: f64,
    pub opacity_reg: f64,
    pub scale_reg: f64,
    /// Multiplier on the position learning rate for mean noise.
    pub noise_lr: f64,
    /// Steepness of the opacity gate on the noise.
    pub noise_gate_sharpness: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            growth_rate: 0.05,
            opacity_reg: 0.01,
            scale_reg: 0.01,
            noise_lr: 5e5,
            noise_gate_sharpness: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdhfrConfig {
    /// Budget at the first densify event, as a fraction of the cap (raised to the initial size).
    pub start_fraction: f64,
    /// Children sit at `μ ± offset·s_max·v_max`.
    pub split_offset: f64,
    pub split_opacity_factor: f64,
    pub views_per_densify: usize,
    /// Steps per optimizer update in the late phase.
    pub accumulation_window: usize,
    /// Fraction of training after which gradients are accumulated.
    pub accumulation_start: f64,
    /// Steps after each opacity reset before the extra prune pass.
    pub post_reset_prune_delay: usize,
}

impl Default for IdhfrConfig {
    fn default() -> Self {
        Self {
            start_fraction: 0.3,
            split_offset: 0.5,
            split_opacity_factor: 0.6,
            views_per_densify: 4,
            accumulation_window: 4,
            accumulation_start: 0.8,
            post_reset_prune_delay: 500,
        }
    }
}

/// Strategy choice and every constant it uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Mean view-space gradient norm (NDC units) that marks a densify candidate.
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// 0 disables opacity resets.
    pub opacity_reset_interval: usize,
    pub opacity_reset_value: f64,
    /// Candidates with max scale at or below `percent_dense·extent` are cloned, larger ones split.
    pub percent_dense: f64,
    pub split_scale_divisor: f64,
    pub world_size_fraction: f64,
    pub screen_size_px: f64,
    pub mcmc: McmcConfig,
    pub idhfr: IdhfrConfig,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Absgs,
            grad_threshold: 4e-4,
            prune_opacity: 0.005,
            opacity_reset_interval: 3000,
            opacity_reset_value: 0.01,
            percent_dense: 0.01,
            split_scale_divisor: 1.6,
            world_size_fraction: 0.1,
            screen_size_px: 20.0,
            mcmc: McmcConfig::default(),
            idhfr: IdhfrConfig::default(),
        }
    }
}

impl StrategyConfig {
    pub fn of_kind(kind: StrategyKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grad_threshold > 0.0) {
            return invalid("grad_threshold must be positive");
        }
        if !(self.prune_opacity > 0.0 && self.prune_opacity < 1.0) {
            return invalid("prune_opacity must lie in (0, 1)");
        }
        if !(self.opacity_reset_value > 0.0 && self.opacity_reset_value < 1.0) {
            return invalid("opacity_reset_value must lie in (0, 1)");
        }
        if !(self.split_scale_divisor > 0.0) || !(self.percent_dense >= 0.0) {
            return invalid("split_scale_divisor must be positive and percent_dense nonnegative");
        }
        if !(self.world_size_fraction > 0.0) || !(self.screen_size_px > 0.0) {
            return invalid("size cull thresholds must be positive");
        }
        let m = &self.mcmc;
        if !(m.growth_rate > 0.0) {
            return invalid("mcmc.growth_rate must be positive");
        }
        if !(m.opacity_reg >= 0.0 && m.scale_reg >= 0.0 && m.noise_lr >= 0.0) {
            return invalid("mcmc regularization and noise weights must be nonnegative");
        }
        let d = &self.idhfr;
        if !(d.start_fraction > 0.0 && d.start_fraction <= 1.0) {
            return invalid("idhfr.start_fraction must lie in (0, 1]");
        }
        if !(d.split_opacity_factor > 0.0 && d.split_opacity_factor <= 1.0) {
            return invalid("idhfr.split_opacity_factor must lie in (0, 1]");
        }
        if d.views_per_densify == 0 || d.accumulation_window == 0 {
            return invalid("idhfr.views_per_densify and accumulation_window must be at least 1");
        }
        if !(0.0..=1.0).contains(&d.accumulation_start) {
            return invalid("idhfr.accumulation_start must lie in [0, 1]");
        }
        Ok(())
    }
}

/// When densify events fire. Events happen at steps `s` with
/// `start < s ≤ stop` and `s % interval == 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensifySchedule {
    pub interval: usize,
    pub start: usize,
    pub stop: usize,
    pub total_steps: usize,
}

impl DensifySchedule {
    pub fn is_boundary(&self, step: usize) -> bool {
        self.interval > 0 && step > self.start && step <= self.stop && step.is_multiple_of(self.interval)
    }

    /// Statistics are gathered up to the last event.
    pub fn collecting(&self, step: usize) -> bool {
        step <= self.stop
    }

    pub fn event_count(&self) -> usize {
        if self.interval == 0 || self.stop <= self.start {
            return 0;
        }
        self.stop / self.interval - self.start / self.interval
    }

    /// 1-based index of the event at `step`.
    pub fn event_index(&self, step: usize) -> usize {
        step / self.interval - self.start / self.interval
    }
}

/// Counts of the structural edits made by one callback.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub relocated: usize,
    pub added: usize,
    pub opacity_reset: bool,
    /// Densify candidates that passed the gradient trigger.
    pub candidates: usize,
    /// Growth budget in force (IDHFR only).
    pub budget: Option<usize>,
    pub size_before: usize,
    pub size_after: usize,
}

impl MutationReport {
    pub fn at_size(n: usize) -> Self {
        Self { size_before: n, size_after: n, ..Self::default() }
    }

    pub fn is_structural(&self) -> bool {
        self.cloned + self.split + self.pruned + self.relocated + self.added > 0 || self.opacity_reset
    }

    pub fn is_empty(&self) -> bool {
        !self.is_structural() && self.candidates == 0 && self.budget.is_none()
    }
}

/// Read-only training state passed to the callbacks.
pub struct StepContext<'a, T> {
    /// 1-based index of the current step.
    pub step: usize,
    pub schedule: DensifySchedule,
    pub scene: &'a TrainScene<T>,
    pub settings: &'a RenderSettings<T>,
    /// Scheduled learning rate of the means at this step.
    pub position_lr: T,
    /// Hard cap on the Gaussian count (`usize::MAX` when uncapped).
    pub cap: usize,
}

/// Per-view data handed to [`Densifier::before_update`].
pub struct ViewData<'a, T> {
    pub view: usize,
    pub render: &'a RenderOutput<T>,
    pub viewspace: &'a ViewspaceGrads<T>,
}

pub trait Densifier<T: Real>: Send {
    fn kind(&self) -> StrategyKind;

    /// Gather statistics; may add regularization terms to `grads`.
    fn before_update(
        &mut self,
        ctx: &StepContext<'_, T>,
        cloud: &GaussianCloud<T>,
        grads: &mut CloudGrads<T>,
        view: &ViewData<'_, T>,
    ) -> Result<()>;

    /// Structural edits and post-update perturbations.
    fn after_update(
        &mut self,
        ctx: &StepContext<'_, T>,
        cloud: &mut GaussianCloud<T>,
        adam: &mut Adam<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<MutationReport>;

    /// Steps whose gradients are averaged into one optimizer update.
    fn accumulation_window(&self, _ctx: &StepContext<'_, T>) -> usize {
        1
    }

    /// Rows of per-Gaussian state, for lockstep checks.
    fn tracked_len(&self) -> usize;
}

pub fn build_densifier<T: Real>(config: &StrategyConfig, initial_len: usize) -> Result<Box<dyn Densifier<T>>> {
    config.validate()?;
    Ok(match config.kind {
        StrategyKind::Absgs => Box::new(AbsGs::new(config.clone(), initial_len)),
        StrategyKind::Mcmc => Box::new(Mcmc::new(config.clone(), initial_len)),
        StrategyKind::Idhfr => Box::new(Idhfr::new(config.clone(), initial_len)),
        StrategyKind::None => Box::new(NoDensify::new(config.clone(), initial_len)),
    })
}

/// Prune predicate shared by the strategies. `size_culls` enables the
/// world-size and screen-size tests.
pub fn prune_mask<T: Real>(
    cloud: &GaussianCloud<T>,
    config: &StrategyConfig,
    extent: T,
    max_radii: Option<&[T]>,
    size_culls: bool,
) -> Vec<bool> {
    let eps = T::lit(config.prune_opacity);
    let world = T::lit(config.world_size_fraction) * extent;
    let screen = T::lit(config.screen_size_px);
    (0..cloud.len())
        .map(|i| {
            let dead = cloud.opacity(i) < eps;
            let big = size_culls
                && (cloud.scale(i).max_elem() > world || max_radii.is_some_and(|r| r[i] > screen));
            !(dead || big)
        })
        .collect()
}

/// Remove opacity-dead and (optionally) oversized Gaussians, compacting the optimizer
/// state in lockstep. Returns the number removed.
pub fn prune<T: Real>(
    cloud: &mut GaussianCloud<T>,
    adam: &mut Adam<T>,
    config: &StrategyConfig,
    extent: T,
    size_culls: bool,
) -> Result<usize> {
    adam.check_lockstep(cloud)?;
    let keep = prune_mask(cloud, config, extent, None, size_culls);
    Ok(remove_rows(cloud, adam, None, &keep))
}

/// Apply a keep-mask to cloud, optimizer and optional statistics together.
pub(crate) fn remove_rows<T: Real>(
    cloud: &mut GaussianCloud<T>,
    adam: &mut Adam<T>,
    stats: Option<&mut GradStats<T>>,
    keep: &[bool],
) -> usize {
    let removed = keep.iter().filter(|k| !**k).count();
    if removed == 0 {
        return 0;
    }
    cloud.retain_mask(keep);
    adam.retain_mask(keep);
    if let Some(s) = stats {
        s.retain_mask(keep);
    }
    removed
}

/// Set every opacity to `min(α, value)` and forget the opacity moments.
pub(crate) fn reset_opacity<T: Real>(cloud: &mut GaussianCloud<T>, adam: &mut Adam<T>, value: f64) {
    let cap = crate::scalar::logit(T::lit(value));
    for l in &mut cloud.opacity_logits {
        if *l > cap {
            *l = cap;
        }
    }
    adam.reset_opacity_moments();
}

pub(crate) fn ensure_lockstep<T: Real>(cloud: &GaussianCloud<T>, adam: &Adam<T>, tracked: usize) -> Result<()> {
    adam.check_lockstep(cloud)?;
    if tracked != cloud.len() {
        return Err(Error::Lockstep(format!(
            "strategy tracks {tracked} rows, cloud has {}",
            cloud.len()
        )));
    }
    Ok(())
}

pub(crate) fn reset_due(config: &StrategyConfig, schedule: &DensifySchedule, step: usize) -> bool {
    config.opacity_reset_interval > 0
        && step.is_multiple_of(config.opacity_reset_interval)
        && schedule.collecting(step)
}
