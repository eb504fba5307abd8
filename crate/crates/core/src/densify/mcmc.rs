use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::gaussians::{CloudGrads, GaussianCloud};
use crate::math::{Mat3, Vec3};
use crate::optim::Adam;
use crate::scalar::{logit, sigmoid, Real};

use super::{ensure_lockstep, Densifier, MutationReport, StepContext, StrategyConfig, StrategyKind, ViewData};

/// Opacity and per-axis scale for each of `copies` Gaussians that replace one splat
/// of opacity `opacity` and scale `scale`, chosen so their stacked footprint
/// approximates the original.
pub fn relocation_params<T: Real>(opacity: T, scale: Vec3<T>, copies: usize) -> (T, Vec3<T>) {
    let n = copies.max(1);
    let new_o = T::one() - (T::one() - opacity).powf(T::one() / T::from_usize_lossy(n));
    let mut denom = T::zero();
    for i in 1..=n {
        let mut binom = 1.0f64;
        for k in 0..i {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            denom += T::lit(binom * sign / ((k + 1) as f64).sqrt()) * new_o.powi(k as i32 + 1);
            binom = binom * (i - 1 - k) as f64 / (k + 1) as f64;
        }
    }
    let coeff = opacity / denom;
    (new_o, scale.scale(coeff))
}

fn opacity_weights<T: Real>(cloud: &GaussianCloud<T>, rows: &[usize]) -> Option<WeightedIndex<f64>> {
    WeightedIndex::new(rows.iter().map(|&i| cloud.opacity(i).as_f64())).ok()
}

/// Rewrite each sampled target for `k` extra copies and return the targets' new rows.
fn split_targets<T: Real>(cloud: &mut GaussianCloud<T>, draws: &[usize], min_opacity: T) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for &j in draws {
        *counts.entry(j).or_insert(0usize) += 1;
    }
    let hi = T::one() - T::lit(1e-6);
    for (&j, &k) in &counts {
        let (o, s) = relocation_params(cloud.opacity(j), cloud.scale(j), k + 1);
        let o = o.max(min_opacity).min(hi);
        cloud.opacity_logits[j] = logit(o);
        cloud.log_scales[j] = s.map(|v| v.max(T::lit(crate::geometry::MIN_SCALE)).ln());
    }
    counts
}

/// Move every Gaussian with opacity below the prune threshold onto a live Gaussian
/// drawn with probability proportional to opacity. Returns the number moved.
pub fn mcmc_relocate<T: Real>(
    cloud: &mut GaussianCloud<T>,
    adam: &mut Adam<T>,
    config: &StrategyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    adam.check_lockstep(cloud)?;
    let eps = T::lit(config.prune_opacity);
    let (dead, alive): (Vec<usize>, Vec<usize>) = (0..cloud.len()).partition(|&i| cloud.opacity(i) < eps);
    if dead.is_empty() || alive.is_empty() {
        return Ok(0);
    }
    let Some(dist) = opacity_weights(cloud, &alive) else {
        return Ok(0);
    };
    let draws: Vec<usize> = dead.iter().map(|_| alive[dist.sample(rng)]).collect();
    let counts = split_targets(cloud, &draws, eps);
    for (&d, &j) in dead.iter().zip(&draws) {
        cloud.copy_row(j, d);
    }
    adam.reset_rows(&dead);
    adam.reset_rows(&counts.keys().copied().collect::<Vec<_>>());
    Ok(dead.len())
}

/// Grow by `min(⌈rate·N⌉, cap − N)` copies of opacity-sampled Gaussians. Returns the count added.
pub fn mcmc_add<T: Real>(
    cloud: &mut GaussianCloud<T>,
    adam: &mut Adam<T>,
    config: &StrategyConfig,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    adam.check_lockstep(cloud)?;
    let n = cloud.len();
    let want = (config.mcmc.growth_rate * n as f64 - 1e-9).ceil().max(0.0) as usize;
    let add = want.min(cap.saturating_sub(n));
    if add == 0 {
        return Ok(0);
    }
    let rows: Vec<usize> = (0..n).collect();
    let Some(dist) = opacity_weights(cloud, &rows) else {
        return Ok(0);
    };
    let draws: Vec<usize> = (0..add).map(|_| dist.sample(rng)).collect();
    let counts = split_targets(cloud, &draws, T::lit(config.prune_opacity));
    for &j in &draws {
        cloud.push_copy_of(j);
    }
    adam.push_zero_rows(add);
    adam.reset_rows(&counts.keys().copied().collect::<Vec<_>>());
    Ok(add)
}

/// Perturb means with `N(0, Σ_i)` noise scaled by the position learning rate and an
/// opacity gate that is near 1 only for almost transparent Gaussians.
pub(crate) fn inject_noise<T: Real>(cloud: &mut GaussianCloud<T>, config: &StrategyConfig, position_lr: T, rng: &mut ChaCha8Rng) {
    let k = T::lit(config.mcmc.noise_gate_sharpness);
    let eps = T::lit(config.prune_opacity);
    let base = position_lr * T::lit(config.mcmc.noise_lr);
    for i in 0..cloud.len() {
        let z = Vec3::new(
            T::lit(rng.sample::<f64, _>(StandardNormal)),
            T::lit(rng.sample::<f64, _>(StandardNormal)),
            T::lit(rng.sample::<f64, _>(StandardNormal)),
        );
        let gate = sigmoid(-k * (cloud.opacity(i) - eps));
        let l: Mat3<T> = cloud.rotation_matrix(i);
        let step = l.mul_vec(cloud.scale(i).mul_elem(z));
        cloud.means[i] += step.scale(gate * base);
    }
}

/// Markov-chain-style densification: relocation of dead Gaussians, 5% growth per
/// event, opacity/scale regularization and opacity-gated mean noise.
pub struct Mcmc {
    config: StrategyConfig,
    n: usize,
}

impl Mcmc {
    pub fn new(config: StrategyConfig, n: usize) -> Self {
        Self { config, n }
    }
}

impl<T: Real> Densifier<T> for Mcmc {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Mcmc
    }

    /// Adds the gradients of `opacity_reg·mean(α) + scale_reg·mean(s)`.
    fn before_update(
        &mut self,
        _ctx: &StepContext<'_, T>,
        cloud: &GaussianCloud<T>,
        grads: &mut CloudGrads<T>,
        _view: &ViewData<'_, T>,
    ) -> Result<()> {
        let n = cloud.len();
        if n == 0 {
            return Ok(());
        }
        let wo = T::lit(self.config.mcmc.opacity_reg) / T::from_usize_lossy(n);
        let ws = T::lit(self.config.mcmc.scale_reg) / T::from_usize_lossy(3 * n);
        for i in 0..n {
            let a = cloud.opacity(i);
            grads.opacity_logits[i] += wo * a * (T::one() - a);
            let s = cloud.scale(i);
            for k in 0..3 {
                grads.log_scales[i][k] += ws * s[k];
            }
        }
        Ok(())
    }

    fn after_update(
        &mut self,
        ctx: &StepContext<'_, T>,
        cloud: &mut GaussianCloud<T>,
        adam: &mut Adam<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<MutationReport> {
        ensure_lockstep(cloud, adam, self.n)?;
        let mut report = MutationReport::at_size(cloud.len());
        if ctx.schedule.is_boundary(ctx.step) {
            report.relocated = mcmc_relocate(cloud, adam, &self.config, rng)?;
            report.added = mcmc_add(cloud, adam, &self.config, ctx.cap, rng)?;
            self.n = cloud.len();
        }
        inject_noise(cloud, &self.config, ctx.position_lr, rng);
        report.size_after = cloud.len();
        Ok(report)
    }

    fn tracked_len(&self) -> usize {
        self.n
    }
}
