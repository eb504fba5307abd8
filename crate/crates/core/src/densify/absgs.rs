use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::gaussians::{CloudGrads, GaussianCloud};
use crate::math::Vec3;
use crate::optim::Adam;
use crate::scalar::Real;

use super::{
    ensure_lockstep, prune_mask, remove_rows, reset_due, reset_opacity, Densifier, GradStats, MutationReport,
    StepContext, StrategyConfig, StrategyKind, ViewData,
};

/// Adaptive density control triggered by absolute-value-accumulated view-space gradients.
pub struct AbsGs<T> {
    config: StrategyConfig,
    stats: GradStats<T>,
}

impl<T: Real> AbsGs<T> {
    pub fn new(config: StrategyConfig, n: usize) -> Self {
        Self { config, stats: GradStats::new(n) }
    }

    pub fn stats(&self) -> &GradStats<T> {
        &self.stats
    }
}

impl<T: Real> Densifier<T> for AbsGs<T> {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Absgs
    }

    fn before_update(
        &mut self,
        ctx: &StepContext<'_, T>,
        _cloud: &GaussianCloud<T>,
        _grads: &mut CloudGrads<T>,
        view: &ViewData<'_, T>,
    ) -> Result<()> {
        if ctx.schedule.collecting(ctx.step) {
            self.stats.observe(view.viewspace, view.render);
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
        ensure_lockstep(cloud, adam, self.stats.len())?;
        let mut report = MutationReport::at_size(cloud.len());
        if ctx.schedule.is_boundary(ctx.step) {
            let size_culls = self.config.opacity_reset_interval > 0 && ctx.step > self.config.opacity_reset_interval;
            report = absgs_densify(
                cloud,
                adam,
                &mut self.stats,
                &self.config,
                ctx.scene.extent,
                ctx.cap,
                size_culls,
                rng,
            )?;
        }
        if reset_due(&self.config, &ctx.schedule, ctx.step) {
            reset_opacity(cloud, adam, self.config.opacity_reset_value);
            report.opacity_reset = true;
        }
        report.size_after = cloud.len();
        ensure_lockstep(cloud, adam, self.stats.len())?;
        Ok(report)
    }

    fn tracked_len(&self) -> usize {
        self.stats.len()
    }
}

/// One clone/split/prune event.
///
/// Candidates are Gaussians whose mean abs-mode gradient norm reaches the threshold.
/// If densifying all of them would exceed `cap`, the ones with the largest statistic
/// are kept (ties by index). Small candidates are cloned; large ones are replaced by
/// two children drawn from the parent's own density with scales divided by
/// `split_scale_divisor`. Statistics are reset afterwards.
#[allow(clippy::too_many_arguments)]
pub fn absgs_densify<T: Real>(
    cloud: &mut GaussianCloud<T>,
    adam: &mut Adam<T>,
    stats: &mut GradStats<T>,
    config: &StrategyConfig,
    extent: T,
    cap: usize,
    size_culls: bool,
    rng: &mut ChaCha8Rng,
) -> Result<MutationReport> {
    ensure_lockstep(cloud, adam, stats.len())?;
    let n0 = cloud.len();
    let mut report = MutationReport::at_size(n0);
    let threshold = T::lit(config.grad_threshold);
    let mut candidates: Vec<usize> = (0..n0).filter(|&i| stats.mean_abs(i) >= threshold).collect();
    report.candidates = candidates.len();
    let headroom = cap.saturating_sub(n0);
    if candidates.len() > headroom {
        candidates.sort_by(|&a, &b| stats.mean_abs(b).partial_cmp(&stats.mean_abs(a)).unwrap().then(a.cmp(&b)));
        candidates.truncate(headroom);
        candidates.sort_unstable();
    }

    let dense_limit = T::lit(config.percent_dense) * extent;
    let (clones, splits): (Vec<usize>, Vec<usize>) =
        candidates.iter().partition(|&&i| cloud.scale(i).max_elem() <= dense_limit);

    for &i in &clones {
        cloud.push_copy_of(i);
    }
    let shrink = T::lit(config.split_scale_divisor).ln();
    for &i in &splits {
        let r = cloud.rotation_matrix(i);
        let s = cloud.scale(i);
        for _ in 0..2 {
            let z = Vec3::new(
                T::lit(rng.sample::<f64, _>(StandardNormal)),
                T::lit(rng.sample::<f64, _>(StandardNormal)),
                T::lit(rng.sample::<f64, _>(StandardNormal)),
            );
            cloud.push_copy_of(i);
            let c = cloud.len() - 1;
            cloud.means[c] = cloud.means[i] + r.mul_vec(s.mul_elem(z));
            cloud.log_scales[c] = cloud.log_scales[i].map(|v| v - shrink);
        }
    }
    let added = clones.len() + 2 * splits.len();
    adam.push_zero_rows(added);
    stats.push_zero_rows(added);

    let mut keep = vec![true; cloud.len()];
    for &i in &splits {
        keep[i] = false;
    }
    remove_rows(cloud, adam, Some(stats), &keep);
    report.cloned = clones.len();
    report.split = splits.len();

    let keep = prune_mask(cloud, config, extent, Some(&stats.max_radius), size_culls);
    report.pruned = remove_rows(cloud, adam, Some(stats), &keep);
    stats.reset();
    report.size_after = cloud.len();
    ensure_lockstep(cloud, adam, stats.len())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::logit;
    use rand::SeedableRng;

    fn cloud_with(n: usize, sigma: f64) -> GaussianCloud<f64> {
        let mut c = GaussianCloud::empty(0).unwrap();
        for i in 0..n {
            c.push_isotropic(Vec3::new(i as f64, 0.0, 0.0), sigma, logit(0.5), [0.1; 3]);
        }
        c
    }

    fn stats_with(values: &[f64]) -> GradStats<f64> {
        let mut s = GradStats::new(values.len());
        for (i, v) in values.iter().enumerate() {
            s.abs_norm_sum[i] = *v;
            s.count[i] = 1;
        }
        s
    }

    #[test]
    fn truncation_keeps_highest_statistics() {
        let mut cloud = cloud_with(10, 0.001);
        let mut adam = Adam::new(&cloud);
        let vals: Vec<f64> = (0..10).map(|i| 1e-3 * (1.0 + ((i * 7) % 10) as f64)).collect();
        let mut stats = stats_with(&vals);
        let cfg = StrategyConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = absgs_densify(&mut cloud, &mut adam, &mut stats, &cfg, 1.0, 13, false, &mut rng).unwrap();
        assert_eq!(r.candidates, 10);
        assert_eq!(r.cloned, 3);
        assert_eq!(cloud.len(), 13);
        let mut order: Vec<usize> = (0..10).collect();
        order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
        let mut top: Vec<f64> = order[..3].iter().map(|&i| i as f64).collect();
        top.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cloned_x: Vec<f64> = cloud.means[10..].iter().map(|m| m.x).collect();
        assert_eq!(cloned_x, top);
        assert_eq!(adam.len(), 13);
    }

    #[test]
    fn below_threshold_only_prunes() {
        let mut cloud = cloud_with(4, 0.01);
        cloud.opacity_logits[2] = logit(0.001);
        let mut adam = Adam::new(&cloud);
        let mut stats = stats_with(&[1e-5; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = absgs_densify(&mut cloud, &mut adam, &mut stats, &StrategyConfig::default(), 1.0, 100, false, &mut rng)
            .unwrap();
        assert_eq!((r.cloned, r.split, r.pruned), (0, 0, 1));
        assert_eq!(cloud.len(), 3);
    }

    #[test]
    fn split_children_follow_parent_density() {
        let mut sum = Vec3::<f64>::zero();
        let mut n = 0.0;
        let parent = Vec3::new(1.0, -2.0, 0.5);
        for seed in 0..2000 {
            let mut cloud = GaussianCloud::<f64>::empty(0).unwrap();
            cloud.push_isotropic(parent, 0.3, logit(0.5), [0.0; 3]);
            let mut adam = Adam::new(&cloud);
            let mut stats = stats_with(&[1.0]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = absgs_densify(&mut cloud, &mut adam, &mut stats, &StrategyConfig::default(), 1.0, 100, false, &mut rng)
                .unwrap();
            assert_eq!(r.split, 1);
            assert_eq!(cloud.len(), 2);
            for i in 0..2 {
                assert!((cloud.scale(i).x - 0.3 / 1.6).abs() < 1e-12);
                sum += cloud.means[i];
                n += 1.0;
            }
        }
        let mean = sum.scale(1.0 / n);
        // standard error of the mean is 0.3/sqrt(4000) ≈ 0.005
        assert!((mean - parent).norm() < 0.03, "{mean:?}");
    }
}
