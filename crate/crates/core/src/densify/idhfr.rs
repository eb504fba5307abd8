use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gaussians::{CloudGrads, GaussianCloud};
use crate::image::Image;
use crate::optim::Adam;
use crate::raster::{accumulate_blend_weights, render, RenderSettings};
use crate::scalar::{logit, Real};
use crate::scene::TrainScene;

use super::{
    ensure_lockstep, prune_mask, remove_rows, reset_due, reset_opacity, Densifier, DensifySchedule, GradStats,
    MutationReport, StepContext, StrategyConfig, StrategyKind, ViewData,
};

/// Growth limit in force at densify event `event` (1-based) of `events`.
///
/// Linear from `max(initial, start_fraction·cap)` to `cap`; reaches `cap` at the last event.
pub fn growth_budget(initial: usize, cap: usize, start_fraction: f64, event: usize, events: usize) -> usize {
    if cap == usize::MAX {
        return cap;
    }
    let g0 = initial.max((start_fraction * cap as f64).ceil() as usize).min(cap);
    if events == 0 || event >= events {
        return cap;
    }
    g0 + ((cap - g0) as u128 * event as u128 / events as u128) as usize
}

/// `|∇²(gray)|` with the 5-point stencil and edge-replicated borders.
pub fn laplacian_edge_map<T: Real>(image: &Image<T>) -> Vec<T> {
    let (w, h) = (image.width, image.height);
    let g = image.grayscale();
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        g[r * w + c]
    };
    let four = T::lit(4.0);
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let lap = at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - four * at(r, c);
            out.push(lap.abs());
        }
    }
    out
}

/// Per-Gaussian mean, over the views in which it is visible, of
/// `Σ_pixels α'·T·|∇²(gray target)|`. Invisible Gaussians score 0.
pub fn edge_aware_scores<T: Real>(
    cloud: &GaussianCloud<T>,
    scene: &TrainScene<T>,
    views: &[usize],
    settings: &RenderSettings<T>,
) -> Result<Vec<T>> {
    let n = cloud.len();
    let mut sum = vec![T::zero(); n];
    let mut seen = vec![0usize; n];
    for &v in views {
        let out = render(cloud, &scene.cameras[v], settings)?;
        let edges = laplacian_edge_map(&scene.images[v]);
        let contrib = accumulate_blend_weights(&out, &edges, settings.parallel)?;
        for i in 0..n {
            if out.touched[i] {
                sum[i] += contrib[i];
                seen[i] += 1;
            }
        }
    }
    Ok(sum
        .into_iter()
        .zip(seen)
        .map(|(s, c)| if c == 0 { T::zero() } else { s / T::from_usize_lossy(c) })
        .collect())
}

/// Draw up to `k` distinct items with probability proportional to weight, sequentially
/// without replacement. Items with weight ≤ 0 are never drawn. Output is sorted.
pub fn weighted_sample_without_replacement<T: Real>(
    items: &[usize],
    weights: &[T],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    // Exponential-clock keys: the k smallest of E_i / w_i follow successive weighted draws.
    let mut keyed: Vec<(f64, usize)> = items
        .iter()
        .zip(weights)
        .filter_map(|(&i, &w)| {
            let u: f64 = rng.random();
            let w = w.as_f64();
            (w > 0.0).then(|| (-(1.0 - u).ln() / w, i))
        })
        .collect();
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = keyed.into_iter().take(k).map(|(_, i)| i).collect();
    out.sort_unstable();
    out
}

/// Edge-guided densification with a gradually raised size limit.
pub struct Idhfr<T> {
    config: StrategyConfig,
    stats: GradStats<T>,
    initial: usize,
    last_reset: Option<usize>,
    budget: Option<usize>,
}

impl<T: Real> Idhfr<T> {
    pub fn new(config: StrategyConfig, n: usize) -> Self {
        Self { config, stats: GradStats::new(n), initial: n, last_reset: None, budget: None }
    }

    /// Budget of the most recent densify event.
    pub fn current_budget(&self) -> Option<usize> {
        self.budget
    }

    fn split_selected(&self, cloud: &mut GaussianCloud<T>, selected: &[usize]) {
        let offset = T::lit(self.config.idhfr.split_offset);
        let factor = T::lit(self.config.idhfr.split_opacity_factor);
        let half = T::lit(2.0).ln();
        for &i in selected {
            let s = cloud.scale(i);
            let axis = (0..3).fold(0, |b, k| if s[k] > s[b] { k } else { b });
            let dir = cloud.rotation_matrix(i).column(axis).scale(offset * s[axis]);
            let op = logit(cloud.opacity(i) * factor);
            for sign in [T::one(), -T::one()] {
                cloud.push_copy_of(i);
                let c = cloud.len() - 1;
                cloud.means[c] = cloud.means[i] + dir.scale(sign);
                cloud.opacity_logits[c] = op;
                cloud.log_scales[c][axis] -= half;
            }
        }
    }
}

fn sample_views(train: &[usize], v: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut views = train.to_vec();
    views.shuffle(rng);
    views.truncate(v.max(1));
    views
}

impl<T: Real> Densifier<T> for Idhfr<T> {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Idhfr
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
        let sched: DensifySchedule = ctx.schedule;
        let extent = ctx.scene.extent;
        let size_culls = self.config.opacity_reset_interval > 0 && ctx.step > self.config.opacity_reset_interval;
        if sched.is_boundary(ctx.step) {
            let budget = growth_budget(
                self.initial,
                ctx.cap,
                self.config.idhfr.start_fraction,
                sched.event_index(ctx.step),
                sched.event_count(),
            );
            self.budget = Some(budget);
            report.budget = Some(budget);
            let threshold = T::lit(self.config.grad_threshold);
            let candidates: Vec<usize> = (0..cloud.len()).filter(|&i| self.stats.mean_abs(i) >= threshold).collect();
            report.candidates = candidates.len();
            let n = candidates.len().min(budget.saturating_sub(cloud.len()));
            if n > 0 {
                let views = sample_views(&ctx.scene.train, self.config.idhfr.views_per_densify, rng);
                let scores = edge_aware_scores(cloud, ctx.scene, &views, ctx.settings)?;
                let w: Vec<T> = candidates.iter().map(|&i| scores[i]).collect();
                let selected = weighted_sample_without_replacement(&candidates, &w, n, rng);
                self.split_selected(cloud, &selected);
                let added = 2 * selected.len();
                adam.push_zero_rows(added);
                self.stats.push_zero_rows(added);
                let mut keep = vec![true; cloud.len()];
                for &i in &selected {
                    keep[i] = false;
                }
                remove_rows(cloud, adam, Some(&mut self.stats), &keep);
                report.split = selected.len();
            }
            let keep = prune_mask(cloud, &self.config, extent, Some(&self.stats.max_radius), size_culls);
            report.pruned = remove_rows(cloud, adam, Some(&mut self.stats), &keep);
            self.stats.reset();
        }
        if reset_due(&self.config, &sched, ctx.step) {
            reset_opacity(cloud, adam, self.config.opacity_reset_value);
            report.opacity_reset = true;
            self.last_reset = Some(ctx.step);
        }
        if let Some(r) = self.last_reset {
            if ctx.step == r + self.config.idhfr.post_reset_prune_delay && ctx.step != r {
                let keep = prune_mask(cloud, &self.config, extent, None, false);
                report.pruned += remove_rows(cloud, adam, Some(&mut self.stats), &keep);
            }
        }
        report.size_after = cloud.len();
        ensure_lockstep(cloud, adam, self.stats.len())?;
        Ok(report)
    }

    fn accumulation_window(&self, ctx: &StepContext<'_, T>) -> usize {
        let late = ctx.step as f64 > self.config.idhfr.accumulation_start * ctx.schedule.total_steps as f64;
        if late {
            self.config.idhfr.accumulation_window
        } else {
            1
        }
    }

    fn tracked_len(&self) -> usize {
        self.stats.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn budget_is_nondecreasing_and_reaches_cap() {
        for (initial, cap, events) in [(10, 200, 14), (150, 200, 5), (0, 1000, 7), (500, 400, 3)] {
            let mut prev = 0;
            for e in 1..=events {
                let b = growth_budget(initial, cap, 0.3, e, events);
                assert!(b >= prev && b <= cap);
                prev = b;
            }
            assert_eq!(prev, cap);
        }
        assert_eq!(growth_budget(10, 1000, 0.3, 0, 10), 300);
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let im = Image::<f64>::filled(9, 7, [0.3, 0.6, 0.2]);
        assert!(laplacian_edge_map(&im).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn zero_weight_items_never_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let s = weighted_sample_without_replacement(&[0, 1, 2, 3], &[0.0, 1.0, 0.0, 2.0], 3, &mut rng);
            assert_eq!(s, vec![1, 3]);
        }
    }

    #[test]
    fn split_places_children_on_the_long_axis() {
        let mut cloud = GaussianCloud::<f64>::empty(0).unwrap();
        cloud.push_isotropic(crate::math::Vec3::new(1.0, 2.0, 3.0), 0.1, logit(0.5), [0.0; 3]);
        cloud.log_scales[0].y = 0.4f64.ln();
        let d = Idhfr::<f64>::new(StrategyConfig::of_kind(StrategyKind::Idhfr), 1);
        d.split_selected(&mut cloud, &[0]);
        assert_eq!(cloud.len(), 3);
        assert!((cloud.means[1].y - 2.2).abs() < 1e-12);
        assert!((cloud.means[2].y - 1.8).abs() < 1e-12);
        assert!((cloud.opacity(1) - 0.3).abs() < 1e-12);
        assert!((cloud.scale(1).y - 0.2).abs() < 1e-12);
        assert!((cloud.scale(1).x - 0.1).abs() < 1e-12);
    }
}
