use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gaussians::{CloudGrads, GaussianCloud};
use crate::optim::Adam;
use crate::scalar::Real;

use super::{
    ensure_lockstep, prune_mask, remove_rows, Densifier, MutationReport, StepContext, StrategyConfig, StrategyKind,
    ViewData,
};

/// Baseline without densification. Opacity pruning still runs at every densify event.
pub struct NoDensify {
    config: StrategyConfig,
    n: usize,
}

impl NoDensify {
    pub fn new(config: StrategyConfig, n: usize) -> Self {
        Self { config, n }
    }
}

impl<T: Real> Densifier<T> for NoDensify {
    fn kind(&self) -> StrategyKind {
        StrategyKind::None
    }

    fn before_update(
        &mut self,
        _ctx: &StepContext<'_, T>,
        _cloud: &GaussianCloud<T>,
        _grads: &mut CloudGrads<T>,
        _view: &ViewData<'_, T>,
    ) -> Result<()> {
        Ok(())
    }

    fn after_update(
        &mut self,
        ctx: &StepContext<'_, T>,
        cloud: &mut GaussianCloud<T>,
        adam: &mut Adam<T>,
        _rng: &mut ChaCha8Rng,
    ) -> Result<MutationReport> {
        ensure_lockstep(cloud, adam, self.n)?;
        let mut report = MutationReport::at_size(cloud.len());
        if ctx.schedule.is_boundary(ctx.step) {
            let keep = prune_mask(cloud, &self.config, ctx.scene.extent, None, false);
            report.pruned = remove_rows(cloud, adam, None, &keep);
            self.n = cloud.len();
        }
        report.size_after = cloud.len();
        Ok(report)
    }

    fn tracked_len(&self) -> usize {
        self.n
    }
}
