use serde::{Deserialize, Serialize};

use crate::densify::DensifySchedule;
use crate::error::{invalid, Result};

/// Base learning rates per parameter group. `means` is multiplied by the scene extent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrConfig {
    pub means: f64,
    /// Position lr decays exponentially to `means·position_final_factor` at the last step.
    pub position_final_factor: f64,
    pub scales: f64,
    pub rotations: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            means: 1.6e-4,
            position_final_factor: 0.01,
            scales: 5e-3,
            rotations: 1e-3,
            opacity: 5e-2,
            sh_dc: 2.5e-3,
            sh_rest: 2.5e-3 / 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub lr: LrConfig,
    pub lambda_ssim: f64,
    pub densify_interval: usize,
    pub densify_start: usize,
    /// Last step at which densification may fire; half of `total_steps` when unset.
    pub densify_stop: Option<usize>,
    /// Hard limit on the Gaussian count; unset means uncapped.
    pub cap: Option<usize>,
    pub seed: u64,
    pub background: [f64; 3],
    /// Render tiles on the thread pool. Results are identical either way.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// 2000 steps, densifying every 50 steps after step 100 up to step 1000. The short
    /// run needs a denser cadence than the long one to grow from a handful of points.
    pub fn desk() -> Self {
        Self {
            total_steps: 2000,
            lr: LrConfig::default(),
            lambda_ssim: crate::optim::DEFAULT_LAMBDA_SSIM,
            densify_interval: 50,
            densify_start: 100,
            densify_stop: None,
            cap: None,
            seed: 0,
            background: [0.0; 3],
            parallel: true,
        }
    }

    /// 30000 steps, densifying every 100 steps from step 500 to step 15000.
    pub fn dataset() -> Self {
        Self { total_steps: 30_000, densify_interval: 100, densify_start: 500, ..Self::desk() }
    }

    pub fn densify_stop_step(&self) -> usize {
        self.densify_stop.unwrap_or(self.total_steps / 2)
    }

    pub fn schedule(&self) -> DensifySchedule {
        DensifySchedule {
            interval: self.densify_interval,
            start: self.densify_start,
            stop: self.densify_stop_step(),
            total_steps: self.total_steps,
        }
    }

    pub fn cap_value(&self) -> usize {
        self.cap.unwrap_or(usize::MAX)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return invalid(format!("lambda_ssim must lie in [0, 1], got {}", self.lambda_ssim));
        }
        if self.cap == Some(0) {
            return invalid("cap must be at least 1");
        }
        let lr = &self.lr;
        let rates = [lr.means, lr.scales, lr.rotations, lr.opacity, lr.sh_dc, lr.sh_rest];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return invalid("learning rates must be finite and nonnegative");
        }
        if !(lr.position_final_factor > 0.0) {
            return invalid("position_final_factor must be positive");
        }
        if !self.background.iter().all(|v| v.is_finite()) {
            return invalid("background must be finite");
        }
        if self.total_steps > 0 && self.densify_interval > 0 {
            let stop = self.densify_stop_step();
            if self.densify_start >= stop || stop > self.total_steps {
                return invalid(format!(
                    "need densify_start < densify_stop <= total_steps, got {} / {} / {}",
                    self.densify_start, stop, self.total_steps
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::desk().validate().unwrap();
        TrainConfig::dataset().validate().unwrap();
        assert_eq!(TrainConfig::desk().densify_stop_step(), 1000);
    }

    #[test]
    fn window_order_checked() {
        let c = TrainConfig { densify_start: 1000, ..TrainConfig::desk() };
        assert!(c.validate().is_err());
        let c = TrainConfig { densify_stop: Some(2500), ..TrainConfig::desk() };
        assert!(c.validate().is_err());
        let c = TrainConfig { lambda_ssim: 1.5, ..TrainConfig::desk() };
        assert!(c.validate().is_err());
        let c = TrainConfig { cap: Some(0), ..TrainConfig::desk() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = TrainConfig { cap: Some(1234), seed: 9, ..TrainConfig::desk() };
        let back: TrainConfig = toml::from_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
