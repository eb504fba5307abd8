use crate::error::{Error, Result};
use crate::gaussians::{CloudGrads, GaussianCloud};
use crate::scalar::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// Step sizes for one optimizer update, already scheduled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates<T> {
    pub means: T,
    pub log_scales: T,
    pub rotations: T,
    pub opacity: T,
    pub sh_dc: T,
    pub sh_rest: T,
}

/// `lr0 · final_factor^(step/total)`, clamped at the endpoint.
pub fn position_lr<T: Real>(lr0: T, final_factor: T, step: usize, total: usize) -> T {
    if total == 0 {
        return lr0;
    }
    let t = T::from_usize_lossy(step.min(total)) / T::from_usize_lossy(total);
    lr0 * final_factor.powf(t)
}

#[inline]
fn update<T: Real>(p: &mut T, m: &mut T, v: &mut T, g: T, lr: T, c: &Coeffs<T>) {
    *m = c.b1 * *m + (T::one() - c.b1) * g;
    *v = c.b2 * *v + (T::one() - c.b2) * g * g;
    let denom = v.sqrt() / c.bias2_sqrt + c.eps;
    *p -= lr / c.bias1 * *m / denom;
}

struct Coeffs<T> {
    b1: T,
    b2: T,
    eps: T,
    bias1: T,
    bias2_sqrt: T,
}

/// Adaptive-moment state with one row per Gaussian, kept in lockstep with the cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    m: CloudGrads<T>,
    v: CloudGrads<T>,
    steps: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(cloud: &GaussianCloud<T>) -> Self {
        Self {
            m: CloudGrads::zeros_like(cloud),
            v: CloudGrads::zeros_like(cloud),
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moment(&self) -> &CloudGrads<T> {
        &self.m
    }

    pub fn second_moment(&self) -> &CloudGrads<T> {
        &self.v
    }

    pub fn check_lockstep(&self, cloud: &GaussianCloud<T>) -> Result<()> {
        if self.m.len() != cloud.len() || self.m.sh_stride != cloud.sh_stride() {
            return Err(Error::Lockstep(format!(
                "optimizer holds {} rows, cloud has {}",
                self.m.len(),
                cloud.len()
            )));
        }
        Ok(())
    }

    pub fn step(&mut self, cloud: &mut GaussianCloud<T>, g: &CloudGrads<T>, lr: &LearningRates<T>) -> Result<()> {
        self.check_lockstep(cloud)?;
        if g.len() != cloud.len() || g.sh.len() != cloud.sh.len() {
            return Err(Error::Lockstep(format!(
                "gradient holds {} rows, cloud has {}",
                g.len(),
                cloud.len()
            )));
        }
        self.steps += 1;
        let b1 = T::lit(BETA1);
        let b2 = T::lit(BETA2);
        let t = self.steps as i32;
        let c = Coeffs {
            b1,
            b2,
            eps: T::lit(EPSILON),
            bias1: T::one() - b1.powi(t),
            bias2_sqrt: (T::one() - b2.powi(t)).sqrt(),
        };
        let (m, v) = (&mut self.m, &mut self.v);
        for i in 0..cloud.len() {
            for k in 0..3 {
                update(&mut cloud.means[i][k], &mut m.means[i][k], &mut v.means[i][k], g.means[i][k], lr.means, &c);
                update(
                    &mut cloud.log_scales[i][k],
                    &mut m.log_scales[i][k],
                    &mut v.log_scales[i][k],
                    g.log_scales[i][k],
                    lr.log_scales,
                    &c,
                );
            }
            for k in 0..4 {
                update(
                    &mut cloud.rotations[i][k],
                    &mut m.rotations[i][k],
                    &mut v.rotations[i][k],
                    g.rotations[i][k],
                    lr.rotations,
                    &c,
                );
            }
            update(
                &mut cloud.opacity_logits[i],
                &mut m.opacity_logits[i],
                &mut v.opacity_logits[i],
                g.opacity_logits[i],
                lr.opacity,
                &c,
            );
        }
        let stride = cloud.sh_stride();
        for (j, ((p, mj), vj)) in cloud.sh.iter_mut().zip(&mut m.sh).zip(&mut v.sh).enumerate() {
            let rate = if j % stride == 0 { lr.sh_dc } else { lr.sh_rest };
            for k in 0..3 {
                update(&mut p[k], &mut mj[k], &mut vj[k], g.sh[j][k], rate, &c);
            }
        }
        cloud.normalize_rotations();
        Ok(())
    }

    /// Drop rows in lockstep with [`GaussianCloud::retain_mask`].
    pub fn retain_mask(&mut self, keep: &[bool]) {
        self.m.retain_mask(keep);
        self.v.retain_mask(keep);
    }

    /// Zero-moment rows for Gaussians appended to the cloud.
    pub fn push_zero_rows(&mut self, n: usize) {
        self.m.push_zero_rows(n);
        self.v.push_zero_rows(n);
    }

    pub fn reset_rows(&mut self, rows: &[usize]) {
        for &i in rows {
            self.m.zero_row(i);
            self.v.zero_row(i);
        }
    }

    /// Forget opacity moments, as done when every opacity is reset.
    pub fn reset_opacity_moments(&mut self) {
        self.m.opacity_logits.iter_mut().for_each(|v| *v = T::zero());
        self.v.opacity_logits.iter_mut().for_each(|v| *v = T::zero());
    }
}
