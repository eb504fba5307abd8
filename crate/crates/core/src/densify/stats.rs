use crate::raster::{RenderOutput, ViewspaceGrads};
use crate::scalar::Real;

/// View-space gradient statistics accumulated since the last densify event.
///
/// Norms are taken in NDC units (pixel gradient × half the image size) so that
/// the usual threshold of 4e-4 keeps its meaning at any resolution.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradStats<T> {
    /// `Σ_views ‖(|∂x|, |∂y|)‖` per Gaussian.
    pub abs_norm_sum: Vec<T>,
    /// `Σ_views ‖(∂x, ∂y)‖` per Gaussian.
    pub norm_sum: Vec<T>,
    /// Views in which the Gaussian fell inside the frustum.
    pub count: Vec<u32>,
    /// Largest screen radius seen, in pixels.
    pub max_radius: Vec<T>,
}

impl<T: Real> GradStats<T> {
    pub fn new(n: usize) -> Self {
        Self {
            abs_norm_sum: vec![T::zero(); n],
            norm_sum: vec![T::zero(); n],
            count: vec![0; n],
            max_radius: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count.is_empty()
    }

    pub fn observe(&mut self, vs: &ViewspaceGrads<T>, render: &RenderOutput<T>) {
        let half_w = T::from_usize_lossy(render.image.width) * T::lit(0.5);
        let half_h = T::from_usize_lossy(render.image.height) * T::lit(0.5);
        for i in 0..self.len() {
            let r = render.radii[i];
            if r <= T::zero() {
                continue;
            }
            let a = vs.abs[i];
            let s = vs.summed[i];
            self.abs_norm_sum[i] += (a[0] * half_w).hypot(a[1] * half_h);
            self.norm_sum[i] += (s[0] * half_w).hypot(s[1] * half_h);
            self.count[i] += 1;
            if r > self.max_radius[i] {
                self.max_radius[i] = r;
            }
        }
    }

    /// Mean abs-mode gradient norm; 0 for Gaussians never seen.
    pub fn mean_abs(&self, i: usize) -> T {
        match self.count[i] {
            0 => T::zero(),
            c => self.abs_norm_sum[i] / T::from_usize_lossy(c as usize),
        }
    }

    pub fn mean_summed(&self, i: usize) -> T {
        match self.count[i] {
            0 => T::zero(),
            c => self.norm_sum[i] / T::from_usize_lossy(c as usize),
        }
    }

    pub fn retain_mask(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.abs_norm_sum.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.norm_sum.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.count.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.max_radius.retain(|_| *it.next().unwrap());
    }

    pub fn push_zero_rows(&mut self, n: usize) {
        self.abs_norm_sum.extend(std::iter::repeat_n(T::zero(), n));
        self.norm_sum.extend(std::iter::repeat_n(T::zero(), n));
        self.count.extend(std::iter::repeat_n(0, n));
        self.max_radius.extend(std::iter::repeat_n(T::zero(), n));
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.len());
    }
}
