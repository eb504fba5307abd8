//! Tile-based differentiable splat rasterizer.
//!
//! Gaussians are projected, depth-sorted once per view (ties broken by index) and
//! binned into 16×16 tiles. Each pixel composites its tile's list front to back:
//!
//! ```text
//! α'_i = min(0.99, o_i · exp(-½ Δᵀ Σ'⁻¹ Δ)),   C = Σ c_i α'_i T_i + T_final · bg
//! ```
//!
//! stopping before the splat that would push transmittance below 1e-4.
//! Tiles are processed independently; per-Gaussian gradient contributions are
//! reduced in tile order, so results do not depend on the thread count.

mod backward;
mod forward;
mod project;

pub use backward::{render_backward, ViewspaceGrads};
pub use forward::{accumulate_blend_weights, render, RenderOutput};
pub use project::{project_gaussian, ScreenGaussian, FOOTPRINT_SIGMAS, LOWPASS_DILATION, NEAR_PLANE};

use rayon::prelude::*;

pub const TILE_SIZE: usize = 16;
pub const MAX_ALPHA: f64 = 0.99;
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
pub const MAX_IMAGE_DIM: usize = 8192;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings<T> {
    pub background: [T; 3],
    /// Process tiles on the rayon pool; results are identical either way.
    pub parallel: bool,
}

impl<T: crate::scalar::Real> Default for RenderSettings<T> {
    fn default() -> Self {
        Self {
            background: [T::zero(); 3],
            parallel: true,
        }
    }
}

pub(crate) fn map_indices<R: Send>(parallel: bool, n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}
