use crate::camera::Camera;
use crate::error::{invalid, Result};
use crate::gaussians::GaussianCloud;
use crate::image::Image;
use crate::scalar::Real;

use super::project::{project_full, Projected};
use super::{map_indices, RenderSettings, MAX_ALPHA, MAX_IMAGE_DIM, TILE_SIZE, TRANSMITTANCE_EPS};

/// Rendered image plus the state the backward pass replays.
#[derive(Clone, Debug)]
pub struct RenderOutput<T> {
    pub image: Image<T>,
    /// Per-pixel transmittance left after compositing.
    pub final_transmittance: Vec<T>,
    /// Whether each Gaussian contributed to at least one pixel.
    pub touched: Vec<bool>,
    /// Screen footprint radius per Gaussian (0 when culled).
    pub radii: Vec<T>,
    pub(crate) projected: Vec<Projected<T>>,
    pub(crate) bins: TileBins,
    /// Number of tile-list entries each pixel walked before stopping.
    pub(crate) n_walked: Vec<u32>,
    pub(crate) background: [T; 3],
    pub(crate) camera_id: u32,
}

impl<T: Real> RenderOutput<T> {
    pub fn num_gaussians(&self) -> usize {
        self.projected.len()
    }

    /// Per-pixel compositing weights `α'_i·T_i` of every splat that reached the pixel,
    /// in composite order, for diagnostics and conservation checks.
    pub fn pixel_weights(&self, row: usize, col: usize) -> Vec<(usize, T)> {
        let (w, _) = (self.image.width, self.image.height);
        let tile = self.bins.tile_of(row, col, w);
        let list = self.bins.list(tile);
        let px = T::from_usize_lossy(col) + T::lit(0.5);
        let py = T::from_usize_lossy(row) + T::lit(0.5);
        let mut t = T::one();
        let mut out = Vec::new();
        for &g in &list[..self.n_walked[row * w + col] as usize] {
            if let Some((alpha, _, _)) = splat_alpha(&self.projected[g], px, py) {
                out.push((g, alpha * t));
                t *= T::one() - alpha;
            }
        }
        out
    }
}

/// Depth-sorted per-tile index lists in one flat buffer.
#[derive(Clone, Debug, Default)]
pub(crate) struct TileBins {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub offsets: Vec<usize>,
    pub entries: Vec<usize>,
}

impl TileBins {
    #[inline]
    pub fn list(&self, tile: usize) -> &[usize] {
        &self.entries[self.offsets[tile]..self.offsets[tile + 1]]
    }

    #[inline]
    pub fn tile_of(&self, row: usize, col: usize, _width: usize) -> usize {
        (row / TILE_SIZE) * self.tiles_x + col / TILE_SIZE
    }

    pub fn n_tiles(&self) -> usize {
        self.tiles_x * self.tiles_y
    }
}

/// `(α', G, raw α)` of a splat at a pixel center, or `None` when it cannot contribute.
#[inline]
pub(crate) fn splat_alpha<T: Real>(p: &Projected<T>, px: T, py: T) -> Option<(T, T, T)> {
    let dx = px - p.screen.mean[0];
    let dy = py - p.screen.mean[1];
    let [a, b, c] = p.screen.conic;
    let power = -T::lit(0.5) * (a * dx * dx + c * dy * dy) - b * dx * dy;
    if power > T::zero() {
        return None;
    }
    let g = power.exp();
    let raw = p.opacity * g;
    Some((raw.min(T::lit(MAX_ALPHA)), g, raw))
}

pub(crate) fn bin_tiles<T: Real>(projected: &[Projected<T>], width: usize, height: usize) -> TileBins {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut order: Vec<usize> = (0..projected.len())
        .filter(|&i| projected[i].tiles.is_some())
        .collect();
    order.sort_by(|&a, &b| {
        projected[a]
            .screen
            .depth
            .partial_cmp(&projected[b].screen.depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let n_tiles = tiles_x * tiles_y;
    let mut counts = vec![0usize; n_tiles + 1];
    for &g in &order {
        let (x0, y0, x1, y1) = projected[g].tiles.unwrap();
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                counts[ty * tiles_x + tx + 1] += 1;
            }
        }
    }
    for t in 0..n_tiles {
        counts[t + 1] += counts[t];
    }
    let offsets = counts.clone();
    let mut cursor = counts;
    let mut entries = vec![0usize; offsets[n_tiles]];
    for &g in &order {
        let (x0, y0, x1, y1) = projected[g].tiles.unwrap();
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                let t = ty * tiles_x + tx;
                entries[cursor[t]] = g;
                cursor[t] += 1;
            }
        }
    }
    TileBins {
        tiles_x,
        tiles_y,
        offsets,
        entries,
    }
}

/// Pixel rectangle `(row0, col0, row1, col1)` (exclusive ends) covered by a tile.
#[inline]
pub(crate) fn tile_rect(tile: usize, tiles_x: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let ty = tile / tiles_x;
    let tx = tile % tiles_x;
    let r0 = ty * TILE_SIZE;
    let c0 = tx * TILE_SIZE;
    (r0, c0, (r0 + TILE_SIZE).min(height), (c0 + TILE_SIZE).min(width))
}

struct TileResult<T> {
    color: Vec<[T; 3]>,
    transmittance: Vec<T>,
    walked: Vec<u32>,
    touched: Vec<usize>,
}

/// Forward render of `cloud` through `camera`.
pub fn render<T: Real>(
    cloud: &GaussianCloud<T>,
    camera: &Camera<T>,
    settings: &RenderSettings<T>,
) -> Result<RenderOutput<T>> {
    let (w, h) = (camera.width, camera.height);
    if w > MAX_IMAGE_DIM || h > MAX_IMAGE_DIM {
        return invalid(format!("image {w}x{h} exceeds the {MAX_IMAGE_DIM} px limit"));
    }
    cloud.check_lengths()?;
    cloud.check_finite()?;

    let projected = map_indices(settings.parallel, cloud.len(), |i| {
        project_full(i, cloud, camera, TILE_SIZE)
    });
    let bins = bin_tiles(&projected, w, h);
    let eps = T::lit(TRANSMITTANCE_EPS);
    let bg = settings.background;

    let tiles = map_indices(settings.parallel, bins.n_tiles(), |tile| {
        let (r0, c0, r1, c1) = tile_rect(tile, bins.tiles_x, w, h);
        let list = bins.list(tile);
        let npix = (r1 - r0) * (c1 - c0);
        let mut res = TileResult {
            color: Vec::with_capacity(npix),
            transmittance: Vec::with_capacity(npix),
            walked: Vec::with_capacity(npix),
            touched: Vec::new(),
        };
        let mut hit = vec![false; list.len()];
        for row in r0..r1 {
            let py = T::from_usize_lossy(row) + T::lit(0.5);
            for col in c0..c1 {
                let px = T::from_usize_lossy(col) + T::lit(0.5);
                let mut t = T::one();
                let mut c = [T::zero(); 3];
                let mut walked = 0u32;
                for (k, &g) in list.iter().enumerate() {
                    let p = &projected[g];
                    let Some((alpha, _, _)) = splat_alpha(p, px, py) else {
                        walked = k as u32 + 1;
                        continue;
                    };
                    let next_t = t * (T::one() - alpha);
                    if next_t < eps {
                        break;
                    }
                    let wgt = alpha * t;
                    for ch in 0..3 {
                        c[ch] += p.color[ch] * wgt;
                    }
                    if alpha > T::zero() {
                        hit[k] = true;
                    }
                    t = next_t;
                    walked = k as u32 + 1;
                }
                for ch in 0..3 {
                    c[ch] += t * bg[ch];
                }
                res.color.push(c);
                res.transmittance.push(t);
                res.walked.push(walked);
            }
        }
        res.touched = hit
            .iter()
            .enumerate()
            .filter(|(_, h)| **h)
            .map(|(k, _)| list[k])
            .collect();
        res
    });

    let mut image = Image::zeros(w, h);
    let mut final_t = vec![T::one(); w * h];
    let mut n_walked = vec![0u32; w * h];
    let mut touched = vec![false; cloud.len()];
    for (tile, res) in tiles.into_iter().enumerate() {
        let (r0, c0, r1, c1) = tile_rect(tile, bins.tiles_x, w, h);
        let mut k = 0;
        for row in r0..r1 {
            for col in c0..c1 {
                image.set_pixel(row, col, res.color[k]);
                final_t[row * w + col] = res.transmittance[k];
                n_walked[row * w + col] = res.walked[k];
                k += 1;
            }
        }
        for g in res.touched {
            touched[g] = true;
        }
    }
    let radii = projected
        .iter()
        .map(|p| if p.tiles.is_some() { p.screen.radius } else { T::zero() })
        .collect();
    Ok(RenderOutput {
        image,
        final_transmittance: final_t,
        touched,
        radii,
        projected,
        bins,
        n_walked,
        background: bg,
        camera_id: camera.id,
    })
}

/// For every Gaussian, `Σ_pixels α'·T·weights[pixel]` over the pixels it was composited into.
pub fn accumulate_blend_weights<T: Real>(
    output: &RenderOutput<T>,
    pixel_weights: &[T],
    parallel: bool,
) -> Result<Vec<T>> {
    let (w, h) = (output.image.width, output.image.height);
    if pixel_weights.len() != w * h {
        return invalid("pixel weight map does not match the render");
    }
    let bins = &output.bins;
    let per_tile = map_indices(parallel, bins.n_tiles(), |tile| {
        let (r0, c0, r1, c1) = tile_rect(tile, bins.tiles_x, w, h);
        let list = bins.list(tile);
        let mut acc = vec![T::zero(); list.len()];
        for row in r0..r1 {
            let py = T::from_usize_lossy(row) + T::lit(0.5);
            for col in c0..c1 {
                let px = T::from_usize_lossy(col) + T::lit(0.5);
                let e = pixel_weights[row * w + col];
                let mut t = T::one();
                for (k, &g) in list[..output.n_walked[row * w + col] as usize].iter().enumerate() {
                    if let Some((alpha, _, _)) = splat_alpha(&output.projected[g], px, py) {
                        acc[k] += alpha * t * e;
                        t *= T::one() - alpha;
                    }
                }
            }
        }
        acc
    });
    let mut out = vec![T::zero(); output.num_gaussians()];
    for (tile, acc) in per_tile.into_iter().enumerate() {
        for (k, &g) in bins.list(tile).iter().enumerate() {
            out[g] += acc[k];
        }
    }
    Ok(out)
}
