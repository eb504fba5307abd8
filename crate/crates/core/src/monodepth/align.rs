//! Scale/shift alignment of predicted depth to sparse SfM depth.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scalar::Real;

use super::DepthMap;

/// One SfM point seen in an image: the pixel it falls in, its camera-space depth `d*`
/// and the predicted depth `d` at that pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub row: usize,
    pub col: usize,
    pub sfm_depth: f64,
    pub depth: f64,
}

/// Points in front of the camera that land inside the image on a valid depth pixel.
pub fn sfm_depth_correspondences<T: Real>(camera: &Camera<T>, points: &[Vec3<T>], depth: &DepthMap) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for p in points {
        let (u, v, z) = camera.project(*p);
        let (u, v, z) = (u.as_f64(), v.as_f64(), z.as_f64());
        if !(z > 0.0) || !(u >= 0.0 && v >= 0.0) || u >= camera.width as f64 || v >= camera.height as f64 {
            continue;
        }
        let (row, col) = (v as usize, u as usize);
        if row >= depth.height || col >= depth.width || !depth.is_valid(row, col) {
            continue;
        }
        out.push(Correspondence { row, col, sfm_depth: z, depth: depth.get(row, col) });
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub samples_per_iteration: usize,
    pub confidence: f64,
    /// Relative residual `|s·d + b − d*| / d*`.
    pub inlier_threshold: f64,
    pub max_iterations: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { samples_per_iteration: 4, confidence: 0.999, inlier_threshold: 0.01, max_iterations: 2500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub scale: f64,
    pub shift: f64,
    /// In the order of the input pairs.
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    pub rms_relative_residual: f64,
    pub iterations: usize,
}

const DEPTH_FLOOR: f64 = 1e-12;

/// Least-squares `(s, b)` for `d* ≈ s·d + b`; `None` when the `d` values are (nearly) all equal.
fn fit(pairs: &[Correspondence], idx: impl Iterator<Item = usize> + Clone) -> Option<(f64, f64)> {
    let n = idx.clone().count() as f64;
    if n < 2.0 {
        return None;
    }
    let (sx, sy) = idx.clone().fold((0.0, 0.0), |(a, b), i| (a + pairs[i].depth, b + pairs[i].sfm_depth));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for i in idx {
        let dx = pairs[i].depth - mx;
        sxx += dx * dx;
        sxy += dx * (pairs[i].sfm_depth - my);
    }
    if !(sxx > 1e-12 * (mx * mx).max(1e-300) * n) {
        return None;
    }
    let s = sxy / sxx;
    Some((s, my - s * mx))
}

fn relative_residual(p: &Correspondence, s: f64, b: f64) -> f64 {
    (s * p.depth + b - p.sfm_depth).abs() / p.sfm_depth.max(DEPTH_FLOOR)
}

fn inliers_of(pairs: &[Correspondence], s: f64, b: f64, thresh: f64) -> Vec<usize> {
    (0..pairs.len()).filter(|&i| relative_residual(&pairs[i], s, b) <= thresh).collect()
}

/// Refit on the inliers until the consensus stops growing.
fn local_optimize(pairs: &[Correspondence], mut inl: Vec<usize>, thresh: f64) -> (Option<(f64, f64)>, Vec<usize>) {
    let mut model = fit(pairs, inl.iter().copied());
    for _ in 0..10 {
        let Some((s, b)) = model else { break };
        let next = inliers_of(pairs, s, b, thresh);
        if next.len() <= inl.len() {
            break;
        }
        inl = next;
        model = fit(pairs, inl.iter().copied());
    }
    (model, inl)
}

/// LO-RANSAC fit of `d* = s·d + b`. Pairs are put in a canonical order before sampling,
/// so the result does not depend on the input order.
pub fn ransac_scale_shift(pairs: &[Correspondence], config: &RansacConfig, seed: u64) -> Result<AlignmentResult> {
    let k = config.samples_per_iteration.max(2);
    if pairs.len() < k.max(4) {
        return Err(Error::AlignmentFailed(format!("{} correspondences, need at least {}", pairs.len(), k.max(4))));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&pairs[a], &pairs[b]);
        p.depth
            .total_cmp(&q.depth)
            .then(p.sfm_depth.total_cmp(&q.sfm_depth))
            .then((p.row, p.col).cmp(&(q.row, q.col)))
    });
    let canon: Vec<Correspondence> = order.iter().map(|&i| pairs[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<((f64, f64), Vec<usize>)> = None;
    let mut bound = config.max_iterations;
    let mut it = 0;
    while it < bound.min(config.max_iterations) {
        it += 1;
        let picks = sample(&mut rng, canon.len(), k);
        let picks = picks.into_vec();
        let Some((s, b)) = fit(&canon, picks.iter().copied()) else { continue };
        if !(s > 0.0) {
            continue;
        }
        let inl = inliers_of(&canon, s, b, config.inlier_threshold);
        if best.as_ref().is_some_and(|(_, bi)| inl.len() <= bi.len()) {
            continue;
        }
        let (lo, lo_inl) = local_optimize(&canon, inl.clone(), config.inlier_threshold);
        best = match lo {
            Some(m) if m.0 > 0.0 && lo_inl.len() >= inl.len() => Some((m, lo_inl)),
            _ => Some(((s, b), inl)),
        };
        let ratio = best.as_ref().unwrap().1.len() as f64 / canon.len() as f64;
        let miss = 1.0 - ratio.powi(k as i32);
        bound = if miss <= 0.0 {
            0
        } else if miss >= 1.0 {
            // no consensus yet: keep sampling
            config.max_iterations
        } else {
            ((1.0 - config.confidence).ln() / miss.ln()).ceil().max(0.0) as usize
        };
    }
    let Some((_, inl)) = best else {
        return Err(Error::AlignmentFailed("no non-degenerate sample with positive scale".into()));
    };
    if inl.len() < 4 {
        return Err(Error::AlignmentFailed(format!("only {} inliers", inl.len())));
    }
    let (scale, shift) = fit(&canon, inl.iter().copied())
        .filter(|m| m.0 > 0.0)
        .ok_or_else(|| Error::AlignmentFailed("degenerate inlier set".into()))?;
    let final_inl = inliers_of(&canon, scale, shift, config.inlier_threshold);
    let mut inliers = vec![false; pairs.len()];
    for &c in &final_inl {
        inliers[order[c]] = true;
    }
    let rms = (final_inl.iter().map(|&i| relative_residual(&canon[i], scale, shift).powi(2)).sum::<f64>()
        / final_inl.len().max(1) as f64)
        .sqrt();
    if final_inl.len() < 4 {
        return Err(Error::AlignmentFailed(format!("only {} inliers after refit", final_inl.len())));
    }
    Ok(AlignmentResult { scale, shift, inlier_count: final_inl.len(), inliers, rms_relative_residual: rms, iterations: it })
}
