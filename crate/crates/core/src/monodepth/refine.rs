//! Piecewise-linear depth refinement and pixel selection masks.

use crate::error::{invalid, Result};

use super::DepthMap;

/// Anchors `(d, d*)` sorted by `d`, with duplicate `d` merged by averaging `d*`.
pub fn canonical_anchors(anchors: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut a: Vec<(f64, f64)> = anchors.iter().copied().filter(|(d, s)| d.is_finite() && s.is_finite()).collect();
    a.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(a.len());
    let mut i = 0;
    while i < a.len() {
        let mut j = i;
        let mut sum = 0.0;
        while j < a.len() && a[j].0 == a[i].0 {
            sum += a[j].1;
            j += 1;
        }
        out.push((a[i].0, sum / (j - i) as f64));
        i = j;
    }
    out
}

/// Map one value through the bracketing anchor interval. Outside the anchor range the
/// nearest boundary interval's affine map is extended.
pub fn interpolate(anchors: &[(f64, f64)], d: f64) -> f64 {
    debug_assert!(anchors.len() >= 2);
    // index of the first anchor strictly greater than d, clamped to a valid interval
    let upper = anchors.partition_point(|a| a.0 <= d);
    let k = upper.saturating_sub(1).min(anchors.len() - 2);
    let (d0, s0) = anchors[k];
    let (d1, s1) = anchors[k + 1];
    let t = (d - d0) / (d1 - d0);
    s0 + t * (s1 - s0)
}

/// Refine every valid pixel of `depth` through the anchors. Fails with fewer than two
/// distinct anchor depths.
pub fn piecewise_refine(depth: &DepthMap, anchors: &[(f64, f64)]) -> Result<DepthMap> {
    let a = canonical_anchors(anchors);
    if a.len() < 2 {
        return invalid("piecewise refinement needs two distinct anchor depths");
    }
    let mut out = depth.clone();
    for (v, ok) in out.data.iter_mut().zip(&out.valid) {
        if *ok {
            *v = interpolate(&a, *v);
        }
    }
    out.revalidate();
    Ok(out)
}

/// Linear-interpolation quantile of sorted data (the common "type 7" definition).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-pixel subsample factors in `[d_min, d_max]` from IQR-clamped, normalized depth.
/// Nearer pixels get larger factors, which evens out the density of unprojected points
/// since near surfaces cover more pixels. A constant map gets `d_min` everywhere.
/// Invalid pixels get `NaN`.
pub fn subsample_factors(depth: &DepthMap, d_min: f64, d_max: f64) -> Result<Vec<f64>> {
    if !(d_min >= 1.0 && d_max >= d_min) {
        return invalid("subsample factors need 1 ≤ D_min ≤ D_max");
    }
    let mut vals: Vec<f64> = depth.valid_values().collect();
    if vals.is_empty() {
        return Ok(vec![f64::NAN; depth.data.len()]);
    }
    vals.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&vals, 0.25), quantile(&vals, 0.75));
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let clamped_min = vals[0].clamp(lo, hi);
    let clamped_max = vals[vals.len() - 1].clamp(lo, hi);
    let range = clamped_max - clamped_min;
    Ok(depth
        .data
        .iter()
        .zip(&depth.valid)
        .map(|(d, ok)| {
            if !ok {
                return f64::NAN;
            }
            // nearness in [0, 1]; a constant map has none and gets D_min
            let n = if range > 0.0 { (clamped_max - d.clamp(lo, hi)) / range } else { 0.0 };
            d_min + n * (d_max - d_min)
        })
        .collect())
}

/// Keep pixel `(i, j)` when both indices are multiples of `⌊S_ij⌋`.
pub fn mask_from_factors(factors: &[f64], width: usize) -> Vec<bool> {
    factors
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if !s.is_finite() {
                return false;
            }
            let f = (s.floor() as usize).max(1);
            let (i, j) = (k / width, k % width);
            i % f == 0 && j % f == 0
        })
        .collect()
}

pub fn adaptive_subsample_mask(depth: &DepthMap, d_min: f64, d_max: f64) -> Result<Vec<bool>> {
    Ok(mask_from_factors(&subsample_factors(depth, d_min, d_max)?, depth.width))
}

/// False where the relative depth gradient `max(|∂d/∂i|, |∂d/∂j|)/d` exceeds
/// `rel_thresh`. Derivatives are central differences, one-sided on the border; a pixel
/// next to an invalid pixel is dropped.
pub fn depth_gradient_mask(depth: &DepthMap, rel_thresh: f64) -> Result<Vec<bool>> {
    if !(rel_thresh > 0.0) {
        return invalid("gradient threshold must be positive");
    }
    let (w, h) = (depth.width, depth.height);
    let at = |i: usize, j: usize| depth.is_valid(i, j).then(|| depth.get(i, j));
    let diff = |a: Option<f64>, b: Option<f64>, span: f64| -> Option<f64> { Some((b? - a?) / span) };
    let deriv = |i: usize, j: usize, di: bool| -> Option<f64> {
        let len = if di { h } else { w };
        let pos = if di { i } else { j };
        if len == 1 {
            return Some(0.0);
        }
        let get = |p: usize| if di { at(p, j) } else { at(i, p) };
        if pos == 0 {
            diff(get(0), get(1), 1.0)
        } else if pos == len - 1 {
            diff(get(pos - 1), get(pos), 1.0)
        } else {
            diff(get(pos - 1), get(pos + 1), 2.0)
        }
    };
    let mut out = vec![false; w * h];
    for i in 0..h {
        for j in 0..w {
            let Some(d) = at(i, j) else { continue };
            if let (Some(gi), Some(gj)) = (deriv(i, j, true), deriv(i, j, false)) {
                out[i * w + j] = gi.abs().max(gj.abs()) / d <= rel_thresh;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> DepthMap {
        DepthMap::new(0, w, h, (0..w * h).map(|k| f(k / w, k % w)).collect()).unwrap()
    }

    #[test]
    fn interpolation_examples() {
        let a = canonical_anchors(&[(3.0, 30.0), (1.0, 10.0), (2.0, 20.0)]);
        assert_eq!(interpolate(&a, 2.5), 25.0);
        assert_eq!(interpolate(&a, 2.0), 20.0);
        assert_eq!(interpolate(&a, 4.0), 40.0);
        assert_eq!(interpolate(&a, 0.0), 0.0);
        assert_eq!(canonical_anchors(&[(1.0, 2.0), (1.0, 4.0), (2.0, 0.0)]), vec![(1.0, 3.0), (2.0, 0.0)]);
        assert!(piecewise_refine(&map(2, 1, |_, _| 1.0), &[(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn factor_two_and_one() {
        let f = vec![2.0; 12];
        let m = mask_from_factors(&f, 4);
        for (k, v) in m.iter().enumerate() {
            assert_eq!(*v, (k / 4) % 2 == 0 && (k % 4) % 2 == 0);
        }
        assert!(mask_from_factors(&[1.0; 6], 3).iter().all(|v| *v));
    }

    #[test]
    fn constant_depth_uses_the_smallest_factor() {
        let f = subsample_factors(&map(5, 5, |_, _| 3.0), 5.0, 15.0).unwrap();
        assert!(f.iter().all(|v| *v == 5.0));
        let ramp = subsample_factors(&map(5, 1, |_, j| 1.0 + j as f64), 5.0, 15.0).unwrap();
        assert_eq!(ramp, vec![15.0, 12.5, 10.0, 7.5, 5.0]);
    }

    #[test]
    fn gradient_mask_cases() {
        assert!(depth_gradient_mask(&map(6, 6, |_, _| 2.0), 0.05).unwrap().iter().all(|v| *v));
        let step = depth_gradient_mask(&map(6, 6, |_, j| if j < 3 { 1.0 } else { 2.0 }), 0.05).unwrap();
        for i in 0..6 {
            assert!(!step[i * 6 + 2] && !step[i * 6 + 3]);
            assert!(step[i * 6] && step[i * 6 + 5]);
        }
        // slope 0.01 per pixel on depth ≥ 1 stays under 0.05
        let ramp = depth_gradient_mask(&map(8, 8, |i, j| 1.0 + 0.01 * (i + j) as f64), 0.05).unwrap();
        assert!(ramp.iter().all(|v| *v));
    }
}
