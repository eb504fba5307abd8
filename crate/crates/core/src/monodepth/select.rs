//! Camera subset selection by k-means over flattened extrinsics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::scalar::Real;

pub const DEFAULT_CAMERA_LIMIT: usize = 300;
const MAX_LLOYD_ITERS: usize = 100;

fn dist2(a: &[f64; 16], b: &[f64; 16]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of at most `limit` cameras: all of them when they fit, otherwise the member
/// nearest each k-means centroid (k = `limit`). Returned in ascending order.
pub fn select_cameras<T: Real>(cameras: &[Camera<T>], limit: usize, seed: u64) -> Vec<usize> {
    let n = cameras.len();
    if n <= limit {
        return (0..n).collect();
    }
    if limit == 0 {
        return Vec::new();
    }
    let x: Vec<[f64; 16]> = cameras.iter().map(|c| c.extrinsic_4x4().map(|v| v.as_f64())).collect();
    let centroids = kmeans(&x, limit, seed);
    let mut assign = vec![0usize; n];
    for (i, p) in x.iter().enumerate() {
        assign[i] = nearest(&centroids, p);
    }
    fill_empty(&x, &centroids, &mut assign, limit);
    let mut out = Vec::with_capacity(limit);
    for (c, centroid) in centroids.iter().enumerate() {
        let rep = (0..n)
            .filter(|&i| assign[i] == c)
            .min_by(|&a, &b| dist2(&x[a], centroid).total_cmp(&dist2(&x[b], centroid)).then(a.cmp(&b)))
            .expect("clusters are non-empty");
        out.push(rep);
    }
    out.sort_unstable();
    out
}

fn nearest(centroids: &[[f64; 16]], p: &[f64; 16]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, m) in centroids.iter().enumerate() {
        let d = dist2(m, p);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// Move the point farthest from its centroid (in a cluster of two or more) into each
/// empty cluster, so every cluster yields a distinct representative.
fn fill_empty(x: &[[f64; 16]], centroids: &[[f64; 16]], assign: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assign.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|s| *s == 0) else { return };
        let donor = (0..x.len())
            .filter(|&i| sizes[assign[i]] > 1)
            .max_by(|&a, &b| {
                dist2(&x[a], &centroids[assign[a]]).total_cmp(&dist2(&x[b], &centroids[assign[b]])).then(b.cmp(&a))
            })
            .expect("more points than clusters");
        assign[donor] = empty;
    }
}

/// k-means++ seeding followed by Lloyd iterations.
fn kmeans(x: &[[f64; 16]], k: usize, seed: u64) -> Vec<[f64; 16]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![x[rng.random_range(0..x.len())]];
    let mut d2: Vec<f64> = x.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = x.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..x.len())
        };
        centroids.push(x[pick]);
        for (d, p) in d2.iter_mut().zip(x) {
            *d = d.min(dist2(p, &x[pick]));
        }
    }
    let mut assign = vec![usize::MAX; x.len()];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (i, p) in x.iter().enumerate() {
            let c = nearest(&centroids, p);
            if c != assign[i] {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; 16]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in x.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].map(|s| s / counts[c] as f64);
            }
        }
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{look_at, Vec3};

    fn cam(i: u32, eye: Vec3<f64>) -> Camera<f64> {
        let (r, t) = look_at(eye, Vec3::zero(), Vec3::new(0.0, -1.0, 0.0));
        Camera::new(i, 10.0, 10.0, 5.0, 5.0, 10, 10, r, t).unwrap()
    }

    #[test]
    fn small_sets_pass_through() {
        let cams: Vec<_> = (0..10).map(|i| cam(i, Vec3::new(3.0, i as f64 * 0.1, 1.0))).collect();
        assert_eq!(select_cameras(&cams, 300, 0), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn one_per_tight_cluster() {
        let mut cams = Vec::new();
        for i in 0..6 {
            let e = i as f64 * 0.01;
            cams.push(cam(i, Vec3::new(5.0 + e, e, 0.5)));
            cams.push(cam(10 + i, Vec3::new(-5.0 - e, e, -0.5)));
        }
        for seed in 0..5 {
            let s = select_cameras(&cams, 2, seed);
            assert_eq!(s.len(), 2);
            let a = cams[s[0]].center().x > 0.0;
            let b = cams[s[1]].center().x > 0.0;
            assert_ne!(a, b);
        }
    }

    #[test]
    fn duplicates_still_give_full_count() {
        let cams: Vec<_> = (0..8).map(|i| cam(i, Vec3::new(2.0, 0.0, if i < 6 { 1.0 } else { -1.0 }))).collect();
        let s = select_cameras(&cams, 5, 3);
        assert_eq!(s.len(), 5);
        let mut d = s.clone();
        d.dedup();
        assert_eq!(d, s);
    }
}
