#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatbench::math::{look_at, quat_normalize};
use splatbench::raster::{render, RenderSettings};
use splatbench::monodepth::DepthMap;
use splatbench::{Camera, GaussianCloud, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small random scene in front of an 8×8 camera, well away from clamp and cull boundaries.
pub fn random_small_scene(seed: u64, n: usize) -> (GaussianCloud<f64>, Camera<f64>, [f64; 3]) {
    let mut r = rng(seed);
    let degree = r.random_range(0..=3usize);
    let mut cloud = GaussianCloud::empty(degree).unwrap();
    let stride = cloud.sh_stride();
    for _ in 0..n {
        let mean = Vec3::new(r.random_range(-0.4..0.4), r.random_range(-0.4..0.4), r.random_range(-0.3..0.3));
        let ls = Vec3::new(
            r.random_range(0.12f64..0.35).ln(),
            r.random_range(0.12f64..0.35).ln(),
            r.random_range(0.12f64..0.35).ln(),
        );
        let q = quat_normalize(&[
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        ]);
        let op: f64 = r.random_range(0.2..0.8);
        let mut sh = vec![[0.0; 3]; stride];
        sh[0] = [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)];
        for c in sh.iter_mut().skip(1) {
            *c = [r.random_range(-0.1..0.1), r.random_range(-0.1..0.1), r.random_range(-0.1..0.1)];
        }
        cloud.push(mean, ls, q, (op / (1.0 - op)).ln(), &sh).unwrap();
    }
    let eye = Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), -3.0);
    let (rot, t) = look_at(eye, Vec3::zero(), Vec3::new(0.0, -1.0, 0.0));
    let cam = Camera::new(0, 12.0, 12.5, 4.0, 4.0, 8, 8, rot, t).unwrap();
    let bg = [r.random_range(0.0..0.3), r.random_range(0.0..0.3), r.random_range(0.0..0.3)];
    (cloud, cam, bg)
}

/// Flattened view of every optimizable scalar, with a class label.
pub fn param_slots(cloud: &GaussianCloud<f64>) -> Vec<(&'static str, usize, usize)> {
    let mut out = Vec::new();
    for i in 0..cloud.len() {
        for k in 0..3 {
            out.push(("means", i, k));
            out.push(("log_scales", i, k));
        }
        for k in 0..4 {
            out.push(("rotations", i, k));
        }
        out.push(("opacity_logits", i, 0));
        for k in 0..cloud.sh_stride() * 3 {
            out.push(("sh", i, k));
        }
    }
    out
}

pub fn param_mut<'a>(cloud: &'a mut GaussianCloud<f64>, slot: (&str, usize, usize)) -> &'a mut f64 {
    let (class, i, k) = slot;
    match class {
        "means" => &mut cloud.means[i][k],
        "log_scales" => &mut cloud.log_scales[i][k],
        "rotations" => &mut cloud.rotations[i][k],
        "opacity_logits" => &mut cloud.opacity_logits[i],
        "sh" => {
            let s = cloud.sh_stride();
            &mut cloud.sh[i * s + k / 3][k % 3]
        }
        _ => unreachable!(),
    }
}

pub fn grad_of(grads: &splatbench::CloudGrads<f64>, stride: usize, slot: (&str, usize, usize)) -> f64 {
    let (class, i, k) = slot;
    match class {
        "means" => grads.means[i][k],
        "log_scales" => grads.log_scales[i][k],
        "rotations" => grads.rotations[i][k],
        "opacity_logits" => grads.opacity_logits[i],
        "sh" => grads.sh[i * stride + k / 3][k % 3],
        _ => unreachable!(),
    }
}

/// Weighted-sum loss `Σ image·weights` evaluated by a plain forward render.
pub fn weighted_loss(cloud: &GaussianCloud<f64>, cam: &Camera<f64>, bg: [f64; 3], weights: &[f64]) -> f64 {
    let s = RenderSettings { background: bg, parallel: false };
    let out = render(cloud, cam, &s).unwrap();
    out.image.data.iter().zip(weights).map(|(a, b)| a * b).sum()
}

/// Central finite difference of [`weighted_loss`] with respect to one parameter.
pub fn central_difference(
    cloud: &GaussianCloud<f64>,
    cam: &Camera<f64>,
    bg: [f64; 3],
    weights: &[f64],
    slot: (&str, usize, usize),
    h: f64,
) -> f64 {
    let mut plus = cloud.clone();
    *param_mut(&mut plus, slot) += h;
    let mut minus = cloud.clone();
    *param_mut(&mut minus, slot) -= h;
    (weighted_loss(&plus, cam, bg, weights) - weighted_loss(&minus, cam, bg, weights)) / (2.0 * h)
}

pub fn gradient_matches(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff < 1e-8 || diff / analytic.abs().max(numeric.abs()) < 1e-3
}

pub fn random_weights(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Independent evaluation of the mask rule: clamp to the 1.5·IQR fences, normalize to
/// [0, 1], map nearness linearly onto [D_min, D_max], keep pixels on the ⌊S⌋ lattice.
pub fn brute_mask(data: &[f64], w: usize, d_min: f64, d_max: f64) -> Vec<bool> {
    let mut s = data.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let x = p * (s.len() - 1) as f64;
        let (i, f) = (x.floor() as usize, x - x.floor());
        if i + 1 < s.len() { s[i] * (1.0 - f) + s[i + 1] * f } else { s[i] }
    };
    let (q1, q3) = (q(0.25), q(0.75));
    let (lo, hi) = (q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1));
    let c: Vec<f64> = data.iter().map(|v| v.max(lo).min(hi)).collect();
    let (mn, mx) = c.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
    c.iter()
        .enumerate()
        .map(|(k, v)| {
            let near = if mx > mn { (mx - v) / (mx - mn) } else { 0.0 };
            let f = (d_min + near * (d_max - d_min)).floor() as usize;
            let (i, j) = (k / w, k % w);
            i % f == 0 && j % f == 0
        })
        .collect()
}

pub fn cam_at(id: u32, eye: Vec3<f64>) -> Camera<f64> {
    let (rot, t) = look_at(eye, Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, -1.0, 0.0));
    Camera::new(id, 40.0, 40.0, 16.0, 16.0, 32, 32, rot, t).unwrap()
}

/// Depth to the plane z = 0 for every pixel of a camera looking at it.
pub fn plane_depth(cam: &Camera<f64>) -> DepthMap {
    let mut data = Vec::with_capacity(32 * 32);
    let c = cam.center();
    for row in 0..32 {
        for col in 0..32 {
            let p1 = cam.unproject(col as f64 + 0.5, row as f64 + 0.5, 1.0);
            let dir = p1 - c;
            // camera-space depth scales linearly along the ray
            data.push(if dir.z.abs() > 1e-12 { -c.z / dir.z } else { 0.0 });
        }
    }
    DepthMap::new(cam.id, 32, 32, data).unwrap()
}
