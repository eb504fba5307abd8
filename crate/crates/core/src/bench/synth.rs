//! Procedural ground-truth scene: random Gaussians seen from a ring of cameras.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{invalid, IoContext, Result};
use crate::gaussians::GaussianCloud;
use crate::init::{ColmapCamera, ColmapImage, ColmapModel, ColmapPoint};
use crate::math::{look_at, mat_to_quat, quat_normalize, Vec3};
use crate::monodepth::{write_pfm, DepthMap};
use crate::pointcloud::PointCloud;
use crate::raster::{render, RenderSettings};
use crate::scalar::{logit, Real};
use crate::scene::{SceneDescriptor, TrainScene};
use crate::sh::rgb_to_sh_dc;

/// Accumulated opacity below which a pixel has no depth.
const DEPTH_ALPHA_MIN: f64 = 0.5;
/// Relative depth agreement for a view to count as observing an SfM point.
const TRACK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub gaussians: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub holdout_every: usize,
    /// SfM-like surface points, spread evenly over the views.
    pub sfm_points: usize,
    pub camera_distance: f64,
    /// Radius of the ball holding the Gaussian centers.
    pub object_radius: f64,
    /// Gaussians are grouped around this many centers with shared base colors; 0
    /// scatters them uniformly.
    pub clusters: usize,
    /// Standard deviation of member offsets around a cluster center.
    pub cluster_spread: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            gaussians: 100,
            views: 20,
            width: 64,
            height: 64,
            holdout_every: 8,
            sfm_points: 100,
            camera_distance: 5.0,
            object_radius: 1.0,
            clusters: 8,
            cluster_spread: 0.15,
            min_scale: 0.08,
            max_scale: 0.25,
            seed: 0,
        }
    }
}

pub struct SynthScene<T> {
    pub truth: GaussianCloud<T>,
    pub scene: TrainScene<T>,
    /// Image names in camera order; the holdout split follows this order.
    pub names: Vec<String>,
    pub sfm: PointCloud<T>,
    /// Per SfM point, the `(camera index, pixel x, pixel y)` observations.
    pub tracks: Vec<Vec<(usize, f64, f64)>>,
    /// Expected camera-space depth per view, invalid where the object is absent.
    pub depths: Vec<DepthMap>,
}

fn ring_cameras<T: Real>(cfg: &SynthConfig) -> Result<Vec<Camera<T>>> {
    let f = cfg.width.max(cfg.height) as f64;
    (0..cfg.views)
        .map(|i| {
            let az = 2.0 * PI * i as f64 / cfg.views as f64;
            let el: f64 = if i % 2 == 0 { 0.45 } else { 0.1 };
            let d = cfg.camera_distance;
            let eye = Vec3::new(d * el.cos() * az.cos(), -d * el.sin(), d * el.cos() * az.sin());
            let (r, t) = look_at(eye.cast(), Vec3::zero(), Vec3::new(T::zero(), -T::one(), T::zero()));
            Camera::new(
                i as u32 + 1,
                T::lit(f),
                T::lit(f),
                T::lit(cfg.width as f64 / 2.0),
                T::lit(cfg.height as f64 / 2.0),
                cfg.width,
                cfg.height,
                r,
                t,
            )
        })
        .collect()
}

fn ball_point(rng: &mut ChaCha8Rng, radius: f64) -> Vec3<f64> {
    loop {
        let p = [0; 3].map(|_| rng.random_range(-1.0..1.0));
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return Vec3::from_array(p.map(|v| v * radius));
        }
    }
}

fn smooth_color(p: Vec3<f64>) -> [f64; 3] {
    [0.0, 2.1, 4.2].map(|ph: f64| 0.5 + 0.35 * (1.7 * p.x + 1.3 * p.y - 0.9 * p.z + ph).sin())
}

fn ground_truth<T: Real>(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<GaussianCloud<T>> {
    let mut g = GaussianCloud::with_capacity(0, cfg.gaussians)?;
    let (lo, hi) = (cfg.min_scale.ln(), cfg.max_scale.ln());
    let centers: Vec<Vec3<f64>> = (0..cfg.clusters).map(|_| ball_point(rng, cfg.object_radius * 0.8)).collect();
    for i in 0..cfg.gaussians {
        let (mean, base) = if centers.is_empty() {
            let m = ball_point(rng, cfg.object_radius);
            (m, smooth_color(m))
        } else {
            let c = centers[i % centers.len()];
            let off: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(rng));
            (c + Vec3::from_array(off).scale(cfg.cluster_spread), smooth_color(c))
        };
        let log_scale = Vec3::from_array([0; 3].map(|_| rng.random_range(lo..hi)));
        let q: [f64; 4] = [0; 4].map(|_| StandardNormal.sample(rng));
        let opacity = rng.random_range(0.6..0.95);
        let rgb = base.map(|b| (b + rng.random_range(-0.08..0.08)).clamp(0.05, 0.95));
        g.push(
            mean.cast(),
            log_scale.cast(),
            quat_normalize(&q).map(T::lit),
            logit(T::lit(opacity)),
            &[rgb.map(|c| rgb_to_sh_dc(T::lit(c)))],
        )?;
    }
    Ok(g)
}

/// Alpha-weighted camera-space depth of the render.
fn expected_depth<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera<T>, settings: &RenderSettings<T>) -> Result<DepthMap> {
    let out = render(cloud, cam, settings)?;
    let z: Vec<f64> = cloud.means.iter().map(|m| cam.world_to_camera(*m).z.as_f64()).collect();
    let mut data = vec![0.0; cam.width * cam.height];
    for row in 0..cam.height {
        for col in 0..cam.width {
            let w = out.pixel_weights(row, col);
            let acc: f64 = w.iter().map(|(_, a)| a.as_f64()).sum();
            if acc >= DEPTH_ALPHA_MIN {
                data[row * cam.width + col] = w.iter().map(|(i, a)| a.as_f64() * z[*i]).sum::<f64>() / acc;
            }
        }
    }
    DepthMap::new(cam.id, cam.width, cam.height, data)
}

pub fn synth_scene<T: Real>(cfg: &SynthConfig) -> Result<SynthScene<T>> {
    if cfg.gaussians == 0 || cfg.views == 0 || cfg.width < 11 || cfg.height < 11 {
        return invalid("synthetic scene needs Gaussians, views and images of at least 11×11");
    }
    if !(cfg.min_scale > 0.0 && cfg.max_scale > cfg.min_scale) {
        return invalid("synthetic scale range must satisfy 0 < min < max");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let truth = ground_truth::<T>(cfg, &mut rng)?;
    let cameras = ring_cameras::<T>(cfg)?;
    let settings = RenderSettings { background: [T::zero(); 3], parallel: true };
    let images = cameras.iter().map(|c| Ok(render(&truth, c, &settings)?.image.clamped())).collect::<Result<Vec<_>>>()?;
    let depths = cameras.iter().map(|c| expected_depth(&truth, c, &settings)).collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = (0..cfg.views).map(|i| format!("view_{i:03}.png")).collect();

    // Surface points: unproject random covered pixels, then list every view that sees
    // the point at its own depth.
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut tracks = Vec::new();
    let mut attempts = 0;
    while positions.len() < cfg.sfm_points && attempts < cfg.sfm_points * 200 {
        let v = attempts % cfg.views;
        attempts += 1;
        let (col, row) = (rng.random_range(0..cfg.width), rng.random_range(0..cfg.height));
        let d = depths[v].get(row, col);
        if d <= 0.0 {
            continue;
        }
        let cam = &cameras[v];
        let p = cam.unproject(T::lit(col as f64 + 0.5), T::lit(row as f64 + 0.5), T::lit(d));
        let mut track = Vec::new();
        for (k, c) in cameras.iter().enumerate() {
            let (u, w, z) = c.project(p);
            let (u, w, z) = (u.as_f64(), w.as_f64(), z.as_f64());
            if z <= 0.0 || u < 0.0 || w < 0.0 || u >= cfg.width as f64 || w >= cfg.height as f64 {
                continue;
            }
            let dk = depths[k].get(w as usize, u as usize);
            if dk > 0.0 && (dk - z).abs() <= TRACK_TOLERANCE * z {
                track.push((k, u, w));
            }
        }
        positions.push(p);
        colors.push(images[v].pixel(row, col));
        tracks.push(track);
    }
    let sfm = PointCloud::new(positions, colors)?;

    let ids: Vec<u32> = cameras.iter().map(|c| c.id).collect();
    let (train_ids, test_ids) = SceneDescriptor::<T>::holdout_every(&ids, cfg.holdout_every);
    let index = |id: &u32| ids.iter().position(|x| x == id).expect("own id");
    let train = train_ids.iter().map(index).collect();
    let test = test_ids.iter().map(index).collect();
    let scene = TrainScene::new(cameras, images, train, test)?;
    Ok(SynthScene { truth, scene, names, sfm, tracks, depths })
}

impl<T: Real> SynthScene<T> {
    /// COLMAP text model with observations, PNG images and PFM depth maps:
    /// `images/`, `sparse/0/`, `depth/<camera id>.pfm`, plus `truth.ply`.
    ///
    /// Depths are written as `(z − shift)/scale` to mimic an unaligned predictor;
    /// pixels without depth are written as 0.
    pub fn write_dir(&self, dir: &Path, depth_scale: f64, depth_shift: f64) -> Result<()> {
        let images_dir = dir.join("images");
        let depth_dir = dir.join("depth");
        let sparse = dir.join("sparse").join("0");
        for d in [&images_dir, &depth_dir, &sparse] {
            fs::create_dir_all(d).at(d)?;
        }
        let mut model = ColmapModel::default();
        let mut points2d: Vec<Vec<(f64, f64, i64)>> = vec![Vec::new(); self.scene.cameras.len()];
        for (pid, (track, (p, c))) in
            self.tracks.iter().zip(self.sfm.positions.iter().zip(&self.sfm.colors)).enumerate()
        {
            let mut entries = Vec::with_capacity(track.len());
            for &(k, u, v) in track {
                entries.push((self.scene.cameras[k].id, points2d[k].len() as u32));
                points2d[k].push((u, v, pid as i64 + 1));
            }
            model.points.push(ColmapPoint {
                id: pid as u64 + 1,
                xyz: p.cast::<f64>().to_array(),
                rgb: c.map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8),
                error: 0.0,
                track: entries,
            });
        }
        for (k, cam) in self.scene.cameras.iter().enumerate() {
            model.cameras.insert(
                cam.id,
                ColmapCamera {
                    id: cam.id,
                    model: "PINHOLE".into(),
                    width: cam.width as u64,
                    height: cam.height as u64,
                    params: [cam.fx, cam.fy, cam.cx, cam.cy].map(|v| v.as_f64()).to_vec(),
                },
            );
            let q = mat_to_quat(&cam.rotation.cast::<f64>());
            model.images.push(ColmapImage {
                id: cam.id,
                qvec: q,
                tvec: cam.translation.cast::<f64>().to_array(),
                camera_id: cam.id,
                name: self.names[k].clone(),
                points2d: std::mem::take(&mut points2d[k]),
            });
            self.scene.images[k].save_png(&images_dir.join(&self.names[k]))?;
            let mut pred = self.depths[k].clone();
            for v in &mut pred.data {
                if *v > 0.0 {
                    *v = (*v - depth_shift) / depth_scale;
                }
            }
            write_pfm(&depth_dir.join(format!("{}.pfm", cam.id)), &pred)?;
        }
        model.write_text(&sparse)?;
        crate::init::write_gaussian_ply(&dir.join("truth.ply"), &self.truth)
    }

    /// Image paths keyed by camera id, relative to a directory written by [`Self::write_dir`].
    pub fn image_paths(&self, dir: &Path) -> BTreeMap<u32, std::path::PathBuf> {
        self.scene.cameras.iter().zip(&self.names).map(|(c, n)| (c.id, dir.join("images").join(n))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scene_shape() {
        let s = synth_scene::<f64>(&SynthConfig::default()).unwrap();
        assert_eq!(s.truth.len(), 100);
        assert_eq!(s.scene.cameras.len(), 20);
        assert_eq!(s.scene.test, vec![0, 8, 16]);
        assert_eq!(s.sfm.len(), 100);
        // the object is in view and not clipped by the frame
        for im in &s.scene.images {
            let lit = im.data.iter().filter(|v| **v > 0.05).count();
            assert!(lit > im.data.len() / 10, "{lit}");
            for r in [0, im.height - 1] {
                for c in 0..im.width {
                    assert!(im.pixel(r, c).iter().all(|v| *v < 0.5));
                }
            }
        }
        assert!(s.tracks.iter().all(|t| !t.is_empty()));
    }
}
