//! Dense initialization from per-image predicted depth: align each map to the SfM
//! points, refine, subsample, unproject, then drop floaters by multi-view voting.

pub mod align;
pub mod pfm;
pub mod refine;
pub mod select;

pub use align::{ransac_scale_shift, sfm_depth_correspondences, AlignmentResult, Correspondence, RansacConfig};
pub use pfm::{read_pfm, read_pfm_raw, write_pfm, write_pfm_raw};
pub use refine::{adaptive_subsample_mask, depth_gradient_mask, piecewise_refine, subsample_factors};
pub use select::{select_cameras, DEFAULT_CAMERA_LIMIT};

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::math::Vec3;
use crate::pointcloud::PointCloud;
use crate::scalar::Real;

/// Row-major depth with an explicit validity mask. Invalid pixels hold 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub camera: u32,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// Non-finite and non-positive values become invalid.
    pub fn new(camera: u32, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return invalid(format!("depth map of {width}x{height} given {} values", data.len()));
        }
        let mut d = Self { camera, width, height, valid: vec![true; data.len()], data };
        d.revalidate();
        Ok(d)
    }

    pub fn revalidate(&mut self) {
        for (v, ok) in self.data.iter_mut().zip(&mut self.valid) {
            if !(*ok && v.is_finite() && *v > 0.0) {
                *ok = false;
                *v = 0.0;
            }
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().zip(&self.valid).filter(|(_, ok)| **ok).map(|(v, _)| *v)
    }

    /// `s·d + b` on valid pixels; results that are not positive become invalid.
    pub fn affine(&self, scale: f64, shift: f64) -> Self {
        let mut out = self.clone();
        for (v, ok) in out.data.iter_mut().zip(&out.valid) {
            if *ok {
                *v = scale * *v + shift;
            }
        }
        out.revalidate();
        out
    }
}

/// World points for the selected valid pixels, through pixel centers, colored from `image`.
pub fn unproject<T: Real>(camera: &Camera<T>, depth: &DepthMap, mask: &[bool], image: Option<&Image<T>>) -> Result<PointCloud<T>> {
    if depth.width != camera.width || depth.height != camera.height || mask.len() != depth.data.len() {
        return invalid("depth map, mask and camera dimensions differ");
    }
    if let Some(im) = image {
        if im.width != camera.width || im.height != camera.height {
            return invalid("image and camera dimensions differ");
        }
    }
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    for row in 0..depth.height {
        for col in 0..depth.width {
            let k = row * depth.width + col;
            if !mask[k] || !depth.valid[k] {
                continue;
            }
            let u = T::from_usize_lossy(col) + T::lit(0.5);
            let v = T::from_usize_lossy(row) + T::lit(0.5);
            positions.push(camera.unproject(u, v, T::lit(depth.data[k])));
            colors.push(image.map_or([T::lit(0.5); 3], |im| im.pixel(row, col)));
        }
    }
    PointCloud::new(positions, colors)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Votes {
    pub floater: u32,
    pub surface: u32,
}

/// Per point, how many cameras see it clearly in front of their depth (`z < (1−τ)·d`)
/// versus at or behind it.
pub fn floater_votes<T: Real>(points: &[Vec3<T>], views: &[(&Camera<T>, &DepthMap)], margin: f64) -> Vec<Votes> {
    points
        .par_iter()
        .map(|p| {
            let mut votes = Votes::default();
            for (cam, depth) in views {
                let (u, v, z) = cam.project(*p);
                let (u, v, z) = (u.as_f64(), v.as_f64(), z.as_f64());
                if !(z > 0.0 && u >= 0.0 && v >= 0.0 && u < depth.width as f64 && v < depth.height as f64) {
                    continue;
                }
                let (row, col) = (v as usize, u as usize);
                if !depth.is_valid(row, col) {
                    continue;
                }
                if z < (1.0 - margin) * depth.get(row, col) {
                    votes.floater += 1;
                } else {
                    votes.surface += 1;
                }
            }
            votes
        })
        .collect()
}

/// Drop points whose floater share of votes exceeds `ratio`; points nobody sees stay.
pub fn remove_floaters<T: Real>(
    pc: &PointCloud<T>,
    views: &[(&Camera<T>, &DepthMap)],
    margin: f64,
    ratio: f64,
) -> Result<PointCloud<T>> {
    if !(0.0..1.0).contains(&margin) || !(0.0..=1.0).contains(&ratio) {
        return invalid("floater margin must be in [0, 1) and ratio in [0, 1]");
    }
    let votes = floater_votes(&pc.positions, views, margin);
    let keep: Vec<usize> = votes
        .iter()
        .enumerate()
        .filter(|(_, v)| {
            let total = v.floater + v.surface;
            total == 0 || (v.floater as f64 / total as f64) <= ratio
        })
        .map(|(i, _)| i)
        .collect();
    Ok(pc.select(&keep))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonodepthConfig {
    pub camera_limit: usize,
    pub ransac: RansacConfig,
    pub refine: bool,
    pub d_min: f64,
    pub d_max: f64,
    pub gradient_threshold: f64,
    pub floater_margin: f64,
    pub floater_ratio: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for MonodepthConfig {
    fn default() -> Self {
        Self {
            camera_limit: DEFAULT_CAMERA_LIMIT,
            ransac: RansacConfig::default(),
            refine: true,
            d_min: 5.0,
            d_max: 15.0,
            gradient_threshold: 0.05,
            floater_margin: 0.1,
            floater_ratio: 0.6,
            seed: 0,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub camera: u32,
    pub skipped: bool,
    pub reason: Option<String>,
    pub scale: Option<f64>,
    pub shift: Option<f64>,
    pub pairs: usize,
    pub inliers: usize,
    pub refined: bool,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonodepthReport {
    pub config: MonodepthConfig,
    pub selected: usize,
    pub images: Vec<ImageReport>,
    pub points_before_filter: usize,
    pub floaters_removed: usize,
    pub points: usize,
}

/// What the pipeline reads for each camera.
pub struct MonodepthInput<'a, T> {
    pub cameras: &'a [Camera<T>],
    /// Parallel to `cameras`; used for point colors.
    pub images: Option<&'a [Image<T>]>,
    pub sfm: &'a PointCloud<T>,
    /// Per camera, indices into `sfm` observed in that image. Without it every SfM point
    /// is projected into every image.
    pub observed: Option<&'a [Vec<usize>]>,
    /// Predicted depth keyed by camera id.
    pub depths: &'a BTreeMap<u32, DepthMap>,
}

struct ImageOutput<T> {
    report: ImageReport,
    aligned: Option<DepthMap>,
    points: PointCloud<T>,
}

fn process_image<T: Real>(k: usize, input: &MonodepthInput<'_, T>, cfg: &MonodepthConfig) -> ImageOutput<T> {
    let cam = &input.cameras[k];
    let mut report = ImageReport {
        camera: cam.id,
        skipped: true,
        reason: None,
        scale: None,
        shift: None,
        pairs: 0,
        inliers: 0,
        refined: false,
        points: 0,
    };
    let fail = |mut report: ImageReport, e: String| {
        log::warn!("monodepth: skipping camera {}: {e}", report.camera);
        report.reason = Some(e);
        ImageOutput { report, aligned: None, points: PointCloud::default() }
    };
    let Some(depth) = input.depths.get(&cam.id) else {
        return fail(report, "no depth map".into());
    };
    if depth.width != cam.width || depth.height != cam.height {
        return fail(report, format!("depth map is {}x{}, camera is {}x{}", depth.width, depth.height, cam.width, cam.height));
    }
    let pairs = match input.observed {
        Some(obs) => {
            let pts: Vec<Vec3<T>> = obs[k].iter().map(|&i| input.sfm.positions[i]).collect();
            sfm_depth_correspondences(cam, &pts, depth)
        }
        None => sfm_depth_correspondences(cam, &input.sfm.positions, depth),
    };
    report.pairs = pairs.len();
    let fit = match ransac_scale_shift(&pairs, &cfg.ransac, cfg.seed.wrapping_add(cam.id as u64)) {
        Ok(f) => f,
        Err(e) => return fail(report, e.to_string()),
    };
    report.scale = Some(fit.scale);
    report.shift = Some(fit.shift);
    report.inliers = fit.inlier_count;
    let mut aligned = depth.affine(fit.scale, fit.shift);
    if cfg.refine {
        let anchors: Vec<(f64, f64)> =
            pairs.iter().zip(&fit.inliers).filter(|(_, ok)| **ok).map(|(p, _)| (p.depth, p.sfm_depth)).collect();
        if let Ok(r) = piecewise_refine(depth, &anchors) {
            aligned = r;
            report.refined = true;
        }
    }
    let masks = adaptive_subsample_mask(&aligned, cfg.d_min, cfg.d_max)
        .and_then(|a| Ok((a, depth_gradient_mask(&aligned, cfg.gradient_threshold)?)));
    let (adaptive, gradient) = match masks {
        Ok(m) => m,
        Err(e) => return fail(report, e.to_string()),
    };
    let mask: Vec<bool> = adaptive.iter().zip(&gradient).map(|(a, b)| *a && *b).collect();
    let points = match unproject(cam, &aligned, &mask, input.images.map(|ims| &ims[k])) {
        Ok(p) => p,
        Err(e) => return fail(report, e.to_string()),
    };
    report.skipped = false;
    report.points = points.len();
    ImageOutput { report, aligned: Some(aligned), points }
}

pub fn monodepth_pipeline<T: Real>(input: &MonodepthInput<'_, T>, cfg: &MonodepthConfig) -> Result<(PointCloud<T>, MonodepthReport)> {
    if let Some(obs) = input.observed {
        if obs.len() != input.cameras.len() || obs.iter().flatten().any(|&i| i >= input.sfm.len()) {
            return invalid("observation lists do not match the cameras and SfM points");
        }
    }
    if let Some(ims) = input.images {
        if ims.len() != input.cameras.len() {
            return invalid("one image per camera required");
        }
    }
    let selected = select_cameras(input.cameras, cfg.camera_limit, cfg.seed);
    let outputs: Vec<ImageOutput<T>> = if cfg.parallel {
        selected.par_iter().map(|&k| process_image(k, input, cfg)).collect()
    } else {
        selected.iter().map(|&k| process_image(k, input, cfg)).collect()
    };
    let mut cloud = PointCloud::default();
    let mut views = Vec::new();
    for (o, &k) in outputs.iter().zip(&selected) {
        if let Some(d) = &o.aligned {
            cloud.extend(&o.points);
            views.push((&input.cameras[k], d));
        }
    }
    if views.is_empty() {
        return Err(Error::Pipeline(format!("none of the {} selected images could be aligned", selected.len())));
    }
    let before = cloud.len();
    let filtered = remove_floaters(&cloud, &views, cfg.floater_margin, cfg.floater_ratio)?;
    let report = MonodepthReport {
        config: cfg.clone(),
        selected: selected.len(),
        images: outputs.into_iter().map(|o| o.report).collect(),
        points_before_filter: before,
        floaters_removed: before - filtered.len(),
        points: filtered.len(),
    };
    Ok((filtered, report))
}

/// `<dir>/<camera id>.pfm` for every camera that has one; missing files are skipped.
pub fn load_depth_dir<T: Real>(dir: &Path, cameras: &[Camera<T>]) -> Result<BTreeMap<u32, DepthMap>> {
    let mut out = BTreeMap::new();
    for c in cameras {
        let p = dir.join(format!("{}.pfm", c.id));
        if p.exists() {
            out.insert(c.id, read_pfm(&p, c.id)?);
        } else {
            log::warn!("monodepth: no depth file {}", p.display());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::look_at;

    fn identity_cam(w: usize, h: usize) -> Camera<f64> {
        Camera::new(1, 10.0, 10.0, w as f64 / 2.0, h as f64 / 2.0, w, h, crate::math::Mat3::identity(), Vec3::zero()).unwrap()
    }

    #[test]
    fn center_pixel_unprojects_onto_the_axis() {
        let cam = identity_cam(4, 4);
        // pixel (1, 1) has its center at (1.5, 1.5); cx = cy = 2 sits at pixel (2, 2)'s corner,
        // so use a camera centered on a pixel center instead
        let cam = Camera::new(1, 10.0, 10.0, 2.5, 2.5, 4, 4, cam.rotation, cam.translation).unwrap();
        let d = DepthMap::new(1, 4, 4, vec![2.0; 16]).unwrap();
        let mut mask = vec![false; 16];
        mask[2 * 4 + 2] = true;
        let pc = unproject(&cam, &d, &mask, None).unwrap();
        assert_eq!(pc.positions, vec![Vec3::new(0.0, 0.0, 2.0)]);
        assert!(unproject(&cam, &d, &[false; 16], None).unwrap().is_empty());
    }

    #[test]
    fn floater_voting() {
        let cams: Vec<Camera<f64>> = (0..4)
            .map(|i| {
                let a = i as f64 * 0.3;
                let (r, t) = look_at(Vec3::new(a.sin() * 5.0, 0.0, -a.cos() * 5.0), Vec3::zero(), Vec3::new(0.0, -1.0, 0.0));
                Camera::new(i, 20.0, 20.0, 10.0, 10.0, 20, 20, r, t).unwrap()
            })
            .collect();
        let depths: Vec<DepthMap> = cams.iter().map(|c| DepthMap::new(c.id, 20, 20, vec![5.0; 400]).unwrap()).collect();
        let views: Vec<(&Camera<f64>, &DepthMap)> = cams.iter().zip(&depths).collect();
        let on_surface = cams[0].unproject(10.5, 10.5, 5.0);
        let floater = cams[0].unproject(10.5, 10.5, 2.5);
        let unseen = Vec3::new(0.0, 0.0, -6.0);
        let pc = PointCloud::new(vec![on_surface, floater, unseen], vec![[0.5; 3]; 3]).unwrap();
        let votes = floater_votes(&pc.positions, &views, 0.1);
        assert_eq!(votes[1].surface, 0);
        let kept = remove_floaters(&pc, &views, 0.1, 0.6).unwrap();
        assert_eq!(kept.positions, vec![on_surface, unseen]);
    }

    #[test]
    fn depth_map_validity() {
        let d = DepthMap::new(0, 2, 2, vec![1.0, -1.0, f64::NAN, 0.0]).unwrap();
        assert_eq!(d.valid, vec![true, false, false, false]);
        assert_eq!(d.data, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(DepthMap::new(0, 2, 2, vec![1.0]).is_err());
        assert_eq!(d.affine(-2.0, 1.0).valid, vec![false; 4]);
    }
}
