mod common;

use std::collections::BTreeMap;

use common::{brute_mask, cam_at, plane_depth, rng};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use splatbench::bench::{synth_scene, SynthConfig};
use splatbench::monodepth::{
    adaptive_subsample_mask, monodepth_pipeline, piecewise_refine, ransac_scale_shift, read_pfm, remove_floaters,
    select_cameras, write_pfm, Correspondence, DepthMap, MonodepthConfig, MonodepthInput, RansacConfig,
};
use splatbench::{Camera, PointCloud, Vec3};

#[test]
fn ransac_recovers_affine_with_outliers() {
    let mut r = rng(21);
    for trial in 0..10u64 {
        let (s, b) = (r.random_range(0.5..3.0), r.random_range(-0.4..1.0));
        let mut pairs = Vec::new();
        for k in 0..200 {
            let d: f64 = r.random_range(1.0..10.0);
            let mut ds = s * d + b;
            if k % 5 == 0 {
                // 20% gross outliers
                ds *= r.random_range(1.3..2.0);
            }
            pairs.push(Correspondence { row: k, col: 0, sfm_depth: ds, depth: d });
        }
        pairs.shuffle(&mut r);
        let cfg = RansacConfig::default();
        assert_eq!((cfg.samples_per_iteration, cfg.confidence, cfg.inlier_threshold, cfg.max_iterations), (4, 0.999, 0.01, 2500));
        let fit = ransac_scale_shift(&pairs, &cfg, trial).unwrap();
        assert!((fit.scale - s).abs() < 1e-6 && (fit.shift - b).abs() < 1e-6, "{fit:?} vs {s} {b}");
        assert_eq!(fit.inlier_count, 160);
        for (p, inl) in pairs.iter().zip(&fit.inliers) {
            if *inl {
                assert!((fit.scale * p.depth + fit.shift - p.sfm_depth).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn piecewise_refine_worked_example() {
    let d = DepthMap::new(0, 3, 1, vec![2.5, 1.0, 3.0]).unwrap();
    let out = piecewise_refine(&d, &[(1.0, 10.0), (2.0, 20.0), (3.0, 30.0)]).unwrap();
    assert_eq!(out.data, vec![25.0, 10.0, 30.0]);
}

#[test]
fn adaptive_mask_matches_brute_force() {
    let mut r = rng(3);
    for t in 0..50 {
        let (w, h) = (r.random_range(8..48), r.random_range(8..48));
        let base: f64 = r.random_range(0.5..20.0);
        let mut data: Vec<f64> = (0..w * h).map(|_| base + r.random_range(0.0..base)).collect();
        if t % 3 == 0 {
            // a few far outliers that the fences must absorb
            for _ in 0..5 {
                let k = r.random_range(0..w * h);
                data[k] *= 50.0;
            }
        }
        let d = DepthMap::new(0, w, h, data.clone()).unwrap();
        assert_eq!(adaptive_subsample_mask(&d, 5.0, 15.0).unwrap(), brute_mask(&data, w, 5.0, 15.0), "field {t}");
    }
}

#[test]
fn floater_in_front_of_surface_is_removed() {
    let cams: Vec<Camera<f64>> = [(-0.5, 0.0), (0.5, 0.0), (0.0, 0.5), (0.0, -0.5), (0.3, 0.3)]
        .iter()
        .enumerate()
        .map(|(i, (x, y))| cam_at(i as u32, Vec3::new(*x, *y, -4.0)))
        .collect();
    let depths: Vec<DepthMap> = cams.iter().map(plane_depth).collect();
    let views: Vec<(&Camera<f64>, &DepthMap)> = cams.iter().zip(&depths).collect();
    let mut pos = vec![Vec3::new(0.0, 0.0, -2.0)];
    for (x, y) in [(0.0, 0.0), (0.2, -0.1), (-0.3, 0.25), (0.1, 0.3)] {
        pos.push(Vec3::new(x, y, 0.0));
    }
    let pc = PointCloud::new(pos.clone(), vec![[0.5; 3]; pos.len()]).unwrap();
    let kept = remove_floaters(&pc, &views, 0.1, 0.6).unwrap();
    assert_eq!(kept.positions, pos[1..].to_vec());
}

#[test]
fn pfm_round_trip_keeps_invalid_pixels_invalid() {
    let cam = cam_at(9, Vec3::new(0.0, 0.0, -4.0));
    let mut d = plane_depth(&cam);
    d.data[5] = f64::NAN;
    d.data[40] = -1.0;
    d.revalidate();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("9.pfm");
    write_pfm(&p, &d).unwrap();
    let back = read_pfm(&p, cam.id).unwrap();
    assert_eq!(back.valid, d.valid);
    for k in 0..d.data.len() {
        if d.valid[k] {
            assert!((back.data[k] - d.data[k]).abs() <= 1e-6 * d.data[k]);
        }
    }
}

#[test]
fn camera_selection_is_deterministic_and_sized() {
    let mut r = rng(8);
    let cams: Vec<Camera<f64>> = (0..40)
        .map(|i| cam_at(i, Vec3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), -5.0)))
        .collect();
    let a = select_cameras(&cams, 12, 1);
    assert_eq!(a.len(), 12);
    assert!(a.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(a, select_cameras(&cams, 12, 1));
}

/// Full pipeline on the synthetic scene with depth stored as an affine transform of the
/// true depth: every output point must sit on the rendered surface of some camera.
#[test]
fn pipeline_recovers_surface_of_synthetic_scene() {
    let s = synth_scene::<f64>(&SynthConfig::default()).unwrap();
    let (scale, shift) = (2.0, 0.5);
    let dir = tempfile::tempdir().unwrap();
    s.write_dir(dir.path(), scale, shift).unwrap();
    let depths: BTreeMap<u32, DepthMap> = s
        .scene
        .cameras
        .iter()
        .map(|c| (c.id, read_pfm(&dir.path().join("depth").join(format!("{}.pfm", c.id)), c.id).unwrap()))
        .collect();
    let observed: Vec<Vec<usize>> = (0..s.scene.cameras.len())
        .map(|k| s.tracks.iter().enumerate().filter(|(_, t)| t.iter().any(|e| e.0 == k)).map(|(i, _)| i).collect())
        .collect();
    let input = MonodepthInput {
        cameras: &s.scene.cameras,
        images: Some(&s.scene.images),
        sfm: &s.sfm,
        observed: Some(&observed),
        depths: &depths,
    };
    let (pc, report) = monodepth_pipeline(&input, &MonodepthConfig::default()).unwrap();
    assert!(pc.len() > 20, "{} points", pc.len());
    let aligned: Vec<_> = report.images.iter().filter(|r| !r.skipped).collect();
    assert!(aligned.len() >= 10);
    for r in &aligned {
        // stored depth is (z − shift)/scale, so alignment maps it back with (scale, shift);
        // SfM points sit off pixel centers, so the fit is good to the inlier threshold
        assert!((r.scale.unwrap() / scale - 1.0).abs() < 1e-2 && (r.shift.unwrap() - shift).abs() < 1e-2 * s.scene.extent, "{r:?}");
    }
    let extent = s.scene.extent;
    for p in &pc.positions {
        let best = s
            .scene
            .cameras
            .iter()
            .zip(&s.depths)
            .filter_map(|(c, d)| {
                let (u, v, z) = c.project(*p);
                let (row, col) = (v.floor(), u.floor());
                (z > 0.0 && row >= 0.0 && col >= 0.0 && (row as usize) < d.height && (col as usize) < d.width)
                    .then_some((row as usize, col as usize))
                    .filter(|&(r, c)| d.is_valid(r, c))
                    .map(|(r, cc)| (z - d.get(r, cc)).abs())
            })
            .fold(f64::INFINITY, f64::min);
        assert!(best <= 1e-3 * extent, "point {p:?} is {best} off every surface");
    }
}

#[test]
fn noisy_depth_still_aligns() {
    let mut r = rng(30);
    let noise = Normal::new(0.0, 0.001).unwrap();
    let pairs: Vec<Correspondence> = (0..300)
        .map(|k| {
            let d: f64 = r.random_range(2.0..6.0);
            Correspondence { row: k, col: 1, sfm_depth: 1.5 * d - 0.2 + noise.sample(&mut r), depth: d }
        })
        .collect();
    let fit = ransac_scale_shift(&pairs, &RansacConfig::default(), 0).unwrap();
    assert!((fit.scale - 1.5).abs() < 0.01 && (fit.shift + 0.2).abs() < 0.03);
    assert!(fit.inlier_count > 280);
}
