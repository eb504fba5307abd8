mod common;

use common::*;
use rand::Rng;
use splatbench::raster::{render, render_backward, RenderSettings};
use splatbench::{GaussianCloud, Vec3};

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in 0..6u64 {
        let (cloud, cam, bg) = random_small_scene(seed, 1 + (seed as usize % 5));
        let weights = random_weights(seed + 100, 8 * 8 * 3);
        let s = RenderSettings { background: bg, parallel: false };
        let out = render(&cloud, &cam, &s).unwrap();
        let (grads, _) = render_backward(&cloud, &cam, &out, &weights, &s).unwrap();
        for slot in param_slots(&cloud) {
            let a = grad_of(&grads, cloud.sh_stride(), slot);
            let n = central_difference(&cloud, &cam, bg, &weights, slot, 1e-6);
            assert!(gradient_matches(a, n), "seed {seed} {slot:?}: analytic {a} numeric {n}");
        }
    }
}

#[test]
fn zero_loss_gradient_gives_zero_parameter_gradients() {
    let (cloud, cam, bg) = random_small_scene(3, 4);
    let s = RenderSettings { background: bg, parallel: true };
    let out = render(&cloud, &cam, &s).unwrap();
    let (g, vs) = render_backward(&cloud, &cam, &out, &vec![0.0; 8 * 8 * 3], &s).unwrap();
    assert!(g.is_zero());
    assert!(vs.summed.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn backward_rejects_foreign_output() {
    let (cloud, cam, bg) = random_small_scene(3, 4);
    let s = RenderSettings { background: bg, parallel: true };
    let out = render(&cloud, &cam, &s).unwrap();
    let smaller = cloud.select(&[0, 1]);
    assert!(render_backward(&smaller, &cam, &out, &vec![0.0; 192], &s).is_err());
    assert!(render_backward(&cloud, &cam, &out, &[0.0; 10], &s).is_err());
}

#[test]
fn compositing_weights_sum_to_one() {
    for seed in 0..20u64 {
        let (cloud, cam, bg) = random_small_scene(seed + 50, 5);
        let out = render(&cloud, &cam, &RenderSettings { background: bg, parallel: true }).unwrap();
        for row in 0..8 {
            for col in 0..8 {
                let total: f64 = out.pixel_weights(row, col).iter().map(|(_, w)| w).sum::<f64>()
                    + out.final_transmittance[row * 8 + col];
                assert!((total - 1.0).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn single_pixel_splat_has_equal_abs_and_summed_gradient() {
    // A tiny splat whose 3σ footprint fits inside one pixel center's neighborhood,
    // far enough from other pixel centers that only one pixel picks it up.
    let cam = splatbench::Camera::new(0, 10.0, 10.0, 4.0, 4.0, 8, 8, splatbench::Mat3::identity(), Vec3::zero()).unwrap();
    let mut cloud = GaussianCloud::<f64>::empty(0).unwrap();
    let z = 2.0;
    // screen position (4.6, 4.4), screen σ ≈ 0.1 px before dilation
    cloud.push_isotropic(Vec3::new(0.6 * z / 10.0, 0.4 * z / 10.0, z), 0.02, 0.0, [0.3, 0.1, 0.2]);
    let s = RenderSettings::default();
    let out = render(&cloud, &cam, &s).unwrap();
    // zero the loss gradient everywhere except pixel (4, 4)
    let mut d = vec![0.0; 8 * 8 * 3];
    d[(4 * 8 + 4) * 3] = 1.0;
    d[(4 * 8 + 4) * 3 + 2] = -0.5;
    let (_, vs) = render_backward(&cloud, &cam, &out, &d, &s).unwrap();
    for k in 0..2 {
        assert_eq!(vs.abs[0][k], vs.summed[0][k].abs());
    }
    assert_eq!(vs.visible[0], 1);
}

#[test]
fn abs_accumulation_dominates_summed() {
    for seed in 0..10u64 {
        let (cloud, cam, bg) = random_small_scene(seed + 7, 5);
        let s = RenderSettings { background: bg, parallel: true };
        let out = render(&cloud, &cam, &s).unwrap();
        let w = random_weights(seed, 192);
        let (_, vs) = render_backward(&cloud, &cam, &out, &w, &s).unwrap();
        for (a, b) in vs.abs.iter().zip(&vs.summed) {
            for k in 0..2 {
                assert!(a[k] + 1e-12 >= b[k].abs());
            }
        }
    }
}

#[test]
fn storage_order_does_not_change_the_image() {
    let (cloud, cam, bg) = random_small_scene(11, 5);
    let s = RenderSettings { background: bg, parallel: false };
    let a = render(&cloud, &cam, &s).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let b = render(&cloud.select(&perm), &cam, &s).unwrap();
    assert_eq!(a.image.data, b.image.data);
}

#[test]
fn thread_count_does_not_change_results() {
    let mut r = rng(5);
    let (mut cloud, _, _) = random_small_scene(5, 5);
    for _ in 0..200 {
        let i = r.random_range(0..5);
        cloud.push_copy_of(i);
        let last = cloud.len() - 1;
        cloud.means[last] += Vec3::new(r.random_range(-0.6..0.6), r.random_range(-0.6..0.6), r.random_range(-0.3..0.3));
    }
    let cam = splatbench::Camera::new(0, 40.0, 40.0, 24.0, 20.0, 48, 40, splatbench::Mat3::identity(), Vec3::new(0.0, 0.0, 3.0)).unwrap();
    let w = random_weights(1, 48 * 40 * 3);
    let seq = RenderSettings { background: [0.0; 3], parallel: false };
    let par = RenderSettings { background: [0.0; 3], parallel: true };
    let a = render(&cloud, &cam, &seq).unwrap();
    let b = render(&cloud, &cam, &par).unwrap();
    assert_eq!(a.image.data, b.image.data);
    let (ga, va) = render_backward(&cloud, &cam, &a, &w, &seq).unwrap();
    let (gb, vb) = render_backward(&cloud, &cam, &b, &w, &par).unwrap();
    assert_eq!(ga, gb);
    assert_eq!(va, vb);
}

#[test]
fn f32_and_f64_renders_agree() {
    let (cloud, cam, bg) = random_small_scene(21, 5);
    let a = render(&cloud, &cam, &RenderSettings { background: bg, parallel: true }).unwrap();
    let bg32 = bg.map(|v| v as f32);
    let b = render(&cloud.cast::<f32>(), &cam.cast::<f32>(), &RenderSettings { background: bg32, parallel: true }).unwrap();
    for (x, y) in a.image.data.iter().zip(&b.image.data) {
        assert!((x - *y as f64).abs() < 1e-4);
    }
}
