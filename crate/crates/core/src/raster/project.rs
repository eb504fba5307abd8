//! EWA projection of 3D Gaussians to screen-space conics.

use crate::camera::Camera;
use crate::gaussians::GaussianCloud;
use crate::math::{quat_normalize, quat_to_mat_unit, Mat3, Vec3};
use crate::scalar::{sigmoid, Real};
use crate::sh::sh_color_unclamped;

/// Splats with camera-space depth at or below this are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Added to the diagonal of every screen covariance, in px².
pub const LOWPASS_DILATION: f64 = 0.3;
/// Screen footprint radius in standard deviations.
pub const FOOTPRINT_SIGMAS: f64 = 3.0;

/// One Gaussian after projection into a view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenGaussian<T> {
    pub mean: [T; 2],
    /// Dilated screen covariance `(xx, xy, yy)`.
    pub cov: [T; 3],
    /// Inverse of `cov`, `(a, b, c)` with `a·dx² + 2b·dx·dy + c·dy²`.
    pub conic: [T; 3],
    pub depth: T,
    /// Pixel radius of the footprint.
    pub radius: T,
    pub culled: bool,
}

/// Projection plus everything the compositor and its adjoint need.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Projected<T> {
    pub screen: ScreenGaussian<T>,
    pub opacity: T,
    /// Color after the `≥ 0` clamp.
    pub color: [T; 3],
    /// Channels whose unclamped value was negative (zero gradient).
    pub clamped: [bool; 3],
    /// Camera-space mean.
    pub t_cam: Vec3<T>,
    /// Inclusive tile range `(x0, y0, x1, y1)`; empty when culled.
    pub tiles: Option<(usize, usize, usize, usize)>,
}

impl<T: Real> Projected<T> {
    fn culled(depth: T) -> Self {
        let z = T::zero();
        Self {
            screen: ScreenGaussian {
                mean: [z; 2],
                cov: [z; 3],
                conic: [z; 3],
                depth,
                radius: z,
                culled: true,
            },
            opacity: z,
            color: [z; 3],
            clamped: [false; 3],
            t_cam: Vec3::zero(),
            tiles: None,
        }
    }
}

/// Screen-space mean, dilated 2×2 covariance and depth of Gaussian `index` in `camera`.
pub fn project_gaussian<T: Real>(
    index: usize,
    cloud: &GaussianCloud<T>,
    camera: &Camera<T>,
) -> ScreenGaussian<T> {
    project_full(index, cloud, camera, usize::MAX).screen
}

/// Camera-space covariance pieces: `W` (view rotation) and the local affine Jacobian rows.
#[inline]
pub(crate) fn jacobian<T: Real>(camera: &Camera<T>, t: Vec3<T>) -> [[T; 3]; 2] {
    let inv_z = T::one() / t.z;
    let inv_z2 = inv_z * inv_z;
    [
        [camera.fx * inv_z, T::zero(), -camera.fx * t.x * inv_z2],
        [T::zero(), camera.fy * inv_z, -camera.fy * t.y * inv_z2],
    ]
}

/// `T = J·W`, a 2×3 matrix.
#[inline]
pub(crate) fn jw<T: Real>(j: &[[T; 3]; 2], w: &Mat3<T>) -> [[T; 3]; 2] {
    let mut out = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            out[r][c] = j[r][0] * w.m[0][c] + j[r][1] * w.m[1][c] + j[r][2] * w.m[2][c];
        }
    }
    out
}

/// World covariance `M·Mᵀ` with `M = R·diag(s)`, returning `(Σ, R, s)`.
#[inline]
pub(crate) fn world_covariance<T: Real>(
    cloud: &GaussianCloud<T>,
    i: usize,
) -> (Mat3<T>, Mat3<T>, Vec3<T>) {
    let r = quat_to_mat_unit(&quat_normalize(&cloud.rotations[i]));
    let s = cloud.scale(i);
    let m = r.mul_mat(&Mat3::diag(s));
    (m.mul_mat(&m.transpose()), r, s)
}

pub(crate) fn project_full<T: Real>(
    i: usize,
    cloud: &GaussianCloud<T>,
    camera: &Camera<T>,
    tile_size: usize,
) -> Projected<T> {
    let t = camera.world_to_camera(cloud.means[i]);
    if t.z <= T::lit(NEAR_PLANE) {
        return Projected::culled(t.z);
    }
    let (sigma, _, _) = world_covariance(cloud, i);
    let j = jacobian(camera, t);
    let tm = jw(&j, &camera.rotation);
    // Σ2d = T Σ Tᵀ
    let mut ts = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            ts[r][c] = tm[r][0] * sigma.m[0][c] + tm[r][1] * sigma.m[1][c] + tm[r][2] * sigma.m[2][c];
        }
    }
    let dot = |a: &[T; 3], b: &[T; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let dil = T::lit(LOWPASS_DILATION);
    let cxx = dot(&ts[0], &tm[0]) + dil;
    let cxy = dot(&ts[0], &tm[1]);
    let cyy = dot(&ts[1], &tm[1]) + dil;
    let det = cxx * cyy - cxy * cxy;
    if !(det > T::zero()) || !det.is_finite() {
        return Projected::culled(t.z);
    }
    let inv_det = T::one() / det;
    let conic = [cyy * inv_det, -cxy * inv_det, cxx * inv_det];
    let mean = [
        camera.fx * t.x / t.z + camera.cx,
        camera.fy * t.y / t.z + camera.cy,
    ];
    let (lmax, _) = crate::math::sym2_eigenvalues(cxx, cxy, cyy);
    let radius = (T::lit(FOOTPRINT_SIGMAS) * lmax.sqrt()).ceil();

    let w = T::from_usize_lossy(camera.width);
    let h = T::from_usize_lossy(camera.height);
    let screen = ScreenGaussian {
        mean,
        cov: [cxx, cxy, cyy],
        conic,
        depth: t.z,
        radius,
        culled: false,
    };
    let (x0, x1, y0, y1) = (mean[0] - radius, mean[0] + radius, mean[1] - radius, mean[1] + radius);
    let tiles = if x1 < T::zero() || y1 < T::zero() || x0 >= w || y0 >= h || tile_size == usize::MAX {
        None
    } else {
        let ts = T::from_usize_lossy(tile_size);
        let tiles_x = camera.width.div_ceil(tile_size);
        let tiles_y = camera.height.div_ceil(tile_size);
        let clampi = |v: T, hi: usize| -> usize {
            let f = (v / ts).floor().max(T::zero());
            f.to_usize().unwrap_or(hi).min(hi)
        };
        Some((
            clampi(x0, tiles_x - 1),
            clampi(y0, tiles_y - 1),
            clampi(x1, tiles_x - 1),
            clampi(y1, tiles_y - 1),
        ))
    };
    if tile_size != usize::MAX && tiles.is_none() {
        return Projected {
            screen: ScreenGaussian {
                culled: true,
                ..screen
            },
            ..Projected::culled(t.z)
        };
    }

    let center = camera.center();
    let v = cloud.means[i] - center;
    let dir = v.scale(T::one() / v.norm());
    let raw = sh_color_unclamped(cloud.sh_degree(), cloud.sh_of(i), dir);
    let clamped = raw.map(|c| c < T::zero());
    let color = raw.map(|c| c.max(T::zero()));
    Projected {
        screen,
        opacity: sigmoid(cloud.opacity_logits[i]),
        color,
        clamped,
        t_cam: t,
        tiles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{look_at, quat_identity};

    fn cloud_with(mean: Vec3<f64>, sigma: f64) -> GaussianCloud<f64> {
        let mut c = GaussianCloud::empty(0).unwrap();
        c.push(mean, Vec3::splat(sigma.ln()), quat_identity(), 0.0, &[[0.0; 3]]).unwrap();
        c
    }

    #[test]
    fn axis_point_lands_on_principal_point() {
        let cam = Camera::new(0, 40.0, 40.0, 16.0, 12.0, 32, 24, Mat3::identity(), Vec3::zero()).unwrap();
        let s = project_gaussian(0, &cloud_with(Vec3::new(0.0, 0.0, 3.0), 0.2), &cam);
        assert!(!s.culled);
        assert_eq!(s.mean, [16.0, 12.0]);
        assert_eq!(s.depth, 3.0);
        // isotropic world σ on the axis with fx = fy: isotropic screen covariance
        assert!((s.cov[0] - s.cov[2]).abs() < 1e-12);
        assert!(s.cov[1].abs() < 1e-12);
        let expect = (40.0 * 0.2 / 3.0f64).powi(2) + LOWPASS_DILATION;
        assert!((s.cov[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn near_plane_culls() {
        let cam = Camera::new(0, 40.0, 40.0, 16.0, 12.0, 32, 24, Mat3::identity(), Vec3::zero()).unwrap();
        assert!(project_gaussian(0, &cloud_with(Vec3::new(0.0, 0.0, 0.005), 0.2), &cam).culled);
        assert!(project_gaussian(0, &cloud_with(Vec3::new(0.0, 0.0, -1.0), 0.2), &cam).culled);
    }

    #[test]
    fn mean_matches_direct_pinhole_projection() {
        let mut seed = 7u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..50 {
            let eye = Vec3::new(rnd() * 4.0, rnd() * 4.0, rnd() * 4.0 - 6.0);
            let (r, t) = look_at(eye, Vec3::new(rnd() * 0.3, rnd() * 0.3, rnd() * 0.3), Vec3::new(0.0, -1.0, 0.0));
            let cam = Camera::new(1, 50.0 + rnd(), 48.0, 32.0, 30.0, 64, 60, r, t).unwrap();
            let p = Vec3::new(rnd(), rnd(), rnd());
            let s = project_gaussian(0, &cloud_with(p, 0.1), &cam);
            // oracle: K·[R|t]·p with homogeneous divide
            let k = [[cam.fx, 0.0, cam.cx], [0.0, cam.fy, cam.cy], [0.0, 0.0, 1.0]];
            let rt = |row: usize| r.m[row][0] * p.x + r.m[row][1] * p.y + r.m[row][2] * p.z + [t.x, t.y, t.z][row];
            let pc = [rt(0), rt(1), rt(2)];
            let h: Vec<f64> = (0..3).map(|i| k[i][0] * pc[0] + k[i][1] * pc[1] + k[i][2] * pc[2]).collect();
            assert!((s.mean[0] - h[0] / h[2]).abs() < 1e-9);
            assert!((s.mean[1] - h[1] / h[2]).abs() < 1e-9);
            assert!((s.depth - pc[2]).abs() < 1e-12);
        }
    }
}
