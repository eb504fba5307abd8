//! Real spherical harmonics up to degree 3 in the ordering and sign convention
//! used by the reference Gaussian splatting renderer.
//!
//! Colors are `Σ c_k·Y_k(dir) + 0.5`, clamped at zero when rendering.

use crate::error::{invalid, Result};
use crate::math::Vec3;
use crate::scalar::Real;

pub const MAX_SH_DEGREE: usize = 3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

#[inline]
pub const fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

pub fn rgb_to_sh_dc<T: Real>(rgb: T) -> T {
    (rgb - T::lit(0.5)) / T::lit(SH_C0)
}

pub fn sh_dc_to_rgb<T: Real>(dc: T) -> T {
    dc * T::lit(SH_C0) + T::lit(0.5)
}

/// Basis values `Y_k(dir)` for `k < (degree+1)²`, written into `out`.
pub fn sh_basis<T: Real>(degree: usize, dir: Vec3<T>, out: &mut [T; 16]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let c = T::lit;
    out[0] = c(SH_C0);
    if degree == 0 {
        return;
    }
    out[1] = -c(SH_C1) * y;
    out[2] = c(SH_C1) * z;
    out[3] = -c(SH_C1) * x;
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out[4] = c(SH_C2[0]) * xy;
    out[5] = c(SH_C2[1]) * yz;
    out[6] = c(SH_C2[2]) * (c(2.0) * zz - xx - yy);
    out[7] = c(SH_C2[3]) * xz;
    out[8] = c(SH_C2[4]) * (xx - yy);
    if degree == 2 {
        return;
    }
    out[9] = c(SH_C3[0]) * y * (c(3.0) * xx - yy);
    out[10] = c(SH_C3[1]) * xy * z;
    out[11] = c(SH_C3[2]) * y * (c(4.0) * zz - xx - yy);
    out[12] = c(SH_C3[3]) * z * (c(2.0) * zz - c(3.0) * xx - c(3.0) * yy);
    out[13] = c(SH_C3[4]) * x * (c(4.0) * zz - xx - yy);
    out[14] = c(SH_C3[5]) * z * (xx - yy);
    out[15] = c(SH_C3[6]) * x * (xx - c(3.0) * yy);
}

/// Partial derivatives of each basis polynomial with respect to (x, y, z),
/// treating the components as independent.
pub fn sh_basis_grad<T: Real>(degree: usize, dir: Vec3<T>, out: &mut [Vec3<T>; 16]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let c = T::lit;
    let zero = T::zero();
    out[0] = Vec3::zero();
    if degree == 0 {
        return;
    }
    let c1 = c(SH_C1);
    out[1] = Vec3::new(zero, -c1, zero);
    out[2] = Vec3::new(zero, zero, c1);
    out[3] = Vec3::new(-c1, zero, zero);
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let two = c(2.0);
    out[4] = Vec3::new(y, x, zero).scale(c(SH_C2[0]));
    out[5] = Vec3::new(zero, z, y).scale(c(SH_C2[1]));
    out[6] = Vec3::new(-two * x, -two * y, c(4.0) * z).scale(c(SH_C2[2]));
    out[7] = Vec3::new(z, zero, x).scale(c(SH_C2[3]));
    out[8] = Vec3::new(two * x, -two * y, zero).scale(c(SH_C2[4]));
    if degree == 2 {
        return;
    }
    let three = c(3.0);
    out[9] = Vec3::new(c(6.0) * x * y, three * xx - three * yy, zero).scale(c(SH_C3[0]));
    out[10] = Vec3::new(y * z, x * z, x * y).scale(c(SH_C3[1]));
    out[11] = Vec3::new(-two * x * y, c(4.0) * zz - xx - three * yy, c(8.0) * y * z)
        .scale(c(SH_C3[2]));
    out[12] = Vec3::new(
        -c(6.0) * x * z,
        -c(6.0) * y * z,
        c(6.0) * zz - three * xx - three * yy,
    )
    .scale(c(SH_C3[3]));
    out[13] = Vec3::new(c(4.0) * zz - three * xx - yy, -two * x * y, c(8.0) * x * z)
        .scale(c(SH_C3[4]));
    out[14] = Vec3::new(two * x * z, -two * y * z, xx - yy).scale(c(SH_C3[5]));
    out[15] = Vec3::new(three * xx - three * yy, -c(6.0) * x * y, zero).scale(c(SH_C3[6]));
}

/// Unclamped color `Σ c_k·Y_k(dir) + 0.5`; `dir` must already be unit length.
pub fn sh_color_unclamped<T: Real>(degree: usize, coeffs: &[[T; 3]], dir: Vec3<T>) -> [T; 3] {
    let mut basis = [T::zero(); 16];
    sh_basis(degree, dir, &mut basis);
    let half = T::lit(0.5);
    let mut rgb = [half; 3];
    for (k, c) in coeffs.iter().enumerate().take(sh_coeff_count(degree)) {
        for ch in 0..3 {
            rgb[ch] += c[ch] * basis[k];
        }
    }
    rgb
}

/// View-dependent RGB for a unit direction, with the `+0.5` offset and `≥ 0` clamp.
pub fn sh_evaluate<T: Real>(view_dir: Vec3<T>, coeffs: &[[T; 3]], degree: usize) -> Result<[T; 3]> {
    if degree > MAX_SH_DEGREE {
        return invalid(format!("SH degree {degree} exceeds {MAX_SH_DEGREE}"));
    }
    if coeffs.len() != sh_coeff_count(degree) {
        return invalid(format!(
            "degree {degree} needs {} coefficients, got {}",
            sh_coeff_count(degree),
            coeffs.len()
        ));
    }
    let n = view_dir.norm();
    if (n - T::one()).abs() > T::lit(1e-6) {
        return invalid(format!("view direction not unit length (norm {n})"));
    }
    Ok(sh_color_unclamped(degree, coeffs, view_dir).map(|v| v.max(T::zero())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fib_sphere(n: usize) -> Vec<Vec3<f64>> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                Vec3::new(r * phi.cos(), r * phi.sin(), z)
            })
            .collect()
    }

    #[test]
    fn degree_zero_is_view_independent() {
        let c = [[0.7f64, -0.2, 0.1]];
        let a = sh_evaluate(Vec3::new(0.0, 0.0, 1.0), &c, 0).unwrap();
        for d in fib_sphere(50) {
            assert_eq!(sh_evaluate(d, &c, 0).unwrap(), a);
        }
        assert!((a[0] - (0.7 * 0.28209479177 + 0.5)).abs() < 1e-10);
    }

    #[test]
    fn zero_coefficients_give_half_grey() {
        let c = vec![[0.0f32; 3]; 16];
        assert_eq!(sh_evaluate(Vec3::new(1.0, 0.0, 0.0), &c, 3).unwrap(), [0.5; 3]);
    }

    #[test]
    fn z_linear_term_is_odd() {
        let mut c = vec![[0.0f64; 3]; 4];
        c[2] = [0.4, 0.4, 0.4];
        let up = sh_evaluate(Vec3::new(0.0, 0.0, 1.0), &c, 1).unwrap();
        let down = sh_evaluate(Vec3::new(0.0, 0.0, -1.0), &c, 1).unwrap();
        for ch in 0..3 {
            assert!(((up[ch] - 0.5) + (down[ch] - 0.5)).abs() < 1e-15);
        }
        assert!((up[0] - (0.5 + 0.4 * SH_C1)).abs() < 1e-15);
    }

    /// Quadrature oracle: the 16 basis functions are orthonormal on the sphere.
    #[test]
    fn basis_is_orthonormal_under_quadrature() {
        let pts = fib_sphere(40_000);
        let w = 4.0 * std::f64::consts::PI / pts.len() as f64;
        let mut gram = [[0.0f64; 16]; 16];
        let mut b = [0.0; 16];
        for d in &pts {
            sh_basis(3, *d, &mut b);
            for i in 0..16 {
                for j in 0..16 {
                    gram[i][j] += w * b[i] * b[j];
                }
            }
        }
        for i in 0..16 {
            for j in 0..16 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[i][j] - expect).abs() < 2e-3, "gram[{i}][{j}] = {}", gram[i][j]);
            }
        }
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let d = Vec3::new(0.3f64, -0.5, 0.81);
        let mut g = [Vec3::zero(); 16];
        sh_basis_grad(3, d, &mut g);
        let h = 1e-6;
        for axis in 0..3 {
            let mut dp = d;
            let mut dm = d;
            dp[axis] += h;
            dm[axis] -= h;
            let (mut bp, mut bm) = ([0.0; 16], [0.0; 16]);
            sh_basis(3, dp, &mut bp);
            sh_basis(3, dm, &mut bm);
            for k in 0..16 {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!((fd - g[k][axis]).abs() < 1e-8, "k={k} axis={axis}");
            }
        }
    }

    #[test]
    fn errors_on_bad_input() {
        let c = vec![[0.0f64; 3]; 4];
        assert!(sh_evaluate(Vec3::new(0.0, 0.0, 1.0), &c, 4).is_err());
        assert!(sh_evaluate(Vec3::new(0.0, 0.0, 1.0), &c, 2).is_err());
        assert!(sh_evaluate(Vec3::new(0.0, 0.0, 2.0), &c, 1).is_err());
    }

    #[test]
    fn dc_roundtrip() {
        for v in [0.0f64, 0.25, 1.0] {
            assert!((sh_dc_to_rgb(rgb_to_sh_dc(v)) - v).abs() < 1e-15);
        }
    }
}
