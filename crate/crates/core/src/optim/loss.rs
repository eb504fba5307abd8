//! L1 + SSIM photometric loss with an analytic image gradient.

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::scalar::Real;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const DEFAULT_LAMBDA_SSIM: f64 = 0.2;

fn window<T: Real>() -> [T; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0f64; SSIM_WINDOW];
    for (k, v) in w.iter_mut().enumerate() {
        let x = k as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| T::lit(v / s))
}

/// Valid-mode separable Gaussian filter of one `h × w` plane.
fn blur<T: Real>(src: &[T], w: usize, h: usize, k: &[T; SSIM_WINDOW]) -> Vec<T> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![T::zero(); ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut acc = T::zero();
            for (t, &kt) in k.iter().enumerate() {
                acc += kt * line[x + t];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y in 0..oh {
        for t in 0..SSIM_WINDOW {
            let kt = k[t];
            let line = &rows[(y + t) * ow..(y + t + 1) * ow];
            for (o, &v) in out[y * ow..(y + 1) * ow].iter_mut().zip(line) {
                *o += kt * v;
            }
        }
    }
    out
}

/// Adjoint of [`blur`]: scatters an `(h−10) × (w−10)` map back onto `h × w`.
fn blur_adjoint<T: Real>(g: &[T], w: usize, h: usize, k: &[T; SSIM_WINDOW]) -> Vec<T> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![T::zero(); ow * h];
    for y in 0..oh {
        for t in 0..SSIM_WINDOW {
            let kt = k[t];
            let dst = &mut rows[(y + t) * ow..(y + t + 1) * ow];
            for (d, &v) in dst.iter_mut().zip(&g[y * ow..(y + 1) * ow]) {
                *d += kt * v;
            }
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for (t, &kt) in k.iter().enumerate() {
                out[y * w + x + t] += kt * v;
            }
        }
    }
    out
}

fn check_pair<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return invalid(format!(
            "image size mismatch: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        ));
    }
    Ok(())
}

fn check_ssim_size<T: Real>(a: &Image<T>) -> Result<()> {
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return invalid(format!(
            "SSIM needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width, a.height
        ));
    }
    Ok(())
}

/// Mean SSIM over valid window positions and channels, and optionally its gradient
/// with respect to `x`.
pub fn ssim_with_grad<T: Real>(x: &Image<T>, y: &Image<T>, want_grad: bool) -> Result<(T, Option<Vec<T>>)> {
    check_pair(x, y)?;
    check_ssim_size(x)?;
    let (w, h) = (x.width, x.height);
    let k = window::<T>();
    let c1 = T::lit(SSIM_C1);
    let c2 = T::lit(SSIM_C2);
    let two = T::lit(2.0);
    let count = (w - SSIM_WINDOW + 1) * (h - SSIM_WINDOW + 1);
    let norm = T::from_usize_lossy(count * 3);
    let mut total = T::zero();
    let mut grad = want_grad.then(|| vec![T::zero(); w * h * 3]);

    for ch in 0..3 {
        let xs = x.channel(ch);
        let ys = y.channel(ch);
        let xx: Vec<T> = xs.iter().map(|v| *v * *v).collect();
        let yy: Vec<T> = ys.iter().map(|v| *v * *v).collect();
        let xy: Vec<T> = xs.iter().zip(&ys).map(|(a, b)| *a * *b).collect();
        let mx = blur(&xs, w, h, &k);
        let my = blur(&ys, w, h, &k);
        let exx = blur(&xx, w, h, &k);
        let eyy = blur(&yy, w, h, &k);
        let exy = blur(&xy, w, h, &k);

        let mut da = vec![T::zero(); count];
        let mut db = vec![T::zero(); count];
        let mut dc = vec![T::zero(); count];
        for i in 0..count {
            let (ux, uy) = (mx[i], my[i]);
            let sxx = exx[i] - ux * ux;
            let syy = eyy[i] - uy * uy;
            let sxy = exy[i] - ux * uy;
            let n1 = two * ux * uy + c1;
            let n2 = two * sxy + c2;
            let d1 = ux * ux + uy * uy + c1;
            let d2 = sxx + syy + c2;
            let s = (n1 * n2) / (d1 * d2);
            total += s;
            if want_grad {
                let dd = d1 * d2;
                // ∂S/∂μx, ∂S/∂σx², ∂S/∂σxy, each scaled by 1/count
                da[i] = (two * uy * n2 / dd - s * two * ux / d1) / norm;
                db[i] = -s / d2 / norm;
                dc[i] = two * n1 / dd / norm;
            }
        }
        if let Some(g) = grad.as_mut() {
            // S depends on x through μx, E[x²] and E[xy]:
            // σx² = E[x²] − μx², σxy = E[xy] − μx μy.
            let g_mu: Vec<T> = (0..count)
                .map(|i| da[i] - two * db[i] * mx[i] - dc[i] * my[i])
                .collect();
            let a = blur_adjoint(&g_mu, w, h, &k);
            let b = blur_adjoint(&db, w, h, &k);
            let c = blur_adjoint(&dc, w, h, &k);
            for p in 0..w * h {
                g[p * 3 + ch] = a[p] + two * xs[p] * b[p] + ys[p] * c[p];
            }
        }
    }
    Ok((total / norm, grad))
}

/// Mean SSIM (11×11 Gaussian window, σ = 1.5) over valid positions and channels.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    Ok(ssim_with_grad(a, b, false)?.0)
}

/// `(1−λ)·L1 + λ·(1−SSIM)` and its gradient with respect to every rendered value.
///
/// L1 is the mean absolute difference over all pixels and channels. With `λ = 0`
/// any image size is accepted; otherwise both sides must be at least 11×11.
pub fn photometric_loss<T: Real>(rendered: &Image<T>, target: &Image<T>, lambda: T) -> Result<(T, Vec<T>)> {
    check_pair(rendered, target)?;
    if !(lambda >= T::zero() && lambda <= T::one()) {
        return invalid(format!("lambda_ssim must lie in [0, 1], got {}", lambda.as_f64()));
    }
    let n = rendered.data.len();
    let inv_n = T::one() / T::from_usize_lossy(n.max(1));
    let l1_w = (T::one() - lambda) * inv_n;
    let mut l1 = T::zero();
    let mut grad: Vec<T> = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(&r, &t)| {
            let d = r - t;
            l1 += d.abs();
            if d > T::zero() {
                l1_w
            } else if d < T::zero() {
                -l1_w
            } else {
                T::zero()
            }
        })
        .collect();
    let mut loss = (T::one() - lambda) * l1 * inv_n;
    if lambda > T::zero() {
        let (s, g) = ssim_with_grad(rendered, target, true)?;
        loss += lambda * (T::one() - s);
        for (o, v) in grad.iter_mut().zip(g.expect("requested")) {
            *o -= lambda * v;
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Image::from_vec(w, h, (0..w * h * 3).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Direct sliding-window evaluation with a 2-D kernel.
    fn naive_ssim(a: &Image<f64>, b: &Image<f64>) -> f64 {
        let k1 = window::<f64>();
        let mut total = 0.0;
        let mut n = 0usize;
        for ch in 0..3 {
            for y0 in 0..=a.height - SSIM_WINDOW {
                for x0 in 0..=a.width - SSIM_WINDOW {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            let wgt = k1[dy] * k1[dx];
                            let p = a.pixel(y0 + dy, x0 + dx)[ch];
                            let q = b.pixel(y0 + dy, x0 + dx)[ch];
                            mx += wgt * p;
                            my += wgt * q;
                            sxx += wgt * p * p;
                            syy += wgt * q * q;
                            sxy += wgt * p * q;
                        }
                    }
                    sxx -= mx * mx;
                    syy -= my * my;
                    sxy -= mx * my;
                    total += ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2));
                    n += 1;
                }
            }
        }
        total / n as f64
    }

    #[test]
    fn ssim_matches_naive_window() {
        for seed in 0..3 {
            let a = random_image(seed, 16, 16);
            let b = random_image(seed + 10, 16, 16);
            assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-6);
        }
    }

    #[test]
    fn ssim_self_is_one() {
        let a = random_image(1, 20, 13);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn checkerboard_against_inverse_is_negative() {
        let (w, h) = (16, 16);
        let mut a = Image::<f64>::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = ((x + y) % 2) as f64;
                a.set_pixel(y, x, [v; 3]);
            }
        }
        let inv = Image::from_vec(w, h, a.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&a, &inv).unwrap() < 0.0);
    }

    #[test]
    fn small_images_rejected() {
        let a = Image::<f64>::zeros(10, 20);
        assert!(ssim(&a, &a).is_err());
        assert!(photometric_loss(&a, &a, 0.0).is_ok());
        assert!(photometric_loss(&a, &a, 0.2).is_err());
    }

    #[test]
    fn identical_images_give_zero_loss_and_gradient() {
        let a = random_image(4, 16, 12);
        let (l, g) = photometric_loss(&a, &a, 0.2).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn pure_l1_constant_offset() {
        let a = random_image(5, 8, 8).clamped();
        let delta = 0.05;
        let b = Image::from_vec(8, 8, a.data.iter().map(|v| v - delta).collect()).unwrap();
        let (l, g) = photometric_loss(&a, &b, 0.0).unwrap();
        assert!((l - delta).abs() < 1e-12);
        let n = (8 * 8 * 3) as f64;
        assert!(g.iter().all(|v| (v - 1.0 / n).abs() < 1e-15));
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let x = random_image(7, 14, 13);
        let y = random_image(8, 14, 13);
        let (_, g) = photometric_loss(&x, &y, 1.0).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..60 {
            let i = r.random_range(0..x.data.len());
            let h = 1e-6;
            let mut p = x.clone();
            p.data[i] += h;
            let mut m = x.clone();
            m.data[i] -= h;
            let fd = (photometric_loss(&p, &y, 1.0).unwrap().0 - photometric_loss(&m, &y, 1.0).unwrap().0) / (2.0 * h);
            let diff = (fd - g[i]).abs();
            assert!(diff < 1e-8 || diff / fd.abs().max(g[i].abs()) < 1e-3, "{i}: {fd} vs {}", g[i]);
        }
    }
}
