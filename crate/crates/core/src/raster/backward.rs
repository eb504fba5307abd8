use crate::camera::Camera;
use crate::error::{invalid, Result};
use crate::gaussians::{CloudGrads, GaussianCloud};
use crate::math::{quat_normalize, quat_normalize_vjp, quat_to_mat_unit_vjp, Mat3, Vec3};
use crate::scalar::Real;
use crate::sh::{sh_basis, sh_basis_grad, sh_coeff_count};

use super::forward::{splat_alpha, tile_rect, RenderOutput};
use super::project::{jacobian, jw, world_covariance};
use super::{map_indices, RenderSettings, MAX_ALPHA};

/// Screen-space positional gradients of one view, in pixel units.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewspaceGrads<T> {
    /// `Σ_pixels ∂L/∂mean2d`.
    pub summed: Vec<[T; 2]>,
    /// `Σ_pixels |∂L/∂mean2d|`, componentwise.
    pub abs: Vec<[T; 2]>,
    /// 1 when the Gaussian contributed to this view.
    pub visible: Vec<u32>,
}

impl<T: Real> ViewspaceGrads<T> {
    pub fn len(&self) -> usize {
        self.summed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.summed.is_empty()
    }
}

#[derive(Clone, Copy)]
struct SplatGrad<T> {
    mean2d: [T; 2],
    abs2d: [T; 2],
    conic: [T; 3],
    opacity: T,
    color: [T; 3],
}

impl<T: Real> SplatGrad<T> {
    fn zero() -> Self {
        let z = T::zero();
        Self {
            mean2d: [z; 2],
            abs2d: [z; 2],
            conic: [z; 3],
            opacity: z,
            color: [z; 3],
        }
    }

    fn add(&mut self, o: &Self) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
            self.abs2d[k] += o.abs2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Gradients of a scalar loss with respect to every cloud parameter, given `d_image = ∂L/∂image`.
pub fn render_backward<T: Real>(
    cloud: &GaussianCloud<T>,
    camera: &Camera<T>,
    output: &RenderOutput<T>,
    d_image: &[T],
    settings: &RenderSettings<T>,
) -> Result<(CloudGrads<T>, ViewspaceGrads<T>)> {
    let (w, h) = (camera.width, camera.height);
    if output.num_gaussians() != cloud.len()
        || output.image.width != w
        || output.image.height != h
        || output.camera_id != camera.id
    {
        return invalid("render output does not belong to this cloud and camera");
    }
    if d_image.len() != w * h * 3 {
        return invalid("image gradient has the wrong size");
    }

    let bins = &output.bins;
    let bg = output.background;
    let one = T::one();
    let per_tile = map_indices(settings.parallel, bins.n_tiles(), |tile| {
        let (r0, c0, r1, c1) = tile_rect(tile, bins.tiles_x, w, h);
        let list = bins.list(tile);
        let mut acc = vec![SplatGrad::zero(); list.len()];
        for row in r0..r1 {
            let py = T::from_usize_lossy(row) + T::lit(0.5);
            for col in c0..c1 {
                let px = T::from_usize_lossy(col) + T::lit(0.5);
                let pix = row * w + col;
                let dpix = [d_image[pix * 3], d_image[pix * 3 + 1], d_image[pix * 3 + 2]];
                let t_final = output.final_transmittance[pix];
                let bg_dot = bg[0] * dpix[0] + bg[1] * dpix[1] + bg[2] * dpix[2];
                let mut t = t_final;
                let mut accum = [T::zero(); 3];
                let mut last_alpha = T::zero();
                let mut last_color = [T::zero(); 3];
                let n = output.n_walked[pix] as usize;
                for k in (0..n).rev() {
                    let p = &output.projected[list[k]];
                    let Some((alpha, gauss, raw)) = splat_alpha(p, px, py) else {
                        continue;
                    };
                    t /= one - alpha ;
                    let wgt = alpha * t;
                    let g = &mut acc[k];
                    let mut d_alpha = T::zero();
                    for ch in 0..3 {
                        g.color[ch] += wgt * dpix[ch];
                        accum[ch] = last_alpha * last_color[ch] + (one - last_alpha) * accum[ch];
                        d_alpha += (p.color[ch] - accum[ch]) * dpix[ch];
                    }
                    last_color = p.color;
                    last_alpha = alpha;
                    d_alpha = d_alpha * t - t_final / (one - alpha) * bg_dot;
                    if raw >= T::lit(MAX_ALPHA) {
                        continue;
                    }
                    g.opacity += gauss * d_alpha;
                    let d_power = p.opacity * gauss * d_alpha;
                    let dx = px - p.screen.mean[0];
                    let dy = py - p.screen.mean[1];
                    let [a, b, c] = p.screen.conic;
                    let gx = d_power * (a * dx + b * dy);
                    let gy = d_power * (b * dx + c * dy);
                    g.mean2d[0] += gx;
                    g.mean2d[1] += gy;
                    g.abs2d[0] += gx.abs();
                    g.abs2d[1] += gy.abs();
                    g.conic[0] += d_power * (-T::lit(0.5) * dx * dx);
                    g.conic[1] += d_power * (-dx * dy);
                    g.conic[2] += d_power * (-T::lit(0.5) * dy * dy);
                }
            }
        }
        acc
    });

    let mut splat = vec![SplatGrad::zero(); cloud.len()];
    for (tile, acc) in per_tile.into_iter().enumerate() {
        for (k, &g) in bins.list(tile).iter().enumerate() {
            splat[g].add(&acc[k]);
        }
    }

    let rows = map_indices(settings.parallel, cloud.len(), |i| {
        if output.projected[i].tiles.is_none() || !output.touched[i] {
            return None;
        }
        Some(gaussian_backward(cloud, camera, output, i, &splat[i]))
    });

    let mut grads = CloudGrads::zeros_like(cloud);
    let stride = sh_coeff_count(cloud.sh_degree());
    let mut vs = ViewspaceGrads {
        summed: vec![[T::zero(); 2]; cloud.len()],
        abs: vec![[T::zero(); 2]; cloud.len()],
        visible: vec![0; cloud.len()],
    };
    for (i, row) in rows.into_iter().enumerate() {
        let Some(r) = row else { continue };
        grads.means[i] = r.mean;
        grads.log_scales[i] = r.log_scale;
        grads.rotations[i] = r.rotation;
        grads.opacity_logits[i] = r.opacity_logit;
        grads.sh[i * stride..(i + 1) * stride].copy_from_slice(&r.sh[..stride]);
        vs.summed[i] = splat[i].mean2d;
        vs.abs[i] = splat[i].abs2d;
        vs.visible[i] = 1;
    }
    Ok((grads, vs))
}

struct RowGrad<T> {
    mean: Vec3<T>,
    log_scale: Vec3<T>,
    rotation: [T; 4],
    opacity_logit: T,
    sh: [[T; 3]; 16],
}

fn gaussian_backward<T: Real>(
    cloud: &GaussianCloud<T>,
    camera: &Camera<T>,
    output: &RenderOutput<T>,
    i: usize,
    g: &SplatGrad<T>,
) -> RowGrad<T> {
    let p = &output.projected[i];
    let one = T::one();
    let two = T::lit(2.0);

    // opacity
    let o = p.opacity;
    let opacity_logit = g.opacity * o * (one - o);

    // color → SH coefficients and view direction
    let d_raw: [T; 3] = std::array::from_fn(|ch| if p.clamped[ch] { T::zero() } else { g.color[ch] });
    let degree = cloud.sh_degree();
    let center = camera.center();
    let v = cloud.means[i] - center;
    let vn = v.norm();
    let dir = v.scale(one / vn);
    let mut basis = [T::zero(); 16];
    sh_basis(degree, dir, &mut basis);
    let mut sh = [[T::zero(); 3]; 16];
    let coeffs = cloud.sh_of(i);
    let mut d_dir = Vec3::zero();
    let mut dbasis = [Vec3::zero(); 16];
    sh_basis_grad(degree, dir, &mut dbasis);
    for k in 0..sh_coeff_count(degree) {
        let mut s = T::zero();
        for ch in 0..3 {
            sh[k][ch] = basis[k] * d_raw[ch];
            s += coeffs[k][ch] * d_raw[ch];
        }
        d_dir += dbasis[k].scale(s);
    }
    let d_v = (d_dir - dir.scale(dir.dot(d_dir))).scale(one / vn);
    let mut d_mean = d_v;

    // conic → screen covariance: dΣ2d = -Q·G_Q·Q
    let [a, b, c] = p.screen.conic;
    let gq = [[g.conic[0], g.conic[1] / two], [g.conic[1] / two, g.conic[2]]];
    let q = [[a, b], [b, c]];
    let mut qg = [[T::zero(); 2]; 2];
    for r in 0..2 {
        for s in 0..2 {
            qg[r][s] = q[r][0] * gq[0][s] + q[r][1] * gq[1][s];
        }
    }
    let mut g2 = [[T::zero(); 2]; 2];
    for r in 0..2 {
        for s in 0..2 {
            g2[r][s] = -(qg[r][0] * q[0][s] + qg[r][1] * q[1][s]);
        }
    }

    // Σ2d = T Σ Tᵀ with T = J W
    let t = p.t_cam;
    let j = jacobian(camera, t);
    let tm = jw(&j, &camera.rotation);
    let (sigma, rot, scale) = world_covariance(cloud, i);
    // dΣ = Tᵀ G2 T
    let mut d_sigma = Mat3::zero();
    for r in 0..3 {
        for s in 0..3 {
            let mut acc = T::zero();
            for u in 0..2 {
                for w in 0..2 {
                    acc += tm[u][r] * g2[u][w] * tm[w][s];
                }
            }
            d_sigma.m[r][s] = acc;
        }
    }
    // dT = 2 G2 T Σ
    let mut g2t = [[T::zero(); 3]; 2];
    for u in 0..2 {
        for s in 0..3 {
            g2t[u][s] = g2[u][0] * tm[0][s] + g2[u][1] * tm[1][s];
        }
    }
    let mut d_t = [[T::zero(); 3]; 2];
    for u in 0..2 {
        for s in 0..3 {
            d_t[u][s] = two * (g2t[u][0] * sigma.m[0][s] + g2t[u][1] * sigma.m[1][s] + g2t[u][2] * sigma.m[2][s]);
        }
    }
    // dJ = dT Wᵀ
    let wm = &camera.rotation.m;
    let mut d_j = [[T::zero(); 3]; 2];
    for u in 0..2 {
        for s in 0..3 {
            d_j[u][s] = d_t[u][0] * wm[s][0] + d_t[u][1] * wm[s][1] + d_t[u][2] * wm[s][2];
        }
    }
    let (fx, fy) = (camera.fx, camera.fy);
    let inv_z = one / t.z;
    let inv_z2 = inv_z * inv_z;
    let inv_z3 = inv_z2 * inv_z;
    let gu = g.mean2d[0];
    let gv = g.mean2d[1];
    let d_tcam = Vec3::new(
        fx * inv_z * gu - fx * inv_z2 * d_j[0][2],
        fy * inv_z * gv - fy * inv_z2 * d_j[1][2],
        -fx * t.x * inv_z2 * gu - fy * t.y * inv_z2 * gv - fx * inv_z2 * d_j[0][0]
            + two * fx * t.x * inv_z3 * d_j[0][2]
            - fy * inv_z2 * d_j[1][1]
            + two * fy * t.y * inv_z3 * d_j[1][2],
    );
    d_mean += camera.rotation.transpose().mul_vec(d_tcam);

    // Σ = M Mᵀ, M = R diag(s)
    let m = rot.mul_mat(&Mat3::diag(scale));
    let d_m = d_sigma.mul_mat(&m).scale(two);
    let mut log_scale = Vec3::zero();
    let mut d_r = Mat3::zero();
    for col in 0..3 {
        let mut ds = T::zero();
        for row in 0..3 {
            ds += d_m.m[row][col] * rot.m[row][col];
            d_r.m[row][col] = d_m.m[row][col] * scale[col];
        }
        log_scale[col] = ds * scale[col];
    }
    let q_raw = cloud.rotations[i];
    let d_unit = quat_to_mat_unit_vjp(&quat_normalize(&q_raw), &d_r);
    let rotation = quat_normalize_vjp(&q_raw, &d_unit);

    RowGrad {
        mean: d_mean,
        log_scale,
        rotation,
        opacity_logit,
        sh,
    }
}
