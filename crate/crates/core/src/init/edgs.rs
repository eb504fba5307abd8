//! Interchange file for externally matched dense Gaussians.
//!
//! Little-endian: magic `EDGS`, version `u32`, count `u64`, SH degree `u32`, then per
//! Gaussian `f32` mean×3, log scale×3, quaternion×4 (`w` first), opacity logit, and
//! `(L+1)²` SH coefficients, each as an RGB triple.

use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, IoContext, Result};
use crate::gaussians::GaussianCloud;
use crate::math::Vec3;
use crate::scalar::Real;
use crate::sh::sh_coeff_count;

use super::subsample_indices;

const MAGIC: &[u8; 4] = b"EDGS";
const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 8 + 4;

pub fn write_edgs<T: Real>(path: &Path, cloud: &GaussianCloud<T>) -> Result<()> {
    cloud.check_lengths()?;
    let stride = cloud.sh_stride();
    let mut b = Vec::with_capacity(HEADER + cloud.len() * (11 + 3 * stride) * 4);
    b.extend(MAGIC);
    b.extend(VERSION.to_le_bytes());
    b.extend((cloud.len() as u64).to_le_bytes());
    b.extend((cloud.sh_degree() as u32).to_le_bytes());
    let mut f = |v: T| b.extend((v.as_f64() as f32).to_le_bytes());
    for i in 0..cloud.len() {
        let (m, s) = (cloud.means[i], cloud.log_scales[i]);
        [m.x, m.y, m.z, s.x, s.y, s.z].into_iter().for_each(&mut f);
        cloud.rotations[i].into_iter().for_each(&mut f);
        f(cloud.opacity_logits[i]);
        cloud.sh_of(i).iter().flatten().copied().for_each(&mut f);
    }
    fs::write(path, b).at(path)
}

pub fn read_edgs<T: Real>(path: &Path) -> Result<GaussianCloud<T>> {
    let bytes = fs::read(path).at(path)?;
    let err = |offset: usize, message: String| Error::Parse { file: path.to_path_buf(), offset: offset as u64, message };
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(err(0, "missing EDGS header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(err(4, format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let degree = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    if degree > 3 {
        return Err(err(16, format!("SH degree {degree} above 3")));
    }
    let stride = sh_coeff_count(degree);
    let record = (11 + 3 * stride) * 4;
    let body = bytes.len() - HEADER;
    if (body as u64) != count.saturating_mul(record as u64) {
        return Err(err(HEADER, format!("{count} records of {record} bytes need {} bytes, found {body}", count as u128 * record as u128)));
    }
    let mut cloud = GaussianCloud::with_capacity(degree, count as usize)?;
    let mut sh = vec![[T::zero(); 3]; stride];
    for r in bytes[HEADER..].chunks_exact(record) {
        let v: Vec<T> = r.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect();
        for (k, c) in sh.iter_mut().enumerate() {
            *c = [v[11 + 3 * k], v[12 + 3 * k], v[13 + 3 * k]];
        }
        cloud.push(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]), [v[6], v[7], v[8], v[9]], v[10], &sh)?;
    }
    cloud.check_finite()?;
    Ok(cloud)
}

/// Subsample to `n` rows and grow every scale by `len/n` so the thinner set still
/// covers the surfaces. With `n ≥ len` the cloud is returned unchanged.
pub fn import_edgs<T: Real>(full: &GaussianCloud<T>, n: usize, seed: u64) -> Result<GaussianCloud<T>> {
    if n == 0 {
        return invalid("EDGS target size must be positive");
    }
    if n >= full.len() {
        return Ok(full.clone());
    }
    let mut out = full.select(&subsample_indices(full.len(), n, seed)?);
    let multiplier = T::from_usize_lossy(full.len()) / T::from_usize_lossy(n);
    for s in &mut out.log_scales {
        *s = Vec3::new((s.x.exp() * multiplier).ln(), (s.y.exp() * multiplier).ln(), (s.z.exp() * multiplier).ln());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, degree: usize) -> GaussianCloud<f64> {
        let mut g = GaussianCloud::empty(degree).unwrap();
        let stride = sh_coeff_count(degree);
        for i in 0..n {
            let x = i as f64 * 0.25;
            let sh: Vec<[f64; 3]> = (0..stride).map(|k| [x, k as f64 * 0.5, -0.125]).collect();
            g.push(Vec3::new(x, -x, 1.0), Vec3::new(-2.0, -1.5, -1.0), [1.0, 0.0, 0.0, 0.0], 0.5, &sh).unwrap();
        }
        g
    }

    #[test]
    fn file_round_trip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.edgs");
        let g = sample(7, 3);
        write_edgs(&p, &g).unwrap();
        let back: GaussianCloud<f64> = read_edgs(&p).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn truncated_or_foreign_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.edgs");
        write_edgs(&p, &sample(3, 1)).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_edgs::<f64>(&p), Err(Error::Parse { .. })));
        fs::write(&p, b"PLY\n").unwrap();
        assert!(read_edgs::<f64>(&p).is_err());
    }

    #[test]
    fn scale_multiplier_and_passthrough() {
        let g = sample(1000, 0);
        let sub = import_edgs(&g, 250, 3).unwrap();
        assert_eq!(sub.len(), 250);
        for s in &sub.log_scales {
            assert!((s.x.exp() / (-2.0f64).exp() - 4.0).abs() < 1e-12);
        }
        assert_eq!(import_edgs(&g, 1000, 3).unwrap(), g);
        assert_eq!(import_edgs(&g, 5000, 3).unwrap(), g);
        assert!(import_edgs(&g, 0, 3).is_err());
    }
}
