//! Structure-of-arrays storage for every optimizable per-Gaussian parameter.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math::{quat_identity, quat_normalize, quat_to_mat, Mat3, Quat, Vec3};
use crate::scalar::{sigmoid, Real};
use crate::sh::{sh_coeff_count, MAX_SH_DEGREE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianCloud<T> {
    pub means: Vec<Vec3<T>>,
    /// Log of the per-axis standard deviation.
    pub log_scales: Vec<Vec3<T>>,
    pub rotations: Vec<Quat<T>>,
    pub opacity_logits: Vec<T>,
    /// `sh_stride()` RGB triples per Gaussian, band-major.
    pub sh: Vec<[T; 3]>,
    sh_degree: usize,
}

impl<T: Real> GaussianCloud<T> {
    pub fn empty(sh_degree: usize) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return invalid(format!("SH degree {sh_degree} exceeds {MAX_SH_DEGREE}"));
        }
        Ok(Self {
            means: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            opacity_logits: Vec::new(),
            sh: Vec::new(),
            sh_degree,
        })
    }

    pub fn with_capacity(sh_degree: usize, n: usize) -> Result<Self> {
        let mut c = Self::empty(sh_degree)?;
        c.means.reserve(n);
        c.log_scales.reserve(n);
        c.rotations.reserve(n);
        c.opacity_logits.reserve(n);
        c.sh.reserve(n * c.sh_stride());
        Ok(c)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.means.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    #[inline]
    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    #[inline]
    pub fn sh_stride(&self) -> usize {
        sh_coeff_count(self.sh_degree)
    }

    #[inline]
    pub fn sh_of(&self, i: usize) -> &[[T; 3]] {
        let s = self.sh_stride();
        &self.sh[i * s..(i + 1) * s]
    }

    #[inline]
    pub fn sh_of_mut(&mut self, i: usize) -> &mut [[T; 3]] {
        let s = self.sh_stride();
        &mut self.sh[i * s..(i + 1) * s]
    }

    #[inline]
    pub fn scale(&self, i: usize) -> Vec3<T> {
        self.log_scales[i].map(|v| v.exp())
    }

    #[inline]
    pub fn opacity(&self, i: usize) -> T {
        sigmoid(self.opacity_logits[i])
    }

    #[inline]
    pub fn rotation_matrix(&self, i: usize) -> Mat3<T> {
        quat_to_mat(&self.rotations[i])
    }

    pub fn push(
        &mut self,
        mean: Vec3<T>,
        log_scale: Vec3<T>,
        rotation: Quat<T>,
        opacity_logit: T,
        sh: &[[T; 3]],
    ) -> Result<()> {
        if sh.len() != self.sh_stride() {
            return invalid(format!(
                "expected {} SH coefficients, got {}",
                self.sh_stride(),
                sh.len()
            ));
        }
        self.means.push(mean);
        self.log_scales.push(log_scale);
        self.rotations.push(rotation);
        self.opacity_logits.push(opacity_logit);
        self.sh.extend_from_slice(sh);
        Ok(())
    }

    /// Append a copy of row `i`.
    pub fn push_copy_of(&mut self, i: usize) {
        self.means.push(self.means[i]);
        self.log_scales.push(self.log_scales[i]);
        self.rotations.push(self.rotations[i]);
        self.opacity_logits.push(self.opacity_logits[i]);
        let s = self.sh_stride();
        self.sh.extend_from_within(i * s..(i + 1) * s);
    }

    /// Overwrite row `dst` with the parameters of row `src`.
    pub fn copy_row(&mut self, src: usize, dst: usize) {
        self.means[dst] = self.means[src];
        self.log_scales[dst] = self.log_scales[src];
        self.rotations[dst] = self.rotations[src];
        self.opacity_logits[dst] = self.opacity_logits[src];
        let s = self.sh_stride();
        self.sh.copy_within(src * s..(src + 1) * s, dst * s);
    }

    /// Keep only the rows where `keep[i]` is true, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len(), "retain mask length");
        let s = self.sh_stride();
        let mut it = keep.iter();
        self.means.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.log_scales.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.rotations.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.opacity_logits.retain(|_| *it.next().unwrap());
        let mut k = 0usize;
        self.sh.retain(|_| {
            let r = keep[k / s];
            k += 1;
            r
        });
        self.debug_check();
    }

    /// New cloud made of the listed rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let s = self.sh_stride();
        let mut out = Self::with_capacity(self.sh_degree, rows.len()).expect("degree already valid");
        for &i in rows {
            out.means.push(self.means[i]);
            out.log_scales.push(self.log_scales[i]);
            out.rotations.push(self.rotations[i]);
            out.opacity_logits.push(self.opacity_logits[i]);
            out.sh.extend_from_slice(&self.sh[i * s..(i + 1) * s]);
        }
        out
    }

    pub fn append(&mut self, other: &Self) -> Result<()> {
        if other.sh_degree != self.sh_degree {
            return invalid("cannot append clouds with different SH degrees");
        }
        self.means.extend_from_slice(&other.means);
        self.log_scales.extend_from_slice(&other.log_scales);
        self.rotations.extend_from_slice(&other.rotations);
        self.opacity_logits.extend_from_slice(&other.opacity_logits);
        self.sh.extend_from_slice(&other.sh);
        Ok(())
    }

    pub fn normalize_rotations(&mut self) {
        for q in &mut self.rotations {
            *q = quat_normalize(q);
        }
    }

    /// Returns an error naming the first Gaussian holding a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        let s = self.sh_stride();
        for i in 0..self.len() {
            let bad = if !self.means[i].is_finite() {
                Some("mean")
            } else if !self.log_scales[i].is_finite() {
                Some("log_scale")
            } else if !self.rotations[i].iter().all(|v| v.is_finite()) {
                Some("rotation")
            } else if !self.opacity_logits[i].is_finite() {
                Some("opacity_logit")
            } else if !self.sh[i * s..(i + 1) * s]
                .iter()
                .flatten()
                .all(|v| v.is_finite())
            {
                Some("sh")
            } else {
                None
            };
            if let Some(field) = bad {
                return Err(Error::NonFinite { index: i, field });
            }
        }
        Ok(())
    }

    /// Array-length consistency.
    pub fn check_lengths(&self) -> Result<()> {
        let n = self.means.len();
        if self.log_scales.len() != n
            || self.rotations.len() != n
            || self.opacity_logits.len() != n
            || self.sh.len() != n * self.sh_stride()
        {
            return Err(Error::Lockstep(format!(
                "cloud arrays disagree: means {} scales {} rotations {} opacities {} sh {}",
                n,
                self.log_scales.len(),
                self.rotations.len(),
                self.opacity_logits.len(),
                self.sh.len()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn debug_check(&self) {
        debug_assert!(self.check_lengths().is_ok(), "{:?}", self.check_lengths());
    }

    pub fn cast<U: Real>(&self) -> GaussianCloud<U> {
        let c = |v: T| U::lit(v.as_f64());
        GaussianCloud {
            means: self.means.iter().map(|v| v.cast()).collect(),
            log_scales: self.log_scales.iter().map(|v| v.cast()).collect(),
            rotations: self.rotations.iter().map(|q| q.map(c)).collect(),
            opacity_logits: self.opacity_logits.iter().map(|&v| c(v)).collect(),
            sh: self.sh.iter().map(|rgb| rgb.map(c)).collect(),
            sh_degree: self.sh_degree,
        }
    }

    /// Same cloud at another SH degree: higher bands are dropped or zero-filled.
    pub fn with_sh_degree(&self, degree: usize) -> Result<Self> {
        let mut out = Self::empty(degree)?;
        let (old, new) = (self.sh_stride(), out.sh_stride());
        out.means = self.means.clone();
        out.log_scales = self.log_scales.clone();
        out.rotations = self.rotations.clone();
        out.opacity_logits = self.opacity_logits.clone();
        out.sh.reserve(self.len() * new);
        for i in 0..self.len() {
            let row = &self.sh[i * old..(i + 1) * old];
            out.sh.extend(row.iter().take(new));
            out.sh.extend(std::iter::repeat_n([T::zero(); 3], new.saturating_sub(old)));
        }
        Ok(out)
    }

    /// Identity rotation and zero SH helper for building clouds by hand.
    pub fn push_isotropic(&mut self, mean: Vec3<T>, sigma: T, opacity_logit: T, dc: [T; 3]) {
        let mut sh = vec![[T::zero(); 3]; self.sh_stride()];
        sh[0] = dc;
        self.push(mean, Vec3::splat(sigma.ln()), quat_identity(), opacity_logit, &sh)
            .expect("stride matches");
    }
}

/// Per-parameter gradients, laid out exactly like [`GaussianCloud`].
#[derive(Clone, Debug, PartialEq)]
pub struct CloudGrads<T> {
    pub means: Vec<Vec3<T>>,
    pub log_scales: Vec<Vec3<T>>,
    pub rotations: Vec<Quat<T>>,
    pub opacity_logits: Vec<T>,
    pub sh: Vec<[T; 3]>,
    pub sh_stride: usize,
}

impl<T: Real> CloudGrads<T> {
    pub fn zeros_like(cloud: &GaussianCloud<T>) -> Self {
        Self::zeros(cloud.len(), cloud.sh_stride())
    }

    pub fn zeros(n: usize, sh_stride: usize) -> Self {
        Self {
            means: vec![Vec3::zero(); n],
            log_scales: vec![Vec3::zero(); n],
            rotations: vec![[T::zero(); 4]; n],
            opacity_logits: vec![T::zero(); n],
            sh: vec![[T::zero(); 3]; n * sh_stride],
            sh_stride,
        }
    }

    /// Keep rows where `keep[i]`, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        let s = self.sh_stride;
        let mut it = keep.iter();
        self.means.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.log_scales.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.rotations.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.opacity_logits.retain(|_| *it.next().unwrap());
        let mut k = 0usize;
        self.sh.retain(|_| {
            let r = keep[k / s];
            k += 1;
            r
        });
    }

    pub fn push_zero_rows(&mut self, n: usize) {
        let z = T::zero();
        self.means.extend(std::iter::repeat_n(Vec3::zero(), n));
        self.log_scales.extend(std::iter::repeat_n(Vec3::zero(), n));
        self.rotations.extend(std::iter::repeat_n([z; 4], n));
        self.opacity_logits.extend(std::iter::repeat_n(z, n));
        self.sh.extend(std::iter::repeat_n([z; 3], n * self.sh_stride));
    }

    pub fn zero_row(&mut self, i: usize) {
        let z = T::zero();
        self.means[i] = Vec3::zero();
        self.log_scales[i] = Vec3::zero();
        self.rotations[i] = [z; 4];
        self.opacity_logits[i] = z;
        let s = self.sh_stride;
        self.sh[i * s..(i + 1) * s].iter_mut().for_each(|c| *c = [z; 3]);
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn add_assign(&mut self, o: &Self) {
        for (a, b) in self.means.iter_mut().zip(&o.means) {
            *a += *b;
        }
        for (a, b) in self.log_scales.iter_mut().zip(&o.log_scales) {
            *a += *b;
        }
        for (a, b) in self.rotations.iter_mut().zip(&o.rotations) {
            for k in 0..4 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.opacity_logits.iter_mut().zip(&o.opacity_logits) {
            *a += *b;
        }
        for (a, b) in self.sh.iter_mut().zip(&o.sh) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.means.iter_mut().for_each(|v| *v = v.scale(s));
        self.log_scales.iter_mut().for_each(|v| *v = v.scale(s));
        self.rotations.iter_mut().flatten().for_each(|v| *v *= s);
        self.opacity_logits.iter_mut().for_each(|v| *v *= s);
        self.sh.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn is_zero(&self) -> bool {
        let z = T::zero();
        self.means.iter().all(|v| *v == Vec3::zero())
            && self.log_scales.iter().all(|v| *v == Vec3::zero())
            && self.rotations.iter().flatten().all(|v| *v == z)
            && self.opacity_logits.iter().all(|v| *v == z)
            && self.sh.iter().flatten().all(|v| *v == z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> GaussianCloud<f64> {
        let mut c = GaussianCloud::empty(1).unwrap();
        for i in 0..4 {
            let f = i as f64;
            c.push_isotropic(Vec3::new(f, 0.0, 0.0), 0.1 + f, 0.0, [f, f, f]);
        }
        c
    }

    #[test]
    fn retain_keeps_rows_aligned() {
        let mut c = cloud();
        c.retain_mask(&[true, false, true, false]);
        assert_eq!(c.len(), 2);
        assert_eq!(c.means[1].x, 2.0);
        assert_eq!(c.sh_of(1)[0], [2.0; 3]);
        c.check_lengths().unwrap();
    }

    #[test]
    fn select_and_copy_rows() {
        let mut c = cloud();
        let s = c.select(&[3, 0]);
        assert_eq!(s.means[0].x, 3.0);
        assert_eq!(s.sh_of(1)[0], [0.0; 3]);
        c.copy_row(3, 1);
        assert_eq!(c.sh_of(1)[0], [3.0; 3]);
        c.push_copy_of(2);
        assert_eq!(c.len(), 5);
        assert_eq!(c.sh_of(4)[0], [2.0; 3]);
        c.check_lengths().unwrap();
    }

    #[test]
    fn non_finite_is_reported_by_index() {
        let mut c = cloud();
        c.opacity_logits[2] = f64::NAN;
        match c.check_finite() {
            Err(Error::NonFinite { index, field }) => {
                assert_eq!(index, 2);
                assert_eq!(field, "opacity_logit");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degree_above_three_rejected() {
        assert!(GaussianCloud::<f32>::empty(4).is_err());
    }
}
