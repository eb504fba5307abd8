//! Image quality metrics and split evaluation.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Result};
use crate::gaussians::GaussianCloud;
use crate::image::Image;
use crate::optim::ssim as ssim_generic;
use crate::raster::{render, RenderSettings};
use crate::scalar::Real;
use crate::scene::{Split, TrainScene};

/// `10·log10(1/MSE)`; identical images give `+∞`.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    if !a.same_shape(b) {
        return invalid(format!("image size mismatch: {}x{} vs {}x{}", a.width, a.height, b.width, b.height));
    }
    if a.data.is_empty() {
        return invalid("empty images");
    }
    let se: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
    let mse = se / a.data.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Mean SSIM over valid 11×11 windows and the three channels.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    ssim_generic(a, b).map(|v| v.as_f64())
}

/// Serializes non-finite values as `"inf"`, `"-inf"` or `"nan"` so JSON stays valid.
pub mod finite_or_tag {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Tag(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("expected a number or inf, got '{t}'"))),
            },
        }
    }
}

/// [`finite_or_tag`] for optional values; `None` is written as null.
pub mod opt_finite_or_tag {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(x) => finite_or_tag::serialize(x, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "finite_or_tag")] f64);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub camera: u32,
    #[serde(with = "finite_or_tag")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: Split,
    #[serde(with = "finite_or_tag")]
    pub psnr: f64,
    pub ssim: f64,
    pub views: Vec<ViewMetrics>,
}

/// Render every view of `split`, clamp to `[0, 1]` and compare with the targets.
pub fn evaluate<T: Real>(
    cloud: &GaussianCloud<T>,
    scene: &TrainScene<T>,
    split: Split,
    settings: &RenderSettings<T>,
) -> Result<SplitMetrics> {
    let views = scene.split(split);
    if views.is_empty() {
        return invalid(format!("the {split} split is empty"));
    }
    let mut out = Vec::with_capacity(views.len());
    for &v in views {
        let img = render(cloud, &scene.cameras[v], settings)?.image.clamped();
        let target = &scene.images[v];
        out.push(ViewMetrics { camera: scene.cameras[v].id, psnr: psnr(&img, target)?, ssim: ssim(&img, target)? });
    }
    let n = out.len() as f64;
    Ok(SplitMetrics {
        split,
        psnr: out.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: out.iter().map(|m| m.ssim).sum::<f64>() / n,
        views: out,
    })
}
