//! Gaussian splatting trainer for benchmarking how initialization and densification
//! strategies interact under a fixed per-scene Gaussian budget.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the aliases below pick
//! a precision for the common types.

// Negated float comparisons are deliberate: they also reject NaN. Index loops mirror
// the per-component math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]
#![cfg_attr(test, allow(clippy::field_reassign_with_default))]

pub mod bench;
pub mod camera;
pub mod densify;
pub mod error;
pub mod gaussians;
pub mod geometry;
pub mod image;
pub mod init;
pub mod math;
pub mod monodepth;
pub mod optim;
pub mod pointcloud;
pub mod raster;
pub mod scalar;
pub mod scene;
pub mod sh;

pub use camera::Camera;
pub use error::{Error, Result};
pub use gaussians::{CloudGrads, GaussianCloud};
pub use geometry::{covariance_from_params, knn_mean_distance, scene_extent};
pub use image::Image;
pub use math::{Mat3, Quat, Vec3};
pub use pointcloud::PointCloud;
pub use scalar::Real;
pub use scene::{SceneDescriptor, Split, TrainScene};
pub use sh::sh_evaluate;

pub type GaussianCloud32 = GaussianCloud<f32>;
pub type GaussianCloud64 = GaussianCloud<f64>;
pub type Camera32 = Camera<f32>;
pub type Camera64 = Camera<f64>;
pub type PointCloud32 = PointCloud<f32>;
pub type PointCloud64 = PointCloud<f64>;
pub type Image32 = Image<f32>;
pub type Image64 = Image<f64>;
