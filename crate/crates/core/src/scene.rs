use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{invalid, Result};
use crate::geometry::scene_extent;
use crate::image::Image;
use crate::scalar::Real;

/// Camera list, disjoint train/test id split and per-camera image paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor<T> {
    pub cameras: Vec<Camera<T>>,
    pub train_ids: Vec<u32>,
    pub test_ids: Vec<u32>,
    pub image_paths: BTreeMap<u32, PathBuf>,
    pub scene_extent: T,
}

impl<T: Real> SceneDescriptor<T> {
    pub fn new(
        cameras: Vec<Camera<T>>,
        train_ids: Vec<u32>,
        test_ids: Vec<u32>,
        image_paths: BTreeMap<u32, PathBuf>,
    ) -> Result<Self> {
        let all: BTreeSet<u32> = cameras.iter().map(|c| c.id).collect();
        if all.len() != cameras.len() {
            return invalid("duplicate camera ids");
        }
        let train: BTreeSet<u32> = train_ids.iter().copied().collect();
        let test: BTreeSet<u32> = test_ids.iter().copied().collect();
        if !train.is_disjoint(&test) {
            return invalid("train and test splits overlap");
        }
        let covered: BTreeSet<u32> = train.union(&test).copied().collect();
        if covered != all {
            return invalid("train/test split does not cover every camera exactly");
        }
        let scene_extent = scene_extent(&cameras)?;
        Ok(Self {
            cameras,
            train_ids,
            test_ids,
            image_paths,
            scene_extent,
        })
    }

    /// Every `k`-th camera (in sorted-name order given by `ordered_ids`) goes to the test split.
    pub fn holdout_every(ordered_ids: &[u32], k: usize) -> (Vec<u32>, Vec<u32>) {
        if k == 0 {
            return (ordered_ids.to_vec(), Vec::new());
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, id) in ordered_ids.iter().enumerate() {
            if i % k == 0 {
                test.push(*id);
            } else {
                train.push(*id);
            }
        }
        (train, test)
    }
}

/// Cameras with their loaded target images, ready for training and evaluation.
#[derive(Clone, Debug)]
pub struct TrainScene<T> {
    pub cameras: Vec<Camera<T>>,
    pub images: Vec<Image<T>>,
    /// Indices into `cameras`.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub extent: T,
}

impl<T: Real> TrainScene<T> {
    pub fn new(
        cameras: Vec<Camera<T>>,
        images: Vec<Image<T>>,
        train: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        if cameras.len() != images.len() {
            return invalid("one image per camera required");
        }
        for (c, im) in cameras.iter().zip(&images) {
            if c.width != im.width || c.height != im.height {
                return invalid(format!(
                    "camera {} is {}x{} but its image is {}x{}",
                    c.id, c.width, c.height, im.width, im.height
                ));
            }
        }
        if train.iter().chain(&test).any(|&i| i >= cameras.len()) {
            return invalid("split index out of range");
        }
        if train.is_empty() {
            return invalid("training split is empty");
        }
        let extent = scene_extent(&cameras)?;
        Ok(Self {
            cameras,
            images,
            train,
            test,
            extent,
        })
    }

    pub fn split(&self, which: Split) -> &[usize] {
        match which {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{look_at, Vec3};

    fn cams(n: usize) -> Vec<Camera<f64>> {
        (0..n)
            .map(|i| {
                let a = i as f64;
                let (r, t) = look_at(Vec3::new(a.cos() * 3.0, 0.0, a.sin() * 3.0), Vec3::zero(), Vec3::new(0.0, -1.0, 0.0));
                Camera::new(i as u32, 8.0, 8.0, 4.0, 4.0, 8, 8, r, t).unwrap()
            })
            .collect()
    }

    #[test]
    fn every_eighth_of_sixteen() {
        let ids: Vec<u32> = (0..16).collect();
        let (train, test) = SceneDescriptor::<f64>::holdout_every(&ids, 8);
        assert_eq!(test, vec![0, 8]);
        assert_eq!(train.len(), 14);
    }

    #[test]
    fn descriptor_rejects_bad_split() {
        let c = cams(3);
        assert!(SceneDescriptor::new(c.clone(), vec![0, 1], vec![1, 2], BTreeMap::new()).is_err());
        assert!(SceneDescriptor::new(c.clone(), vec![0], vec![2], BTreeMap::new()).is_err());
        let d = SceneDescriptor::new(c, vec![0, 1], vec![2], BTreeMap::new()).unwrap();
        assert!(d.scene_extent > 0.0);
    }
}
