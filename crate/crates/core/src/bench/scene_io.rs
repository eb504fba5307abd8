//! Loading a COLMAP-style scene directory for training and benchmarking.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{invalid, IoContext, Result};
use crate::image::Image;
use crate::init::colmap::{find_sparse_dir, ColmapModel};
use crate::pointcloud::PointCloud;
use crate::scalar::Real;
use crate::scene::{SceneDescriptor, TrainScene};

/// Default hold-out rule: every 8th image by name is a test view.
pub const DEFAULT_HOLDOUT_EVERY: usize = 8;

/// A scene directory with `images/` and a sparse model in `sparse/0`, `sparse` or the
/// directory itself.
#[derive(Clone, Debug)]
pub struct BenchScene<T> {
    /// Directory name, used as the scene id in reports.
    pub id: String,
    pub root: PathBuf,
    pub scene: TrainScene<T>,
    pub sfm: PointCloud<T>,
    /// For each camera (in scene order), the indices of SfM points it observes.
    pub observed: Vec<Vec<usize>>,
    /// Hex SHA-256 over the sparse model files and the image names and sizes.
    pub fingerprint: String,
}

fn scene_id(dir: &Path) -> String {
    dir.canonicalize()
        .ok()
        .as_deref()
        .unwrap_or(dir)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into())
}

fn fingerprint(sparse: &Path, images: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    let mut files: Vec<PathBuf> = fs::read_dir(sparse)
        .at(sparse)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_stem()
                .and_then(|s| s.to_str())
                .is_some_and(|s| matches!(s, "cameras" | "images" | "points3D"))
        })
        .collect();
    files.sort();
    for f in files {
        h.update(f.file_name().unwrap().to_string_lossy().as_bytes());
        h.update(fs::read(&f).at(&f)?);
    }
    for p in images {
        let len = fs::metadata(p).at(p)?.len();
        h.update(p.file_name().unwrap_or_default().to_string_lossy().as_bytes());
        h.update(len.to_le_bytes());
    }
    Ok(hex(&h.finalize()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Load cameras, images, the SfM cloud and per-image observations. Cameras are ordered
/// by image name and every `holdout_every`-th one is held out for testing (0 disables).
pub fn load_scene<T: Real>(dir: &Path, holdout_every: usize) -> Result<BenchScene<T>> {
    let sparse = find_sparse_dir(dir)?;
    let model = ColmapModel::read_dir(&sparse)?;
    let cameras = model.to_cameras::<T>()?;
    if cameras.is_empty() {
        return invalid(format!("no images in the sparse model at {}", sparse.display()));
    }
    let sfm = model.point_cloud::<T>()?;
    let names = model.image_names();
    let index_of: BTreeMap<i64, usize> =
        model.points.iter().enumerate().map(|(i, p)| (p.id as i64, i)).collect();
    let by_id: BTreeMap<u32, &crate::init::colmap::ColmapImage> = model.images.iter().map(|im| (im.id, im)).collect();

    let image_dir = dir.join("images");
    let mut paths = Vec::with_capacity(cameras.len());
    let mut images = Vec::with_capacity(cameras.len());
    let mut observed = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        let path = image_dir.join(&names[&cam.id]);
        images.push(Image::load(&path)?);
        paths.push(path);
        let seen: BTreeSet<usize> =
            by_id[&cam.id].points2d.iter().filter_map(|(_, _, pid)| index_of.get(pid).copied()).collect();
        observed.push(seen.into_iter().collect());
    }
    let ids: Vec<u32> = cameras.iter().map(|c| c.id).collect();
    let (train_ids, test_ids) = SceneDescriptor::<T>::holdout_every(&ids, holdout_every);
    let pos: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let train = train_ids.iter().map(|id| pos[id]).collect();
    let test = test_ids.iter().map(|id| pos[id]).collect();
    let fingerprint = fingerprint(&sparse, &paths)?;
    Ok(BenchScene {
        id: scene_id(dir),
        root: dir.to_path_buf(),
        scene: TrainScene::new(cameras, images, train, test)?,
        sfm,
        observed,
        fingerprint,
    })
}
