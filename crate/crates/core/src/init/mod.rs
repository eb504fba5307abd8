//! Initial Gaussian clouds: SfM and dense point clouds, EDGS imports and random
//! baselines, with subsampling to a target size and optional position noise.

pub mod colmap;
pub mod edgs;
pub mod ply;

pub use colmap::{load_colmap_sparse, ColmapCamera, ColmapImage, ColmapModel, ColmapPoint};
pub use edgs::{import_edgs, read_edgs, write_edgs};
pub use ply::{read_gaussian_ply, read_ply_points, write_gaussian_ply, write_ply_points, PlyFormat};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{invalid, Error, Result};
use crate::gaussians::GaussianCloud;
use crate::geometry::{knn_mean_distance, scene_extent};
use crate::math::{quat_identity, Vec3};
use crate::pointcloud::PointCloud;
use crate::scalar::{logit, Real};
use crate::sh::{rgb_to_sh_dc, sh_coeff_count};

pub const INITIAL_OPACITY: f64 = 0.1;
pub const KNN_NEIGHBORS: usize = 4;

/// One Gaussian per point: isotropic scale from the mean distance to the 4 nearest
/// neighbors, opacity 0.1, identity rotation, DC color from the point, higher SH zero.
pub fn points_to_gaussians<T: Real>(pc: &PointCloud<T>, sh_degree: usize) -> Result<GaussianCloud<T>> {
    pc.validate()?;
    if pc.is_empty() {
        return invalid("cannot build Gaussians from an empty point cloud");
    }
    let mut cloud = GaussianCloud::with_capacity(sh_degree, pc.len())?;
    let dists = if pc.len() >= 2 {
        knn_mean_distance(pc, KNN_NEIGHBORS)?
    } else {
        vec![T::one(); 1]
    };
    let op = logit(T::lit(INITIAL_OPACITY));
    let mut sh = vec![[T::zero(); 3]; sh_coeff_count(sh_degree)];
    for i in 0..pc.len() {
        sh[0] = pc.colors[i].map(rgb_to_sh_dc);
        cloud.push(pc.positions[i], Vec3::splat(dists[i].ln()), quat_identity(), op, &sh)?;
    }
    Ok(cloud)
}

/// Exactly `n` distinct points drawn uniformly without replacement, in ascending
/// source order.
pub fn uniform_subsample<T: Real>(pc: &PointCloud<T>, n: usize, seed: u64) -> Result<PointCloud<T>> {
    Ok(pc.select(&subsample_indices(pc.len(), n, seed)?))
}

pub fn subsample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return invalid(format!("cannot draw {n} distinct points from {len}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, len, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Add i.i.d. `N(0, (fraction·extent)²)` noise to every coordinate.
pub fn perturb<T: Real>(positions: &mut [Vec3<T>], sigma_fraction: f64, extent: T, seed: u64) -> Result<()> {
    if !(sigma_fraction >= 0.0) {
        return invalid("noise fraction must be nonnegative");
    }
    let sigma = sigma_fraction * extent.as_f64();
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in positions {
        for k in 0..3 {
            p[k] += T::lit(normal.sample(&mut rng));
        }
    }
    Ok(())
}

/// `n` points uniform in the cube of side `2·extent` centered on the camera centroid,
/// with uniform random colors.
pub fn random_points<T: Real>(cameras: &[Camera<T>], n: usize, seed: u64) -> Result<PointCloud<T>> {
    let extent = scene_extent(cameras)?.as_f64();
    let half = if extent > 0.0 { extent } else { 1.0 };
    let mut c = Vec3::<f64>::zero();
    for cam in cameras {
        c += cam.center().cast();
    }
    let c = c.scale(1.0 / cameras.len() as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    for _ in 0..n {
        let p = Vec3::new(
            c.x + rng.random_range(-half..half),
            c.y + rng.random_range(-half..half),
            c.z + rng.random_range(-half..half),
        );
        positions.push(p.cast());
        colors.push([rng.random(), rng.random(), rng.random()].map(|v: f64| T::lit(v)));
    }
    PointCloud::new(positions, colors)
}

/// Where the initial Gaussians come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "path")]
pub enum InitSource {
    Sfm,
    DensePly(PathBuf),
    EdgsFile(PathBuf),
    Random,
}

impl fmt::Display for InitSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sfm => f.write_str("sfm"),
            Self::DensePly(p) => write!(f, "dense-ply:{}", p.display()),
            Self::EdgsFile(p) => write!(f, "edgs:{}", p.display()),
            Self::Random => f.write_str("random"),
        }
    }
}

impl FromStr for InitSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "sfm" => Ok(Self::Sfm),
            None if s == "random" => Ok(Self::Random),
            Some(("dense-ply", p)) | Some(("ply", p)) => Ok(Self::DensePly(p.into())),
            Some(("edgs", p)) => Ok(Self::EdgsFile(p.into())),
            _ => invalid(format!(
                "unknown init source '{s}' (expected sfm, random, dense-ply:<path> or edgs:<path>)"
            )),
        }
    }
}

/// Target number of initial Gaussians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitSize {
    /// Everything the source provides.
    All,
    Count(usize),
    /// Fraction of the scene's cap.
    Fraction(f64),
    /// Same size as the SfM point cloud.
    MatchSfm,
    /// Smallest of the compared initializers and the cap.
    Compare,
}

impl fmt::Display for InitSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::All => f.write_str("all"),
            Self::Count(n) => write!(f, "{n}"),
            Self::Fraction(x) => write!(f, "{x}x"),
            Self::MatchSfm => f.write_str("match-sfm"),
            Self::Compare => f.write_str("compare"),
        }
    }
}

impl FromStr for InitSize {
    type Err = Error;

    /// `all`, `match-sfm`, `compare`, an integer count, or a cap fraction written `0.5x`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "match-sfm" => Ok(Self::MatchSfm),
            "compare" => Ok(Self::Compare),
            _ => {
                if let Some(f) = s.strip_suffix('x') {
                    let v: f64 = f.parse().map_err(|_| Error::InvalidInput(format!("bad size fraction '{s}'")))?;
                    if !(v > 0.0) {
                        return invalid("size fraction must be positive");
                    }
                    Ok(Self::Fraction(v))
                } else {
                    s.parse()
                        .map(Self::Count)
                        .map_err(|_| Error::InvalidInput(format!("bad init size '{s}'")))
                }
            }
        }
    }
}

/// Quantities an [`InitSize`] may refer to.
#[derive(Clone, Debug, Default)]
pub struct SizeContext {
    pub cap: Option<usize>,
    pub sfm_size: Option<usize>,
    /// Size of the source actually used.
    pub source_size: Option<usize>,
    /// Sizes of every initializer in a comparison group.
    pub compare_sizes: Vec<usize>,
}

pub fn resolve_init_size(size: &InitSize, ctx: &SizeContext) -> Result<usize> {
    let need = |v: Option<usize>, what: &str| {
        v.ok_or_else(|| Error::InvalidInput(format!("init size '{size}' needs the {what}")))
    };
    match size {
        InitSize::All => need(ctx.source_size, "source size"),
        InitSize::Count(n) => Ok(*n),
        InitSize::Fraction(f) => {
            if !(*f > 0.0) {
                return invalid("size fraction must be positive");
            }
            Ok((f * need(ctx.cap, "cap")? as f64).round() as usize)
        }
        InitSize::MatchSfm => need(ctx.sfm_size, "SfM point count"),
        InitSize::Compare => {
            let cap = need(ctx.cap, "cap")?;
            if ctx.compare_sizes.is_empty() {
                return invalid("comparison mode needs the compared initializer sizes");
            }
            Ok(ctx.compare_sizes.iter().copied().fold(cap, usize::min))
        }
    }
}

/// Full description of one initializer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub source: InitSource,
    pub size: InitSize,
    /// Position noise σ as a fraction of the scene extent.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sh_degree")]
    pub sh_degree: usize,
}

fn default_sh_degree() -> usize {
    3
}

impl InitSpec {
    pub fn new(source: InitSource, size: InitSize) -> Self {
        Self { source, size, noise: 0.0, seed: 0, sh_degree: default_sh_degree() }
    }

    pub fn validate(&self) -> Result<()> {
        if let InitSize::Fraction(f) = self.size {
            if !(f > 0.0) {
                return invalid("size fraction must be positive");
            }
        }
        if !(self.noise >= 0.0) {
            return invalid("noise must be nonnegative");
        }
        if self.sh_degree > crate::sh::MAX_SH_DEGREE {
            return invalid("SH degree above 3");
        }
        Ok(())
    }

    /// Short label for reports, e.g. `sfm/match-sfm/σ0.01`.
    pub fn label(&self) -> String {
        let src = match &self.source {
            InitSource::Sfm => "sfm".to_string(),
            InitSource::Random => "random".to_string(),
            InitSource::DensePly(p) => format!("ply:{}", p.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default()),
            InitSource::EdgsFile(p) => format!("edgs:{}", p.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default()),
        };
        format!("{src}/{}/noise{}", self.size, self.noise)
    }
}

/// What [`build_init`] needs to know about the scene.
pub struct InitInputs<'a, T> {
    pub cameras: &'a [Camera<T>],
    pub sfm: &'a PointCloud<T>,
    pub cap: Option<usize>,
    pub compare_sizes: Vec<usize>,
}

/// Materialize an initializer. Requests larger than the source are clamped to its size.
pub fn build_init<T: Real>(spec: &InitSpec, inputs: &InitInputs<'_, T>) -> Result<GaussianCloud<T>> {
    spec.validate()?;
    let extent = scene_extent(inputs.cameras)?;
    let mut ctx = SizeContext {
        cap: inputs.cap,
        sfm_size: Some(inputs.sfm.len()),
        source_size: None,
        compare_sizes: inputs.compare_sizes.clone(),
    };
    let noise_seed = spec.seed.wrapping_add(0x9e37_79b9);
    let from_points = |pc: &PointCloud<T>, ctx: &mut SizeContext| -> Result<GaussianCloud<T>> {
        ctx.source_size = Some(pc.len());
        let n = resolve_init_size(&spec.size, ctx)?;
        if n > pc.len() {
            log::warn!("requested {n} initial points but the source has {}; using all", pc.len());
        }
        let mut pc = uniform_subsample(pc, n.min(pc.len()), spec.seed)?;
        perturb(&mut pc.positions, spec.noise, extent, noise_seed)?;
        points_to_gaussians(&pc, spec.sh_degree)
    };
    match &spec.source {
        InitSource::Sfm => from_points(inputs.sfm, &mut ctx),
        InitSource::DensePly(path) => from_points(&read_ply_points(path)?, &mut ctx),
        InitSource::Random => {
            let n = resolve_init_size(&spec.size, &ctx)?;
            let pc = random_points(inputs.cameras, n, spec.seed)?;
            points_to_gaussians(&pc, spec.sh_degree)
        }
        InitSource::EdgsFile(path) => {
            let full = read_edgs::<T>(path)?;
            ctx.source_size = Some(full.len());
            let n = resolve_init_size(&spec.size, &ctx)?;
            let mut cloud = import_edgs(&full, n, spec.seed)?;
            perturb(&mut cloud.means, spec.noise, extent, noise_seed)?;
            cloud.with_sh_degree(spec.sh_degree)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::sigmoid;
    use crate::sh::sh_evaluate;

    #[test]
    fn white_point_round_trips_color() {
        let pc = PointCloud::new(vec![Vec3::new(0.0, 0.0, 1.0)], vec![[1.0f64; 3]]).unwrap();
        let c = points_to_gaussians(&pc, 0).unwrap();
        let rgb = sh_evaluate(Vec3::new(0.0, 0.0, 1.0), c.sh_of(0), 0).unwrap();
        assert!(rgb.iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn two_points_get_their_distance() {
        let pc = PointCloud::new(vec![Vec3::zero(), Vec3::new(0.0, 0.3, 0.4)], vec![[0.5f64; 3]; 2]).unwrap();
        let c = points_to_gaussians(&pc, 3).unwrap();
        for i in 0..2 {
            assert!((c.scale(i).x - 0.5).abs() < 1e-12);
            assert!((sigmoid(c.opacity_logits[i]) - 0.1).abs() < 1e-9);
            assert!(c.sh_of(i)[1..].iter().flatten().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn subsample_edges() {
        let pc = PointCloud::new((0..5).map(|i| Vec3::splat(i as f64)).collect(), vec![[0.0; 3]; 5]).unwrap();
        assert_eq!(uniform_subsample(&pc, 5, 1).unwrap(), pc);
        assert!(uniform_subsample(&pc, 0, 1).unwrap().is_empty());
        assert!(uniform_subsample(&pc, 6, 1).is_err());
    }

    #[test]
    fn size_resolution() {
        let ctx = SizeContext { cap: Some(1000), sfm_size: Some(321), source_size: None, compare_sizes: vec![] };
        assert_eq!(resolve_init_size(&InitSize::Fraction(0.5), &ctx).unwrap(), 500);
        assert_eq!(resolve_init_size(&InitSize::MatchSfm, &ctx).unwrap(), 321);
        assert!(resolve_init_size(&InitSize::All, &ctx).is_err());
        let cmp = SizeContext { cap: Some(50_000), compare_sizes: vec![40_000, 55_000], ..Default::default() };
        assert_eq!(resolve_init_size(&InitSize::Compare, &cmp).unwrap(), 40_000);
        let nocap = SizeContext::default();
        assert!(resolve_init_size(&InitSize::Fraction(0.5), &nocap).is_err());
    }

    #[test]
    fn spec_strings_parse() {
        assert_eq!("0.75x".parse::<InitSize>().unwrap(), InitSize::Fraction(0.75));
        assert_eq!("1200".parse::<InitSize>().unwrap(), InitSize::Count(1200));
        assert_eq!("match-sfm".parse::<InitSize>().unwrap(), InitSize::MatchSfm);
        assert!("-1x".parse::<InitSize>().is_err());
        assert_eq!("edgs:a/b.edgs".parse::<InitSource>().unwrap(), InitSource::EdgsFile("a/b.edgs".into()));
        assert!("laser".parse::<InitSource>().is_err());
    }

    #[test]
    fn spec_toml_round_trip() {
        let mut s = InitSpec::new(InitSource::DensePly("scan.ply".into()), InitSize::Fraction(0.5));
        s.noise = 0.01;
        let text = toml::to_string(&s).unwrap();
        assert_eq!(toml::from_str::<InitSpec>(&text).unwrap(), s);
    }
}
