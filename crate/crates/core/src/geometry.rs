//! Scene-level geometric quantities.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::camera::Camera;
use crate::error::{invalid, Result};
use crate::math::{quat_to_mat, Mat3, Quat, Vec3};
use crate::pointcloud::PointCloud;
use crate::scalar::Real;

/// Floor applied to neighbor distances so coincident points still get a valid log-scale.
pub const MIN_SCALE: f64 = 1e-7;

/// Largest distance from a camera center to the centroid of all camera centers.
pub fn scene_extent<T: Real>(cameras: &[Camera<T>]) -> Result<T> {
    if cameras.is_empty() {
        return invalid("scene extent needs at least one camera");
    }
    let centers: Vec<Vec3<T>> = cameras.iter().map(|c| c.center()).collect();
    let n = T::from_usize_lossy(centers.len());
    let mut mean = Vec3::zero();
    for c in &centers {
        mean += *c;
    }
    let mean = mean.scale(T::one() / n);
    Ok(centers
        .iter()
        .map(|c| (*c - mean).norm())
        .fold(T::zero(), T::max))
}

/// `R·diag(s²)·Rᵀ` with `s = exp(log_scale)`; the quaternion is normalized first.
pub fn covariance_from_params<T: Real>(log_scale: Vec3<T>, rotation: &Quat<T>) -> Mat3<T> {
    let r = quat_to_mat(rotation);
    let s = log_scale.map(|v| v.exp());
    let m = r.mul_mat(&Mat3::diag(s));
    let mut cov = m.mul_mat(&m.transpose());
    // exact symmetry regardless of rounding order
    for i in 0..3 {
        for j in (i + 1)..3 {
            let avg = (cov.m[i][j] + cov.m[j][i]) * T::lit(0.5);
            cov.m[i][j] = avg;
            cov.m[j][i] = avg;
        }
    }
    cov
}

/// Mean distance from each point to its `k` nearest other points (all others when fewer exist),
/// floored at [`MIN_SCALE`].
pub fn knn_mean_distance<T: Real>(points: &PointCloud<T>, k: usize) -> Result<Vec<T>> {
    knn_mean_distance_positions(&points.positions, k)
}

pub fn knn_mean_distance_positions<T: Real>(positions: &[Vec3<T>], k: usize) -> Result<Vec<T>> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if positions.len() < 2 {
        return invalid("k-NN distance needs at least two points");
    }
    let k = k.min(positions.len() - 1);
    let tree = KdTree::build(positions);
    let floor = T::lit(MIN_SCALE);
    Ok(positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let found = tree.nearest_excluding(positions, *p, k, i);
            let sum: T = found.iter().map(|(d2, _)| d2.sqrt()).sum();
            (sum / T::from_usize_lossy(found.len())).max(floor)
        })
        .collect())
}

struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Static 3-d tree over borrowed positions.
pub struct KdTree {
    nodes: Vec<Node>,
    root: Option<usize>,
}

#[derive(PartialEq)]
struct Candidate<T>(T, usize);

impl<T: Real> Eq for Candidate<T> {}

impl<T: Real> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .partial_cmp(&other.0)
            .unwrap_or(Ordering::Equal)
            .then(self.1.cmp(&other.1))
    }
}

impl KdTree {
    pub fn build<T: Real>(positions: &[Vec3<T>]) -> Self {
        let mut idx: Vec<usize> = (0..positions.len()).collect();
        let mut nodes = Vec::with_capacity(positions.len());
        let root = Self::build_rec(positions, &mut idx, 0, &mut nodes);
        Self { nodes, root }
    }

    fn build_rec<T: Real>(
        positions: &[Vec3<T>],
        idx: &mut [usize],
        depth: usize,
        nodes: &mut Vec<Node>,
    ) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            positions[a][axis]
                .partial_cmp(&positions[b][axis])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        let point = idx[mid];
        let slot = nodes.len();
        nodes.push(Node {
            point,
            axis,
            left: None,
            right: None,
        });
        let (lo, hi) = idx.split_at_mut(mid);
        let left = Self::build_rec(positions, lo, depth + 1, nodes);
        let right = Self::build_rec(positions, &mut hi[1..], depth + 1, nodes);
        nodes[slot].left = left;
        nodes[slot].right = right;
        Some(slot)
    }

    /// The `k` nearest points to `query` as `(squared distance, index)`, ascending, skipping `exclude`.
    pub fn nearest_excluding<T: Real>(
        &self,
        positions: &[Vec3<T>],
        query: Vec3<T>,
        k: usize,
        exclude: usize,
    ) -> Vec<(T, usize)> {
        let mut heap: BinaryHeap<Candidate<T>> = BinaryHeap::with_capacity(k + 1);
        if let Some(r) = self.root {
            self.search(positions, r, query, k, exclude, &mut heap);
        }
        let mut out: Vec<(T, usize)> = heap.into_iter().map(|c| (c.0, c.1)).collect();
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        out
    }

    fn search<T: Real>(
        &self,
        positions: &[Vec3<T>],
        node: usize,
        query: Vec3<T>,
        k: usize,
        exclude: usize,
        heap: &mut BinaryHeap<Candidate<T>>,
    ) {
        let n = &self.nodes[node];
        let p = positions[n.point];
        if n.point != exclude {
            let d2 = (p - query).norm_squared();
            if heap.len() < k {
                heap.push(Candidate(d2, n.point));
            } else if let Some(top) = heap.peek() {
                if d2 < top.0 {
                    heap.pop();
                    heap.push(Candidate(d2, n.point));
                }
            }
        }
        let diff = query[n.axis] - p[n.axis];
        let (near, far) = if diff < T::zero() {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if let Some(c) = near {
            self.search(positions, c, query, k, exclude, heap);
        }
        if let Some(c) = far {
            let worst = heap.peek().map(|c| c.0);
            if heap.len() < k || worst.is_some_and(|w| diff * diff < w) {
                self.search(positions, c, query, k, exclude, heap);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{look_at, quat_normalize};
    use proptest::prelude::*;

    fn cam_at(id: u32, eye: Vec3<f64>) -> Camera<f64> {
        let (r, t) = look_at(eye, Vec3::new(0.0, 0.0, 10.0), Vec3::new(0.0, -1.0, 0.0));
        Camera::new(id, 10.0, 10.0, 4.0, 4.0, 8, 8, r, t).unwrap()
    }

    #[test]
    fn extent_examples() {
        let two = [cam_at(0, Vec3::new(-1.0, 0.0, 0.0)), cam_at(1, Vec3::new(1.0, 0.0, 0.0))];
        assert!((scene_extent(&two).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(scene_extent(&[cam_at(0, Vec3::new(3.0, 2.0, 1.0))]).unwrap(), 0.0);
        let four: Vec<_> = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| cam_at(i as u32, Vec3::new(x, y, 0.0)))
            .collect();
        assert!((scene_extent(&four).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(scene_extent::<f64>(&[]).is_err());
    }

    #[test]
    fn covariance_examples() {
        let id = covariance_from_params(Vec3::<f64>::zero(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(id, Mat3::identity());
        let c = covariance_from_params(Vec3::new(2f64.ln(), 0.0, 0.0), &[1.0, 0.0, 0.0, 0.0]);
        assert!((c.m[0][0] - 4.0).abs() < 1e-12);
        assert!((c.m[1][1] - 1.0).abs() < 1e-12 && c.m[0][1] == 0.0);
    }

    fn brute_knn(pos: &[Vec3<f64>], k: usize) -> Vec<f64> {
        pos.iter()
            .enumerate()
            .map(|(i, p)| {
                let mut d: Vec<f64> = pos
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| (*q - *p).norm())
                    .collect();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let k = k.min(d.len());
                (d[..k].iter().sum::<f64>() / k as f64).max(MIN_SCALE)
            })
            .collect()
    }

    #[test]
    fn knn_examples() {
        let two = vec![Vec3::new(0.0f64, 0.0, 0.0), Vec3::new(0.0, 3.0, 4.0)];
        assert_eq!(knn_mean_distance_positions(&two, 4).unwrap(), vec![5.0, 5.0]);
        let square = vec![
            Vec3::new(0.0f64, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        ];
        for d in knn_mean_distance_positions(&square, 2).unwrap() {
            assert!((d - 1.0).abs() < 1e-15);
        }
        let dup = vec![Vec3::new(1.0f64, 1.0, 1.0); 3];
        assert_eq!(knn_mean_distance_positions(&dup, 4).unwrap(), vec![MIN_SCALE; 3]);
        assert!(knn_mean_distance_positions(&dup[..1], 4).is_err());
        assert!(knn_mean_distance_positions(&dup, 0).is_err());
    }

    proptest! {
        #[test]
        fn knn_matches_brute_force(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 2..200),
            k in 1usize..8,
        ) {
            let pos: Vec<_> = pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let fast = knn_mean_distance_positions(&pos, k).unwrap();
            let slow = brute_knn(&pos, k);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn covariance_is_symmetric_psd_with_squared_scale_spectrum(
            ls in (-2.0f64..1.0, -2.0f64..1.0, -2.0f64..1.0),
            q in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
        ) {
            let quat = [q.0, q.1, q.2, q.3];
            prop_assume!(crate::math::quat_norm(&quat) > 1e-3);
            let log_scale = Vec3::new(ls.0, ls.1, ls.2);
            let cov = covariance_from_params(log_scale, &quat_normalize(&quat));
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((cov.m[i][j] - cov.m[j][i]).abs() <= 1e-12);
                }
            }
            let m = nalgebra::Matrix3::from_fn(|i, j| cov.m[i][j]);
            let mut eig: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
            eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut s2: Vec<f64> = log_scale.to_array().iter().map(|v| (2.0 * v).exp()).collect();
            s2.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (e, s) in eig.iter().zip(&s2) {
                prop_assert!(*e >= -1e-12);
                prop_assert!((e - s).abs() < 1e-9 * s.max(1.0));
            }
        }

        #[test]
        fn extent_invariant_under_rigid_motion(
            eyes in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 2..10),
            q in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
            t in (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0),
        ) {
            let quat = [q.0, q.1, q.2, q.3];
            prop_assume!(crate::math::quat_norm(&quat) > 1e-3);
            let g = quat_to_mat(&quat);
            let shift = Vec3::new(t.0, t.1, t.2);
            let cams: Vec<_> = eyes.iter().enumerate()
                .map(|(i, &(x, y, z))| cam_at(i as u32, Vec3::new(x, y, z))).collect();
            // world' = g·world + shift  ⇒  R' = R·gᵀ,  t' = t − R·gᵀ·shift
            let moved: Vec<_> = cams.iter().map(|c| {
                let r2 = c.rotation.mul_mat(&g.transpose());
                let t2 = c.translation - r2.mul_vec(shift);
                Camera::new(c.id, c.fx, c.fy, c.cx, c.cy, c.width, c.height, r2, t2).unwrap()
            }).collect();
            let a = scene_extent(&cams).unwrap();
            let b = scene_extent(&moved).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
