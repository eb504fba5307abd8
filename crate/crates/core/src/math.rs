//! Small fixed-size linear algebra used by projection and its adjoint.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    #[inline]
    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    #[inline]
    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    #[inline]
    pub fn mul_elem(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    #[inline]
    pub fn map(self, f: impl Fn(T) -> T) -> Self {
        Self::new(f(self.x), f(self.y), f(self.z))
    }

    #[inline]
    pub fn max_elem(self) -> T {
        self.x.max(self.y).max(self.z)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(
            U::lit(self.x.as_f64()),
            U::lit(self.y.as_f64()),
            U::lit(self.z.as_f64()),
        )
    }
}

impl<T: Real> Index<usize> for Vec3<T> {
    type Output = T;
    #[inline]
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T: Real> IndexMut<usize> for Vec3<T> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut T {
        match i {
            0 => &mut self.x,
            1 => &mut self.y,
            2 => &mut self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    #[inline]
    pub const fn from_rows(m: [[T; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn zero() -> Self {
        Self::from_rows([[T::zero(); 3]; 3])
    }

    pub fn diag(d: Vec3<T>) -> Self {
        let z = T::zero();
        Self::from_rows([[d.x, z, z], [z, d.y, z], [z, z, d.z]])
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self::from_rows([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    #[inline]
    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] =
                    self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        out.m.iter_mut().flatten().for_each(|v| *v *= s);
        out
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] += o.m[i][j];
            }
        }
        out
    }

    pub fn determinant(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn column(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::from_array(self.m[i])
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Mat3<U> {
        let mut out = Mat3::<U>::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = U::lit(self.m[i][j].as_f64());
            }
        }
        out
    }

    /// Distance of `RᵀR` from the identity, max-abs entry.
    pub fn orthonormality_error(&self) -> T {
        let p = self.transpose().mul_mat(self);
        let id = Self::identity();
        let mut e = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                e = e.max((p.m[i][j] - id.m[i][j]).abs());
            }
        }
        e
    }
}

/// Unit quaternion stored as `[w, x, y, z]`.
pub type Quat<T> = [T; 4];

pub fn quat_identity<T: Real>() -> Quat<T> {
    [T::one(), T::zero(), T::zero(), T::zero()]
}

pub fn quat_norm<T: Real>(q: &Quat<T>) -> T {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn quat_normalize<T: Real>(q: &Quat<T>) -> Quat<T> {
    let n = quat_norm(q);
    if n <= T::zero() || !n.is_finite() {
        return quat_identity();
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion (no normalization performed).
pub fn quat_to_mat_unit<T: Real>(q: &Quat<T>) -> Mat3<T> {
    let [w, x, y, z] = *q;
    let one = T::one();
    let two = T::lit(2.0);
    Mat3::from_rows([
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ])
}

pub fn quat_to_mat<T: Real>(q: &Quat<T>) -> Mat3<T> {
    quat_to_mat_unit(&quat_normalize(q))
}

/// Adjoint of [`quat_to_mat_unit`]: maps dL/dR to dL/dq for a unit `q`.
pub fn quat_to_mat_unit_vjp<T: Real>(q: &Quat<T>, d_r: &Mat3<T>) -> Quat<T> {
    let [w, x, y, z] = *q;
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let g = &d_r.m;
    let dw = two * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let dx = two * (y * g[0][1] + z * g[0][2] + y * g[1][0] - w * g[1][2] + z * g[2][0] + w * g[2][1])
        - four * x * (g[1][1] + g[2][2]);
    let dy = two * (x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1])
        - four * y * (g[0][0] + g[2][2]);
    let dz = two * (-w * g[0][1] + x * g[0][2] + w * g[1][0] + y * g[1][2] + x * g[2][0] + y * g[2][1])
        - four * z * (g[0][0] + g[1][1]);
    [dw, dx, dy, dz]
}

/// Chain rule through `q / |q|`.
pub fn quat_normalize_vjp<T: Real>(q: &Quat<T>, d_unit: &Quat<T>) -> Quat<T> {
    let n = quat_norm(q);
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let proj = u[0] * d_unit[0] + u[1] * d_unit[1] + u[2] * d_unit[2] + u[3] * d_unit[3];
    [
        (d_unit[0] - u[0] * proj) / n,
        (d_unit[1] - u[1] * proj) / n,
        (d_unit[2] - u[2] * proj) / n,
        (d_unit[3] - u[3] * proj) / n,
    ]
}

/// Quaternion of a proper rotation matrix (Shepperd's method).
pub fn mat_to_quat<T: Real>(r: &Mat3<T>) -> Quat<T> {
    let m = &r.m;
    let one = T::one();
    let quarter = T::lit(0.25);
    let trace = m[0][0] + m[1][1] + m[2][2];
    let q = if trace > T::zero() {
        let s = (trace + one).sqrt() * T::lit(2.0);
        [
            quarter * s,
            (m[2][1] - m[1][2]) / s,
            (m[0][2] - m[2][0]) / s,
            (m[1][0] - m[0][1]) / s,
        ]
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::lit(2.0);
        [
            (m[2][1] - m[1][2]) / s,
            quarter * s,
            (m[0][1] + m[1][0]) / s,
            (m[0][2] + m[2][0]) / s,
        ]
    } else if m[1][1] > m[2][2] {
        let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::lit(2.0);
        [
            (m[0][2] - m[2][0]) / s,
            (m[0][1] + m[1][0]) / s,
            quarter * s,
            (m[1][2] + m[2][1]) / s,
        ]
    } else {
        let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::lit(2.0);
        [
            (m[1][0] - m[0][1]) / s,
            (m[0][2] + m[2][0]) / s,
            (m[1][2] + m[2][1]) / s,
            quarter * s,
        ]
    };
    quat_normalize(&q)
}

/// Rotation that maps the camera looking down +z to look from `eye` at `target`,
/// returned as a world-to-camera rotation and translation (OpenCV axes: x right, y down).
pub fn look_at<T: Real>(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>) -> (Mat3<T>, Vec3<T>) {
    let forward = (target - eye).scale(T::one() / (target - eye).norm());
    let mut right = forward.cross(up);
    if right.norm() < T::lit(1e-9) {
        right = forward.cross(Vec3::new(T::one(), T::zero(), T::zero()));
    }
    let right = right.scale(T::one() / right.norm());
    let down = forward.cross(right);
    let rot = Mat3::from_rows([right.to_array(), down.to_array(), forward.to_array()]);
    let trans = -rot.mul_vec(eye);
    (rot, trans)
}

/// Eigen-decomposition of a symmetric 2×2 matrix `[[a, b], [b, c]]`: returns (λ_max, λ_min).
#[inline]
pub fn sym2_eigenvalues<T: Real>(a: T, b: T, c: T) -> (T, T) {
    let half = T::lit(0.5);
    let mid = half * (a + c);
    let disc = (half * (a - c)).powi(2) + b * b;
    let r = disc.max(T::zero()).sqrt();
    (mid + r, mid - r)
}

/// Eigenvalues and eigenvectors of a symmetric 3×3 matrix via cyclic Jacobi rotations.
/// Eigenvectors are the columns of the returned matrix.
pub fn sym3_eigen<T: Real>(a: &Mat3<T>) -> (Vec3<T>, Mat3<T>) {
    let mut m = *a;
    let mut v = Mat3::<T>::identity();
    for _ in 0..64 {
        let off = m.m[0][1].abs() + m.m[0][2].abs() + m.m[1][2].abs();
        if off <= T::epsilon() * T::lit(1e-3) {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = m.m[p][q];
            if apq == T::zero() {
                continue;
            }
            let theta = (m.m[q][q] - m.m[p][p]) / (T::lit(2.0) * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            let mut j = Mat3::<T>::identity();
            j.m[p][p] = c;
            j.m[q][q] = c;
            j.m[p][q] = s;
            j.m[q][p] = -s;
            m = j.transpose().mul_mat(&m).mul_mat(&j);
            v = v.mul_mat(&j);
        }
    }
    (Vec3::new(m.m[0][0], m.m[1][1], m.m[2][2]), v)
}
