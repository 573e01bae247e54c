//! Rigid transforms, twists and the SE(3) exponential / logarithm.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};
use std::f64::consts::PI;
use std::ops::{Mul, Neg};

/// Below this angle the V-matrix coefficients switch to their Taylor series.
const SMALL_ANGLE: f64 = 1e-6;
/// Within this distance of pi the rotation axis is read from `R + R^T`.
const NEAR_PI: f64 = 1e-6;

/// Skew-symmetric (cross product) matrix of `v`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] for the antisymmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// A rigid transform: `p_parent = rotation * p_child + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Fixed-axis roll/pitch/yaw (URDF convention): `R = Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        let rotation = rotation_about(&Vector3::z(), rpy[2])
            * rotation_about(&Vector3::y(), rpy[1])
            * rotation_about(&Vector3::x(), rpy[0]);
        Self { rotation, translation: Vector3::from(xyz) }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        Self { rotation: m.fixed_view::<3, 3>(0, 0).into_owned(), translation: m.fixed_view::<3, 1>(0, 3).into_owned() }
    }

    /// Largest deviation from `R^T R = I` and `det R = 1`.
    pub fn orthonormality_error(&self) -> f64 {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        ortho.max((self.rotation.determinant() - 1.0).abs())
    }

    /// Frobenius distance of the rotations plus translation distance.
    pub fn distance(&self, other: &Pose) -> f64 {
        (self.rotation - other.rotation).norm() + (self.translation - other.translation).norm()
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose { rotation: self.rotation * rhs.rotation, translation: self.rotation * rhs.translation + self.translation }
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        *self * *rhs
    }
}

/// An element of se(3), linear part first.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.linear.x, self.linear.y, self.linear.z, self.angular.x, self.angular.y, self.angular.z)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self { linear: Vector3::new(v[0], v[1], v[2]), angular: Vector3::new(v[3], v[4], v[5]) }
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

impl Neg for Twist {
    type Output = Twist;

    fn neg(self) -> Twist {
        Twist { linear: -self.linear, angular: -self.angular }
    }
}

/// Rodrigues rotation about a unit `axis` by `angle`.
pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    exp_so3(&(axis * angle))
}

pub fn exp_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation vector of `r`, angle in `[0, pi]`.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let antisym = vee(r);
    // atan2 stays well conditioned near 0 and pi, where acos does not.
    let theta = antisym.norm().atan2(cos_theta);

    if theta < SMALL_ANGLE {
        // sin(theta)/theta ~ 1 - theta^2/6
        return antisym * (1.0 + theta * theta / 6.0);
    }
    if PI - theta < NEAR_PI {
        // R + R^T = 2 cos(theta) I + 2 (1 - cos(theta)) a a^T
        let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
        let scale = 1.0 - cos_theta;
        let k = (0..3).max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)])).unwrap_or(0);
        let mut axis: Vector3<f64> = sym.column(k).into_owned() / (sym[(k, k)] * scale).sqrt();
        axis /= axis.norm();
        // sin(theta) is tiny but its sign still fixes the axis orientation.
        if axis.dot(&antisym) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    antisym * (theta / theta.sin())
}

/// V matrix of the SE(3) exponential: `t = V(omega) v`.
pub fn left_jacobian_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    let (b, c) = if theta < SMALL_ANGLE {
        (0.5 - theta * theta / 24.0, 1.0 / 6.0 - theta * theta / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() + k * b + k * k * c
}

/// Closed-form inverse of [`left_jacobian_so3`].
pub fn left_jacobian_so3_inverse(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / (theta * theta)
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

pub fn exp6(xi: &Twist) -> Pose {
    Pose { rotation: exp_so3(&xi.angular), translation: left_jacobian_so3(&xi.angular) * xi.linear }
}

/// Coupled SE(3) logarithm: the rotation vector together with `V^-1 t`.
pub fn log6(x: &Pose) -> Twist {
    let angular = log_so3(&x.rotation);
    let linear = left_jacobian_so3_inverse(&angular) * x.translation;
    Twist { linear, angular }
}
