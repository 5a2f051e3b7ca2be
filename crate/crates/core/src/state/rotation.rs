//! SO(3) helpers on top of `nalgebra`'s unit quaternion.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

pub type Quat = UnitQuaternion<f64>;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Quaternion of the rotation vector `w`.
pub fn exp(w: &Vector3<f64>) -> Quat {
    UnitQuaternion::from_scaled_axis(*w)
}

/// Rotation vector of `q`, with angle in `[0, pi]`.
pub fn log(q: &Quat) -> Vector3<f64> {
    q.scaled_axis()
}

/// `a * b`, renormalized.
pub fn compose(a: &Quat, b: &Quat) -> Quat {
    let mut q = a * b;
    q.renormalize();
    q
}

/// Right Jacobian of SO(3): `exp(w + dw) ~ exp(w) exp(Jr(w) dw)`.
pub fn right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-6 {
        return Matrix3::identity() - 0.5 * k + k * k / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() - (1.0 - theta.cos()) / t2 * k + (theta - theta.sin()) / (t2 * theta) * k * k
}

/// Geodesic angle between two orientations in radians.
pub fn angle_between(a: &Quat, b: &Quat) -> f64 {
    a.angle_to(b)
}
