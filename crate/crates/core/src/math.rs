//! Vector and quaternion helpers shared by the simulator and the fitters.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Rotation matrix taking rod-local vectors to the world frame.
pub fn rotation_matrix(q: &Quat) -> Mat3 {
    *q.to_rotation_matrix().matrix()
}

/// `R · (0, 0, half_length)`: the world-frame vector from the center of mass
/// to the `+` end of a rod.
pub fn half_axis(q: &Quat, half_length: f64) -> Vec3 {
    q * Vec3::new(0.0, 0.0, half_length)
}

/// Linear map `ω ↦ (0, ω) ⊗ q` as a 4×3 matrix acting on `(w, x, y, z)`.
pub fn omega_product_jacobian(q: &Quaternion<f64>) -> nalgebra::Matrix4x3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    // scalar part: -ω·v ; vector part: wω + ω×v = (wE - [v]×) ω
    nalgebra::Matrix4x3::new(
        -x, -y, -z, //
        w, z, -y, //
        -z, w, x, //
        y, -x, w,
    )
}

/// First-order attitude update with a world-frame angular velocity, followed
/// by renormalization.
pub fn advance_orientation(q: &Quat, omega: &Vec3, dt: f64) -> Quat {
    let raw = q.quaternion();
    let dq = Quaternion::from_imag(*omega) * raw * (0.5 * dt);
    UnitQuaternion::new_normalize(raw + dq)
}

pub fn quat_to_array(q: &Quat) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

pub fn quat_from_array(c: [f64; 4]) -> Quat {
    UnitQuaternion::new_normalize(Quaternion::new(c[0], c[1], c[2], c[3]))
}

pub fn all_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}
