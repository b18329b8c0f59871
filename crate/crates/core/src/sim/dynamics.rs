use crate::math::{advance_orientation, rotation_matrix, Quat, Vec3};
use crate::params::RodParams;
use crate::state::RodState;
use crate::sim::EndForces;
use crate::state::ControlInput;

/// World-frame angular acceleration `R I⁻¹ Rᵀ τ` for `I = diag(I11, I11, I33)`.
pub fn angular_from_torque(q: &Quat, rod: &RodParams, torque: &Vec3) -> Vec3 {
    let r = rotation_matrix(q);
    let local = r.transpose() * torque;
    let scaled = Vec3::new(local.x / rod.i11, local.y / rod.i11, local.z / rod.i33);
    r * scaled
}

/// Linear and angular acceleration of a rod.
///
/// `control` must already carry the effective (scaled) force. `half_axis` is
/// the world-frame vector to the `+` end.
pub fn rod_acceleration(
    forces: &EndForces,
    control: &ControlInput,
    half_axis: &Vec3,
    q: &Quat,
    rod: &RodParams,
    gravity: &Vec3,
) -> (Vec3, Vec3) {
    let a = (forces.plus + forces.minus + control.force) / rod.mass + gravity;
    // r × F₊ + (-r) × F₋ = r × (F₊ - F₋)
    let torque = half_axis.cross(&(forces.plus - forces.minus)) + control.arm.cross(&control.force);
    (a, angular_from_torque(q, rod, &torque))
}

/// Velocities first, then positions with the updated velocities.
pub fn integrate_semi_implicit(state: &RodState, a: &Vec3, alpha: &Vec3, dt: f64) -> RodState {
    let v = state.v + a * dt;
    let omega = state.omega + alpha * dt;
    RodState {
        p: state.p + v * dt,
        v,
        q: advance_orientation(&state.q, &omega, dt),
        omega,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rod(mass: f64, i11: f64) -> RodParams {
        RodParams { mass, i11, i33: i11 * 0.1 }
    }

    #[test]
    fn equal_end_forces_translate() {
        let f = EndForces {
            plus: Vec3::new(0.0, 0.0, -5.0),
            minus: Vec3::new(0.0, 0.0, -5.0),
        };
        let (a, alpha) = rod_acceleration(
            &f,
            &ControlInput::default(),
            &Vec3::new(0.0, 0.0, 1.0),
            &Quat::identity(),
            &rod(10.0, 1.0),
            &Vec3::zeros(),
        );
        assert!((a - Vec3::new(0.0, 0.0, -1.0)).amax() < 1e-15);
        assert_eq!(alpha, Vec3::zeros());
    }

    #[test]
    fn couple_produces_spin() {
        let f = EndForces {
            plus: Vec3::new(1.0, 0.0, 0.0),
            minus: Vec3::new(-1.0, 0.0, 0.0),
        };
        let (a, alpha) = rod_acceleration(
            &f,
            &ControlInput::default(),
            &Vec3::new(0.0, 0.0, 0.5),
            &Quat::identity(),
            &rod(10.0, 1.0),
            &Vec3::zeros(),
        );
        assert_eq!(a, Vec3::zeros());
        assert!((alpha - Vec3::new(0.0, 1.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn free_fall() {
        let g = Vec3::new(0.0, 0.0, -9.81);
        let (a, alpha) = rod_acceleration(
            &EndForces::default(),
            &ControlInput::default(),
            &Vec3::new(0.0, 0.0, 1.0),
            &Quat::identity(),
            &rod(3.0, 1.0),
            &g,
        );
        assert_eq!(a, g);
        assert_eq!(alpha, Vec3::zeros());
    }

    #[test]
    fn ballistic_step() {
        let s = RodState {
            p: Vec3::new(1.0, 0.0, 0.0),
            v: Vec3::new(0.5, -1.0, 2.0),
            q: Quat::identity(),
            omega: Vec3::new(0.0, 0.0, 1.0),
        };
        let n = integrate_semi_implicit(&s, &Vec3::zeros(), &Vec3::zeros(), 0.01);
        assert!((n.p - (s.p + s.v * 0.01)).amax() < 1e-15);
        assert_eq!(n.v, s.v);
        assert!((n.q.angle() - 0.01).abs() < 1e-6);
    }

    #[test]
    fn gravity_step_values() {
        let s = RodState::at_rest(Vec3::zeros(), Quat::identity());
        let n = integrate_semi_implicit(&s, &Vec3::new(0.0, 0.0, -9.81), &Vec3::zeros(), 0.002);
        assert!((n.v.z + 0.01962).abs() < 1e-15);
        assert!((n.p.z + 0.00003924).abs() < 1e-15);
    }

    #[test]
    fn full_revolution_returns() {
        let mut s = RodState {
            p: Vec3::zeros(),
            v: Vec3::zeros(),
            q: Quat::from_euler_angles(0.2, 0.4, -0.3),
            omega: Vec3::new(0.0, 0.0, 2.0 * PI),
        };
        let start = s.q;
        for _ in 0..1000 {
            s = integrate_semi_implicit(&s, &Vec3::zeros(), &Vec3::zeros(), 0.001);
        }
        assert!(start.angle_to(&s.q) < 1e-3, "angle error {}", start.angle_to(&s.q));
    }
}
