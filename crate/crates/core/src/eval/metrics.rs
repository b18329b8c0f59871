use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::Trajectory;

/// Per-step and accumulated rollout error against a reference.
///
/// Position MSE averages `|Δp|²/3` over rods; quaternion MSE averages
/// `min(|q - q'|², |q + q'|²)/4` over rods, so `q` and `-q` agree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub label: String,
    pub pos_mse: Vec<f64>,
    pub quat_mse: Vec<f64>,
}

fn running_sum(v: &[f64]) -> Vec<f64> {
    v.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

impl ErrorCurve {
    pub fn len(&self) -> usize {
        self.pos_mse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos_mse.is_empty()
    }

    pub fn accumulated_pos(&self) -> Vec<f64> {
        running_sum(&self.pos_mse)
    }

    pub fn accumulated_quat(&self) -> Vec<f64> {
        running_sum(&self.quat_mse)
    }

    pub fn final_accumulated_pos(&self) -> f64 {
        self.pos_mse.iter().sum()
    }

    pub fn final_accumulated_quat(&self) -> f64 {
        self.quat_mse.iter().sum()
    }

    /// `step,pos_mse,quat_mse,acc_pos_mse,acc_quat_mse`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,pos_mse,quat_mse,acc_pos_mse,acc_quat_mse\n");
        let (ap, aq) = (self.accumulated_pos(), self.accumulated_quat());
        for i in 0..self.len() {
            out.push_str(&format!(
                "{i},{:e},{:e},{:e},{:e}\n",
                self.pos_mse[i], self.quat_mse[i], ap[i], aq[i]
            ));
        }
        out
    }
}

/// Compare two rollouts state by state, including the shared initial state.
pub fn compare_rollouts(predicted: &Trajectory, reference: &Trajectory, label: &str) -> Result<ErrorCurve> {
    if predicted.states.len() != reference.states.len() {
        return Err(Error::HorizonMismatch {
            predicted: predicted.states.len(),
            reference: reference.states.len(),
        });
    }
    let mut pos = Vec::with_capacity(reference.states.len());
    let mut quat = Vec::with_capacity(reference.states.len());
    for (a, b) in predicted.states.iter().zip(&reference.states) {
        if a.rods.len() != b.rods.len() {
            return Err(Error::InvalidConfig("rollouts have different rod counts".into()));
        }
        let n = a.rods.len().max(1) as f64;
        let (mut p, mut q) = (0.0, 0.0);
        for (x, y) in a.rods.iter().zip(&b.rods) {
            p += (x.p - y.p).norm_squared() / 3.0;
            let (qa, qb) = (x.q.quaternion().coords, y.q.quaternion().coords);
            q += (qa - qb).norm_squared().min((qa + qb).norm_squared()) / 4.0;
        }
        pos.push(p / n);
        quat.push(q / n);
    }
    Ok(ErrorCurve {
        label: label.into(),
        pos_mse: pos,
        quat_mse: quat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Quat, Vec3};
    use crate::state::{RodState, SystemState};

    fn traj(states: Vec<SystemState>) -> Trajectory {
        let mut t = Trajectory::new("x", 0.01, states[0].clone());
        for s in &states[1..] {
            t.states.push(s.clone());
            t.controls.push(Vec::new());
        }
        t
    }

    fn rod(x: f64, q: Quat) -> SystemState {
        SystemState::new(vec![RodState::at_rest(Vec3::new(x, 0.0, 0.0), q)])
    }

    #[test]
    fn identical_is_zero_and_mismatch_errors() {
        let q = Quat::identity();
        let a = traj(vec![rod(0.0, q), rod(1.0, q)]);
        let c = compare_rollouts(&a, &a, "a").unwrap();
        assert!(c.pos_mse.iter().chain(&c.quat_mse).all(|&x| x == 0.0));
        let b = traj(vec![rod(0.0, q)]);
        assert!(matches!(compare_rollouts(&b, &a, "b"), Err(Error::HorizonMismatch { .. })));
    }

    #[test]
    fn frozen_prediction_diverges_monotonically() {
        let q = Quat::identity();
        let moving = traj((0..6).map(|i| rod(i as f64 * 0.1, q)).collect());
        let frozen = traj((0..6).map(|_| rod(0.0, q)).collect());
        let c = compare_rollouts(&frozen, &moving, "f").unwrap();
        let acc = c.accumulated_pos();
        assert!(acc[1..].windows(2).all(|w| w[1] > w[0]));
        assert!((c.pos_mse[2] - 0.04 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn quaternion_sign_is_ignored() {
        let q = Quat::from_euler_angles(0.3, -0.2, 1.0);
        let neg = Quat::new_unchecked(-q.into_inner());
        let c = compare_rollouts(&traj(vec![rod(0.0, neg)]), &traj(vec![rod(0.0, q)]), "s").unwrap();
        assert_eq!(c.quat_mse[0], 0.0);
    }
}
