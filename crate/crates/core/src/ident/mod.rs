//! Identification of spring and rod parameters from recorded transitions.
//!
//! Acceleration is linear in `K/M`, `c/M`, `K/I`, `c/I` (and `h/M`, `h/I`
//! when controls are present), so the ratios can be solved for in closed
//! form or fitted by gradient descent on the one-step state error. Absolute
//! values need one anchor such as a known mass.

mod closed_form;
mod control;
mod features;
mod iterative;
mod resolve;

pub use closed_form::{fit_closed_form, ClosedFormFit, RatioEstimates, RatioModel};
pub use control::{tune_control_scalar, ControlFit};
pub use features::{build_features, ParamGroup, ParamLayout, RodSample, TransitionBatch, TransitionSample};
pub use iterative::{fit_iterative, loss_and_gradient, next_state_loss, AdamTrace, FitConfig, IterativeFit, STATE_DIM};
pub use resolve::{resolve_absolute_params, Anchor, Resolved};

use crate::error::Result;
use crate::params::EngineParams;
use crate::sim::{rollout, Controls};
use crate::state::{SystemState, Trajectory};
use crate::topology::SystemConfig;

/// Roll the simulator forward with identified parameters.
pub fn predict_rollout(
    params: &EngineParams,
    initial: &SystemState,
    config: &SystemConfig,
    n_steps: usize,
    controls: Controls<'_>,
) -> Result<Trajectory> {
    rollout(initial, config, params, n_steps, controls)
}
