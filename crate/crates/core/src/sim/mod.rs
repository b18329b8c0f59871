//! Forward dynamics: spring observations, force generation, acceleration
//! generation and semi-implicit Euler integration.

mod dataset;
mod dynamics;
mod forces;
mod rollout;

pub use dataset::{
    sample_dataset, sample_trajectory, sample_transition_subset, select_transitions, subset_count,
    total_transitions, trajectory_seed, transitions, Dataset, DatasetSpec, InitDistribution,
    OwnedTransition, PoolSpec, TransitionRef,
};
pub use dynamics::{angular_from_torque, integrate_semi_implicit, rod_acceleration};
pub use forces::{
    aggregate_endpoint_forces, endpoint_kinematics, observe_springs, reduce_springs, spring_force,
    spring_force_projected, spring_observation, EndForces, EndpointKinematics, ReducedSpring,
    SpringObservation, DEGENERATE_LENGTH,
};
pub use rollout::{
    rollout, rollout_with, step, step_with, AccelerationModel, Controls, PerturbationSchedule,
    BLOWUP_LIMIT,
};
