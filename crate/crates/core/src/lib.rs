//! Spring-rod physics engine with modular, dimensionally reduced system
//! identification.
//!
//! The crate is organized along the data flow of one simulated time step:
//! spring observations feed a force model, forces feed per-rod accelerations,
//! and a semi-implicit Euler step produces the next state. The same pipeline
//! is used both as the ground-truth simulator ([`sim`]) and as the learnable
//! engine ([`ident`]), whose parameters enter linearly and can therefore be
//! fitted by least squares.
//!
//! Baselines live in [`koopman`] (polynomial lift + least squares) and
//! [`blackbox`] (trajectory matching with CMA-ES or a bounded quasi-Newton
//! search). All identification methods are exposed through the name-keyed
//! [`strategy::Registry`].

pub mod blackbox;
pub mod error;
pub mod eval;
pub mod ident;
pub mod io;
pub mod koopman;
pub mod linalg;
pub mod math;
pub mod params;
pub mod presets;
pub mod sim;
pub mod state;
pub mod strategy;
pub mod topology;

pub use error::{Error, Result};
pub use math::{Mat3, Quat, Vec3};
pub use params::{EngineParams, RodParams, SpringParams, Tying};
pub use state::{ControlInput, RodState, SystemState, Trajectory};
pub use topology::{AttachmentRef, End, RodSpec, SpringSpec, SystemConfig, TopologyGraph};
