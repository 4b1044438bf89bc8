//! Markov-modulated multiclass many-server queues in the Halfin–Whitt regime:
//! environment analytics, exact prelimit simulation, the limiting controlled
//! diffusion, HJB solvers, Foster–Lyapunov drift scans and cost estimators.

pub mod control;
pub mod cost;
pub mod diffusion;
pub mod env_chain;
pub mod error;
pub mod grid;
pub mod hjb;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod rates;
pub mod rng;
pub mod sim;
pub mod stability;
pub mod stats;

pub use nalgebra;

pub use control::MarkovControl;
pub use cost::{EmpiricalMeasure, ExperimentReport};
pub use diffusion::{DiffusionSpec, SdePath};
pub use env_chain::{EnvAnalytics, EnvGenerator};
pub use error::{Error, Result};
pub use grid::Grid;
pub use model::{DerivedQuantities, ModelParams, NoiseRegime};
pub use policy::{Assignment, SchedulingPolicy};
pub use rates::RateTable;
pub use sim::{JointState, JointTrajectory, Simulator};
pub use stats::Estimate;
