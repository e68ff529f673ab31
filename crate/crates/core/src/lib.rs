//! Multi-step MAML over synthetic task families.
//!
//! The crate covers both the resampling setting, where every inner step
//! draws fresh stochastic batches, and the finite-sum setting, where each
//! task carries fixed support and query sets. It provides exact and
//! stochastic meta-gradients, the constants that appear in the
//! convergence bounds, a trainer that logs exact stationarity, and a
//! Monte-Carlo verifier for the intermediate inequalities.
//!
//! Every random draw is derived from a [`rng::Stream`], so results depend
//! only on the seed and never on thread scheduling.

pub mod error;
pub mod experiment;
pub mod inner;
pub mod linalg;
pub mod meta;
pub mod rng;
pub mod stats;
pub mod task;
pub mod theory;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use rng::{Role, Stream};
pub use task::{Case, SmoothnessProfile, Task, TaskDistribution};
