//! Simulation and analysis of quantized-weight training with straight-through
//! coarse gradients on a one-hidden-layer teacher network.
//!
//! The crate is organised around the iteration
//!
//! ```text
//! y^{t+1} = y^t - eta_t * g(w^t),    w^t = nproj(y^t)
//! ```
//!
//! where `nproj` projects the float weights onto binary or ternary codebooks
//! and rescales to unit norm, and `g` is the population (or sampled) coarse
//! gradient obtained with the ReLU straight-through estimator.
//!
//! * [`geometry`]: orthants, magnitude-ordering cones and their vertex sets.
//! * [`quantize`]: closed-form projections and a brute-force oracle.
//! * [`model`]: network, losses, coarse gradients, Monte-Carlo estimators.
//! * [`dynamics`]: schedules, configs, the stepping rules and trajectories.
//! * [`analysis`]: recurrence, cycles, oscillation, limit sets, conditions.
//! * [`io`]: CSV/JSON artifacts.
//! * [`cli`]: the `quantrec` command-line front end.

pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod io;
pub mod model;
pub mod quantize;
pub mod vector;

pub use error::{Error, Result};
pub use geometry::{ConeDescriptor, Membership, SignPattern, VertexSet};
pub use quantize::{QuantizationMode, QuantizedWeight};
