//! Learning curve extrapolation with an architecture-conditioned latent
//! ODE.
//!
//! A GRU encoder summarizes the observed prefix of a learning curve into
//! a Gaussian posterior over the latent state; a graph encoder embeds the
//! architecture DAG; a neural vector field, integrated with fixed-step
//! RK4, evolves the latent state across the remaining epochs; a decoder
//! reads each state back out as a metric value. Everything trains
//! end-to-end by maximizing the evidence lower bound with reverse-mode
//! differentiation on a replayable tape.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod graph_encoder;
pub mod model;
pub mod normalize;
pub mod ode;
pub mod optim;
pub mod seq_encoder;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
