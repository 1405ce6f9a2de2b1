//! Sampling-based sum-of-squares invariant funnels around reference
//! trajectories, with Monte Carlo validation.
//!
//! The pipeline: polynomialize the closed-loop deviation dynamics
//! ([`dynamics`]), take TVLQR value matrices as Lyapunov certificates
//! ([`lqr`]), sample the funnel-slice boundaries and disturbance set
//! ([`sampling`]), and solve one small SDP per time step ([`funnel`], backed
//! by [`sdp`]). [`validation`] checks the result against dispersed rollouts.

pub mod dynamics;
pub mod funnel;
pub mod io;
pub mod linalg;
pub mod lqr;
pub mod pipeline;
pub mod poly;
pub mod registry;
pub mod sampling;
pub mod scenarios;
pub mod sdp;
pub mod validation;

pub use registry::{Registry, RegistryError};
