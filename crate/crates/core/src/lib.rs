//! Flow-matching laboratory at desk scale.
//!
//! The crate bundles everything needed to study inversion-free editing
//! between two conditional flow distributions on synthetic data:
//!
//! - [`state`], [`grid`], [`rng`], [`path`]: vectors, time grids, seeded
//!   randomness and the rectified affine path.
//! - [`mixture`]: conditional Gaussian mixtures with exact posterior means,
//!   used as ground truth for every learned quantity.
//! - [`net`]: a small conditional velocity MLP trained by conditional flow
//!   matching, with hand-written backpropagation and checkpointing.
//! - [`field`], [`sampler`]: velocity sources and Euler integration, plus the
//!   DDIB and SDEdit baselines.
//! - [`edit`]: FlowAlign, FlowEdit, the plain two-trajectory update and
//!   backward editing.
//! - [`oc`]: closed-form and brute-force solutions of the terminal-regularized
//!   control problem, and the Tweedie approximation residual.
//! - [`distill`]: the FlowAlign drift used as a parameter gradient for a
//!   linear generator.

pub mod distill;
pub mod edit;
pub mod error;
pub mod field;
pub mod grid;
pub mod mixture;
pub mod net;
pub mod oc;
pub mod path;
pub mod rng;
pub mod sampler;
pub mod state;

pub use error::{Error, Result};
pub use field::{Label, VelocityField};
pub use grid::TimeGrid;
pub use rng::RandomStream;
pub use state::StateVec;
