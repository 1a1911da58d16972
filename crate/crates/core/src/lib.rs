//! Diffusion-based motion prediction and active-inference parking control.
//!
//! The crate simulates vehicles in an unmarked parking lot, generates
//! disorder-increasing trajectories by driving them out of their spots with
//! chained random actions, trains a physics-informed variational predictor to
//! reverse those trajectories, and uses the predictor inside an
//! expected-free-energy planner that parks vehicles.
//!
//! Module map:
//! - [`dynamics`] — vehicle state, stochastic kinematic bicycle model,
//!   state reversal, guidance features
//! - [`world`] — the simulated lot: spots, walls, collision detection,
//!   synchronized stepping, parked-success tests
//! - [`diffusion`] — forward noise schedule, chained action sampling,
//!   trajectory collection and dataset reversal
//! - [`nn`] — minimal dense MLP kernel with exact reverse-mode gradients
//!   and an adaptive-moment optimizer
//! - [`predictor`] — the physics-informed VAE: encoder, reparameterization,
//!   bicycle-model decoder, three-term loss, training and evaluation
//! - [`planner`] — generative rollouts, Boltzmann preferences, expected
//!   free energy, action selection, online adaptation, episode execution

pub mod diffusion;
pub mod dynamics;
pub mod error;
pub mod nn;
pub mod planner;
pub mod predictor;
pub mod rng;
pub mod world;

pub use error::{Error, Result};
