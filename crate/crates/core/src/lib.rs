//! Online learning for linear mixture stochastic shortest path problems.
//!
//! The crate contains the environment models and exact oracles ([`env`]),
//! per-level weighted ridge regression ([`wls`]), high-order moment
//! variance estimation ([`home`]), the optimistic planner ([`devi`]), the
//! online agent with its ablations ([`agent`]) and the experiment harness
//! ([`harness`]).

pub mod agent;
pub mod devi;
pub mod env;
pub mod error;
pub mod harness;
pub mod home;
pub mod wls;

pub use error::{Error, Result};
