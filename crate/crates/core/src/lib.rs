//! Probabilistic reachability of multi-scale voltage collapse.
//!
//! * [`powersys`]: four-bus slow/fast simulator with LTC, OXL, AVR and an
//!   aggregate induction motor, plus first-hit instability detection.
//! * [`reach`]: augmented-state safety MDP with mechanism-specific rewards.
//! * [`neural`]: MLP, Adam, replay buffer and the multi-critic TD3 learner.
//! * [`oracle`]: Monte Carlo estimation, the toy environment and its
//!   dynamic-programming solution.

pub mod config;
pub mod error;
pub mod linalg;
pub mod neural;
pub mod oracle;
pub mod powersys;
pub mod reach;
pub mod rng;

pub use error::{Error, Result};
pub use rng::RandomStream;
