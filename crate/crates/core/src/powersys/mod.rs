//! Four-bus slow/fast power-system simulator.

pub mod detect;
pub mod equilibrium;
pub mod network;
pub mod params;
pub mod scenario;
pub mod sim;
pub mod state;

pub use detect::{detect_instability, TrajectoryWindow};
pub use equilibrium::{initialize, solve_short_term_equilibrium, FastEquilibrium, OperatingPoint, SlowVars};
pub use network::{NetworkModel, NetworkSolution};
pub use params::SystemParams;
pub use scenario::{simulate_trajectory, ScenarioConfig, Trajectory, TrajectoryRow};
pub use sim::{FastVars, Simulator};
pub use state::*;
