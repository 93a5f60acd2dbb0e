//! Ground truth: Monte Carlo estimation, the toy plant and its
//! dynamic-programming solution.

pub mod compare;
pub mod dp;
pub mod mc;
pub mod surface;
pub mod toy;

pub use compare::{compare_learned_vs_oracle, evaluation_grid, linspace, ComparisonReport};
pub use dp::{dp_evaluate_policy, dp_solve_toy, DpTable, GridSpec, Quadrature};
pub use mc::{mc_estimate, mc_results, spearman, wilson, EpisodeResult, McEstimate, Z95};
pub use surface::{risk_surface, RiskSurface, SurfaceCell, SurfaceGrid, SURFACE_HEADER};
pub use toy::{toy_env, toy_env_at, ToyConfig, ToyEnv, ToyPlant};
