//! Function approximation and the multi-critic TD3 learner.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod replay;
pub mod td3;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use mlp::{gradient_check, Activation, ForwardCache, GradientCheck, Layer, Mlp};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use td3::{ActorPolicy, CriticPair, Ensemble, PolicyAverage, Td3Config, UpdateStats};
pub use train::{curve_header, evaluate_greedy, CurveRow, Trainer};
