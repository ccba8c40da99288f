pub mod hierarchy;
pub mod model;
pub mod ppo;

pub use hierarchy::{build_hierarchy, Duty, HierarchyVariant, OptionHierarchy, OptionKind, OptionSpec};
pub use model::{DecodeMode, EpisodeTrace, ModelConfig, OptionTrace, PolicyModel, UnitInput};
pub use ppo::{episode_gradients, ppo_update, rollout, LossStats, EpisodeRecord, PpoConfig, TrajectoryBatch, UpdateMetrics};
