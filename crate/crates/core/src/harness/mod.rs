//! Training, evaluation, significance testing, and attention export.

pub mod attn;
pub mod eval;
pub mod stats;
pub mod train;

pub use attn::{export_attention, AttentionExport, AttributeAttention, Matrix, OptionAttention};
pub use eval::{
    compare, compare_all, evaluate, evaluate_template, parse_scoring_mode, parse_setting, scenario_allocator_seed,
    scenario_context_seed, Comparison, EvalReport, Metric, ScenarioRow,
};
pub use stats::{significance_stars, t_two_sided_p, welch_t_test, WelchResult};
pub use train::{
    checkpoint_path, load_allocator, metrics_path, optimizer_path, read_checkpoint, write_checkpoint,
    BanditEnvironment, CheckpointHeader, Environment, MetricsLog, MissionEnvironment, TrainConfig, TrainRecord,
    TrainState, Trainer,
};
