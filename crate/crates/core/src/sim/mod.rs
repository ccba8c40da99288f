pub mod human;
pub mod mission;
pub mod robot;

pub use human::{difficulty_factor, fatigue_factor, human_classification_prob, workload_factor};
pub use mission::{
    mission_reward, simulate_mission, simulate_mission_with_id, MissionOutcome, MissionSimulator, PoiRecord,
    ScoringMode,
};
pub use robot::{effective_speed_and_quality, min_task_duration, robot_classification_prob, speed_table, OperatorColumn};
