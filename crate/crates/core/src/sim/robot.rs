//! Robot speed/image-quality table and onboard classification table.

use crate::context::{Difficulty, ImageQuality, RobotKind, RobotProfile, Tier};

/// Column of the speed/quality table: working with a low-skill operator,
/// autonomous (same as a medium-skill operator), or with a high-skill operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorColumn {
    Low,
    Medium,
    High,
}

impl OperatorColumn {
    pub fn for_operator(skill: Option<Tier>) -> Self {
        match skill {
            None | Some(Tier::Medium) => OperatorColumn::Medium,
            Some(Tier::Low) => OperatorColumn::Low,
            Some(Tier::High) => OperatorColumn::High,
        }
    }
}

pub fn speed_table(kind: RobotKind, column: OperatorColumn) -> (f64, ImageQuality) {
    use ImageQuality as Q;
    use OperatorColumn as C;
    match (kind, column) {
        (RobotKind::Uav, C::Low) => (10.0, Q::Low),
        (RobotKind::Uav, C::Medium) => (15.0, Q::Medium),
        (RobotKind::Uav, C::High) => (22.0, Q::UpperMedium),
        (RobotKind::Ugv, C::Low) => (4.0, Q::Medium),
        (RobotKind::Ugv, C::Medium) => (6.0, Q::UpperMedium),
        (RobotKind::Ugv, C::High) => (9.0, Q::High),
    }
}

/// Speed and image quality of a robot that is autonomous (`None`) or
/// co-controlled by an operator of the given skill tier.
pub fn effective_speed_and_quality(robot: &RobotProfile, operator_skill: Option<Tier>) -> (f64, ImageQuality) {
    speed_table(robot.kind, OperatorColumn::for_operator(operator_skill))
}

const TASK_TABLE: [[(f64, f64); 3]; 4] = [
    [(45.0, 0.5), (125.0, 0.3), (245.0, 0.1)],
    [(35.0, 0.6), (95.0, 0.4), (195.0, 0.2)],
    [(25.0, 0.7), (65.0, 0.5), (145.0, 0.3)],
    [(15.0, 0.8), (35.0, 0.6), (95.0, 0.4)],
];

/// Minimum task-completion duration t̄ in seconds.
pub fn min_task_duration(quality: ImageQuality, difficulty: Difficulty) -> f64 {
    TASK_TABLE[quality.level()][difficulty.level()].0
}

/// Probability that onboard classification is correct.
pub fn robot_classification_prob(quality: ImageQuality, difficulty: Difficulty) -> f64 {
    TASK_TABLE[quality.level()][difficulty.level()].1
}
