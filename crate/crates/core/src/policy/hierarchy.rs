//! Option hierarchies: which duties each option decides, and how a unit's
//! action index maps back to duty values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decision::{AllocationDecision, Classifier, Control};
use crate::error::{Error, Result};

/// One of the four allocation duties.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Duty {
    AssignRobotToPoi,
    NavAutonomy,
    CaptureAutonomy,
    ClassifyAssignee,
}

impl Duty {
    pub const ALL: [Duty; 4] = [
        Duty::AssignRobotToPoi,
        Duty::NavAutonomy,
        Duty::CaptureAutonomy,
        Duty::ClassifyAssignee,
    ];

    /// Number of choices per POI: a robot index, or "none / human h" for the others.
    pub fn arity(self, k: usize, i: usize) -> usize {
        match self {
            Duty::AssignRobotToPoi => i,
            _ => k + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptionKind {
    AssignRobotToPoi,
    NavAutonomy,
    CaptureAutonomy,
    ClassifyAssignee,
    /// Cartesian product of duties, row-major with the first duty most significant.
    Merged(Vec<Duty>),
}

impl OptionKind {
    fn single(duty: Duty) -> Self {
        match duty {
            Duty::AssignRobotToPoi => OptionKind::AssignRobotToPoi,
            Duty::NavAutonomy => OptionKind::NavAutonomy,
            Duty::CaptureAutonomy => OptionKind::CaptureAutonomy,
            Duty::ClassifyAssignee => OptionKind::ClassifyAssignee,
        }
    }

    pub fn duties(&self) -> Vec<Duty> {
        match self {
            OptionKind::AssignRobotToPoi => vec![Duty::AssignRobotToPoi],
            OptionKind::NavAutonomy => vec![Duty::NavAutonomy],
            OptionKind::CaptureAutonomy => vec![Duty::CaptureAutonomy],
            OptionKind::ClassifyAssignee => vec![Duty::ClassifyAssignee],
            OptionKind::Merged(d) => d.clone(),
        }
    }
}

/// One option: `units` sequential decisions (one per POI), each over `arity` actions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub index: usize,
    pub units: usize,
    pub arity: usize,
    pub kind: OptionKind,
    duties: Vec<Duty>,
    radices: Vec<usize>,
}

impl OptionSpec {
    fn new(index: usize, duties: Vec<Duty>, k: usize, i: usize, j: usize) -> Self {
        let radices: Vec<usize> = duties.iter().map(|d| d.arity(k, i)).collect();
        let kind = if duties.len() == 1 {
            OptionKind::single(duties[0])
        } else {
            OptionKind::Merged(duties.clone())
        };
        Self {
            index,
            units: j,
            arity: radices.iter().product(),
            kind,
            duties,
            radices,
        }
    }

    pub fn duties(&self) -> &[Duty] {
        &self.duties
    }

    /// Splits a unit action into one value per duty.
    pub fn decode(&self, mut action: usize) -> Vec<(Duty, usize)> {
        assert!(action < self.arity, "action {action} out of range for arity {}", self.arity);
        let mut out = vec![(Duty::AssignRobotToPoi, 0); self.duties.len()];
        for (slot, (&duty, &radix)) in self.duties.iter().zip(&self.radices).enumerate().rev() {
            out[slot] = (duty, action % radix);
            action /= radix;
        }
        out
    }

    /// Inverse of [`OptionSpec::decode`]; `values` are in duty order.
    pub fn encode(&self, values: &[usize]) -> usize {
        assert_eq!(values.len(), self.duties.len());
        values.iter().zip(&self.radices).fold(0, |acc, (&v, &radix)| {
            assert!(v < radix);
            acc * radix + v
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HierarchyVariant {
    /// A single option deciding all four duties at once.
    Flat,
    /// Assignment, navigation and capture merged; then classification.
    Two,
    /// Assignment; navigation and capture merged; classification.
    Three,
    /// One option per duty.
    Four,
}

impl HierarchyVariant {
    pub fn levels(self) -> usize {
        match self {
            HierarchyVariant::Flat => 1,
            HierarchyVariant::Two => 2,
            HierarchyVariant::Three => 3,
            HierarchyVariant::Four => 4,
        }
    }

    fn groups(self) -> Vec<Vec<Duty>> {
        use Duty::*;
        match self {
            HierarchyVariant::Flat => vec![vec![AssignRobotToPoi, NavAutonomy, CaptureAutonomy, ClassifyAssignee]],
            HierarchyVariant::Two => vec![
                vec![AssignRobotToPoi, NavAutonomy, CaptureAutonomy],
                vec![ClassifyAssignee],
            ],
            HierarchyVariant::Three => vec![
                vec![AssignRobotToPoi],
                vec![NavAutonomy, CaptureAutonomy],
                vec![ClassifyAssignee],
            ],
            HierarchyVariant::Four => Duty::ALL.iter().map(|&d| vec![d]).collect(),
        }
    }
}

impl fmt::Display for HierarchyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HierarchyVariant::Flat => "flat",
            HierarchyVariant::Two => "aehrl2",
            HierarchyVariant::Three => "aehrl3",
            HierarchyVariant::Four => "aehrl4",
        })
    }
}

impl FromStr for HierarchyVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flat" => Ok(HierarchyVariant::Flat),
            "aehrl2" | "2" => Ok(HierarchyVariant::Two),
            "aehrl3" | "3" => Ok(HierarchyVariant::Three),
            "aehrl4" | "4" => Ok(HierarchyVariant::Four),
            other => Err(Error::Config(format!("unknown hierarchy variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionHierarchy {
    pub variant: HierarchyVariant,
    pub options: Vec<OptionSpec>,
    pub k: usize,
    pub i: usize,
    pub j: usize,
}

pub fn build_hierarchy(variant: HierarchyVariant, k: usize, i: usize, j: usize) -> Result<OptionHierarchy> {
    if k == 0 || i == 0 {
        return Err(Error::Config(format!("need k ≥ 1 and i ≥ 1, got k={k} i={i}")));
    }
    let options = variant
        .groups()
        .into_iter()
        .enumerate()
        .map(|(n, duties)| OptionSpec::new(n, duties, k, i, j))
        .collect();
    Ok(OptionHierarchy {
        variant,
        options,
        k,
        i,
        j,
    })
}

impl OptionHierarchy {
    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    /// Builds the decision from per-option unit actions.
    pub fn assemble(&self, actions: &[Vec<usize>]) -> Result<AllocationDecision> {
        if actions.len() != self.options.len() {
            return Err(Error::Contract(format!(
                "{} action sequences for {} options",
                actions.len(),
                self.options.len()
            )));
        }
        let mut d = AllocationDecision::baseline(self.j);
        for (spec, seq) in self.options.iter().zip(actions) {
            if seq.len() != spec.units {
                return Err(Error::Contract(format!(
                    "option {} produced {} actions for {} units",
                    spec.index,
                    seq.len(),
                    spec.units
                )));
            }
            for (p, &a) in seq.iter().enumerate() {
                if a >= spec.arity {
                    return Err(Error::Contract(format!("option {} action {a} ≥ arity {}", spec.index, spec.arity)));
                }
                for (duty, v) in spec.decode(a) {
                    match duty {
                        Duty::AssignRobotToPoi => d.poi_to_robot[p] = v,
                        Duty::NavAutonomy => d.nav_control[p] = Control::from_action(v),
                        Duty::CaptureAutonomy => d.capture_control[p] = Control::from_action(v),
                        Duty::ClassifyAssignee => d.classify[p] = Classifier::from_action(v),
                    }
                }
            }
        }
        Ok(d)
    }

    /// Per-option unit actions that reproduce `decision`.
    pub fn disassemble(&self, decision: &AllocationDecision) -> Vec<Vec<usize>> {
        self.options
            .iter()
            .map(|spec| {
                (0..spec.units)
                    .map(|p| {
                        let values: Vec<usize> = spec
                            .duties()
                            .iter()
                            .map(|duty| match duty {
                                Duty::AssignRobotToPoi => decision.poi_to_robot[p],
                                Duty::NavAutonomy => decision.nav_control[p].action(),
                                Duty::CaptureAutonomy => decision.capture_control[p].action(),
                                Duty::ClassifyAssignee => decision.classify[p].action(),
                            })
                            .collect();
                        spec.encode(&values)
                    })
                    .collect()
            })
            .collect()
    }
}
