//! Allocator kinds, the random baseline, and allocator construction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::context::MultiAttributeContext;
use crate::decision::{AllocationDecision, Classifier, Control};
use crate::error::{Error, Result};
use crate::policy::hierarchy::HierarchyVariant;
use crate::policy::model::{ModelConfig, PolicyModel};
use crate::rng::CounterRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AllocatorKind {
    Ra,
    AtRl,
    Hrl2,
    Hrl3,
    Hrl4,
    AtHrl2,
    AtHrl3,
    AtHrl4,
    AeHrl2,
    AeHrl3,
    AeHrl4,
}

/// How a learned allocator turns the context into option contexts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Representation {
    /// Dense layers on the flattened, zero-padded context matrices.
    Dense,
    /// Recurrent embedding and cross-attribute attention, no prior actions.
    CrossAttention,
    /// Cross-attribute attention whose values also see the previous option's actions.
    Hierarchical,
}

impl AllocatorKind {
    pub const ALL: [AllocatorKind; 11] = [
        AllocatorKind::Ra,
        AllocatorKind::AtRl,
        AllocatorKind::Hrl2,
        AllocatorKind::Hrl3,
        AllocatorKind::Hrl4,
        AllocatorKind::AtHrl2,
        AllocatorKind::AtHrl3,
        AllocatorKind::AtHrl4,
        AllocatorKind::AeHrl2,
        AllocatorKind::AeHrl3,
        AllocatorKind::AeHrl4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AllocatorKind::Ra => "ra",
            AllocatorKind::AtRl => "atrl",
            AllocatorKind::Hrl2 => "hrl2",
            AllocatorKind::Hrl3 => "hrl3",
            AllocatorKind::Hrl4 => "hrl4",
            AllocatorKind::AtHrl2 => "athrl2",
            AllocatorKind::AtHrl3 => "athrl3",
            AllocatorKind::AtHrl4 => "athrl4",
            AllocatorKind::AeHrl2 => "aehrl2",
            AllocatorKind::AeHrl3 => "aehrl3",
            AllocatorKind::AeHrl4 => "aehrl4",
        }
    }

    pub fn is_learned(self) -> bool {
        self != AllocatorKind::Ra
    }

    pub fn hierarchy(self) -> Option<HierarchyVariant> {
        use AllocatorKind::*;
        use HierarchyVariant::*;
        match self {
            Ra => None,
            AtRl => Some(Flat),
            Hrl2 | AtHrl2 | AeHrl2 => Some(Two),
            Hrl3 | AtHrl3 | AeHrl3 => Some(Three),
            Hrl4 | AtHrl4 | AeHrl4 => Some(Four),
        }
    }

    pub fn representation(self) -> Option<Representation> {
        use AllocatorKind::*;
        match self {
            Ra => None,
            Hrl2 | Hrl3 | Hrl4 => Some(Representation::Dense),
            AtRl | AtHrl2 | AtHrl3 | AtHrl4 => Some(Representation::CrossAttention),
            AeHrl2 | AeHrl3 | AeHrl4 => Some(Representation::Hierarchical),
        }
    }
}

impl fmt::Display for AllocatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AllocatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        AllocatorKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown allocator kind `{s}`")))
    }
}

/// Independent uniform choices for every duty of every POI.
pub fn random_allocation(ctx: &MultiAttributeContext, seed: u64) -> AllocationDecision {
    let (k, i, j) = (ctx.k(), ctx.i(), ctx.j());
    let mut rng = CounterRng::new(seed, 0);
    let mut d = AllocationDecision::baseline(j);
    for p in 0..j {
        d.poi_to_robot[p] = rng.below(i);
        d.nav_control[p] = Control::from_action(rng.below(k + 1));
        d.capture_control[p] = Control::from_action(rng.below(k + 1));
        d.classify[p] = Classifier::from_action(rng.below(k + 1));
    }
    d
}

pub enum Allocator {
    Random,
    Learned(Box<PolicyModel>),
}

impl Allocator {
    pub fn kind(&self) -> AllocatorKind {
        match self {
            Allocator::Random => AllocatorKind::Ra,
            Allocator::Learned(m) => m.config().kind,
        }
    }

    /// Greedy decoding for learned allocators; `seed` drives the random one.
    pub fn allocate(&self, ctx: &MultiAttributeContext, seed: u64) -> Result<AllocationDecision> {
        match self {
            Allocator::Random => Ok(random_allocation(ctx, seed)),
            Allocator::Learned(m) => Ok(m.act_greedy(ctx)?),
        }
    }
}

/// Fresh allocator with default model settings.
pub fn build_allocator(kind: AllocatorKind, k: usize, i: usize, j: usize) -> Result<Allocator> {
    if !kind.is_learned() {
        return Ok(Allocator::Random);
    }
    Ok(Allocator::Learned(Box::new(PolicyModel::new(ModelConfig::new(kind, k, i, j))?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{sample_context, ScenarioSpec};

    #[test]
    fn names_round_trip() {
        for k in AllocatorKind::ALL {
            assert_eq!(k.name().parse::<AllocatorKind>().unwrap(), k);
        }
        assert!("aehrl5".parse::<AllocatorKind>().is_err());
    }

    #[test]
    fn random_allocation_is_uniform_and_seeded() {
        let ctx = sample_context(&ScenarioSpec::new(2, 2, 1, 0)).unwrap();
        let n = 10_000;
        let ones: usize = (0..n).map(|s| random_allocation(&ctx, s).poi_to_robot[0]).sum();
        assert!((ones as f64 / n as f64 - 0.5).abs() <= 0.02);
        assert_eq!(random_allocation(&ctx, 5), random_allocation(&ctx, 5));
        let empty = sample_context(&ScenarioSpec::new(2, 2, 0, 0)).unwrap();
        assert!(random_allocation(&empty, 1).is_empty());
    }
}
