//! Team and task context: profiles, scenario sampling, and the numeric
//! encoding fed to the networks.

use std::f64::consts::FRAC_PI_4;
use std::fmt::Write as _;
use std::path::Path;

use ita_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::sim::robot::{min_task_duration, speed_table, OperatorColumn};

/// Side of the surveillance square used to normalize POI coordinates.
pub const AREA_SIDE: f64 = 2000.0;
/// Largest speed in the robot table, used to normalize `c_rc`.
pub const MAX_SPEED: f64 = 22.0;
/// Largest minimum task duration, used to normalize `c_ts`.
pub const MAX_TASK_DURATION: f64 = 245.0;

pub const HUMAN_FEATURES: usize = 2;
pub const ROBOT_FEATURES: usize = 4;
pub const TASK_FEATURES: usize = 4;

const TIER_LOW_END: f64 = std::f64::consts::PI / 12.0;
const TIER_MEDIUM_END: f64 = std::f64::consts::PI / 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Low,
    Medium,
    High,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Low, Tier::Medium, Tier::High];

    /// Angle bounds of the tier. Low and High are open at both ends, Medium is closed.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Tier::Low => (0.0, TIER_LOW_END),
            Tier::Medium => (TIER_LOW_END, TIER_MEDIUM_END),
            Tier::High => (TIER_MEDIUM_END, FRAC_PI_4),
        }
    }
}

/// Tier of a cognitive or skill angle in `(0, π/4)`.
pub fn tier_of(angle: f64) -> Result<Tier> {
    if !(angle > 0.0 && angle < FRAC_PI_4) {
        return Err(Error::Domain(format!("angle {angle} outside (0, π/4)")));
    }
    Ok(if angle < TIER_LOW_END {
        Tier::Low
    } else if angle <= TIER_MEDIUM_END {
        Tier::Medium
    } else {
        Tier::High
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HumanAngles", into = "HumanAngles")]
pub struct HumanProfile {
    cognitive_angle: f64,
    skill_angle: f64,
    tier_c: Tier,
    tier_s: Tier,
}

#[derive(Serialize, Deserialize)]
struct HumanAngles {
    cognitive_angle: f64,
    skill_angle: f64,
}

impl TryFrom<HumanAngles> for HumanProfile {
    type Error = Error;
    fn try_from(a: HumanAngles) -> Result<Self> {
        HumanProfile::new(a.cognitive_angle, a.skill_angle)
    }
}

impl From<HumanProfile> for HumanAngles {
    fn from(h: HumanProfile) -> Self {
        HumanAngles {
            cognitive_angle: h.cognitive_angle,
            skill_angle: h.skill_angle,
        }
    }
}

impl HumanProfile {
    pub fn new(cognitive_angle: f64, skill_angle: f64) -> Result<Self> {
        Ok(Self {
            cognitive_angle,
            skill_angle,
            tier_c: tier_of(cognitive_angle)?,
            tier_s: tier_of(skill_angle)?,
        })
    }

    pub fn cognitive_angle(&self) -> f64 {
        self.cognitive_angle
    }

    pub fn skill_angle(&self) -> f64 {
        self.skill_angle
    }

    pub fn cognitive_tier(&self) -> Tier {
        self.tier_c
    }

    pub fn skill_tier(&self) -> Tier {
        self.tier_s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RobotKind {
    Uav,
    Ugv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ImageQuality {
    Low,
    Medium,
    UpperMedium,
    High,
}

impl ImageQuality {
    pub const ALL: [ImageQuality; 4] = [
        ImageQuality::Low,
        ImageQuality::Medium,
        ImageQuality::UpperMedium,
        ImageQuality::High,
    ];

    pub fn level(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotProfile {
    pub kind: RobotKind,
    pub base_speed: f64,
    pub base_quality: ImageQuality,
}

impl RobotProfile {
    pub fn of(kind: RobotKind) -> Self {
        let (base_speed, base_quality) = speed_table(kind, OperatorColumn::Medium);
        Self {
            kind,
            base_speed,
            base_quality,
        }
    }

    pub fn uav() -> Self {
        Self::of(RobotKind::Uav)
    }

    pub fn ugv() -> Self {
        Self::of(RobotKind::Ugv)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn level(self) -> usize {
        self as usize
    }

    /// Points awarded for a correct classification and deducted for a wrong one.
    pub fn points(self) -> f64 {
        match self {
            Difficulty::Easy => 15.0,
            Difficulty::Medium => 25.0,
            Difficulty::Hard => 35.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub position: [f64; 2],
    pub difficulty: Difficulty,
    pub is_hazard: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiAttributeContext {
    pub humans: Vec<HumanProfile>,
    pub robots: Vec<RobotProfile>,
    pub tasks: Vec<TaskSpec>,
}

impl MultiAttributeContext {
    pub fn k(&self) -> usize {
        self.humans.len()
    }

    pub fn i(&self) -> usize {
        self.robots.len()
    }

    pub fn j(&self) -> usize {
        self.tasks.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.humans.is_empty() || self.robots.is_empty() {
            return Err(Error::Config("context needs at least one human and one robot".into()));
        }
        for (n, t) in self.tasks.iter().enumerate() {
            let [x, y] = t.position;
            if !((0.0..=AREA_SIDE).contains(&x) && (0.0..=AREA_SIDE).contains(&y)) {
                return Err(Error::Config(format!("POI {n} at ({x}, {y}) lies outside the area")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ctx: Self = serde_json::from_str(text)?;
        ctx.validate()?;
        Ok(ctx)
    }
}

/// Normalized per-attribute feature matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextMatrices {
    pub c_hf: Tensor,
    pub c_rc: Tensor,
    pub c_ts: Tensor,
}

pub fn encode_context(ctx: &MultiAttributeContext) -> ContextMatrices {
    let hf: Vec<[f64; HUMAN_FEATURES]> = ctx
        .humans
        .iter()
        .map(|h| [h.cognitive_angle / FRAC_PI_4, h.skill_angle / FRAC_PI_4])
        .collect();
    let rc: Vec<[f64; ROBOT_FEATURES]> = ctx
        .robots
        .iter()
        .map(|r| {
            let uav = (r.kind == RobotKind::Uav) as u8 as f64;
            [
                uav,
                1.0 - uav,
                r.base_speed / MAX_SPEED,
                r.base_quality.level() as f64 / 3.0,
            ]
        })
        .collect();
    let ts: Vec<[f64; TASK_FEATURES]> = ctx
        .tasks
        .iter()
        .map(|t| {
            [
                t.position[0] / AREA_SIDE,
                t.position[1] / AREA_SIDE,
                t.difficulty.level() as f64 / 2.0,
                min_task_duration(ImageQuality::Medium, t.difficulty) / MAX_TASK_DURATION,
            ]
        })
        .collect();
    ContextMatrices {
        c_hf: matrix(&hf, HUMAN_FEATURES),
        c_rc: matrix(&rc, ROBOT_FEATURES),
        c_ts: matrix(&ts, TASK_FEATURES),
    }
}

fn matrix<const N: usize>(rows: &[[f64; N]], cols: usize) -> Tensor {
    Tensor::from_vec(rows.len(), cols, rows.iter().flatten().copied().collect())
}

/// Parameters of the context distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub k: usize,
    pub i: usize,
    pub j: usize,
    pub uav_count: usize,
    pub area_side: f64,
    pub difficulty_weights: [f64; 3],
    pub hazard_ratio: f64,
    pub seed: u64,
}

const SPEC_KEYS: [&str; 8] = [
    "k",
    "i",
    "j",
    "uav_count",
    "area_side",
    "difficulty_weights",
    "hazard_ratio",
    "seed",
];

impl ScenarioSpec {
    /// Defaults: half the robots (rounded up) are UAVs, full 2 km area,
    /// equal difficulty weights, hazard ratio 0.5.
    pub fn new(k: usize, i: usize, j: usize, seed: u64) -> Self {
        Self {
            k,
            i,
            j,
            uav_count: i.div_ceil(2),
            area_side: AREA_SIDE,
            difficulty_weights: [1.0 / 3.0; 3],
            hazard_ratio: 0.5,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 || self.i == 0 {
            return bad(format!("need k ≥ 1 and i ≥ 1, got k={} i={}", self.k, self.i));
        }
        if self.uav_count > self.i {
            return bad(format!("uav_count {} exceeds i={}", self.uav_count, self.i));
        }
        if !(self.area_side > 0.0 && self.area_side <= AREA_SIDE) {
            return bad(format!("area_side {} outside (0, {AREA_SIDE}]", self.area_side));
        }
        let w = self.difficulty_weights;
        if w.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("difficulty_weights {w:?} are not a distribution"));
        }
        if !(0.0..=1.0).contains(&self.hazard_ratio) {
            return bad(format!("hazard_ratio {} outside [0, 1]", self.hazard_ratio));
        }
        Ok(())
    }

    pub fn to_kv_string(&self) -> String {
        let w = self.difficulty_weights;
        let mut s = String::new();
        let _ = writeln!(s, "k={}", self.k);
        let _ = writeln!(s, "i={}", self.i);
        let _ = writeln!(s, "j={}", self.j);
        let _ = writeln!(s, "uav_count={}", self.uav_count);
        let _ = writeln!(s, "area_side={:?}", self.area_side);
        let _ = writeln!(s, "difficulty_weights={:?},{:?},{:?}", w[0], w[1], w[2]);
        let _ = writeln!(s, "hazard_ratio={:?}", self.hazard_ratio);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are ignored;
    /// every key must appear exactly once.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut values: [Option<&str>; 8] = [None; 8];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            let slot = SPEC_KEYS
                .iter()
                .position(|&k| k == key.trim())
                .ok_or_else(|| Error::Parse(format!("line {}: unknown key `{}`", lineno + 1, key.trim())))?;
            if values[slot].replace(value.trim()).is_some() {
                return Err(Error::Parse(format!("duplicate key `{}`", SPEC_KEYS[slot])));
            }
        }
        let get = |slot: usize| values[slot].ok_or_else(|| Error::Parse(format!("missing key `{}`", SPEC_KEYS[slot])));
        let weights: Vec<f64> = get(5)?
            .split(',')
            .map(|p| parse_num::<f64>("difficulty_weights", p.trim()))
            .collect::<Result<_>>()?;
        let difficulty_weights: [f64; 3] = weights
            .try_into()
            .map_err(|_| Error::Parse("difficulty_weights needs three values".into()))?;
        let spec = Self {
            k: parse_num("k", get(0)?)?,
            i: parse_num("i", get(1)?)?,
            j: parse_num("j", get(2)?)?,
            uav_count: parse_num("uav_count", get(3)?)?,
            area_side: parse_num("area_side", get(4)?)?,
            difficulty_weights,
            hazard_ratio: parse_num("hazard_ratio", get(6)?)?,
            seed: parse_num("seed", get(7)?)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("bad value `{value}` for `{key}`")))
}

/// Streams used by [`sample_context`]; each entity list has its own so that
/// changing `j` leaves the sampled team unchanged.
const HUMAN_STREAM: u64 = 1;
const TASK_STREAM: u64 = 2;

fn sample_angle(rng: &mut CounterRng) -> f64 {
    let tier = Tier::ALL[rng.below(3)];
    let (lo, hi) = tier.bounds();
    loop {
        let angle = lo + (hi - lo) * rng.next_open01();
        // Rounding can land on a boundary that belongs to a neighbouring tier.
        if tier_of(angle).ok() == Some(tier) {
            return angle;
        }
    }
}

pub fn sample_context(spec: &ScenarioSpec) -> Result<MultiAttributeContext> {
    spec.validate()?;
    let mut rng = CounterRng::new(spec.seed, HUMAN_STREAM);
    let humans = (0..spec.k)
        .map(|_| {
            let hc = sample_angle(&mut rng);
            let hs = sample_angle(&mut rng);
            HumanProfile::new(hc, hs)
        })
        .collect::<Result<Vec<_>>>()?;
    let robots = (0..spec.i)
        .map(|r| RobotProfile::of(if r < spec.uav_count { RobotKind::Uav } else { RobotKind::Ugv }))
        .collect();
    let mut rng = CounterRng::new(spec.seed, TASK_STREAM);
    let tasks = (0..spec.j)
        .map(|_| {
            let x = rng.uniform(0.0, spec.area_side);
            let y = rng.uniform(0.0, spec.area_side);
            let difficulty = Difficulty::ALL[rng.categorical(&spec.difficulty_weights)];
            let is_hazard = rng.bernoulli(spec.hazard_ratio);
            TaskSpec {
                position: [x, y],
                difficulty,
                is_hazard,
            }
        })
        .collect();
    Ok(MultiAttributeContext { humans, robots, tasks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn tier_boundaries() {
        assert_eq!(tier_of(PI / 24.0).unwrap(), Tier::Low);
        assert_eq!(tier_of(PI / 12.0).unwrap(), Tier::Medium);
        assert_eq!(tier_of(PI / 6.0).unwrap(), Tier::Medium);
        assert_eq!(tier_of(0.99 * PI / 4.0).unwrap(), Tier::High);
        assert!(tier_of(0.0).is_err());
        assert!(tier_of(PI / 4.0).is_err());
        assert!(tier_of(f64::NAN).is_err());
    }

    #[test]
    fn paper_setting_sizes() {
        let ctx = sample_context(&ScenarioSpec::new(5, 7, 50, 7)).unwrap();
        assert_eq!((ctx.k(), ctx.i(), ctx.j()), (5, 7, 50));
        assert_eq!(ctx.robots.iter().filter(|r| r.kind == RobotKind::Uav).count(), 4);
    }

    #[test]
    fn empty_task_list() {
        let ctx = sample_context(&ScenarioSpec::new(2, 2, 0, 1)).unwrap();
        assert!(ctx.tasks.is_empty());
        let m = encode_context(&ctx);
        assert_eq!(m.c_ts.shape(), (0, TASK_FEATURES));
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = ScenarioSpec::new(3, 4, 20, 99);
        assert_eq!(sample_context(&spec).unwrap(), sample_context(&spec).unwrap());
        assert_ne!(sample_context(&spec).unwrap(), sample_context(&spec.with_seed(100)).unwrap());
    }

    #[test]
    fn encoding_examples() {
        let ctx = MultiAttributeContext {
            humans: vec![HumanProfile::new(PI / 8.0, PI / 8.0).unwrap()],
            robots: vec![RobotProfile::uav(), RobotProfile::ugv()],
            tasks: vec![TaskSpec {
                position: [2000.0, 2000.0],
                difficulty: Difficulty::Hard,
                is_hazard: true,
            }],
        };
        let m = encode_context(&ctx);
        assert_eq!(m.c_hf.row(0), &[0.5, 0.5]);
        assert_eq!(m.c_rc.row(0), &[1.0, 0.0, 15.0 / 22.0, 1.0 / 3.0]);
        assert_eq!(m.c_rc.row(1), &[0.0, 1.0, 6.0 / 22.0, 2.0 / 3.0]);
        assert_eq!(m.c_ts.row(0), &[1.0, 1.0, 1.0, 195.0 / 245.0]);
    }

    #[test]
    fn encoded_entries_lie_in_unit_interval() {
        for seed in 0..50 {
            let m = encode_context(&sample_context(&ScenarioSpec::new(4, 5, 12, seed)).unwrap());
            for t in [&m.c_hf, &m.c_rc, &m.c_ts] {
                assert!(t.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn tier_frequencies_pass_chi_square() {
        let mut counts = [0usize; 3];
        let n = 10_000;
        let mut seed = 0;
        let mut total = 0;
        while total < n {
            let ctx = sample_context(&ScenarioSpec::new(10, 1, 0, seed)).unwrap();
            for h in &ctx.humans {
                if total < n {
                    counts[h.cognitive_tier() as usize] += 1;
                    total += 1;
                }
            }
            seed += 1;
        }
        let expected = n as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // Critical value of chi-square with 2 degrees of freedom at alpha = 0.01.
        assert!(chi2 < 9.2103, "chi2 {chi2} for {counts:?}");
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() <= 0.02);
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ctx = sample_context(&ScenarioSpec::new(3, 3, 5, 11)).unwrap();
        let back = MultiAttributeContext::from_json(&ctx.to_json().unwrap()).unwrap();
        assert_eq!(ctx, back);
    }

    #[test]
    fn json_rejects_inconsistent_angles() {
        let text = r#"{"humans":[{"cognitive_angle":1.0,"skill_angle":0.2}],"robots":[],"tasks":[]}"#;
        assert!(MultiAttributeContext::from_json(text).is_err());
    }

    #[test]
    fn scenario_spec_kv_round_trip() {
        let mut spec = ScenarioSpec::new(3, 4, 20, 12345);
        spec.difficulty_weights = [0.2, 0.5, 0.3];
        spec.hazard_ratio = 0.25;
        let back = ScenarioSpec::from_kv_str(&spec.to_kv_string()).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn scenario_spec_rejects_bad_input() {
        let good = ScenarioSpec::new(3, 4, 20, 1).to_kv_string();
        assert!(ScenarioSpec::from_kv_str(&good.replace("k=3", "k=0")).is_err());
        assert!(ScenarioSpec::from_kv_str(&good.replace("uav_count=2", "uav_count=5")).is_err());
        assert!(ScenarioSpec::from_kv_str(&format!("{good}seed=2\n")).is_err());
        assert!(ScenarioSpec::from_kv_str(&format!("{good}color=red\n")).is_err());
        assert!(ScenarioSpec::from_kv_str(&good.replace("hazard_ratio=0.5\n", "")).is_err());
    }
}
