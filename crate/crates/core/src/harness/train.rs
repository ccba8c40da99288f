//! Training loop, environments, checkpoints, and the metrics log.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ita_autograd::{read_params, read_params_matching, write_params, AdamState, ParamSet, Tensor};
use serde::{Deserialize, Serialize};

use crate::baselines::{Allocator, AllocatorKind};
use crate::context::{encode_context, sample_context, MultiAttributeContext, ScenarioSpec};
use crate::decision::AllocationDecision;
use crate::error::{Error, Result};
use crate::policy::{ppo_update, rollout, ModelConfig, PolicyModel, PpoConfig, TrajectoryBatch, UpdateMetrics};
use crate::rng::{derive_seed, CounterRng};
use crate::sim::{MissionSimulator, ScoringMode};

/// Supplies contexts and scores joint decisions.
pub trait Environment {
    fn context(&mut self, seed: u64) -> Result<MultiAttributeContext>;
    fn reward(&mut self, ctx: &MultiAttributeContext, decision: &AllocationDecision, seed: u64) -> Result<f64>;
}

/// Fresh scenario per episode, rewarded with the mission's total score.
pub struct MissionEnvironment {
    pub template: ScenarioSpec,
    pub mode: ScoringMode,
    sim: MissionSimulator,
}

impl MissionEnvironment {
    pub fn new(template: ScenarioSpec, mode: ScoringMode) -> Result<Self> {
        template.validate()?;
        Ok(Self {
            template,
            mode,
            sim: MissionSimulator::new(),
        })
    }
}

impl Environment for MissionEnvironment {
    fn context(&mut self, seed: u64) -> Result<MultiAttributeContext> {
        sample_context(&self.template.with_seed(seed))
    }

    fn reward(&mut self, ctx: &MultiAttributeContext, decision: &AllocationDecision, seed: u64) -> Result<f64> {
        self.sim.total_score(ctx, decision, seed, 0, self.mode)
    }
}

/// Fixed context; +1 when POI 0 goes to `target_robot`, −1 otherwise.
pub struct BanditEnvironment {
    pub ctx: MultiAttributeContext,
    pub target_robot: usize,
}

impl Environment for BanditEnvironment {
    fn context(&mut self, _seed: u64) -> Result<MultiAttributeContext> {
        Ok(self.ctx.clone())
    }

    fn reward(&mut self, _ctx: &MultiAttributeContext, decision: &AllocationDecision, _seed: u64) -> Result<f64> {
        match decision.poi_to_robot.first() {
            Some(&r) if r == self.target_robot => Ok(1.0),
            Some(_) => Ok(-1.0),
            None => Err(Error::Contract("bandit needs at least one POI".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub ppo: PpoConfig,
    pub scenario: ScenarioSpec,
    /// Total training episodes.
    pub budget: usize,
    pub seed: u64,
    pub reward_mode: ScoringMode,
}

impl TrainConfig {
    /// Default model and PPO settings; training rewards use expected scoring.
    pub fn new(kind: AllocatorKind, setting: (usize, usize, usize), budget: usize, seed: u64) -> Self {
        let (k, i, j) = setting;
        Self {
            model: ModelConfig::new(kind, k, i, j),
            ppo: PpoConfig::default(),
            scenario: ScenarioSpec::new(k, i, j, seed),
            budget,
            seed,
            reward_mode: ScoringMode::Expected,
        }
    }

    pub fn environment(&self) -> Result<MissionEnvironment> {
        MissionEnvironment::new(self.scenario.clone(), self.reward_mode)
    }

    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        self.scenario.validate()?;
        let m = &self.model;
        if !m.kind.is_learned() {
            return Err(Error::Config(format!("{} is not a learned allocator", m.kind)));
        }
        if (m.k, m.i, m.j) != (self.scenario.k, self.scenario.i, self.scenario.j) {
            return Err(Error::Config("model and scenario disagree on team size".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub update: usize,
    pub episodes_done: usize,
    pub metrics: UpdateMetrics,
}

impl TrainRecord {
    pub const CSV_HEADER: &'static str =
        "update,episodes,mean_reward,policy_loss,value_loss,entropy,clip_fraction,approx_kl,grad_norm";

    pub fn to_csv(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.update,
            self.episodes_done,
            m.mean_reward,
            m.policy_loss,
            m.value_loss,
            m.entropy,
            m.clip_fraction,
            m.approx_kl,
            m.grad_norm
        )
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: PolicyModel,
    pub optimizer: AdamState,
    pub episodes_done: usize,
    pub updates_done: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = PolicyModel::new(config.model.clone())?;
        let optimizer = AdamState::new(model.params());
        Ok(Self {
            config,
            model,
            optimizer,
            episodes_done: 0,
            updates_done: 0,
        })
    }

    pub fn is_done(&self) -> bool {
        self.episodes_done >= self.config.budget
    }

    /// Samples the next batch. Episode `e` of update `u` draws everything from
    /// `derive_seed(seed, [u, e])`, so a run resumed at an update boundary
    /// replays the uninterrupted one exactly.
    pub fn collect(&self, env: &mut dyn Environment, n: usize) -> Result<TrajectoryBatch> {
        let mut batch = TrajectoryBatch::default();
        for e in 0..n {
            let es = derive_seed(self.config.seed, &[self.updates_done as u64, e as u64]);
            let ctx = env.context(derive_seed(es, &[0]))?;
            let m = encode_context(&ctx);
            let mut ep = rollout(&self.model, &m, &mut CounterRng::new(es, 1))?;
            let decision = self.model.hierarchy().assemble(&ep.actions)?;
            ep.reward = env.reward(&ctx, &decision, es)?;
            batch.episodes.push(ep);
        }
        Ok(batch)
    }

    /// One collect-and-update round, or `None` once the budget is spent.
    pub fn step(&mut self, env: &mut dyn Environment) -> Result<Option<TrainRecord>> {
        if self.is_done() {
            return Ok(None);
        }
        let n = self.config.ppo.episodes_per_update.min(self.config.budget - self.episodes_done);
        let batch = self.collect(env, n)?;
        let seed = derive_seed(self.config.seed, &[self.updates_done as u64, u64::MAX]);
        let metrics = ppo_update(&mut self.model, &mut self.optimizer, &batch, &self.config.ppo, seed)?;
        self.episodes_done += n;
        self.updates_done += 1;
        Ok(Some(TrainRecord {
            update: self.updates_done,
            episodes_done: self.episodes_done,
            metrics,
        }))
    }

    /// Trains until the budget is spent, reporting every update.
    pub fn run(&mut self, env: &mut dyn Environment, mut on_update: impl FnMut(&Self, &TrainRecord) -> Result<()>) -> Result<()> {
        while let Some(rec) = self.step(env)? {
            on_update(self, &rec)?;
        }
        Ok(())
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            config: self.config.clone(),
            episodes_done: self.episodes_done,
            updates_done: self.updates_done,
        }
    }

    /// Writes `checkpoint.bin` and `optimizer.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = CheckpointHeader {
            kind: self.config.model.kind,
            setting: (self.config.model.k, self.config.model.i, self.config.model.j),
            model: Some(self.config.model.clone()),
            train: Some(self.state()),
        };
        write_checkpoint(&checkpoint_path(dir), &header, Some(self.model.params()))?;
        write_optimizer(&optimizer_path(dir), self.model.params(), &self.optimizer)
    }

    /// Restores a trainer from `save` output.
    pub fn load(dir: &Path) -> Result<Self> {
        let (header, params) = read_checkpoint(&checkpoint_path(dir))?;
        let state = header
            .train
            .ok_or_else(|| Error::Parse("checkpoint carries no training state".into()))?;
        let mut trainer = Trainer::new(state.config)?;
        let params = params.ok_or_else(|| Error::Parse("checkpoint has no parameters".into()))?;
        trainer.model.set_params(params)?;
        trainer.optimizer = read_optimizer(&optimizer_path(dir), trainer.model.params())?;
        trainer.episodes_done = state.episodes_done;
        trainer.updates_done = state.updates_done;
        Ok(trainer)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub episodes_done: usize,
    pub updates_done: usize,
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("checkpoint.bin")
}

pub fn optimizer_path(dir: &Path) -> PathBuf {
    dir.join("optimizer.bin")
}

pub fn metrics_path(dir: &Path) -> PathBuf {
    dir.join("metrics.csv")
}

pub const MODEL_MAGIC: &[u8; 8] = b"ITAMODEL";
pub const OPTIMIZER_MAGIC: &[u8; 8] = b"ITAADAM\0";
const FORMAT_VERSION: u32 = 1;

/// JSON header of a checkpoint. `model` is `None` for the random baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: AllocatorKind,
    pub setting: (usize, usize, usize),
    pub model: Option<ModelConfig>,
    pub train: Option<TrainState>,
}

impl CheckpointHeader {
    pub fn random(setting: (usize, usize, usize)) -> Self {
        Self {
            kind: AllocatorKind::Ra,
            setting,
            model: None,
            train: None,
        }
    }
}

/// Layout: magic, version (u32 LE), header length (u64 LE), JSON header,
/// then a parameter stream when the allocator is learned.
pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, params: Option<&ParamSet>) -> Result<()> {
    let io = |e| Error::io(path, e);
    let json = serde_json::to_vec(header)?;
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MODEL_MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    if let Some(p) = params {
        write_params(&mut w, p)?;
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Option<ParamSet>)> {
    let io = |e| Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Parse(format!("{}: not a model checkpoint", path.display())));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b).map_err(io)?;
    if u32::from_le_bytes(u32b) != FORMAT_VERSION {
        return Err(Error::Parse(format!("{}: unsupported checkpoint version", path.display())));
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b).map_err(io)?;
    let len = u64::from_le_bytes(u64b);
    if len > 1 << 24 {
        return Err(Error::Parse(format!("{}: header length {len} is implausible", path.display())));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(io)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let params = match &header.model {
        Some(cfg) => {
            let template = PolicyModel::new(cfg.clone())?;
            Some(read_params_matching(r, template.params())?)
        }
        None => None,
    };
    Ok((header, params))
}

/// Rebuilds the allocator stored in a checkpoint.
pub fn load_allocator(path: &Path) -> Result<(Allocator, CheckpointHeader)> {
    let (header, params) = read_checkpoint(path)?;
    let allocator = match (&header.model, params) {
        (Some(cfg), Some(params)) => {
            let mut model = PolicyModel::new(cfg.clone())?;
            model.set_params(params)?;
            Allocator::Learned(Box::new(model))
        }
        (None, _) if header.kind == AllocatorKind::Ra => Allocator::Random,
        _ => return Err(Error::Parse(format!("{}: checkpoint for {} has no model", path.display(), header.kind))),
    };
    Ok((allocator, header))
}

fn write_optimizer(path: &Path, params: &ParamSet, state: &AdamState) -> Result<()> {
    let io = |e| Error::io(path, e);
    let (first, second) = state.moments();
    let mut moments = ParamSet::new();
    for ((_, name, _), m) in params.iter().zip(first) {
        moments.insert(format!("m1.{name}"), m.clone())?;
    }
    for ((_, name, _), m) in params.iter().zip(second) {
        moments.insert(format!("m2.{name}"), m.clone())?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(OPTIMIZER_MAGIC).map_err(io)?;
    w.write_all(&state.step.to_le_bytes()).map_err(io)?;
    write_params(&mut w, &moments)?;
    w.flush().map_err(io)
}

fn read_optimizer(path: &Path, params: &ParamSet) -> Result<AdamState> {
    let io = |e| Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != OPTIMIZER_MAGIC {
        return Err(Error::Parse(format!("{}: not an optimizer state", path.display())));
    }
    let mut step = [0u8; 8];
    r.read_exact(&mut step).map_err(io)?;
    let moments = read_params(r)?;
    let take = |prefix: &str| -> Result<Vec<Tensor>> {
        params
            .iter()
            .map(|(_, name, _)| {
                moments
                    .by_name(&format!("{prefix}.{name}"))
                    .cloned()
                    .ok_or_else(|| Error::Parse(format!("optimizer state lacks {prefix}.{name}")))
            })
            .collect()
    };
    Ok(AdamState::from_parts(params, u64::from_le_bytes(step), take("m1")?, take("m2")?)?)
}

/// Appends training records to `metrics.csv`, writing the header once.
pub struct MetricsLog {
    path: PathBuf,
}

impl MetricsLog {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = metrics_path(dir);
        if !path.exists() {
            std::fs::write(&path, format!("{}\n", TrainRecord::CSV_HEADER)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self { path })
    }

    pub fn append(&self, rec: &TrainRecord) -> Result<()> {
        let io = |e| Error::io(&self.path, e);
        let mut f = OpenOptions::new().append(true).open(&self.path).map_err(io)?;
        writeln!(f, "{}", rec.to_csv()).map_err(io)
    }
}
