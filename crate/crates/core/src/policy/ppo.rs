//! Proximal policy optimization with a one-step reward shared by every
//! option of an episode.

use ita_autograd::{adam_update, AdamConfig, AdamState, ParamGrads, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::context::ContextMatrices;
use crate::error::{Error, Result};
use crate::policy::model::{DecodeMode, PolicyModel};
use crate::rng::CounterRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    /// Ratio clip ε; `f64::INFINITY` disables clipping.
    pub clip: f64,
    pub value_weight: f64,
    pub entropy_weight: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Episodes per gradient step.
    pub minibatch: usize,
    pub episodes_per_update: usize,
    pub max_grad_norm: Option<f64>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            value_weight: 0.5,
            entropy_weight: 0.01,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 4,
            minibatch: 32,
            episodes_per_update: 64,
            max_grad_norm: Some(1.0),
        }
    }
}

impl PpoConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) || self.epochs == 0 || self.minibatch == 0 || self.episodes_per_update == 0 {
            return Err(Error::Config(format!("invalid PPO settings {self:?}")));
        }
        if !(self.lr > 0.0) || self.value_weight < 0.0 || self.entropy_weight < 0.0 {
            return Err(Error::Config(format!("invalid PPO weights {self:?}")));
        }
        Ok(())
    }
}

/// One sampled episode with the behaviour policy's log-probabilities and
/// value estimates.
#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub matrices: ContextMatrices,
    pub actions: Vec<Vec<usize>>,
    pub old_log_probs: Vec<Vec<f64>>,
    pub old_values: Vec<f64>,
    pub reward: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrajectoryBatch {
    pub episodes: Vec<EpisodeRecord>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        self.episodes.iter().map(|e| e.reward).sum::<f64>() / self.episodes.len().max(1) as f64
    }

    /// `(r − mean) / (std + 1e-8)` with the population standard deviation.
    pub fn normalized_rewards(&self) -> Vec<f64> {
        let n = self.episodes.len().max(1) as f64;
        let mean = self.mean_reward();
        let var = self.episodes.iter().map(|e| (e.reward - mean).powi(2)).sum::<f64>() / n;
        let denom = var.sqrt() + 1e-8;
        self.episodes.iter().map(|e| (e.reward - mean) / denom).collect()
    }
}

/// Samples one episode. The reward is left at zero for the caller to fill.
pub fn rollout(model: &PolicyModel, matrices: &ContextMatrices, rng: &mut CounterRng) -> Result<EpisodeRecord> {
    let mut tape = Tape::with_params(model.params());
    let trace = model.forward(&mut tape, matrices, &mut DecodeMode::Sample(rng), false)?;
    Ok(EpisodeRecord {
        matrices: matrices.clone(),
        actions: trace.actions(),
        old_log_probs: trace.options.iter().map(|o| tape.value(o.log_probs).as_slice().to_vec()).collect(),
        old_values: trace.options.iter().map(|o| tape.value(o.value).item()).collect(),
        reward: 0.0,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clipped_units: usize,
    pub units: usize,
    pub kl_sum: f64,
    pub max_ratio_deviation: f64,
}

impl LossStats {
    fn add(&mut self, o: &LossStats) {
        self.policy_loss += o.policy_loss;
        self.value_loss += o.value_loss;
        self.entropy += o.entropy;
        self.clipped_units += o.clipped_units;
        self.units += o.units;
        self.kl_sum += o.kl_sum;
        self.max_ratio_deviation = self.max_ratio_deviation.max(o.max_ratio_deviation);
    }
}

/// Gradient of one episode's loss
/// `−Σₙ meanₜ min(ρ·Â, clip(ρ)·Â) + w_v·Σₙ (Vₙ − r̃)² − w_e·Σₙ meanₜ H`,
/// with `Âₙ = r̃ − V_old(c_ωₙ)`.
pub fn episode_gradients(
    model: &PolicyModel,
    ep: &EpisodeRecord,
    reward_norm: f64,
    cfg: &PpoConfig,
) -> Result<(ParamGrads, LossStats)> {
    let mut tape = Tape::with_params(model.params());
    let trace = model.forward(&mut tape, &ep.matrices, &mut DecodeMode::Replay(&ep.actions), true)?;
    let mut stats = LossStats::default();
    let mut terms = Vec::new();
    for (n, opt) in trace.options.iter().enumerate() {
        let v_err = tape.add_scalar(opt.value, -reward_norm);
        let v_sq = tape.mul(v_err, v_err);
        stats.value_loss += tape.value(v_sq).item();
        terms.push(tape.scale(v_sq, cfg.value_weight));
        let units = opt.actions.len();
        if units == 0 {
            continue;
        }
        let advantage = reward_norm - ep.old_values[n];
        let old = tape.constant(Tensor::row_vector(&ep.old_log_probs[n]));
        let diff = tape.sub(opt.log_probs, old);
        let ratio = tape.exp(diff);
        let unclipped = tape.scale(ratio, advantage);
        let bounded = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
        let clipped = tape.scale(bounded, advantage);
        let surrogate = tape.minimum(unclipped, clipped);
        let surrogate = tape.mean(surrogate);
        stats.policy_loss -= tape.value(surrogate).item();
        terms.push(tape.scale(surrogate, -1.0));
        let entropy = tape.mean(opt.entropies.expect("entropies requested"));
        stats.entropy += tape.value(entropy).item();
        terms.push(tape.scale(entropy, -cfg.entropy_weight));
        for (&r, (&lp, &old)) in tape
            .value(ratio)
            .as_slice()
            .iter()
            .zip(tape.value(opt.log_probs).as_slice().iter().zip(&ep.old_log_probs[n]))
        {
            stats.units += 1;
            stats.clipped_units += ((r - 1.0).abs() > cfg.clip) as usize;
            stats.kl_sum += old - lp;
            stats.max_ratio_deviation = stats.max_ratio_deviation.max((r - 1.0).abs());
        }
    }
    let mut loss = terms[0];
    for &t in &terms[1..] {
        loss = tape.add(loss, t);
    }
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Training(format!("non-finite loss {value} ({stats:?})")));
    }
    let grads = tape.backward(loss)?.into_params();
    Ok((grads, stats))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    /// Largest |ρ − 1| in the first minibatch of the first epoch; zero when the
    /// batch was sampled from the current parameters.
    pub first_ratio_deviation: f64,
    pub steps: usize,
}

/// Runs `epochs` passes of shuffled minibatches, one Adam step per minibatch.
/// Minibatch gradients are episode means.
pub fn ppo_update(
    model: &mut PolicyModel,
    optimizer: &mut AdamState,
    batch: &TrajectoryBatch,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<UpdateMetrics> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Training("empty trajectory batch".into()));
    }
    let rewards = batch.normalized_rewards();
    let adam = cfg.adam();
    let mut total = LossStats::default();
    let mut metrics = UpdateMetrics {
        mean_reward: batch.mean_reward(),
        ..Default::default()
    };
    let mut evaluated = 0usize;
    for epoch in 0..cfg.epochs {
        let order = shuffled(batch.len(), &mut CounterRng::new(seed, epoch as u64));
        for (mb, chunk) in order.chunks(cfg.minibatch).enumerate() {
            let mut grads = ParamGrads::new(model.params().len());
            let mut mb_stats = LossStats::default();
            for &e in chunk {
                let (g, s) = episode_gradients(model, &batch.episodes[e], rewards[e], cfg)?;
                grads.accumulate(&g, 1.0 / chunk.len() as f64);
                mb_stats.add(&s);
            }
            if epoch == 0 && mb == 0 {
                metrics.first_ratio_deviation = mb_stats.max_ratio_deviation;
            }
            total.add(&mb_stats);
            evaluated += chunk.len();
            metrics.grad_norm += match cfg.max_grad_norm {
                Some(limit) => grads.clip_global_norm(limit),
                None => grads.global_norm(),
            };
            adam_update(model.params_mut(), &grads, optimizer, &adam)?;
            metrics.steps += 1;
        }
    }
    let per_episode = 1.0 / evaluated as f64;
    metrics.policy_loss = total.policy_loss * per_episode;
    metrics.value_loss = total.value_loss * per_episode;
    metrics.entropy = total.entropy * per_episode;
    metrics.grad_norm /= metrics.steps as f64;
    if total.units > 0 {
        metrics.clip_fraction = total.clipped_units as f64 / total.units as f64;
        metrics.approx_kl = total.kl_sum / total.units as f64;
    }
    Ok(metrics)
}

fn shuffled(n: usize, rng: &mut CounterRng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.below(i + 1));
    }
    v
}
