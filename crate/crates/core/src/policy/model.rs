//! The learned allocator: representation, one GRU decoder per option, and a
//! shared value head.

use ita_autograd::{dense, gru_step_projected, GruCell, ParamId, ParamSet, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::baselines::{AllocatorKind, Representation};
use crate::context::{encode_context, ContextMatrices, MultiAttributeContext, HUMAN_FEATURES, ROBOT_FEATURES, TASK_FEATURES};
use crate::decision::AllocationDecision;
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::policy::hierarchy::{build_hierarchy, OptionHierarchy};
use crate::representation::{
    embed_prior_actions, option_context, recurrent_embed, Attribute, EmbedParams, HcaParams, OptionContext,
    RepresentationConfig,
};
use crate::rng::CounterRng;

/// What the decoder sees at each unit besides the option context and the
/// previous action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnitInput {
    /// A learned embedding of the unit index only.
    IndexOnly,
    /// The index embedding plus the option's representation of the unit's POI.
    IndexAndTask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: AllocatorKind,
    pub k: usize,
    pub i: usize,
    pub j: usize,
    pub repr: RepresentationConfig,
    pub unit_embed: usize,
    pub action_embed: usize,
    pub unit_input: UnitInput,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(kind: AllocatorKind, k: usize, i: usize, j: usize) -> Self {
        Self {
            kind,
            k,
            i,
            j,
            repr: RepresentationConfig::default(),
            unit_embed: 16,
            action_embed: 16,
            unit_input: UnitInput::IndexAndTask,
            init_seed: 0,
        }
    }

    pub fn with_width(mut self, d_model: usize, heads: usize, ff_mult: usize) -> Self {
        self.repr.d_model = d_model;
        self.repr.heads = heads;
        self.repr.ff_mult = ff_mult;
        self
    }
}

#[derive(Clone, Copy, Debug)]
struct DenseEncoderIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    task_w: ParamId,
    task_b: ParamId,
}

#[derive(Clone, Copy, Debug)]
enum EncoderIds {
    Dense(DenseEncoderIds),
    Attention([HcaParams; 3]),
}

#[derive(Clone, Copy, Debug)]
struct DecoderIds {
    w_x: ParamId,
    w_h: ParamId,
    b_x: ParamId,
    b_h: ParamId,
    unit_table: ParamId,
    action_table: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct OptionIds {
    encoder: EncoderIds,
    /// Embedding table for the previous option's actions.
    prior_table: Option<ParamId>,
    decoder: DecoderIds,
}

#[derive(Clone, Copy, Debug)]
struct ValueIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    embed: Option<EmbedParams>,
    options: Vec<OptionIds>,
    value: ValueIds,
}

/// How unit actions are chosen during a forward pass.
pub enum DecodeMode<'a> {
    Sample(&'a mut CounterRng),
    Greedy,
    /// Re-evaluate the given per-option actions.
    Replay(&'a [Vec<usize>]),
}

/// Everything one option produced during a forward pass.
#[derive(Clone, Debug)]
pub struct OptionTrace {
    pub c_omega: Var,
    /// Attention models only.
    pub context: Option<OptionContext>,
    pub a_pre: Option<Var>,
    pub actions: Vec<usize>,
    /// `1×arity` log-probability rows, one per unit.
    pub log_prob_rows: Vec<Var>,
    /// `1×units` row of chosen-action log-probabilities (`1×0` for no units).
    pub log_probs: Var,
    /// `1×units` per-unit entropies, when requested.
    pub entropies: Option<Var>,
    /// `1×1` value estimate of this option's context.
    pub value: Var,
}

#[derive(Clone, Debug)]
pub struct EpisodeTrace {
    pub options: Vec<OptionTrace>,
}

impl EpisodeTrace {
    pub fn actions(&self) -> Vec<Vec<usize>> {
        self.options.iter().map(|o| o.actions.clone()).collect()
    }
}

pub struct PolicyModel {
    config: ModelConfig,
    hierarchy: OptionHierarchy,
    params: ParamSet,
    layout: Layout,
}

impl PolicyModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let variant = config
            .kind
            .hierarchy()
            .ok_or_else(|| Error::Config(format!("`{}` has no learned policy", config.kind)))?;
        let repr_kind = config.kind.representation().expect("learned kinds have a representation");
        config.repr.validate()?;
        if config.unit_embed == 0 || config.action_embed == 0 {
            return Err(Error::Config("embedding widths must be positive".into()));
        }
        let hierarchy = build_hierarchy(variant, config.k, config.i, config.j)?;
        let d = config.repr.d_model;
        let mut params = ParamSet::new();
        let mut init = Initializer::new(&mut params, config.init_seed);

        let embed = match repr_kind {
            Representation::Dense => None,
            _ => Some(EmbedParams::init(
                &mut init,
                "embed",
                [HUMAN_FEATURES, ROBOT_FEATURES, TASK_FEATURES],
                d,
            )?),
        };
        let flat = config.k * HUMAN_FEATURES + config.i * ROBOT_FEATURES + config.j * TASK_FEATURES;
        let mut options = Vec::with_capacity(hierarchy.len());
        for (n, spec) in hierarchy.options.iter().enumerate() {
            let p = format!("opt{n}");
            let with_prior = repr_kind == Representation::Hierarchical && n > 0;
            let encoder = match repr_kind {
                Representation::Dense => EncoderIds::Dense(DenseEncoderIds {
                    w1: init.glorot(&format!("{p}.enc.w1"), flat, d)?,
                    b1: init.zeros(&format!("{p}.enc.b1"), 1, d)?,
                    w2: init.glorot(&format!("{p}.enc.w2"), d, 3 * d)?,
                    b2: init.zeros(&format!("{p}.enc.b2"), 1, 3 * d)?,
                    task_w: init.glorot(&format!("{p}.enc.task.w"), TASK_FEATURES, d)?,
                    task_b: init.zeros(&format!("{p}.enc.task.b"), 1, d)?,
                }),
                _ => {
                    let mut enc = Vec::with_capacity(3);
                    for a in Attribute::ALL {
                        enc.push(HcaParams::init(&mut init, &format!("{p}.hca.{}", a.tag()), &config.repr, with_prior)?);
                    }
                    EncoderIds::Attention([enc[0], enc[1], enc[2]])
                }
            };
            let prior_table = if with_prior {
                Some(init.glorot(&format!("{p}.prior"), hierarchy.options[n - 1].arity, d)?)
            } else {
                None
            };
            let task_in = match config.unit_input {
                UnitInput::IndexOnly => 0,
                UnitInput::IndexAndTask => d,
            };
            let input = 3 * d + config.unit_embed + config.action_embed + task_in;
            let decoder = DecoderIds {
                w_x: init.glorot(&format!("{p}.gru.w_x"), input, 3 * d)?,
                w_h: init.glorot(&format!("{p}.gru.w_h"), d, 3 * d)?,
                b_x: init.zeros(&format!("{p}.gru.b_x"), 1, 3 * d)?,
                b_h: init.zeros(&format!("{p}.gru.b_h"), 1, 3 * d)?,
                unit_table: init.glorot(&format!("{p}.unit_embed"), spec.units, config.unit_embed)?,
                action_table: init.glorot(&format!("{p}.action_embed"), spec.arity + 1, config.action_embed)?,
                head_w: init.glorot(&format!("{p}.head.w"), d, spec.arity)?,
                head_b: init.zeros(&format!("{p}.head.b"), 1, spec.arity)?,
            };
            options.push(OptionIds {
                encoder,
                prior_table,
                decoder,
            });
        }
        let value = ValueIds {
            w1: init.glorot("value.w1", 3 * d, d)?,
            b1: init.zeros("value.b1", 1, d)?,
            w2: init.glorot("value.w2", d, 1)?,
            b2: init.zeros("value.b2", 1, 1)?,
        };
        Ok(Self {
            config,
            hierarchy,
            params,
            layout: Layout { embed, options, value },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn hierarchy(&self) -> &OptionHierarchy {
        &self.hierarchy
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Swaps in parameters with exactly this model's names and shapes.
    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        self.params.check_layout(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn num_options(&self) -> usize {
        self.hierarchy.len()
    }

    fn check_matrices(&self, m: &ContextMatrices) -> Result<()> {
        let c = &self.config;
        let got = (m.c_hf.rows(), m.c_rc.rows(), m.c_ts.rows());
        if got != (c.k, c.i, c.j) {
            return Err(Error::Contract(format!(
                "context has (k, i, j) = {got:?}, model expects ({}, {}, {})",
                c.k, c.i, c.j
            )));
        }
        Ok(())
    }

    /// Runs every option in order, feeding each option's actions to the next
    /// as prior actions.
    pub fn forward<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        m: &ContextMatrices,
        mode: &mut DecodeMode<'_>,
        with_entropy: bool,
    ) -> Result<EpisodeTrace> {
        self.check_matrices(m)?;
        if let DecodeMode::Replay(actions) = mode {
            if actions.len() != self.num_options() {
                return Err(Error::Contract(format!("replay has {} option sequences", actions.len())));
            }
        }
        let cfg = &self.config.repr;
        let reps = self.layout.embed.as_ref().map(|e| recurrent_embed(tape, m, e, cfg));
        let f = self.config.k + self.config.i + self.config.j;
        let mut traces: Vec<OptionTrace> = Vec::with_capacity(self.num_options());
        for (n, ids) in self.layout.options.iter().enumerate() {
            let (c_omega, context, a_pre, task_rows) = match (&ids.encoder, &reps) {
                (EncoderIds::Attention(enc), Some(reps)) => {
                    let a_pre = match ids.prior_table {
                        Some(table) => {
                            let table = tape.param(table);
                            let prev = traces.last().map(|t| t.actions.as_slice());
                            Some(embed_prior_actions(tape, prev, table, f)?.a_pre)
                        }
                        None => None,
                    };
                    let oc = option_context(tape, reps, a_pre, enc, cfg)?;
                    let task_rows = oc.refined(Attribute::Task);
                    (oc.c_omega, Some(oc), a_pre, task_rows)
                }
                (EncoderIds::Dense(enc), _) => {
                    let (c_omega, task_rows) = self.dense_encode(tape, m, enc);
                    (c_omega, None, None, task_rows)
                }
                (EncoderIds::Attention(_), None) => unreachable!("attention encoder without embedding"),
            };
            let task_rows = match self.config.unit_input {
                UnitInput::IndexOnly => None,
                UnitInput::IndexAndTask => Some(task_rows),
            };
            let trace = self.decode_option(tape, n, c_omega, task_rows, mode, with_entropy)?;
            let value = self.value_estimate(tape, c_omega);
            traces.push(OptionTrace {
                c_omega,
                context,
                a_pre,
                value,
                ..trace
            });
        }
        Ok(EpisodeTrace { options: traces })
    }

    fn dense_encode<'p>(&'p self, tape: &mut Tape<'p>, m: &ContextMatrices, p: &DenseEncoderIds) -> (Var, Var) {
        let c = &self.config;
        let mut flat = Vec::with_capacity(c.k * HUMAN_FEATURES + c.i * ROBOT_FEATURES + c.j * TASK_FEATURES);
        for (t, rows, width) in [
            (&m.c_hf, c.k, HUMAN_FEATURES),
            (&m.c_rc, c.i, ROBOT_FEATURES),
            (&m.c_ts, c.j, TASK_FEATURES),
        ] {
            flat.extend_from_slice(t.as_slice());
            flat.resize(flat.len() + (rows - t.rows()) * width, 0.0);
        }
        let slope = c.repr.leaky_slope;
        let x = tape.input(Tensor::row_vector(&flat));
        let (w1, b1, w2, b2) = (tape.param(p.w1), tape.param(p.b1), tape.param(p.w2), tape.param(p.b2));
        let h = dense(tape, x, w1, b1);
        let h = tape.leaky_relu(h, slope);
        let c_omega = dense(tape, h, w2, b2);
        let c_omega = tape.leaky_relu(c_omega, slope);
        let ts = tape.input(m.c_ts.clone());
        let (tw, tb) = (tape.param(p.task_w), tape.param(p.task_b));
        let rows = dense(tape, ts, tw, tb);
        (c_omega, tape.leaky_relu(rows, slope))
    }

    /// GRU scan over the option's units. The input at unit τ is
    /// `[c_omega, unit_embed[τ], action_embed[prev], task_row[τ]]`; its
    /// projection is split into those blocks so the constant ones are
    /// computed once per option.
    pub fn decode_option<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        n: usize,
        c_omega: Var,
        task_rows: Option<Var>,
        mode: &mut DecodeMode<'_>,
        with_entropy: bool,
    ) -> Result<OptionTrace> {
        let spec = &self.hierarchy.options[n];
        let ids = &self.layout.options[n].decoder;
        let d = self.config.repr.d_model;
        let (ue, ae) = (self.config.unit_embed, self.config.action_embed);
        let w_x = tape.param(ids.w_x);
        let cell = GruCell {
            w_x,
            w_h: tape.param(ids.w_h),
            b_x: tape.param(ids.b_x),
            b_h: tape.param(ids.b_h),
        };
        let w_c = tape.slice_rows(w_x, 0, 3 * d);
        let w_u = tape.slice_rows(w_x, 3 * d, ue);
        let w_a = tape.slice_rows(w_x, 3 * d + ue, ae);
        let base = tape.matmul(c_omega, w_c);
        let base = tape.add(base, cell.b_x);
        let unit_table = tape.param(ids.unit_table);
        let unit_proj = tape.matmul(unit_table, w_u);
        let task_proj = task_rows.map(|rows| {
            let w_t = tape.slice_rows(w_x, 3 * d + ue + ae, d);
            tape.matmul(rows, w_t)
        });
        let action_table = tape.param(ids.action_table);
        let (head_w, head_b) = (tape.param(ids.head_w), tape.param(ids.head_b));

        let mut h = tape.constant(Tensor::zeros(1, d));
        let mut prev = 0usize;
        let mut actions = Vec::with_capacity(spec.units);
        let mut rows = Vec::with_capacity(spec.units);
        let mut picked = Vec::with_capacity(spec.units);
        let mut entropies = Vec::with_capacity(spec.units);
        for tau in 0..spec.units {
            let a_emb = tape.gather_rows(action_table, &[prev]);
            let a_proj = tape.matmul(a_emb, w_a);
            let u_proj = tape.slice_rows(unit_proj, tau, 1);
            let mut x = tape.add(base, u_proj);
            x = tape.add(x, a_proj);
            if let Some(tp) = task_proj {
                let t_row = tape.slice_rows(tp, tau, 1);
                x = tape.add(x, t_row);
            }
            h = gru_step_projected(tape, &cell, h, x);
            let logits = dense(tape, h, head_w, head_b);
            let log_p = tape.log_softmax_rows(logits);
            let action = choose(tape.value(log_p).row(0), mode, n, tau)?;
            picked.push(tape.pick(log_p, 0, action));
            if with_entropy {
                let p = tape.exp(log_p);
                let plogp = tape.mul(p, log_p);
                let s = tape.sum(plogp);
                entropies.push(tape.scale(s, -1.0));
            }
            rows.push(log_p);
            actions.push(action);
            prev = action + 1;
        }
        let log_probs = row_of(tape, &picked);
        let entropies = with_entropy.then(|| row_of(tape, &entropies));
        Ok(OptionTrace {
            c_omega,
            context: None,
            a_pre: None,
            actions,
            log_prob_rows: rows,
            log_probs,
            entropies,
            value: c_omega,
        })
    }

    /// Shared critic: `dense(3d→d)`, leaky ReLU, `dense(d→1)`.
    pub fn value_estimate<'p>(&'p self, tape: &mut Tape<'p>, c_omega: Var) -> Var {
        let v = &self.layout.value;
        let (w1, b1, w2, b2) = (tape.param(v.w1), tape.param(v.b1), tape.param(v.w2), tape.param(v.b2));
        let h = dense(tape, c_omega, w1, b1);
        let h = tape.leaky_relu(h, self.config.repr.leaky_slope);
        dense(tape, h, w2, b2)
    }

    /// Greedy joint allocation for evaluation.
    pub fn act_greedy(&self, ctx: &MultiAttributeContext) -> Result<AllocationDecision> {
        let m = encode_context(ctx);
        let mut tape = Tape::with_params(&self.params);
        let trace = self.forward(&mut tape, &m, &mut DecodeMode::Greedy, false)?;
        self.hierarchy.assemble(&trace.actions())
    }

    /// Parameter names of the prior-action path (value weights and tables).
    pub fn prior_param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for ids in &self.layout.options {
            if let EncoderIds::Attention(enc) = &ids.encoder {
                names.extend(enc.iter().filter_map(|e| e.w_ve).map(|id| self.params.name(id).to_string()));
            }
            if let Some(t) = ids.prior_table {
                names.push(self.params.name(t).to_string());
            }
        }
        names
    }

    pub fn prior_table(&self, option: usize) -> Option<ParamId> {
        self.layout.options.get(option).and_then(|o| o.prior_table)
    }
}

fn row_of(tape: &mut Tape<'_>, scalars: &[Var]) -> Var {
    if scalars.is_empty() {
        tape.constant(Tensor::zeros(1, 0))
    } else {
        tape.concat_cols(scalars)
    }
}

fn choose(log_p: &[f64], mode: &mut DecodeMode<'_>, option: usize, unit: usize) -> Result<usize> {
    match mode {
        DecodeMode::Greedy => Ok(argmax(log_p)),
        DecodeMode::Sample(rng) => {
            let mut u = rng.next_f64();
            for (a, &lp) in log_p.iter().enumerate() {
                let p = lp.exp();
                if u < p {
                    return Ok(a);
                }
                u -= p;
            }
            Ok(argmax(log_p))
        }
        DecodeMode::Replay(actions) => {
            let a = *actions[option]
                .get(unit)
                .ok_or_else(|| Error::Contract(format!("replay for option {option} is missing unit {unit}")))?;
            if a >= log_p.len() {
                return Err(Error::Contract(format!("replayed action {a} ≥ arity {}", log_p.len())));
            }
            Ok(a)
        }
    }
}

/// First index of the maximum.
fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}
