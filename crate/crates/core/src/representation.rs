//! Context representation: per-attribute recurrent embedding, hierarchical
//! cross-attribute attention with prior-action injection, and mean pooling
//! into the option context.

use ita_autograd::layers::DEFAULT_LEAKY_SLOPE;
use ita_autograd::{dense, layer_norm, lstm_step, scaled_dot_attention, LstmCell, ParamId, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::context::ContextMatrices;
use crate::error::{Error, Result};
use crate::init::Initializer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Attribute {
    Human,
    Robot,
    Task,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Human, Attribute::Robot, Attribute::Task];

    pub fn tag(self) -> &'static str {
        match self {
            Attribute::Human => "hf",
            Attribute::Robot => "rc",
            Attribute::Task => "ts",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationConfig {
    pub d_model: usize,
    pub heads: usize,
    /// Feed-forward hidden width as a multiple of `d_model`.
    pub ff_mult: usize,
    pub leaky_slope: f64,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            ff_mult: 4,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

impl RepresentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model < 2 || self.heads == 0 || self.d_model % self.heads != 0 || self.ff_mult == 0 {
            return Err(Error::Config(format!(
                "d_model {} must be ≥ 2 and divisible by heads {}; ff_mult {} must be positive",
                self.d_model, self.heads, self.ff_mult
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky slope {} outside (0, 1)", self.leaky_slope)));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Per-entity embeddings of the three attributes, each `n×d`.
#[derive(Clone, Copy, Debug)]
pub struct UniAttributeReps {
    pub x_hf: Var,
    pub x_rc: Var,
    pub x_ts: Var,
}

impl UniAttributeReps {
    pub fn get(&self, a: Attribute) -> Var {
        match a {
            Attribute::Human => self.x_hf,
            Attribute::Robot => self.x_rc,
            Attribute::Task => self.x_ts,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmIds {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
}

impl LstmIds {
    pub fn init(init: &mut Initializer<'_>, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        let w_x = init.glorot(&format!("{prefix}.w_x"), input, 4 * hidden)?;
        let w_h = init.glorot(&format!("{prefix}.w_h"), hidden, 4 * hidden)?;
        let mut bias = Tensor::zeros(1, 4 * hidden);
        for c in hidden..2 * hidden {
            bias.set(0, c, 1.0);
        }
        let b = init.params.insert(format!("{prefix}.b"), bias)?;
        Ok(Self { w_x, w_h, b })
    }

    pub fn cell(&self, tape: &mut Tape<'_>) -> LstmCell {
        LstmCell {
            w_x: tape.param(self.w_x),
            w_h: tape.param(self.w_h),
            b: tape.param(self.b),
        }
    }
}

/// Dense + leaky ReLU, then an LSTM scan over the entity axis.
#[derive(Clone, Copy, Debug)]
pub struct AttributeEmbedIds {
    pub w: ParamId,
    pub b: ParamId,
    pub lstm: LstmIds,
}

#[derive(Clone, Copy, Debug)]
pub struct EmbedParams {
    pub hf: AttributeEmbedIds,
    pub rc: AttributeEmbedIds,
    pub ts: AttributeEmbedIds,
}

impl EmbedParams {
    pub fn init(init: &mut Initializer<'_>, prefix: &str, widths: [usize; 3], d: usize) -> Result<Self> {
        let mut one = |tag: &str, w: usize| -> Result<AttributeEmbedIds> {
            Ok(AttributeEmbedIds {
                w: init.glorot(&format!("{prefix}.{tag}.w"), w, d)?,
                b: init.zeros(&format!("{prefix}.{tag}.b"), 1, d)?,
                lstm: LstmIds::init(init, &format!("{prefix}.{tag}.lstm"), d, d)?,
            })
        };
        Ok(Self {
            hf: one("hf", widths[0])?,
            rc: one("rc", widths[1])?,
            ts: one("ts", widths[2])?,
        })
    }
}

fn embed_attribute(tape: &mut Tape<'_>, x: &Tensor, p: &AttributeEmbedIds, d: usize, slope: f64) -> Var {
    if x.rows() == 0 {
        return tape.constant(Tensor::zeros(0, d));
    }
    let x = tape.input(x.clone());
    let (w, b) = (tape.param(p.w), tape.param(p.b));
    let pre = dense(tape, x, w, b);
    let feats = tape.leaky_relu(pre, slope);
    let cell = p.lstm.cell(tape);
    let mut h = tape.constant(Tensor::zeros(1, d));
    let mut c = tape.constant(Tensor::zeros(1, d));
    let n = tape.shape(feats).0;
    let mut rows = Vec::with_capacity(n);
    for r in 0..n {
        let xr = tape.slice_rows(feats, r, 1);
        (h, c) = lstm_step(tape, &cell, h, c, xr);
        rows.push(h);
    }
    tape.concat_rows(&rows)
}

pub fn recurrent_embed(
    tape: &mut Tape<'_>,
    m: &ContextMatrices,
    p: &EmbedParams,
    cfg: &RepresentationConfig,
) -> UniAttributeReps {
    let d = cfg.d_model;
    UniAttributeReps {
        x_hf: embed_attribute(tape, &m.c_hf, &p.hf, d, cfg.leaky_slope),
        x_rc: embed_attribute(tape, &m.c_rc, &p.rc, d, cfg.leaky_slope),
        x_ts: embed_attribute(tape, &m.c_ts, &p.ts, d, cfg.leaky_slope),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PriorActionEmbedding {
    /// `f×d`; the zero matrix when `is_null`.
    pub a_pre: Var,
    pub is_null: bool,
}

/// Mean of the embeddings of the previous option's actions, repeated over
/// all `f` entity rows. `None` (no previous option) gives the zero matrix.
pub fn embed_prior_actions(
    tape: &mut Tape<'_>,
    actions: Option<&[usize]>,
    table: Var,
    f: usize,
) -> Result<PriorActionEmbedding> {
    let (rows, d) = tape.shape(table);
    let Some(actions) = actions else {
        return Ok(PriorActionEmbedding {
            a_pre: tape.constant(Tensor::zeros(f, d)),
            is_null: true,
        });
    };
    if let Some(&bad) = actions.iter().find(|&&a| a >= rows) {
        return Err(Error::Contract(format!("action {bad} outside embedding table of {rows} rows")));
    }
    let gathered = tape.gather_rows(table, actions);
    let pooled = tape.mean_rows(gathered);
    Ok(PriorActionEmbedding {
        a_pre: tape.repeat_rows(pooled, f),
        is_null: false,
    })
}

/// Weights of one cross-attribute encoder. `w_ve` is absent for encoders that
/// never see prior actions; their feed-forward input is then `H·v` wide
/// instead of `H·2v`.
#[derive(Clone, Copy, Debug)]
pub struct HcaParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_vf: ParamId,
    pub w_ve: Option<ParamId>,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
    pub ln_gain: ParamId,
    pub ln_shift: ParamId,
}

impl HcaParams {
    pub fn init(init: &mut Initializer<'_>, prefix: &str, cfg: &RepresentationConfig, with_prior: bool) -> Result<Self> {
        let d = cfg.d_model;
        let ff_in = if with_prior { 2 * d } else { d };
        let hidden = cfg.ff_mult * d;
        Ok(Self {
            w_q: init.glorot(&format!("{prefix}.w_q"), d, d)?,
            w_k: init.glorot(&format!("{prefix}.w_k"), d, d)?,
            w_vf: init.glorot(&format!("{prefix}.w_vf"), d, d)?,
            w_ve: if with_prior {
                Some(init.glorot(&format!("{prefix}.w_ve"), d, d)?)
            } else {
                None
            },
            ff1_w: init.glorot(&format!("{prefix}.ff1.w"), ff_in, hidden)?,
            ff1_b: init.zeros(&format!("{prefix}.ff1.b"), 1, hidden)?,
            ff2_w: init.glorot(&format!("{prefix}.ff2.w"), hidden, d)?,
            ff2_b: init.zeros(&format!("{prefix}.ff2.b"), 1, d)?,
            ln_gain: init.filled(&format!("{prefix}.ln.gain"), 1, d, 1.0)?,
            ln_shift: init.zeros(&format!("{prefix}.ln.shift"), 1, d)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct HcaOutput {
    /// `n×d` refined representation of the target attribute.
    pub refined: Var,
    /// One `n×f` row-stochastic matrix per head.
    pub weights: Vec<Var>,
}

/// Refines one attribute by attending over all entities of all attributes.
/// Per head, values are `x̄_f·W_Vf ⊕ a_pre·W_Ve` when the encoder has `W_Ve`.
/// A missing `a_pre` on such an encoder contributes a zero block.
pub fn hca_encode(
    tape: &mut Tape<'_>,
    target: Attribute,
    reps: &UniAttributeReps,
    a_pre: Option<Var>,
    p: &HcaParams,
    cfg: &RepresentationConfig,
) -> Result<HcaOutput> {
    let (d, heads, v) = (cfg.d_model, cfg.heads, cfg.head_width());
    let all = tape.concat_rows(&[reps.x_hf, reps.x_rc, reps.x_ts]);
    let f = tape.shape(all).0;
    let x = reps.get(target);
    let (w_q, w_k, w_vf) = (tape.param(p.w_q), tape.param(p.w_k), tape.param(p.w_vf));
    let q = tape.matmul(x, w_q);
    let k = tape.matmul(all, w_k);
    let vf = tape.matmul(all, w_vf);
    let ve = match (p.w_ve, a_pre) {
        (None, _) => None,
        (Some(id), Some(a)) => {
            if tape.shape(a) != (f, d) {
                return Err(Error::Contract(format!("a_pre shape {:?}, expected ({f}, {d})", tape.shape(a))));
            }
            let w = tape.param(id);
            Some(tape.matmul(a, w))
        }
        (Some(_), None) => Some(tape.constant(Tensor::zeros(f, d))),
    };
    let mut outputs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * v, v);
        let kh = tape.slice_cols(k, h * v, v);
        let vh = tape.slice_cols(vf, h * v, v);
        let vh = match ve {
            Some(ve) => {
                let eh = tape.slice_cols(ve, h * v, v);
                tape.concat_cols(&[vh, eh])
            }
            None => vh,
        };
        let att = scaled_dot_attention(tape, qh, kh, vh)?;
        outputs.push(att.output);
        weights.push(att.weights);
    }
    let joined = tape.concat_cols(&outputs);
    let (w1, b1, w2, b2) = (tape.param(p.ff1_w), tape.param(p.ff1_b), tape.param(p.ff2_w), tape.param(p.ff2_b));
    let hidden = dense(tape, joined, w1, b1);
    let hidden = tape.leaky_relu(hidden, cfg.leaky_slope);
    let ff = dense(tape, hidden, w2, b2);
    let residual = tape.add(ff, x);
    let (gain, shift) = (tape.param(p.ln_gain), tape.param(p.ln_shift));
    Ok(HcaOutput {
        refined: layer_norm(tape, residual, gain, shift),
        weights,
    })
}

#[derive(Clone, Debug)]
pub struct OptionContext {
    /// `1×3d`: mean-pooled refined human, robot, and task representations.
    pub c_omega: Var,
    pub refined: [Var; 3],
    pub weights: [Vec<Var>; 3],
}

impl OptionContext {
    pub fn refined(&self, a: Attribute) -> Var {
        self.refined[a as usize]
    }
}

pub fn option_context(
    tape: &mut Tape<'_>,
    reps: &UniAttributeReps,
    a_pre: Option<Var>,
    encoders: &[HcaParams; 3],
    cfg: &RepresentationConfig,
) -> Result<OptionContext> {
    let mut refined = Vec::with_capacity(3);
    let mut weights = Vec::with_capacity(3);
    let mut means = Vec::with_capacity(3);
    for (target, p) in Attribute::ALL.into_iter().zip(encoders) {
        let out = hca_encode(tape, target, reps, a_pre, p, cfg)?;
        means.push(tape.mean_rows(out.refined));
        refined.push(out.refined);
        weights.push(out.weights);
    }
    let [w0, w1, w2]: [Vec<Var>; 3] = weights.try_into().expect("three encoders");
    Ok(OptionContext {
        c_omega: tape.concat_cols(&means),
        refined: [refined[0], refined[1], refined[2]],
        weights: [w0, w1, w2],
    })
}
