//! Export of refined representations and attention weights for inspection.

use ita_autograd::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::context::{encode_context, MultiAttributeContext};
use crate::error::{Error, Result};
use crate::policy::{DecodeMode, PolicyModel};
use crate::representation::Attribute;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major values.
    pub values: Vec<f64>,
}

impl From<&Tensor> for Matrix {
    fn from(t: &Tensor) -> Self {
        Self {
            rows: t.rows(),
            cols: t.cols(),
            values: t.as_slice().to_vec(),
        }
    }
}

impl Matrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeAttention {
    /// `hf`, `rc`, or `ts`.
    pub attribute: String,
    /// Refined representation, one row per entity.
    pub refined: Matrix,
    /// One row-stochastic matrix per head over all `k + i + j` entities.
    pub weights: Vec<Matrix>,
    /// Element-wise mean of `weights`.
    pub mean_weights: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionAttention {
    pub option: usize,
    /// Greedy actions of this option.
    pub actions: Vec<usize>,
    pub attributes: Vec<AttributeAttention>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub kind: String,
    pub setting: (usize, usize, usize),
    pub options: Vec<OptionAttention>,
}

impl AttentionExport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Runs the greedy forward pass and collects what each option's encoder
/// computed. `option` selects one option; `None` exports all.
pub fn export_attention(model: &PolicyModel, ctx: &MultiAttributeContext, option: Option<usize>) -> Result<AttentionExport> {
    let cfg = model.config();
    if cfg.kind.representation() == Some(crate::baselines::Representation::Dense) {
        return Err(Error::Contract(format!("{} has no attention encoder", cfg.kind)));
    }
    if let Some(n) = option {
        if n >= model.num_options() {
            return Err(Error::Contract(format!("option {n} out of range (model has {})", model.num_options())));
        }
    }
    let m = encode_context(ctx);
    let mut tape = Tape::with_params(model.params());
    let trace = model.forward(&mut tape, &m, &mut DecodeMode::Greedy, false)?;
    let mut options = Vec::new();
    for (n, opt) in trace.options.iter().enumerate() {
        if option.is_some_and(|o| o != n) {
            continue;
        }
        let oc = opt
            .context
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("option {n} has no attention context")))?;
        let attributes = Attribute::ALL
            .iter()
            .enumerate()
            .map(|(a, attr)| {
                let weights: Vec<Matrix> = oc.weights[a].iter().map(|&w| Matrix::from(tape.value(w))).collect();
                AttributeAttention {
                    attribute: attr.tag().to_string(),
                    refined: Matrix::from(tape.value(oc.refined[a])),
                    mean_weights: head_mean(&weights),
                    weights,
                }
            })
            .collect();
        options.push(OptionAttention {
            option: n,
            actions: opt.actions.clone(),
            attributes,
        });
    }
    Ok(AttentionExport {
        kind: cfg.kind.to_string(),
        setting: (cfg.k, cfg.i, cfg.j),
        options,
    })
}

fn head_mean(weights: &[Matrix]) -> Matrix {
    let (rows, cols) = (weights[0].rows, weights[0].cols);
    let n = weights.len() as f64;
    let values = (0..rows * cols).map(|x| weights.iter().map(|w| w.values[x]).sum::<f64>() / n).collect();
    Matrix { rows, cols, values }
}
