//! Checks shared by the integration tests and the acceptance suite. Each
//! returns the measured quantity; callers apply the tolerance.
#![allow(dead_code)]

use ita::baselines::AllocatorKind;
use ita::context::{encode_context, sample_context, ScenarioSpec};
use ita::init::Initializer;
use ita::policy::{DecodeMode, ModelConfig, PolicyModel};
use ita::representation::{hca_encode, Attribute, HcaParams, RepresentationConfig, UniAttributeReps};
use ita::rng::CounterRng;
use ita_autograd::layers::DEFAULT_LEAKY_SLOPE;
use ita_autograd::{relative_error, ParamId, ParamSet, Tape, Tensor, Var};

pub const STEP: f64 = 1e-6;

pub fn random(rng: &mut CounterRng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform(-1.5, 1.5)).collect())
}

fn small_config(d: usize, heads: usize) -> RepresentationConfig {
    RepresentationConfig {
        d_model: d,
        heads,
        ff_mult: 2,
        leaky_slope: DEFAULT_LEAKY_SLOPE,
    }
}

/// Scalar loss touching every refined coordinate and every attention weight.
fn encoder_loss(
    tape: &mut Tape<'_>,
    inputs: &[Var],
    target: Attribute,
    p: &HcaParams,
    c: &RepresentationConfig,
    proj: &[Tensor],
) -> Var {
    let reps = UniAttributeReps {
        x_hf: inputs[0],
        x_rc: inputs[1],
        x_ts: inputs[2],
    };
    let out = hca_encode(tape, target, &reps, Some(inputs[3]), p, c).unwrap();
    let w = tape.constant(proj[0].clone());
    let y = tape.mul(out.refined, w);
    let mut loss = tape.sum(y);
    for (h, &att) in out.weights.iter().enumerate() {
        let w = tape.constant(proj[1 + h].clone());
        let y = tape.mul(att, w);
        let s = tape.sum(y);
        loss = tape.add(loss, s);
    }
    loss
}

/// Largest relative error between analytic and central-difference gradients
/// of a full cross-attribute encoder, over all its weights and inputs
/// (including the prior-action block), across `points` random points.
pub fn hca_gradient_error(points: u64) -> f64 {
    let c = small_config(4, 2);
    let (k, i, j) = (2, 2, 3);
    let f = k + i + j;
    let d = c.d_model;
    let mut worst: f64 = 0.0;
    for point in 0..points {
        let mut rng = CounterRng::new(point, 9);
        let target = Attribute::ALL[point as usize % 3];
        let mut params = ParamSet::new();
        let p = HcaParams::init(&mut Initializer::new(&mut params, point), "enc", &c, true).unwrap();
        // Move biases and LayerNorm affine terms away from their init values.
        for id in [p.ff1_b, p.ff2_b, p.ln_gain, p.ln_shift] {
            let (r, cols) = params.get(id).shape();
            *params.get_mut(id) = random(&mut rng, r, cols);
        }
        let inputs = vec![random(&mut rng, k, d), random(&mut rng, i, d), random(&mut rng, j, d), random(&mut rng, f, d)];
        let rows = [k, i, j][target as usize];
        let proj: Vec<Tensor> = std::iter::once(random(&mut rng, rows, d))
            .chain((0..c.heads).map(|_| random(&mut rng, rows, f)))
            .collect();

        let eval = |params: &ParamSet, inputs: &[Tensor]| -> f64 {
            let mut tape = Tape::with_params(params);
            let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let loss = encoder_loss(&mut tape, &vars, target, &p, &c, &proj);
            tape.value(loss).item()
        };

        let mut tape = Tape::with_params(&params);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let loss = encoder_loss(&mut tape, &vars, target, &p, &c, &proj);
        let grads = tape.backward(loss).unwrap();

        let mut probe = inputs.clone();
        for (which, v) in vars.iter().enumerate() {
            let analytic = grads.wrt(*v).unwrap().clone();
            for n in 0..inputs[which].len() {
                let orig = inputs[which].as_slice()[n];
                probe[which].as_mut_slice()[n] = orig + STEP;
                let up = eval(&params, &probe);
                probe[which].as_mut_slice()[n] = orig - STEP;
                let down = eval(&params, &probe);
                probe[which].as_mut_slice()[n] = orig;
                worst = worst.max(relative_error(analytic.as_slice()[n], (up - down) / (2.0 * STEP)));
            }
        }
        let analytic: Vec<(ParamId, Tensor)> = params
            .iter()
            .map(|(id, _, t)| (id, grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))))
            .collect();
        let mut shifted = params.clone();
        for (id, g) in analytic {
            for n in 0..g.len() {
                let orig = params.get(id).as_slice()[n];
                shifted.get_mut(id).as_mut_slice()[n] = orig + STEP;
                let up = eval(&shifted, &inputs);
                shifted.get_mut(id).as_mut_slice()[n] = orig - STEP;
                let down = eval(&shifted, &inputs);
                shifted.get_mut(id).as_mut_slice()[n] = orig;
                worst = worst.max(relative_error(g.as_slice()[n], (up - down) / (2.0 * STEP)));
            }
        }
    }
    worst
}

/// Largest deviation between an encoder fed a zero prior-action block and an
/// encoder without the prior path whose FF1 keeps only the `x̄·W_Vf` rows.
pub fn null_prior_deviation(seeds: u64) -> f64 {
    let c = small_config(8, 4);
    let (d, v) = (c.d_model, c.head_width());
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = CounterRng::new(seed, 3);
        let mut params = ParamSet::new();
        let mut init = Initializer::new(&mut params, seed);
        let with = HcaParams::init(&mut init, "with", &c, true).unwrap();
        let without = HcaParams::init(&mut init, "without", &c, false).unwrap();
        for (a, b) in [
            (with.w_q, without.w_q),
            (with.w_k, without.w_k),
            (with.w_vf, without.w_vf),
            (with.ff1_b, without.ff1_b),
            (with.ff2_w, without.ff2_w),
            (with.ff2_b, without.ff2_b),
            (with.ln_gain, without.ln_gain),
            (with.ln_shift, without.ln_shift),
        ] {
            *params.get_mut(b) = params.get(a).clone();
        }
        let ff1 = params.get(with.ff1_w).clone();
        let kept: Vec<Vec<f64>> = (0..c.heads)
            .flat_map(|h| (0..v).map(move |r| h * 2 * v + r))
            .map(|r| ff1.row(r).to_vec())
            .collect();
        *params.get_mut(without.ff1_w) = Tensor::from_rows(&kept);

        let (k, i, j) = (2, 3, 4);
        let xs = [random(&mut rng, k, d), random(&mut rng, i, d), random(&mut rng, j, d)];
        let mut tape = Tape::with_params(&params);
        let reps = UniAttributeReps {
            x_hf: tape.constant(xs[0].clone()),
            x_rc: tape.constant(xs[1].clone()),
            x_ts: tape.constant(xs[2].clone()),
        };
        let zero = tape.constant(Tensor::zeros(k + i + j, d));
        for target in Attribute::ALL {
            let a = hca_encode(&mut tape, target, &reps, Some(zero), &with, &c).unwrap();
            let b = hca_encode(&mut tape, target, &reps, None, &without, &c).unwrap();
            worst = worst.max(tape.value(a.refined).max_abs_diff(tape.value(b.refined)));
            for (wa, wb) in a.weights.iter().zip(&b.weights) {
                worst = worst.max(tape.value(*wa).max_abs_diff(tape.value(*wb)));
            }
        }
    }
    worst
}

/// Smallest squared gradient norm reaching a downstream option's prior-action
/// table from that option's log-likelihood, over all prior-injecting kinds.
/// Also checks that exactly the rows of upstream actions receive gradient.
pub fn min_prior_gradient() -> f64 {
    let mut smallest = f64::INFINITY;
    for kind in [AllocatorKind::AeHrl2, AllocatorKind::AeHrl3, AllocatorKind::AeHrl4] {
        let model = PolicyModel::new(ModelConfig::new(kind, 2, 3, 4).with_width(8, 2, 2)).unwrap();
        let m = encode_context(&sample_context(&ScenarioSpec::new(2, 3, 4, 1)).unwrap());
        assert!(model.prior_table(0).is_none());
        for n in 1..model.num_options() {
            let mut tape = Tape::with_params(model.params());
            let mut rng = CounterRng::new(n as u64, 0);
            let trace = model.forward(&mut tape, &m, &mut DecodeMode::Sample(&mut rng), false).unwrap();
            let loss = tape.sum(trace.options[n].log_probs);
            let grads = tape.backward(loss).unwrap();
            let table = model.prior_table(n).expect("downstream option has a prior table");
            let Some(g) = grads.param(table) else {
                return 0.0;
            };
            let used: std::collections::BTreeSet<usize> = trace.options[n - 1].actions.iter().copied().collect();
            for r in 0..g.rows() {
                let norm: f64 = g.row(r).iter().map(|x| x * x).sum();
                if (norm > 0.0) != used.contains(&r) {
                    return 0.0;
                }
            }
            smallest = smallest.min(g.sum_squares());
        }
    }
    smallest
}

/// Largest |row sum − 1| of any attention matrix in full forward passes.
pub fn attention_row_sum_error() -> f64 {
    let mut worst: f64 = 0.0;
    for kind in [AllocatorKind::AtRl, AllocatorKind::AtHrl2, AllocatorKind::AeHrl3, AllocatorKind::AeHrl4] {
        let model = PolicyModel::new(ModelConfig::new(kind, 3, 4, 6).with_width(8, 2, 2)).unwrap();
        for seed in 0..10 {
            let m = encode_context(&sample_context(&ScenarioSpec::new(3, 4, 6, seed)).unwrap());
            let mut tape = Tape::with_params(model.params());
            let trace = model.forward(&mut tape, &m, &mut DecodeMode::Greedy, false).unwrap();
            for opt in &trace.options {
                let ctx = opt.context.as_ref().unwrap();
                for w in ctx.weights.iter().flatten() {
                    let w = tape.value(*w);
                    for r in 0..w.rows() {
                        worst = worst.max((w.row(r).iter().sum::<f64>() - 1.0).abs());
                        if w.row(r).iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                            return f64::INFINITY;
                        }
                    }
                }
            }
        }
    }
    worst
}
