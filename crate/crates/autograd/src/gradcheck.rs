//! Central finite-difference verification of analytic gradients.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor for the relative error so that near-zero gradients are
/// compared on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-2;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares the analytic gradient of `builder` at `point` against central
/// differences with the given `step`, over every coordinate of every input.
/// `builder` must be deterministic and return a `1×1` node.
///
/// Returns the maximum relative error (see [`relative_error`]).
pub fn check_gradients<F>(builder: F, point: &[Tensor], step: f64) -> f64
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Var,
{
    let eval = |inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = builder(&mut tape, &vars);
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.input(t.clone())).collect();
    let out = builder(&mut tape, &vars);
    let grads = tape.backward(out).expect("gradient check: backward failed");

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = point.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).cloned().unwrap_or_else(|| {
            let (r, c) = point[which].shape();
            Tensor::zeros(r, c)
        });
        for k in 0..point[which].len() {
            let orig = point[which].as_slice()[k];
            probe[which].as_mut_slice()[k] = orig + step;
            let up = eval(&probe);
            probe[which].as_mut_slice()[k] = orig - step;
            let down = eval(&probe);
            probe[which].as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic.as_slice()[k], numeric));
        }
    }
    worst
}
