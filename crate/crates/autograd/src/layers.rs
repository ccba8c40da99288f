//! Layer building blocks expressed as tape operations.

use crate::error::AutogradError;
use crate::tape::{Tape, Var};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine map `x · W + b` for `x: n×a`, `W: a×b`, `b: 1×b`.
pub fn dense(tape: &mut Tape<'_>, x: Var, w: Var, b: Var) -> Var {
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

/// LSTM cell weights with gates packed as `[input, forget, candidate, output]`
/// along the column axis: `w_x: m×4d`, `w_h: d×4d`, `b: 1×4d`.
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

/// One LSTM step. Returns `(h, c)`, each `1×d` (or `n×d` for a batch of rows).
pub fn lstm_step(tape: &mut Tape<'_>, cell: &LstmCell, h_prev: Var, c_prev: Var, x: Var) -> (Var, Var) {
    let d = tape.shape(h_prev).1;
    assert_eq!(tape.shape(cell.w_h), (d, 4 * d), "lstm w_h shape mismatch");
    let xw = tape.matmul(x, cell.w_x);
    let hw = tape.matmul(h_prev, cell.w_h);
    let pre = tape.add(xw, hw);
    let pre = tape.add_row(pre, cell.b);
    let i_pre = tape.slice_cols(pre, 0, d);
    let f_pre = tape.slice_cols(pre, d, d);
    let g_pre = tape.slice_cols(pre, 2 * d, d);
    let o_pre = tape.slice_cols(pre, 3 * d, d);
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);
    let keep = tape.mul(f, c_prev);
    let write = tape.mul(i, g);
    let c = tape.add(keep, write);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc);
    (h, c)
}

/// GRU cell weights with gates packed as `[reset, update, candidate]`:
/// `w_x: m×3d`, `w_h: d×3d`, `b_x, b_h: 1×3d`.
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub w_x: Var,
    pub w_h: Var,
    pub b_x: Var,
    pub b_h: Var,
}

/// One GRU step:
/// `r = σ(x_r + h_r)`, `z = σ(x_z + h_z)`, `n = tanh(x_n + r ⊙ h_n)`,
/// `h' = (1 - z) ⊙ n + z ⊙ h`.
pub fn gru_step(tape: &mut Tape<'_>, cell: &GruCell, h_prev: Var, x: Var) -> Var {
    let xw = tape.matmul(x, cell.w_x);
    let xw = tape.add_row(xw, cell.b_x);
    gru_step_projected(tape, cell, h_prev, xw)
}

/// [`gru_step`] with the input projection `x · w_x + b_x` already computed.
/// Lets callers split the input projection into blocks whose constant parts
/// are evaluated once per sequence.
pub fn gru_step_projected(tape: &mut Tape<'_>, cell: &GruCell, h_prev: Var, x_proj: Var) -> Var {
    let d = tape.shape(h_prev).1;
    assert_eq!(tape.shape(cell.w_h), (d, 3 * d), "gru w_h shape mismatch");
    assert_eq!(tape.shape(x_proj).1, 3 * d, "gru input projection width mismatch");
    let hw = tape.matmul(h_prev, cell.w_h);
    let hw = tape.add_row(hw, cell.b_h);
    let xr = tape.slice_cols(x_proj, 0, d);
    let xz = tape.slice_cols(x_proj, d, d);
    let xn = tape.slice_cols(x_proj, 2 * d, d);
    let hr = tape.slice_cols(hw, 0, d);
    let hz = tape.slice_cols(hw, d, d);
    let hn = tape.slice_cols(hw, 2 * d, d);
    let r_pre = tape.add(xr, hr);
    let r = tape.sigmoid(r_pre);
    let z_pre = tape.add(xz, hz);
    let z = tape.sigmoid(z_pre);
    let gated = tape.mul(r, hn);
    let n_pre = tape.add(xn, gated);
    let n = tape.tanh(n_pre);
    let keep_new = tape.one_minus(z);
    let a = tape.mul(keep_new, n);
    let b = tape.mul(z, h_prev);
    tape.add(a, b)
}

/// Output of [`scaled_dot_attention`].
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub output: Var,
    /// Row-stochastic `n×m` weight matrix.
    pub weights: Var,
}

/// `softmax(Q · Kᵀ / √κ) · V` with κ the key width.
pub fn scaled_dot_attention(tape: &mut Tape<'_>, q: Var, k: Var, v: Var) -> Result<Attention, AutogradError> {
    let (m, kappa) = tape.shape(k);
    if m == 0 {
        return Err(AutogradError::EmptyKeys);
    }
    assert_eq!(tape.shape(q).1, kappa, "query/key width mismatch");
    assert_eq!(tape.shape(v).0, m, "key/value row mismatch");
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt);
    let scores = tape.scale(scores, 1.0 / (kappa as f64).sqrt());
    let weights = tape.softmax_rows(scores);
    let output = tape.matmul(weights, v);
    Ok(Attention { output, weights })
}

/// Per-row layer normalization with ε = 1e-5 followed by `gain ⊙ · + shift`.
pub fn layer_norm(tape: &mut Tape<'_>, x: Var, gain: Var, shift: Var) -> Var {
    let n = tape.normalize_rows(x, LAYER_NORM_EPS);
    let scaled = tape.mul_row(n, gain);
    tape.add_row(scaled, shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::sigmoid;
    use crate::tensor::Tensor;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn dense_identity_zero_bias_is_identity() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[[1.5, -2.0], [0.0, 3.0]]));
        let w = t.constant(Tensor::identity(2));
        let b = t.constant(Tensor::zeros(1, 2));
        let y = dense(&mut t, x, w, b);
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn dense_hand_example() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[[1.0, 2.0]]));
        let w = t.constant(Tensor::identity(2));
        let b = t.constant(Tensor::row_vector(&[1.0, 1.0]));
        let y = dense(&mut t, x, w, b);
        assert_eq!(t.value(y).as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn dense_zero_input_broadcasts_bias() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(3, 2));
        let w = t.constant(Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]));
        let b = t.constant(Tensor::row_vector(&[0.1, 0.2, 0.3]));
        let y = dense(&mut t, x, w, b);
        for r in 0..3 {
            assert_eq!(t.value(y).row(r), &[0.1, 0.2, 0.3]);
        }
    }

    #[test]
    fn leaky_relu_values() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row_vector(&[2.0, -1.0, 0.0]));
        let y = t.leaky_relu(x, DEFAULT_LEAKY_SLOPE);
        assert_eq!(t.value(y).as_slice(), &[2.0, -0.01, 0.0]);
    }

    fn lstm_zero(t: &mut Tape<'_>, m: usize, d: usize, bias: Tensor) -> LstmCell {
        LstmCell {
            w_x: t.constant(Tensor::zeros(m, 4 * d)),
            w_h: t.constant(Tensor::zeros(d, 4 * d)),
            b: t.constant(bias),
        }
    }

    #[test]
    fn lstm_zero_params_halve_the_cell() {
        let mut t = Tape::new();
        let cell = lstm_zero(&mut t, 2, 3, Tensor::zeros(1, 12));
        let h0 = t.constant(Tensor::row_vector(&[0.3, -0.2, 0.9]));
        let c0 = t.constant(Tensor::row_vector(&[1.0, -2.0, 0.5]));
        let x = t.constant(Tensor::row_vector(&[4.0, -1.0]));
        let (h, c) = lstm_step(&mut t, &cell, h0, c0, x);
        assert_eq!(t.shape(h), (1, 3));
        assert_eq!(t.shape(c), (1, 3));
        for (k, &cp) in [1.0, -2.0, 0.5].iter().enumerate() {
            let cv = t.value(c).get(0, k);
            assert!(close(cv, 0.5 * cp, 1e-15));
            assert!(close(t.value(h).get(0, k), 0.5 * cv.tanh(), 1e-15));
        }
    }

    #[test]
    fn lstm_from_zero_state_is_input_gate_times_candidate() {
        let mut t = Tape::new();
        let d = 2;
        let bias = Tensor::row_vector(&[0.7, -0.3, 1.1, 0.2, 0.4, 0.9, -0.6, 2.0]);
        let cell = LstmCell {
            w_x: t.constant(Tensor::filled(3, 4 * d, 0.37)),
            w_h: t.constant(Tensor::filled(d, 4 * d, -0.81)),
            b: t.constant(bias.clone()),
        };
        let z = t.constant(Tensor::zeros(1, d));
        let x = t.constant(Tensor::zeros(1, 3));
        let (_, c) = lstm_step(&mut t, &cell, z, z, x);
        for k in 0..d {
            let expected = sigmoid(bias.get(0, k)) * bias.get(0, 2 * d + k).tanh();
            assert!(close(t.value(c).get(0, k), expected, 1e-15));
        }
    }

    fn gru_zero(t: &mut Tape<'_>, m: usize, d: usize) -> GruCell {
        GruCell {
            w_x: t.constant(Tensor::zeros(m, 3 * d)),
            w_h: t.constant(Tensor::zeros(d, 3 * d)),
            b_x: t.constant(Tensor::zeros(1, 3 * d)),
            b_h: t.constant(Tensor::zeros(1, 3 * d)),
        }
    }

    #[test]
    fn gru_zero_params_halve_the_state() {
        let mut t = Tape::new();
        let cell = gru_zero(&mut t, 2, 3);
        let h0 = t.constant(Tensor::row_vector(&[0.4, -1.0, 2.0]));
        let x = t.constant(Tensor::row_vector(&[3.0, 1.0]));
        let h = gru_step(&mut t, &cell, h0, x);
        assert_eq!(t.shape(h), (1, 3));
        assert_eq!(t.value(h).as_slice(), &[0.2, -0.5, 1.0]);
    }

    #[test]
    fn gru_zero_params_zero_state_stays_zero() {
        let mut t = Tape::new();
        let cell = gru_zero(&mut t, 2, 3);
        let h0 = t.constant(Tensor::zeros(1, 3));
        let x = t.constant(Tensor::row_vector(&[3.0, 1.0]));
        let h = gru_step(&mut t, &cell, h0, x);
        assert_eq!(t.value(h).as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn attention_hand_example() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::from_rows(&[[1.0, 0.0]]));
        let k = t.constant(Tensor::identity(2));
        let v = t.constant(Tensor::identity(2));
        let att = scaled_dot_attention(&mut t, q, k, v).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let w0 = s.exp() / (s.exp() + 1.0);
        let out = t.value(att.output);
        assert!(close(out.get(0, 0), w0, 1e-15));
        assert!(close(out.get(0, 1), 1.0 - w0, 1e-15));
        assert!(close(w0, 0.6698, 1e-4));
    }

    #[test]
    fn attention_identical_keys_average_values() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::from_rows(&[[0.3, -2.0], [5.0, 1.0]]));
        let k = t.constant(Tensor::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]));
        let v = t.constant(Tensor::from_rows(&[[1.0, 0.0, 3.0], [2.0, 6.0, 0.0], [3.0, 3.0, 3.0]]));
        let att = scaled_dot_attention(&mut t, q, k, v).unwrap();
        for r in 0..2 {
            let row = t.value(att.output).row(r);
            assert!(close(row[0], 2.0, 1e-12) && close(row[1], 3.0, 1e-12) && close(row[2], 2.0, 1e-12));
        }
    }

    #[test]
    fn attention_single_key_returns_that_value() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::from_rows(&[[0.3, -2.0], [5.0, 1.0]]));
        let k = t.constant(Tensor::from_rows(&[[7.0, -3.0]]));
        let v = t.constant(Tensor::from_rows(&[[4.0, 5.0, 6.0]]));
        let att = scaled_dot_attention(&mut t, q, k, v).unwrap();
        for r in 0..2 {
            assert_eq!(t.value(att.output).row(r), &[4.0, 5.0, 6.0]);
        }
    }

    #[test]
    fn attention_without_keys_is_a_domain_error() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::zeros(1, 2));
        let k = t.constant(Tensor::zeros(0, 2));
        let v = t.constant(Tensor::zeros(0, 2));
        assert!(matches!(scaled_dot_attention(&mut t, q, k, v), Err(AutogradError::EmptyKeys)));
    }

    #[test]
    fn layer_norm_examples() {
        let mut t = Tape::new();
        let gain = t.constant(Tensor::row_vector(&[1.0, 1.0]));
        let zero = t.constant(Tensor::zeros(1, 2));
        let x = t.constant(Tensor::from_rows(&[[3.0, 3.0], [1.0, -1.0]]));
        let y = layer_norm(&mut t, x, gain, zero);
        assert_eq!(t.value(y).row(0), &[0.0, 0.0]);
        let expected = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
        assert!(close(t.value(y).get(1, 0), expected, 1e-15));
        assert!(close(t.value(y).get(1, 1), -expected, 1e-15));

        let shift = t.constant(Tensor::row_vector(&[0.25, -4.0]));
        let y = layer_norm(&mut t, x, gain, shift);
        assert_eq!(t.value(y).row(0), &[0.25, -4.0]);
    }
}
