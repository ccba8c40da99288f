use ita_autograd::{scaled_dot_attention, Tape, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-20.0f64..20.0, rows * cols).prop_map(move |v| Tensor::from_vec(rows, cols, v))
}

fn qkv() -> impl Strategy<Value = (Tensor, Tensor, Tensor)> {
    (1usize..4, 1usize..6, 1usize..4, 1usize..4)
        .prop_flat_map(|(n, m, q, v)| (matrix(n, q), matrix(m, q), matrix(m, v)))
}

proptest! {
    #[test]
    fn attention_rows_are_stochastic((q, k, v) in qkv()) {
        let mut t = Tape::new();
        let (q, k, v) = (t.constant(q), t.constant(k), t.constant(v));
        let att = scaled_dot_attention(&mut t, q, k, v).unwrap();
        let w = t.value(att.weights);
        for r in 0..w.rows() {
            let total: f64 = w.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            prop_assert!(w.row(r).iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn attention_is_permutation_equivariant_in_keys((q, k, v) in qkv(), shift in 0usize..6) {
        let m = k.rows();
        let perm: Vec<usize> = (0..m).map(|i| (i + shift) % m).collect();
        let permute = |x: &Tensor| {
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| x.row(i).to_vec()).collect();
            Tensor::from_rows(&rows)
        };
        let (kp, vp) = (permute(&k), permute(&v));
        let mut t = Tape::new();
        let (qa, ka, va) = (t.constant(q.clone()), t.constant(k), t.constant(v));
        let a = scaled_dot_attention(&mut t, qa, ka, va).unwrap();
        let (qb, kb, vb) = (t.constant(q), t.constant(kp), t.constant(vp));
        let b = scaled_dot_attention(&mut t, qb, kb, vb).unwrap();
        prop_assert!(t.value(a.output).max_abs_diff(t.value(b.output)) <= 1e-9);
    }

    #[test]
    fn forward_is_deterministic((q, k, v) in qkv()) {
        let run = || {
            let mut t = Tape::new();
            let (q, k, v) = (t.constant(q.clone()), t.constant(k.clone()), t.constant(v.clone()));
            let att = scaled_dot_attention(&mut t, q, k, v).unwrap();
            t.value(att.output).clone()
        };
        prop_assert_eq!(run(), run());
    }
}
