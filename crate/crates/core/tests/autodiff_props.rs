use proptest::prelude::*;
use udainv_core::autodiff::{forward_eval, grad_check, gradient, Tape, Tensor, Var};

fn tensor(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |v| Tensor::matrix(rows, cols, v).unwrap())
}

/// Magnitudes in `[lo, hi]` with either sign.
fn signed(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec((lo..hi, any::<bool>()), rows * cols).prop_map(move |v| {
        let data = v.into_iter().map(|(m, s)| if s { m } else { -m }).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    })
}

fn loss_a(t: &mut Tape, x: Var) -> udainv_core::Result<Var> {
    let y = t.tanh(x);
    let y = t.square(y);
    Ok(t.mean(y))
}

fn loss_b(t: &mut Tape, x: Var) -> udainv_core::Result<Var> {
    let e = t.exp(x);
    let s = t.sum_axis(e, 1)?;
    let l = t.ln(s)?;
    Ok(t.sum(l))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradients_are_linear_in_the_loss(x in tensor(3, 4, -2.0, 2.0)) {
        let (_, ga) = gradient(&loss_a, &x).unwrap();
        let (_, gb) = gradient(&loss_b, &x).unwrap();
        let sum = |t: &mut Tape, x: Var| {
            let a = loss_a(t, x)?;
            let b = loss_b(t, x)?;
            t.add(a, b)
        };
        let (_, g) = gradient(&sum, &x).unwrap();
        for ((g, a), b) in g.data().iter().zip(ga.data()).zip(gb.data()) {
            prop_assert!((g - (a + b)).abs() <= 1e-12 * (1.0 + g.abs()));
        }
    }

    #[test]
    fn forward_eval_is_bit_deterministic(a in tensor(4, 3, -3.0, 3.0), b in tensor(3, 2, -3.0, 3.0)) {
        let graph = |t: &mut Tape, v: &[Var]| {
            let m = t.matmul(v[0], v[1])?;
            let s = t.sigmoid(m);
            Ok(t.mean(s))
        };
        let (t1, _, y1) = forward_eval(graph, &[a.clone(), b.clone()]).unwrap();
        let (t2, _, y2) = forward_eval(graph, &[a, b]).unwrap();
        prop_assert_eq!(t1.value(y1).item().to_bits(), t2.value(y2).item().to_bits());
    }

    #[test]
    fn a_new_tape_sees_mutated_parameters(w in tensor(2, 2, -1.0, 1.0), bump in 0.1f64..1.0) {
        let f = |t: &mut Tape, w: Var| {
            let s = t.square(w);
            Ok(t.sum(s))
        };
        let (v1, g1) = gradient(&f, &w).unwrap();
        let mut w2 = w.clone();
        w2.data_mut()[0] += bump;
        let (v2, g2) = gradient(&f, &w2).unwrap();
        let x0 = w.data()[0];
        prop_assert!((v2 - v1 - ((x0 + bump).powi(2) - x0 * x0)).abs() < 1e-12);
        prop_assert!((g2.data()[0] - g1.data()[0] - 2.0 * bump).abs() < 1e-12);
    }

    #[test]
    fn smooth_primitives_match_central_differences(x in signed(3, 3, 0.2, 2.0), p in tensor(3, 3, 0.2, 2.0)) {
        type Op = fn(&mut Tape, Var) -> udainv_core::Result<Var>;
        let ops: [(&str, Op); 6] = [
            ("exp", |t, x| Ok(t.exp(x))),
            ("tanh", |t, x| Ok(t.tanh(x))),
            ("sigmoid", |t, x| Ok(t.sigmoid(x))),
            ("leaky_relu", |t, x| Ok(t.leaky_relu(x, 0.2))),
            ("abs", |t, x| Ok(t.abs(x))),
            ("square", |t, x| Ok(t.square(x))),
        ];
        for (name, op) in ops {
            let f = move |t: &mut Tape, x: Var| {
                let y = op(t, x)?;
                let w = t.constant(Tensor::from_fn(&[3, 3], |i| 0.5 + 0.1 * i as f64));
                let y = t.mul(y, w)?;
                Ok(t.sum(y))
            };
            let err = grad_check(&f, &x, 1e-5).unwrap();
            prop_assert!(err < 1e-6, "{} {:e}", name, err);
        }
        let pos: [(&str, Op); 2] = [("ln", |t, x| t.ln(x)), ("sqrt", |t, x| t.sqrt(x))];
        for (name, op) in pos {
            let f = move |t: &mut Tape, x: Var| {
                let y = op(t, x)?;
                Ok(t.sum(y))
            };
            let err = grad_check(&f, &p, 1e-5).unwrap();
            prop_assert!(err < 1e-6, "{} {:e}", name, err);
        }
    }
}
