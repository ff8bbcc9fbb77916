use fusedprop::autograd::{linear_backward, LinearGrads, NodeId, Tape};
use fusedprop::losses::LossKind;
use fusedprop::nn::invfusedprop_linear_backward;
use fusedprop::tensor::{self, heaviside_scalar, relu, softplus_scalar};
use fusedprop::Tensor;
use proptest::prelude::*;

fn tensor(dims: &[usize]) -> impl Strategy<Value = Tensor<f64>> {
    let dims = dims.to_vec();
    let n: usize = dims.iter().product();
    prop::collection::vec(-3.0f64..3.0, n).prop_map(move |v| Tensor::new(dims.clone(), v).unwrap())
}

fn identity(n: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n {
        t.data_mut()[i * n + i] = 1.0;
    }
    t
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// `sum(c ⊙ tanh(x ⊙ x))` and `sum(c ⊙ softplus(x))`, two smooth scalars of one leaf.
fn record_pair(tape: &mut Tape<f64>, x: NodeId, c: &Tensor<f64>) -> (NodeId, NodeId) {
    let ci = tape.constant(c.clone());
    let sq = tape.square(x);
    let t = tape.tanh(sq);
    let ft = tape.mul(t, ci).unwrap();
    let f = tape.sum(ft);
    let sp = tape.softplus(x);
    let gt = tape.mul(sp, ci).unwrap();
    let g = tape.sum(gt);
    (f, g)
}

fn grad_of(
    x: &Tensor<f64>,
    c: &Tensor<f64>,
    combine: impl Fn(&mut Tape<f64>, NodeId, NodeId) -> NodeId,
) -> Tensor<f64> {
    let mut tape = Tape::new();
    let xi = tape.param(x.clone());
    let (f, g) = record_pair(&mut tape, xi, c);
    let root = combine(&mut tape, f, g);
    tape.backward(root).unwrap().get_or_zeros(xi, x)
}

proptest! {
    #[test]
    fn softplus_difference_is_identity(x in -50.0f64..50.0) {
        prop_assert!((softplus_scalar(x) - softplus_scalar(-x) - x).abs() <= 1e-12);
    }

    #[test]
    fn relu_is_x_times_heaviside(x in tensor(&[4, 5])) {
        let r = relu(&x);
        for (&v, &out) in x.data().iter().zip(r.data()) {
            prop_assert_eq!(out, v * heaviside_scalar(v));
        }
        prop_assert_eq!(relu(&Tensor::scalar(0.0)).data()[0], 0.0 * heaviside_scalar(0.0));
    }

    #[test]
    fn matmul_by_identity_is_exact(a in tensor(&[6, 6])) {
        let i = identity(6);
        prop_assert_eq!(&tensor::matmul(&a, &i).unwrap(), &a);
        prop_assert_eq!(&tensor::matmul(&i, &a).unwrap(), &a);
    }

    #[test]
    fn backward_is_linear(x in tensor(&[3, 4]), c in tensor(&[3, 4]), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let gf = grad_of(&x, &c, |_, f, _| f);
        let gg = grad_of(&x, &c, |_, _, g| g);
        let gc = grad_of(&x, &c, |t, f, g| {
            let (fa, gb) = (t.scale(f, a), t.scale(g, b));
            t.add(fa, gb).unwrap()
        });
        for i in 0..x.len() {
            let want = a * gf.data()[i] + b * gg.data()[i];
            let scale = (a * gf.data()[i]).abs() + (b * gg.data()[i]).abs();
            prop_assert!((gc.data()[i] - want).abs() <= 1e-12 * scale.max(1e-300), "{i}: {} vs {want}", gc.data()[i]);
        }
    }

    #[test]
    fn grad_reversals_compose_multiplicatively(x in tensor(&[2, 3]), c in tensor(&[2, 3]), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let run = |factors: &[f64]| {
            let mut tape = Tape::new();
            let xi = tape.param(x.clone());
            let mut h = xi;
            for &f in factors {
                h = tape.grad_reversal(h, f);
            }
            let ci = tape.constant(c.clone());
            let p = tape.mul(h, ci).unwrap();
            let root = tape.sum(p);
            tape.backward(root).unwrap().get_or_zeros(xi, &x)
        };
        let composed = run(&[a, b]);
        let single = run(&[a * b]);
        for (u, v) in composed.data().iter().zip(single.data()) {
            prop_assert!(close(*u, *v, 4.0 * f64::EPSILON), "{u} vs {v}");
        }
    }

    #[test]
    fn all_ones_boundary_is_transparent(x in tensor(&[4, 3]), w in tensor(&[2, 3]), c in tensor(&[4, 2])) {
        let run = |boundary: bool| {
            let mut tape = Tape::new();
            let xi = tape.param(x.clone());
            let wi = tape.param(w.clone());
            let mut h = tape.tanh(xi);
            if boundary {
                let slot = tape.scale_slot();
                h = tape.fusedprop_boundary(h, slot).unwrap();
                tape.bind_scale(slot, &Tensor::ones(&[4])).unwrap();
            }
            let y = tape.linear(h, wi, None).unwrap();
            let ci = tape.constant(c.clone());
            let p = tape.mul(y, ci).unwrap();
            let root = tape.sum(p);
            let grads = tape.backward(root).unwrap();
            (grads.get_or_zeros(xi, &x), grads.get_or_zeros(wi, &w))
        };
        prop_assert_eq!(run(true), run(false));
    }

    #[test]
    fn constant_lambda_boundary_is_grad_reversal(y in tensor(&[5, 1]), wasserstein in any::<bool>()) {
        let kind = if wasserstein { LossKind::Wasserstein } else { LossKind::Minimax };
        let lambda = fusedprop::losses::lambda_of(kind, &y).unwrap();
        prop_assert!(lambda.data().iter().all(|&l| l == -1.0));
        let run = |boundary: bool| {
            let mut tape = Tape::new();
            let yi = tape.param(y.clone());
            let h = if boundary {
                let slot = tape.scale_slot();
                let h = tape.fusedprop_boundary(yi, slot).unwrap();
                tape.bind_scale(slot, &lambda).unwrap();
                h
            } else {
                tape.grad_reversal(yi, -1.0)
            };
            let per = kind.record_d_fake(&mut tape, h);
            let root = tape.mean(per);
            tape.backward(root).unwrap().get_or_zeros(yi, &y)
        };
        prop_assert_eq!(run(true), run(false));
    }

    #[test]
    fn lambda_and_inverse_multiply_to_one(y in -5.0f64..5.0) {
        for kind in LossKind::ALL {
            if let (Ok(l), Ok(li)) = (kind.lambda_at(y, 0), kind.lambda_inv_at(y, 0)) {
                if l != 0.0 && li != 0.0 && l.is_finite() && li.is_finite() {
                    prop_assert!(close(l * li, 1.0, 1e-9), "{kind}: {l} * {li}");
                }
            }
        }
    }

    #[test]
    fn invfusedprop_linear_with_unit_scale_is_standard(x in tensor(&[4, 3]), w in tensor(&[2, 3]), gy in tensor(&[4, 2]), s in tensor(&[4])) {
        let (gx, gw, gb) = invfusedprop_linear_backward(&x, &w, &gy, &Tensor::ones(&[4])).unwrap();
        let (sx, sw, sb) = linear_backward(&x, &w, &gy, None, LinearGrads::ALL).unwrap();
        prop_assert_eq!(Some(gx.clone()), sx);
        prop_assert_eq!(Some(gw), sw);
        prop_assert_eq!(Some(gb), sb);
        let (gx_s, _, _) = invfusedprop_linear_backward(&x, &w, &gy, &s).unwrap();
        prop_assert_eq!(gx_s, gx);
    }
}
