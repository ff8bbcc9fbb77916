//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] sweeps it once
//! in reverse node order and returns a [`GradStore`]. Two custom rules sit
//! on top of the ordinary kernels:
//!
//! * [`Tape::grad_reversal`] scales the incoming gradient by a constant.
//! * [`Tape::fusedprop_boundary`] and [`Tape::linear_scaled`] read a
//!   per-sample scale from a slot that is bound after the forward pass,
//!   once the discriminator outputs (and thus the factors) are known.

mod gradcheck;
mod tape;

pub use gradcheck::{
    finite_difference_check, projected_difference_check, rel_err, FdReport, REL_ERR_FLOOR,
};
pub use tape::{linear_backward, GradStore, LinearGrads, NodeId, SlotId, Tape};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::tensor::Tensor;
    use crate::{sample_normal, Rng};

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::vector(v.to_vec())
    }

    #[test]
    fn squared_norm_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[1.0, 2.0, 3.0]));
        let sq = tape.mul(w, w).unwrap();
        let root = tape.sum(sq);
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn softplus_gradient_at_zero() {
        let mut tape = Tape::new();
        let y = tape.param(t(&[0.0]));
        let s = tape.softplus(y);
        let root = tape.sum(s);
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(y).unwrap().data(), &[0.5]);
    }

    #[test]
    fn backward_contract_errors() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
        let r = tape.sum(w);
        tape.backward(r).unwrap();
        assert_eq!(tape.backward(r).unwrap_err(), Error::TapeReused);
    }

    #[test]
    fn unreachable_nodes_have_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[1.0]));
        let b = tape.param(t(&[2.0]));
        let c = tape.constant(t(&[3.0]));
        let r = tape.sum(a);
        let g = tape.backward(r).unwrap();
        assert!(g.get(b).is_none());
        assert!(g.get(c).is_none());
    }

    #[test]
    fn grad_reversal_rule() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1.5, -2.0]));
        let r = tape.grad_reversal(x, -1.0);
        assert_eq!(tape.value(r).data(), &[1.5, -2.0]);
        let w = tape.constant(t(&[1.0, 2.0]));
        let prod = tape.mul(r, w).unwrap();
        let root = tape.sum(prod);
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[-1.0, -2.0]);
    }

    #[test]
    fn fusedprop_boundary_scales_per_sample() {
        let mut tape = Tape::new();
        let gz = tape.param(Tensor::matrix(&[&[0.3, 0.7]]).unwrap());
        let slot = tape.scale_slot();
        let bz = tape.fusedprop_boundary(gz, slot).unwrap();
        let w = tape.constant(Tensor::matrix(&[&[2.0, 4.0]]).unwrap());
        let prod = tape.mul(bz, w).unwrap();
        let root = tape.sum(prod);
        tape.bind_scale(slot, &t(&[-0.5])).unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(gz).unwrap().data(), &[-1.0, -2.0]);
    }

    #[test]
    fn fusedprop_boundary_errors() {
        let mut tape = Tape::new();
        let gz = tape.param(Tensor::zeros(&[2, 3]));
        let slot = tape.scale_slot();
        let bz = tape.fusedprop_boundary(gz, slot).unwrap();
        assert!(matches!(
            tape.bind_scale(slot, &t(&[1.0, 2.0, 3.0])),
            Err(Error::Dimension(_))
        ));
        assert_eq!(
            tape.bind_scale(slot, &t(&[1.0, f64::NAN])),
            Err(Error::NonFinite {
                what: "per-sample gradient scale",
                index: 1
            })
        );
        let root = tape.sum(bz);
        assert_eq!(tape.backward(root).unwrap_err(), Error::UnboundSlot(0));
    }

    #[test]
    fn concat_and_slice_round_trip_gradients() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::matrix(&[&[1.0, 2.0]]).unwrap());
        let b = tape.param(Tensor::matrix(&[&[3.0, 4.0], &[5.0, 6.0]]).unwrap());
        let c = tape.concat_rows(&[a, b]).unwrap();
        assert_eq!(tape.value(c).dims(), &[3, 2]);
        let tail = tape.slice_rows(c, 1, 2).unwrap();
        assert_eq!(tape.value(tail).data(), &[3.0, 4.0, 5.0, 6.0]);
        let sq = tape.square(tail);
        let root = tape.sum(sq);
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(g.get(b).unwrap().data(), &[6.0, 8.0, 10.0, 12.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3.0]));
        let a = tape.scale(x, 2.0);
        let b = tape.square(x);
        let s = tape.add(a, b).unwrap();
        let root = tape.sum(s);
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[8.0]);
    }

    #[test]
    fn kink_margin_reports_nearest_relu_input() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[0.5, -0.01, 2.0]));
        let _ = tape.relu(x);
        assert_eq!(tape.kink_margin(), Some(0.01));
        let empty: Tape<f64> = Tape::new();
        assert_eq!(empty.kink_margin(), None);
    }

    #[test]
    fn finite_difference_quadratic_and_softplus() {
        let rep = finite_difference_check(&[t(&[3.0])], 1e-4, |tape, ids| {
            let sq = tape.square(ids[0]);
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-8, "{rep:?}");

        let rep = finite_difference_check(&[t(&[0.7])], 1e-4, |tape, ids| {
            let s = tape.softplus(ids[0]);
            Ok(tape.sum(s))
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-6, "{rep:?}");
    }

    #[test]
    fn finite_difference_detects_nondeterminism() {
        let mut calls = 0.0;
        let err = finite_difference_check(&[t(&[1.0])], 1e-4, |tape, ids| {
            calls += 1.0;
            let s = tape.scale(ids[0], calls);
            Ok(tape.sum(s))
        })
        .unwrap_err();
        assert!(matches!(err, Error::Oracle(_)));
    }

    #[test]
    fn hinge_mlp_matches_finite_differences() {
        // 2-16-1 MLP with relu(y + 1) averaged over a batch, away from kinks.
        let mut rng = Rng::new(11);
        let x: Tensor<f64> = sample_normal(&mut rng, &[6, 2]);
        for attempt in 0..20 {
            let w1 = crate::tensor::scale(&sample_normal(&mut rng, &[16, 2]), 0.8);
            let b1 = crate::tensor::scale(&sample_normal(&mut rng, &[16]), 0.1);
            let w2 = crate::tensor::scale(&sample_normal(&mut rng, &[1, 16]), 0.3);
            let b2 = Tensor::vector(vec![0.2]);
            let rep = finite_difference_check(&[w1, b1, w2, b2], 1e-4, |tape, ids| {
                let xi = tape.constant(x.clone());
                let h = tape.linear(xi, ids[0], Some(ids[1]))?;
                let h = tape.relu(h);
                let y = tape.linear(h, ids[2], Some(ids[3]))?;
                let y1 = tape.add_scalar(y, 1.0);
                let l = tape.relu(y1);
                Ok(tape.mean(l))
            })
            .unwrap();
            if rep.kink_margin.unwrap() < 1e-3 {
                continue;
            }
            assert!(rep.max_rel_err <= 1e-6, "attempt {attempt}: {rep:?}");
            return;
        }
        panic!("no kink-free draw");
    }
}
