//! Double-double evaluation of relu-family MLPs for central differences.
//! Piecewise-linear networks have no truncation error away from kinks, so
//! the only error left in `(f(θ+h) − f(θ−h)) / 2h` is rounding in `f`,
//! which f64 evaluation puts at `ulp(f)/2h`.

use std::ops::{Add, Mul, Neg, Sub};

use crate::nn::{Activation, Mlp};
use crate::tensor::Tensor;

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    fn new(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let s = hi + lo;
        Dd {
            hi: s,
            lo: lo - (s - hi),
        }
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl Add for Dd {
    type Output = Dd;

    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let r = Dd::renorm(s, e + t);
        Dd::renorm(r.hi, r.lo + f)
    }
}

impl Neg for Dd {
    type Output = Dd;

    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;

    fn sub(self, o: Dd) -> Dd {
        self + -o
    }
}

impl Mul for Dd {
    type Output = Dd;

    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p) + (self.hi * o.lo + self.lo * o.hi);
        Dd::renorm(p, e)
    }
}

/// A coordinate to perturb: an input element, or element `i` of parameter
/// `k` in [`crate::nn::Module::params`] order.
#[derive(Debug, Clone, Copy)]
pub(super) enum Coord {
    Input(usize),
    Param(usize, usize),
}

/// Whether [`central_difference`] can evaluate `net` exactly enough.
pub(super) fn supported(net: &Mlp<f64>) -> bool {
    net.activation != Activation::Tanh
}

/// `(f(θ+h e) − f(θ−h e)) / 2h` for `f = sum(net(x) ⊙ c)`, with frozen
/// spectral estimates, evaluated in double-double.
pub(super) fn central_difference(
    net: &Mlp<f64>,
    x: &Tensor<f64>,
    c: &Tensor<f64>,
    at: Coord,
    h: f64,
) -> f64 {
    let fp = value(net, x, c, at, Dd::new(h));
    let fm = value(net, x, c, at, Dd::new(-h));
    (fp - fm).value() / (2.0 * h)
}

fn value(net: &Mlp<f64>, x: &Tensor<f64>, c: &Tensor<f64>, at: Coord, delta: Dd) -> Dd {
    let bump = |data: &[f64], hit: Option<usize>| -> Vec<Dd> {
        data.iter()
            .enumerate()
            .map(|(j, &v)| {
                if hit == Some(j) {
                    Dd::new(v) + delta
                } else {
                    Dd::new(v)
                }
            })
            .collect()
    };
    let param_hit = |k: usize| match at {
        Coord::Param(p, i) if p == k => Some(i),
        _ => None,
    };
    let batch = x.rows();
    let mut h = bump(
        x.data(),
        match at {
            Coord::Input(i) => Some(i),
            Coord::Param(..) => None,
        },
    );
    let mut width = x.len() / batch;
    let last = net.layers.len() - 1;
    for (l, layer) in net.layers.iter().enumerate() {
        let (out, inp) = (layer.out_features(), layer.in_features());
        debug_assert_eq!(inp, width);
        let mut w = bump(layer.weight.data(), param_hit(2 * l));
        if let Some(s) = layer.spectral.as_ref().and_then(|s| s.sigma) {
            let r = Dd::new(1.0 / s);
            w.iter_mut().for_each(|v| *v = *v * r);
        }
        let b = bump(layer.bias.data(), param_hit(2 * l + 1));
        let mut y = vec![Dd::ZERO; batch * out];
        for n in 0..batch {
            for o in 0..out {
                let mut acc = b[o];
                for i in 0..inp {
                    acc = acc + h[n * inp + i] * w[o * inp + i];
                }
                y[n * out + o] = match (l < last, net.activation) {
                    (false, _) => acc,
                    (true, _) if acc.hi > 0.0 => acc,
                    (true, Activation::Lrelu) => acc * Dd::new(0.2),
                    (true, _) => Dd::ZERO,
                };
            }
        }
        h = y;
        width = out;
    }
    h.iter()
        .zip(c.data())
        .fold(Dd::ZERO, |acc, (&v, &ci)| acc + v * Dd::new(ci))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_bits_lost_in_f64() {
        let a = Dd::new(1.0) + Dd::new(1e-20);
        assert_eq!((a - Dd::new(1.0)).value(), 1e-20);
        let third = Dd::new(1.0 / 3.0);
        let p = third * Dd::new(3.0);
        assert_eq!(p.hi, 1.0);
        assert!(p.lo.abs() < 1e-16 && p.lo != 0.0);
    }
}
