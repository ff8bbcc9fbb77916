//! Central-difference oracle for the tape.

use super::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor for the per-coordinate relative error.
pub const REL_ERR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// Worst `|fd − analytic| / max(|fd|, |analytic|, 1e-8)` over all coordinates.
    pub max_rel_err: f64,
    /// (parameter index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub coords_checked: usize,
    /// Distance of the base point from the nearest relu kink, if any.
    pub kink_margin: Option<f64>,
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Compares `backward()` with central differences `(f(θ+h·eᵢ) − f(θ−h·eᵢ)) / 2h`
/// for every coordinate of every parameter.
///
/// `build` records the scalar function on a fresh tape given one leaf per
/// parameter and returns the root. It is called once for the analytic
/// pass, twice more at the base point to confirm determinism, and twice per
/// coordinate.
pub fn finite_difference_check<F>(params: &[Tensor<f64>], h: f64, build: F) -> Result<FdReport>
where
    F: FnMut(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    difference_check(params, None, h, build)
}

/// [`finite_difference_check`] for `f = sum(y ⊙ c)` where `build` returns
/// `y`. The difference `f(θ+h·eᵢ) − f(θ−h·eᵢ)` is accumulated as
/// `Σⱼ cⱼ·(y⁺ⱼ − y⁻ⱼ)`, so elements that `θᵢ` does not touch cancel exactly
/// instead of contributing `ulp(f)` of rounding.
pub fn projected_difference_check<F>(
    params: &[Tensor<f64>],
    c: &Tensor<f64>,
    h: f64,
    build: F,
) -> Result<FdReport>
where
    F: FnMut(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    difference_check(params, Some(c), h, build)
}

fn difference_check<F>(
    params: &[Tensor<f64>],
    c: Option<&Tensor<f64>>,
    h: f64,
    mut build: F,
) -> Result<FdReport>
where
    F: FnMut(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("step h must be positive, got {h}")));
    }
    for p in params {
        p.ensure_finite("finite-difference parameter")?;
    }

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = build(&mut tape, &ids)?;
    let root = match c {
        Some(c) => {
            let ci = tape.constant(c.clone());
            let p = tape.mul(out, ci)?;
            tape.sum(p)
        }
        None => out,
    };
    let kink_margin = tape.kink_margin();
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| grads.get_or_zeros(id, p))
        .collect();

    let mut eval = |ps: &[Tensor<f64>]| -> Result<Tensor<f64>> {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| t.constant(p.clone())).collect();
        let r = build(&mut t, &ids)?;
        let v = t.value(r).clone();
        match c {
            None if !v.is_scalar() => Err(Error::Contract("function must return a scalar".into())),
            Some(c) if c.dims() != v.dims() => Err(Error::dim(format!(
                "projection {:?} does not match output {:?}",
                c.dims(),
                v.dims()
            ))),
            _ => Ok(v),
        }
    };
    let difference = |plus: &Tensor<f64>, minus: &Tensor<f64>| -> f64 {
        match c {
            Some(c) => plus
                .data()
                .iter()
                .zip(minus.data())
                .zip(c.data())
                .map(|((p, m), w)| w * (p - m))
                .sum(),
            None => plus.data()[0] - minus.data()[0],
        }
    };

    let base_a = eval(params)?;
    let base_b = eval(params)?;
    if base_a
        .data()
        .iter()
        .zip(base_b.data())
        .any(|(a, b)| a.to_bits() != b.to_bits())
    {
        return Err(Error::Oracle(format!(
            "function is not deterministic: {:e} then {:e}",
            difference(&base_a, &Tensor::zeros(base_a.dims())),
            difference(&base_b, &Tensor::zeros(base_b.dims()))
        )));
    }

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        coords_checked: 0,
        kink_margin: kink_margin.map(|m| m.abs()),
    };
    for pi in 0..params.len() {
        for ci in 0..params[pi].len() {
            let orig = params[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let plus = eval(&work)?;
            work[pi].data_mut()[ci] = orig - h;
            let minus = eval(&work)?;
            work[pi].data_mut()[ci] = orig;

            let fd = difference(&plus, &minus) / (2.0 * h);
            let e = rel_err(fd, analytic[pi].data()[ci]);
            if e > report.max_rel_err || e.is_nan() {
                report.max_rel_err = e;
                report.worst = (pi, ci);
            }
            report.coords_checked += 1;
        }
    }
    Ok(report)
}
