use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn require_matrix<T: Scalar>(t: &Tensor<T>, name: &str) -> Result<(usize, usize)> {
    match t.dims() {
        [r, c] => Ok((*r, *c)),
        d => Err(Error::dim(format!(
            "{name} must be a matrix, got extents {d:?}"
        ))),
    }
}

/// `out += Σ c·row` over the terms with nonzero `c`, four rows per sweep
/// over `out` so each output element is loaded and stored once per group.
fn axpy_rows<'a, T: Scalar + 'a>(out: &mut [T], terms: impl Iterator<Item = (T, &'a [T])>) {
    let n = out.len();
    let mut pend: [(T, &[T]); 4] = [(T::zero(), &[]); 4];
    let mut np = 0;
    for (c, row) in terms {
        if c == T::zero() {
            continue;
        }
        pend[np] = (c, row);
        np += 1;
        if np == 4 {
            let [(c0, r0), (c1, r1), (c2, r2), (c3, r3)] = pend;
            let (r0, r1, r2, r3) = (&r0[..n], &r1[..n], &r2[..n], &r3[..n]);
            for j in 0..n {
                out[j] += c0 * r0[j] + c1 * r1[j] + (c2 * r2[j] + c3 * r3[j]);
            }
            np = 0;
        }
    }
    for &(c, row) in &pend[..np] {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += c * v;
        }
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, all row-major.
fn gemm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        axpy_rows(
            &mut out[i * n..(i + 1) * n],
            a_row
                .iter()
                .enumerate()
                .map(|(p, &av)| (av, &b[p * n..(p + 1) * n])),
        );
    }
}

/// `out[k×n] += aᵀ · b` for `a[m×k]`, `b[m×n]`.
fn gemm_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        axpy_rows(
            &mut out[p * n..(p + 1) * n],
            (0..m).map(|i| (a[i * k + p], &b[i * n..(i + 1) * n])),
        );
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = require_matrix(a, "matmul lhs")?;
    let (k2, n) = require_matrix(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner extents differ: [{m}×{k}] · [{k2}×{n}]"
        )));
    }
    if n < NARROW && k >= NARROW {
        let bt = transpose(b)?;
        return Ok(dot_rows(a.data(), bt.data(), m, k, n));
    }
    let mut out = vec![T::zero(); m * n];
    gemm_nn(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = require_matrix(a, "matmul_tn lhs")?;
    let (m2, n) = require_matrix(b, "matmul_tn rhs")?;
    if m != m2 {
        return Err(Error::dim(format!(
            "matmul_tn leading extents differ: [{m}×{k}]ᵀ · [{m2}×{n}]"
        )));
    }
    if n < NARROW && k >= NARROW {
        // short inner rows: compute (bᵀ·a)ᵀ instead
        let mut t = vec![T::zero(); n * k];
        gemm_tn(b.data(), a.data(), &mut t, m, n, k);
        return transpose(&Tensor::from_parts(vec![n, k], t));
    }
    let mut out = vec![T::zero(); k * n];
    gemm_tn(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![k, n], out))
}

/// `a · bᵀ`. The transpose of `b` is materialized first; `b` is a weight
/// matrix in every caller and small next to the batch product.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = require_matrix(a, "matmul_nt lhs")?;
    let (n, k2) = require_matrix(b, "matmul_nt rhs")?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_nt inner extents differ: [{m}×{k}] · [{n}×{k2}]ᵀ"
        )));
    }
    if n >= NARROW {
        let bt = transpose(b)?;
        return matmul(a, &bt);
    }
    Ok(dot_rows(a.data(), b.data(), m, k, n))
}

/// `a[m×k] · bt[n×k]ᵀ` as one dot product per output.
fn dot_rows<T: Scalar>(a: &[T], bt: &[T], m: usize, k: usize, n: usize) -> Tensor<T> {
    let mut out = Vec::with_capacity(m * n);
    for a_row in a.chunks_exact(k).take(m) {
        for b_row in bt.chunks_exact(k).take(n) {
            out.push(dot(a_row, b_row));
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

/// Output widths below this use dot products instead of row updates.
const NARROW: usize = 8;

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    s
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = require_matrix(a, "transpose input")?;
    let src = a.data();
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Ok(Tensor::from_parts(vec![c, r], out))
}

pub fn map<T: Scalar>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::from_parts(x.dims().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

pub fn zip_map<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.dims() != b.dims() {
        return Err(Error::dim(format!(
            "elementwise extents differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(Tensor::from_parts(
        a.dims().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    ))
}

#[inline]
pub fn softplus_scalar<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Step function with `H(0) = 0`.
#[inline]
pub fn heaviside_scalar<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// `ln(1 + eˣ)` in the overflow-safe form `max(x, 0) + ln1p(e^{−|x|})`.
pub fn softplus<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    map(x, softplus_scalar)
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    map(x, sigmoid_scalar)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    map(x, |v| if v > T::zero() { v } else { T::zero() })
}

pub fn heaviside<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    map(x, heaviside_scalar)
}

pub fn scale<T: Scalar>(x: &Tensor<T>, s: T) -> Tensor<T> {
    map(x, |v| v * s)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_map(a, b, |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_map(a, b, |x, y| x - y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_map(a, b, |x, y| x * y)
}

/// Adds a `[feature]` bias to every row of a `[batch, feature]` matrix.
pub fn add_bias<T: Scalar>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, f) = require_matrix(x, "add_bias input")?;
    if bias.dims() != [f] {
        return Err(Error::dim(format!(
            "bias extents {:?} do not match feature width {f}",
            bias.dims()
        )));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(f) {
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(Tensor::from_parts(x.dims().to_vec(), out))
}

/// Column sums of a `[batch, feature]` matrix.
pub fn sum_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, f) = require_matrix(x, "sum_rows input")?;
    let mut out = vec![T::zero(); f];
    for row in x.data().chunks_exact(f) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Ok(Tensor::from_parts(vec![f], out))
}

/// Multiplies every element of row `b` by `factors[b]`.
pub fn scale_rows<T: Scalar>(x: &Tensor<T>, factors: &[T]) -> Result<Tensor<T>> {
    if x.rows() != factors.len() || x.rank() == 0 {
        return Err(Error::dim(format!(
            "per-sample factors have extent {} but tensor has {} rows",
            factors.len(),
            x.rows()
        )));
    }
    let w = x.row_len();
    let mut out = x.data().to_vec();
    for (row, &s) in out.chunks_exact_mut(w).zip(factors) {
        for v in row {
            *v *= s;
        }
    }
    Ok(Tensor::from_parts(x.dims().to_vec(), out))
}

pub fn sum<T: Scalar>(x: &Tensor<T>) -> T {
    x.data().iter().copied().sum()
}

pub fn mean<T: Scalar>(x: &Tensor<T>) -> T {
    sum(x) / T::of(x.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_dot() {
        let a = Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let eye = Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(matmul(&a, &eye).unwrap(), a);
        assert_eq!(matmul(&eye, &a).unwrap(), a);

        let row = Tensor::matrix(&[&[1.0, 2.0]]).unwrap();
        let col = Tensor::matrix(&[&[3.0], &[4.0]]).unwrap();
        assert_eq!(matmul(&row, &col).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = crate::Rng::new(7);
        let close = |got: &[f64], want: &[f64]| {
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()), "{g} vs {w}");
            }
        };
        let a: Tensor<f64> = crate::sample_normal(&mut rng, &[8, 8]);
        let b: Tensor<f64> = crate::sample_normal(&mut rng, &[8, 8]);
        close(
            matmul(&a, &b).unwrap().data(),
            &naive_matmul(a.data(), b.data(), 8, 8, 8),
        );
        let at = transpose(&a).unwrap();
        close(
            matmul_tn(&a, &b).unwrap().data(),
            &naive_matmul(at.data(), b.data(), 8, 8, 8),
        );
        let bt = transpose(&b).unwrap();
        close(
            matmul_nt(&a, &b).unwrap().data(),
            &naive_matmul(a.data(), bt.data(), 8, 8, 8),
        );
    }

    #[test]
    fn narrow_products_match_triple_loop() {
        let mut rng = crate::Rng::new(8);
        let close = |got: &[f64], want: &[f64]| {
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()), "{g} vs {w}");
            }
        };
        let a: Tensor<f64> = crate::sample_normal(&mut rng, &[5, 19]);
        let b: Tensor<f64> = crate::sample_normal(&mut rng, &[3, 19]);
        let want = naive_matmul(a.data(), transpose(&b).unwrap().data(), 5, 19, 3);
        close(matmul_nt(&a, &b).unwrap().data(), &want);

        let a: Tensor<f64> = crate::sample_normal(&mut rng, &[7, 16]);
        let b: Tensor<f64> = crate::sample_normal(&mut rng, &[7, 2]);
        let tn = matmul_tn(&a, &b).unwrap();
        assert_eq!(tn.dims(), &[16, 2]);
        close(
            tn.data(),
            &naive_matmul(transpose(&a).unwrap().data(), b.data(), 16, 7, 2),
        );
        assert!(matmul_nt(&a, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
        let v = Tensor::<f64>::zeros(&[3]);
        assert!(matches!(matmul(&a, &v), Err(Error::Dimension(_))));
    }

    #[test]
    fn softplus_values() {
        assert!((softplus_scalar(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus_scalar(100.0f64) - 100.0).abs() <= 1e-12);
        let tiny = softplus_scalar(-100.0f64);
        let want = (-100.0f64).exp();
        assert!(((tiny - want) / want).abs() <= 1e-15);
        assert!(softplus_scalar(1e4f64).is_finite());
        assert!(softplus_scalar(-1e4f64) >= 0.0);
        assert!(softplus_scalar(1e4f32).is_finite());
    }

    #[test]
    fn relu_and_heaviside() {
        let x = Tensor::vector(vec![-3.0, 0.0, 2.5]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.5]);
        assert_eq!(heaviside(&x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn bias_and_row_kernels() {
        let x = Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Tensor::vector(vec![10.0, 20.0]);
        assert_eq!(add_bias(&x, &b).unwrap().data(), &[11.0, 22.0, 13.0, 24.0]);
        assert_eq!(sum_rows(&x).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(
            scale_rows(&x, &[2.0, -1.0]).unwrap().data(),
            &[2.0, 4.0, -3.0, -4.0]
        );
        assert!(scale_rows(&x, &[1.0]).is_err());
        assert!(add_bias(&x, &Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn constructor_checks_extents() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![], vec![1.0]).unwrap().is_scalar());
    }
}
