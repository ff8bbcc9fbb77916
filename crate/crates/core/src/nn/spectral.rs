use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Persistent power-iteration state for one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState<T> {
    /// Left singular-vector estimate, unit norm.
    pub u: Vec<T>,
    pub n_power_iterations: usize,
    /// Most recent σ̂, reused by frozen forwards.
    pub sigma: Option<T>,
}

impl<T: Scalar> SpectralState<T> {
    pub fn new(out_features: usize, n_power_iterations: usize, rng: &mut Rng) -> Self {
        let mut u: Vec<T> = (0..out_features).map(|_| T::of(rng.normal())).collect();
        if normalize(&mut u).is_none() {
            u = vec![T::zero(); out_features];
            u[0] = T::one();
        }
        SpectralState {
            u,
            n_power_iterations,
            sigma: None,
        }
    }

    /// Runs `iterations` power-iteration rounds on `w` (advancing `u`) and
    /// returns σ̂ = uᵀ·W·v. With zero iterations the stored `u` is used as is.
    pub fn estimate(&mut self, w: &Tensor<T>, iterations: usize) -> Result<T> {
        let sigma = power_iteration(w, &mut self.u, iterations)?;
        self.sigma = Some(sigma);
        Ok(sigma)
    }
}

fn normalize<T: Scalar>(v: &mut [T]) -> Option<T> {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if !(norm > T::zero()) || !norm.is_finite() {
        return None;
    }
    for x in v.iter_mut() {
        *x = *x / norm;
    }
    Some(norm)
}

fn mat_vec<T: Scalar>(w: &[T], rows: usize, cols: usize, v: &[T]) -> Vec<T> {
    (0..rows)
        .map(|i| {
            w[i * cols..(i + 1) * cols]
                .iter()
                .zip(v)
                .map(|(&a, &b)| a * b)
                .sum()
        })
        .collect()
}

fn mat_t_vec<T: Scalar>(w: &[T], rows: usize, cols: usize, u: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for (i, &ui) in u.iter().enumerate().take(rows) {
        for (o, &wij) in out.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
            *o += ui * wij;
        }
    }
    out
}

/// `v = Wᵀu/‖Wᵀu‖`, `u = Wv/‖Wv‖`, repeated; returns `uᵀ·W·v`.
pub fn power_iteration<T: Scalar>(w: &Tensor<T>, u: &mut Vec<T>, iterations: usize) -> Result<T> {
    let (rows, cols) = match w.dims() {
        [r, c] => (*r, *c),
        d => {
            return Err(Error::dim(format!(
                "spectral norm needs a matrix, got {d:?}"
            )))
        }
    };
    if u.len() != rows {
        return Err(Error::dim(format!(
            "singular-vector estimate has {} entries, weight has {rows} rows",
            u.len()
        )));
    }
    let data = w.data();
    let mut v = mat_t_vec(data, rows, cols, u);
    normalize(&mut v).ok_or(Error::DegenerateNorm)?;
    for _ in 0..iterations {
        let mut nu = mat_vec(data, rows, cols, &v);
        normalize(&mut nu).ok_or(Error::DegenerateNorm)?;
        *u = nu;
        v = mat_t_vec(data, rows, cols, u);
        normalize(&mut v).ok_or(Error::DegenerateNorm)?;
    }
    let wv = mat_vec(data, rows, cols, &v);
    let sigma: T = u.iter().zip(&wv).map(|(&a, &b)| a * b).sum();
    if !(sigma.abs() > T::zero()) {
        return Err(Error::DegenerateNorm);
    }
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample_normal;

    /// Largest singular value via power iteration on WᵀW run to a fixed
    /// point, independent of the u/v alternation above.
    fn top_singular_value(w: &Tensor<f64>) -> f64 {
        let (r, c) = (w.dims()[0], w.dims()[1]);
        let d = w.data();
        let mut gram = vec![0.0; c * c];
        for i in 0..c {
            for j in 0..c {
                gram[i * c + j] = (0..r).map(|k| d[k * c + i] * d[k * c + j]).sum();
            }
        }
        let mut x = vec![1.0; c];
        let mut lambda = 0.0;
        for _ in 0..100_000 {
            let y: Vec<f64> = (0..c)
                .map(|i| (0..c).map(|j| gram[i * c + j] * x[j]).sum())
                .collect();
            let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            x = y.iter().map(|v| v / n).collect();
            if (n - lambda).abs() <= 1e-15 * n {
                lambda = n;
                break;
            }
            lambda = n;
        }
        lambda.sqrt()
    }

    #[test]
    fn diagonal_and_orthogonal() {
        let w: Tensor<f64> = Tensor::matrix(&[&[3.0, 0.0], &[0.0, 1.0]]).unwrap();
        let mut u = vec![0.6, 0.8];
        let s = power_iteration(&w, &mut u, 60).unwrap();
        assert!((s - 3.0).abs() < 1e-12, "{s}");

        let (c, sn) = (0.3f64.cos(), 0.3f64.sin());
        let q = Tensor::matrix(&[&[c, -sn], &[sn, c]]).unwrap();
        let mut u = vec![1.0, 0.0];
        let s = power_iteration(&q, &mut u, 5).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_matrix_matches_oracle() {
        let mut rng = Rng::new(21);
        let w: Tensor<f64> = sample_normal(&mut rng, &[8, 8]);
        let mut state = SpectralState::new(8, 50, &mut rng);
        let s = state.estimate(&w, 50).unwrap();
        let want = top_singular_value(&w);
        assert!(((s - want) / want).abs() <= 1e-4, "{s} vs {want}");
        let norm: f64 = state.u.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimate_is_monotone() {
        let mut rng = Rng::new(4);
        let w: Tensor<f64> = sample_normal(&mut rng, &[6, 9]);
        let mut u = SpectralState::<f64>::new(6, 1, &mut rng).u;
        let mut prev = 0.0;
        for _ in 0..30 {
            let s = power_iteration(&w, &mut u, 1).unwrap();
            assert!(s >= prev - 1e-12, "{s} < {prev}");
            prev = s;
        }
        // normalized weight has spectral norm ≥ 1 − 1e-3
        let scaled = crate::tensor::scale(&w, 1.0 / prev);
        assert!(top_singular_value(&scaled) >= 1.0 - 1e-3);
    }

    #[test]
    fn zero_weight_is_degenerate() {
        let w = Tensor::<f64>::zeros(&[3, 3]);
        let mut u = vec![1.0, 0.0, 0.0];
        assert_eq!(
            power_iteration(&w, &mut u, 3).unwrap_err(),
            Error::DegenerateNorm
        );
    }
}
