//! Ring-of-Gaussians toy data and its mode-coverage metric.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Mixture of `modes` isotropic Gaussians equally spaced on a circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingSpec {
    pub modes: usize,
    pub radius: f64,
    pub sigma: f64,
}

impl Default for RingSpec {
    fn default() -> Self {
        RingSpec {
            modes: 8,
            radius: 2.0,
            sigma: 0.02,
        }
    }
}

impl RingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 || !(self.radius > 0.0) || !(self.sigma >= 0.0) {
            return Err(Error::Config(format!("invalid ring spec {self:?}")));
        }
        Ok(())
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.modes)
            .map(|k| {
                let a = TAU * k as f64 / self.modes as f64;
                [self.radius * a.cos(), self.radius * a.sin()]
            })
            .collect()
    }

    /// Distance from a center that counts as a high-quality sample: 3σ·10.
    pub fn quality_radius(&self) -> f64 {
        3.0 * self.sigma * 10.0
    }
}

pub fn sample_ring_gaussians<T: Scalar>(
    rng: &mut Rng,
    batch: usize,
    spec: &RingSpec,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let centers = spec.centers();
    let mut data = Vec::with_capacity(2 * batch);
    for _ in 0..batch {
        let c = centers[rng.below(spec.modes)];
        let nx = rng.normal();
        let ny = rng.normal();
        data.push(T::of(c[0] + spec.sigma * nx));
        data.push(T::of(c[1] + spec.sigma * ny));
    }
    Tensor::new(vec![batch, 2], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub covered: usize,
    pub hq_fraction: f64,
}

/// A mode is covered when at least `N/(4·modes)` samples land within
/// [`RingSpec::quality_radius`] of its center; `hq_fraction` is the share of
/// samples within that radius of any center.
pub fn mode_coverage<T: Scalar>(samples: &Tensor<T>, spec: &RingSpec) -> Result<Coverage> {
    spec.validate()?;
    if samples.rank() != 2 || samples.dims()[1] != 2 {
        return Err(Error::dim(format!(
            "mode coverage needs [N×2] samples, got {:?}",
            samples.dims()
        )));
    }
    let n = samples.rows();
    let centers = spec.centers();
    let r2 = spec.quality_radius().powi(2);
    let mut counts = vec![0usize; spec.modes];
    let mut hq = 0usize;
    for i in 0..n {
        let row = samples.row(i);
        let (x, y) = (row[0].as_f64(), row[1].as_f64());
        let nearest = centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, (x - c[0]).powi(2) + (y - c[1]).powi(2)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one mode");
        if nearest.1 <= r2 {
            counts[nearest.0] += 1;
            hq += 1;
        }
    }
    let threshold = n as f64 / (4.0 * spec.modes as f64);
    Ok(Coverage {
        covered: counts.iter().filter(|&&c| c as f64 >= threshold).count(),
        hq_fraction: hq as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_lands_on_centers() {
        let spec = RingSpec {
            sigma: 0.0,
            ..RingSpec::default()
        };
        let s: Tensor<f64> = sample_ring_gaussians(&mut Rng::new(1), 200, &spec).unwrap();
        let centers = spec.centers();
        for i in 0..s.rows() {
            let r = s.row(i);
            assert!(centers.iter().any(|c| c[0] == r[0] && c[1] == r[1]));
        }
    }

    #[test]
    fn mode_frequencies_and_mean() {
        let spec = RingSpec::default();
        let n = 100_000;
        let s: Tensor<f64> = sample_ring_gaussians(&mut Rng::new(2), n, &spec).unwrap();
        let centers = spec.centers();
        let mut counts = [0usize; 8];
        let (mut mx, mut my) = (0.0, 0.0);
        for i in 0..n {
            let r = s.row(i);
            mx += r[0];
            my += r[1];
            let k = (0..8)
                .min_by(|&a, &b| {
                    let da = (r[0] - centers[a][0]).powi(2) + (r[1] - centers[a][1]).powi(2);
                    let db = (r[0] - centers[b][0]).powi(2) + (r[1] - centers[b][1]).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap();
            counts[k] += 1;
        }
        for c in counts {
            let frac = c as f64 / n as f64;
            assert!((frac - 0.125).abs() <= 0.01, "{frac}");
        }
        assert!((mx / n as f64).abs() <= 0.02);
        assert!((my / n as f64).abs() <= 0.02);
    }

    #[test]
    fn coverage_on_ground_truth() {
        let spec = RingSpec::default();
        let s: Tensor<f64> = sample_ring_gaussians(&mut Rng::new(3), 10_000, &spec).unwrap();
        let cov = mode_coverage(&s, &spec).unwrap();
        assert_eq!(cov.covered, 8);
        assert!(cov.hq_fraction >= 0.99);
    }

    #[test]
    fn coverage_single_center() {
        let spec = RingSpec::default();
        let c = spec.centers()[3];
        let s = Tensor::new(vec![500, 2], [c[0], c[1]].repeat(500)).unwrap();
        let cov = mode_coverage(&s, &spec).unwrap();
        assert_eq!(cov.covered, 1);
        assert_eq!(cov.hq_fraction, 1.0);
    }

    #[test]
    fn coverage_of_uniform_noise_is_area_ratio() {
        // 8 disjoint discs of radius 0.6 inside [−3, 3]²: 8π·0.36 / 36.
        let spec = RingSpec::default();
        let area_ratio = 8.0 * std::f64::consts::PI * 0.36 / 36.0;
        assert!((area_ratio - 0.2513).abs() < 1e-4);
        let mut rng = Rng::new(4);
        let n = 200_000;
        let data: Vec<f64> = (0..2 * n).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let s = Tensor::new(vec![n, 2], data).unwrap();
        let cov = mode_coverage(&s, &spec).unwrap();
        assert!(
            (cov.hq_fraction - area_ratio).abs() < 0.005,
            "{}",
            cov.hq_fraction
        );
    }
}
