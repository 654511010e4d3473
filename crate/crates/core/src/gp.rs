//! Gaussian process regression, expected improvement and space-filling
//! designs on the unit cube.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{latin_hypercube, normal_cdf, normal_pdf};
use crate::optim::{nelder_mead, NelderMeadOptions};

const LOG_LENGTH_RANGE: (f64, f64) = (-4.6, 2.3);
const LOG_NOISE_RANGE: (f64, f64) = (-18.4, 0.0);

/// Fitted hyperparameters: signal variance, per-dimension length scales,
/// and noise variance as a fraction of the signal variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    pub mean: f64,
    pub signal_variance: f64,
    pub length_scales: Vec<f64>,
    pub noise_ratio: f64,
}

/// Squared-exponential GP with a generalized-least-squares constant mean.
///
/// Targets are standardized internally; predictions are in the original
/// units.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    pub params: GpParams,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    weights: DVector<f64>,
}

fn correlation(a: &[f64], b: &[f64], lengths: &[f64]) -> f64 {
    let d2: f64 = a
        .iter()
        .zip(b)
        .zip(lengths)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    (-0.5 * d2).exp()
}

struct Concentrated {
    nll: f64,
    mean: f64,
    variance: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    weights: DVector<f64>,
}

fn concentrated(x: &[Vec<f64>], y: &DVector<f64>, lengths: &[f64], noise: f64) -> Option<Concentrated> {
    let n = x.len();
    let mut r = DMatrix::from_fn(n, n, |i, j| correlation(&x[i], &x[j], lengths));
    for i in 0..n {
        r[(i, i)] += noise + 1e-10;
    }
    let chol = r.cholesky()?;
    let ones = DVector::from_element(n, 1.0);
    let r_inv_1 = chol.solve(&ones);
    let r_inv_y = chol.solve(y);
    let mean = ones.dot(&r_inv_y) / ones.dot(&r_inv_1);
    let resid = y - DVector::from_element(n, mean);
    let weights = chol.solve(&resid);
    let variance = (resid.dot(&weights) / n as f64).max(1e-300);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let nll = 0.5 * (n as f64 * variance.ln() + log_det);
    nll.is_finite().then_some(Concentrated {
        nll,
        mean,
        variance,
        chol,
        weights,
    })
}

impl GaussianProcess {
    /// Fits by multistart maximum likelihood. With `fixed_noise` the noise
    /// ratio is pinned instead of estimated.
    pub fn fit<R: Rng>(
        x: &[Vec<f64>],
        y: &[f64],
        starts: usize,
        fixed_noise: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("cannot fit a GP to {n} points")));
        }
        let d = x[0].len();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let spread = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let y_scale = if spread > 0.0 { spread } else { 1.0 };
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_scale));

        let unpack = |theta: &[f64]| -> (Vec<f64>, f64) {
            let lengths = theta[..d]
                .iter()
                .map(|t| t.clamp(LOG_LENGTH_RANGE.0, LOG_LENGTH_RANGE.1).exp())
                .collect();
            let noise = match fixed_noise {
                Some(g) => g,
                None => theta[d].clamp(LOG_NOISE_RANGE.0, LOG_NOISE_RANGE.1).exp(),
            };
            (lengths, noise)
        };
        let objective = |theta: &[f64]| {
            let (lengths, noise) = unpack(theta);
            concentrated(x, &ys, &lengths, noise).map_or(f64::INFINITY, |c| c.nll)
        };
        let dim = d + usize::from(fixed_noise.is_none());
        let mut best: Option<(f64, Vec<f64>)> = None;
        for s in 0..starts.max(1) {
            let start: Vec<f64> = (0..dim)
                .map(|k| {
                    if s == 0 {
                        if k < d {
                            (0.3f64).ln()
                        } else {
                            (1e-3f64).ln()
                        }
                    } else if k < d {
                        rng.gen_range(LOG_LENGTH_RANGE.0..LOG_LENGTH_RANGE.1)
                    } else {
                        rng.gen_range(LOG_NOISE_RANGE.0..LOG_NOISE_RANGE.1)
                    }
                })
                .collect();
            let m = nelder_mead(
                objective,
                &start,
                NelderMeadOptions {
                    max_iterations: 300,
                    rtol: 1e-6,
                    step: 0.5,
                },
            );
            if m.value.is_finite() && best.as_ref().map_or(true, |(v, _)| m.value < *v) {
                best = Some((m.value, m.x));
            }
        }
        let (_, theta) = best.ok_or_else(|| Error::Numerical("GP likelihood undefined at every start".into()))?;
        let (lengths, noise) = unpack(&theta);
        let c = concentrated(x, &ys, &lengths, noise).ok_or_else(|| Error::Numerical("GP refit failed".into()))?;
        Ok(Self {
            x: x.to_vec(),
            y_mean,
            y_scale,
            params: GpParams {
                mean: y_mean + y_scale * c.mean,
                signal_variance: c.variance * y_scale * y_scale,
                length_scales: lengths,
                noise_ratio: noise,
            },
            chol: c.chol,
            weights: c.weights,
        })
    }

    /// Posterior mean and standard deviation of the latent function.
    pub fn predict(&self, point: &[f64]) -> (f64, f64) {
        let r = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| correlation(point, xi, &self.params.length_scales)),
        );
        let scaled_mean = (self.params.mean - self.y_mean) / self.y_scale;
        let mean = scaled_mean + r.dot(&self.weights);
        let v = self.chol.solve(&r);
        let var = (1.0 - r.dot(&v)).max(0.0) * self.params.signal_variance;
        (self.y_mean + self.y_scale * mean, var.sqrt())
    }

    /// Smallest posterior mean over the training points.
    pub fn best_mean(&self) -> f64 {
        self.x
            .iter()
            .map(|p| self.predict(p).0)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Expected improvement below `best` for a Gaussian prediction.
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    let gap = best - mean;
    if !(std > 0.0) {
        return gap.max(0.0);
    }
    let z = gap / std;
    (gap * normal_cdf(z) + std * normal_pdf(z)).max(0.0)
}

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let mut result = 0.0;
    let mut f = 1.0 / base as f64;
    while index > 0 {
        result += f * (index % base) as f64;
        index /= base;
        f /= base as f64;
    }
    result
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Halton points with a random Cranley–Patterson rotation.
pub fn halton<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    assert!(d <= PRIMES.len(), "halton supports up to {} dimensions", PRIMES.len());
    let shift: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
    (1..=n as u64)
        .map(|i| {
            (0..d)
                .map(|k| (radical_inverse(i, PRIMES[k]) + shift[k]).fract())
                .collect()
        })
        .collect()
}

/// Best of `tries` random Latin hypercubes under the maximin distance.
pub fn maximin_lhs<R: Rng>(n: usize, d: usize, tries: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut best = Vec::new();
    let mut best_score = f64::NEG_INFINITY;
    for _ in 0..tries.max(1) {
        let design = latin_hypercube(n, d, rng);
        let mut score = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let dist: f64 = design[i].iter().zip(&design[j]).map(|(a, b)| (a - b).powi(2)).sum();
                score = score.min(dist);
            }
        }
        if score > best_score {
            best_score = score;
            best = design;
        }
    }
    best
}

/// Maximizes expected improvement over the unit cube by quasi-random
/// screening followed by simplex polish of the best candidates.
pub fn maximize_ei<R: Rng>(gp: &GaussianProcess, candidates: usize, polish: usize, rng: &mut R) -> (Vec<f64>, f64) {
    let d = gp.x[0].len();
    let best = gp.best_mean();
    let ei = |p: &[f64]| {
        let (m, s) = gp.predict(p);
        expected_improvement(m, s, best)
    };
    let mut scored: Vec<(f64, Vec<f64>)> = halton(candidates, d, rng)
        .into_iter()
        .map(|p| (ei(&p), p))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut winner = scored[0].clone();
    for (_, start) in scored.iter().take(polish) {
        let clamp = |p: &[f64]| -> Vec<f64> { p.iter().map(|v| v.clamp(0.0, 1.0)).collect() };
        let m = nelder_mead(
            |p| -ei(&clamp(p)),
            start,
            NelderMeadOptions {
                max_iterations: 200,
                rtol: 1e-8,
                step: 0.05,
            },
        );
        let p = clamp(&m.x);
        let value = ei(&p);
        if value > winner.0 {
            winner = (value, p);
        }
    }
    if !(winner.0 > 0.0) {
        warn!("expected improvement vanished on the whole domain");
    }
    (winner.1, winner.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn noiseless_gp_interpolates() {
        let mut rng = seed::rng(1);
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0]).collect();
        let y: Vec<f64> = x.iter().map(|p| (6.0 * p[0]).sin()).collect();
        let gp = GaussianProcess::fit(&x, &y, 5, Some(0.0), &mut rng).unwrap();
        for (p, v) in x.iter().zip(&y) {
            let (m, s) = gp.predict(p);
            assert!((m - v).abs() < 1e-6, "{m} vs {v}");
            assert!(s < 1e-3);
        }
    }

    #[test]
    fn ei_is_zero_at_a_noiseless_training_point() {
        assert_eq!(expected_improvement(1.0, 0.0, 1.0), 0.0);
        assert!(expected_improvement(0.0, 1.0, 0.0) > 0.39);
    }

    #[test]
    fn halton_stays_in_unit_cube() {
        let mut rng = seed::rng(2);
        let pts = halton(100, 3, &mut rng);
        assert!(pts.iter().flatten().all(|v| (0.0..1.0).contains(v)));
    }
}
