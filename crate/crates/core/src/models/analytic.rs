//! Ensemble with closed-form statistics for testing estimators.
//!
//! With `Z0, Z1` independent standard normals, model `i` returns
//! `c_i Z0^2 + a_i Z0 + b_i Z1`, so `E[Q_i] = c_i` and
//! `Cov[Q_i, Q_j] = 2 c_i c_j + a_i a_j + b_i b_j`.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::{Distribution, InputSpec, ModelEnsemble, ModelSpec};
use crate::error::Result;
use crate::stats::ModelStats;

/// Coefficients `(c, a, b)` of one analytic model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub c: f64,
    pub a: f64,
    pub b: f64,
}

impl Quadratic {
    pub const fn new(c: f64, a: f64, b: f64) -> Self {
        Self { c, a, b }
    }

    pub fn evaluate(&self, z: &[f64]) -> f64 {
        self.c * z[0] * z[0] + self.a * z[0] + self.b * z[1]
    }
}

/// Default four-model analytic ensemble.
pub const DEFAULT_MODELS: [Quadratic; 4] = [
    Quadratic::new(1.0, 0.3, 0.2),
    Quadratic::new(1.0, 0.4, 0.0),
    Quadratic::new(0.8, -0.2, 0.5),
    Quadratic::new(1.1, 0.1, -0.3),
];

/// Default low-fidelity costs of [`DEFAULT_MODELS`].
pub const DEFAULT_COSTS: [f64; 3] = [0.1, 0.05, 0.01];

#[derive(Debug, Clone)]
pub struct AnalyticEnsemble {
    pub models: Vec<Quadratic>,
    pub costs: Vec<f64>,
}

impl Default for AnalyticEnsemble {
    fn default() -> Self {
        Self {
            models: DEFAULT_MODELS.to_vec(),
            costs: DEFAULT_COSTS.to_vec(),
        }
    }
}

impl AnalyticEnsemble {
    /// Keeps the high-fidelity model and the first `m` low-fidelity models.
    pub fn truncated(m: usize) -> Self {
        let full = Self::default();
        Self {
            models: full.models[..=m].to_vec(),
            costs: full.costs[..m].to_vec(),
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.models.len();
        DMatrix::from_fn(n, n, |i, j| {
            let (p, q) = (self.models[i], self.models[j]);
            2.0 * p.c * q.c + p.a * q.a + p.b * q.b
        })
    }

    /// Exact mean of the high-fidelity model.
    pub fn mean(&self) -> f64 {
        self.models[0].c
    }

    pub fn stats(&self) -> ModelStats {
        ModelStats::from_covariance(&self.covariance())
    }

    pub fn ensemble(&self) -> Result<ModelEnsemble> {
        let standard = Distribution::Normal { mean: 0.0, std: 1.0 };
        let input = InputSpec::new(vec![standard, standard])?;
        let mut specs = Vec::with_capacity(self.models.len());
        for (i, q) in self.models.iter().copied().enumerate() {
            let cost = if i == 0 { 1.0 } else { self.costs[i - 1] };
            specs.push(ModelSpec::fixed(
                format!("analytic-{i}"),
                cost,
                Arc::new(move |z: &[f64], _: &[f64]| q.evaluate(z)),
            ));
        }
        ModelEnsemble::new(input, specs)
    }
}
