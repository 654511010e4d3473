//! Full quadratic polynomial surrogate on box-normalized inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `y = c0 + sum_k c_k x_k + sum_{k <= l} c_kl x_k x_l` with
/// `x_k = (z_k - center_k) / half_width_k` over the leading coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSurrogate {
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
    pub coefficients: Vec<f64>,
}

/// Number of coefficients of a full quadratic in `d` variables.
pub fn num_features(d: usize) -> usize {
    1 + d + d * (d + 1) / 2
}

fn features_into(x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    out.extend_from_slice(x);
    for k in 0..x.len() {
        for l in k..x.len() {
            out.push(x[k] * x[l]);
        }
    }
}

impl QuadraticSurrogate {
    fn normalize(&self, point: &[f64]) -> Vec<f64> {
        self.center
            .iter()
            .zip(&self.half_width)
            .zip(point)
            .map(|((c, h), z)| (z - c) / h)
            .collect()
    }

    pub fn evaluate(&self, point: &[f64]) -> f64 {
        let mut f = Vec::with_capacity(self.coefficients.len());
        features_into(&self.normalize(point), &mut f);
        f.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    /// Least-squares fit on the leading `center.len()` coordinates.
    pub fn fit(center: Vec<f64>, half_width: Vec<f64>, points: &[Vec<f64>], values: &[f64]) -> Result<Self> {
        let d = center.len();
        let p = num_features(d);
        if points.len() < p || points.len() != values.len() {
            return Err(Error::Config(format!(
                "quadratic fit in {d} variables needs at least {p} points, got {}",
                points.len()
            )));
        }
        let mut shell = Self {
            center,
            half_width,
            coefficients: Vec::new(),
        };
        let mut design = DMatrix::zeros(points.len(), p);
        let mut row = Vec::with_capacity(p);
        for (i, z) in points.iter().enumerate() {
            features_into(&shell.normalize(z), &mut row);
            for (j, v) in row.iter().enumerate() {
                design[(i, j)] = *v;
            }
        }
        let rhs = DVector::from_column_slice(values);
        let coef = design
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        shell.coefficients = coef.iter().copied().collect();
        Ok(shell)
    }
}
