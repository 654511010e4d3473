//! Model ensembles: one high-fidelity model plus low-fidelity models whose
//! cost and output may depend on hyperparameters.

pub mod analytic;
pub mod benchmark;
pub mod surrogate;
pub mod trajectory;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marginal distribution of one input coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Distribution {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std: f64 },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Uniform { low, high } if !(low < high) || !low.is_finite() || !high.is_finite() => {
                Err(Error::Config(format!("uniform bounds must satisfy a < b, got [{low}, {high}]")))
            }
            Distribution::Normal { std, mean } if !(std > 0.0) || !mean.is_finite() || !std.is_finite() => {
                Err(Error::Config(format!("normal std must be positive, got {std}")))
            }
            _ => Ok(()),
        }
    }

    /// Maps a probability in (0, 1) to the corresponding quantile.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Distribution::Uniform { low, high } => low + u * (high - low),
            Distribution::Normal { mean, std } => mean + std * standard_normal_quantile(u),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Uniform { low, high } => rng.gen_range(low..high),
            Distribution::Normal { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
        }
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`normal_cdf`] by bracketed Newton iteration.
pub fn standard_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    // Logistic approximation as a starting point.
    let mut x = (p / (1.0 - p)).ln() / 1.702;
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..100 {
        let err = normal_cdf(x) - p;
        if err > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let step = err / normal_pdf(x).max(1e-300);
        let mut next = x - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
            return next;
        }
        x = next;
    }
    x
}

/// Joint distribution of the uncertain inputs (independent marginals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub marginals: Vec<Distribution>,
}

impl InputSpec {
    pub fn new(marginals: Vec<Distribution>) -> Result<Self> {
        let spec = Self { marginals };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.marginals.is_empty() {
            return Err(Error::Config("input dimension must be at least 1".into()));
        }
        self.marginals.iter().try_for_each(Distribution::validate)
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    /// Independent random draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| self.marginals.iter().map(|d| d.sample(rng)).collect())
            .collect()
    }

    /// Points `start..start + count` of the input stream `seed`.
    ///
    /// Every point has its own generator, so any prefix of a stream is the
    /// same regardless of how the stream was extended.
    pub fn stream_points(&self, seed: u64, start: usize, count: usize) -> Vec<Vec<f64>> {
        (start..start + count)
            .map(|k| {
                let mut rng = crate::seed::rng(crate::seed::derive(seed, &[k as u64]));
                self.marginals.iter().map(|d| d.sample(&mut rng)).collect()
            })
            .collect()
    }

    /// Latin hypercube design pushed through the marginal quantiles.
    pub fn latin_hypercube<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let unit = latin_hypercube(n, self.dim(), rng);
        unit.into_iter()
            .map(|u| u.iter().zip(&self.marginals).map(|(&p, d)| d.quantile(p)).collect())
            .collect()
    }
}

/// Random Latin hypercube in the open unit cube.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..d {
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        for (i, point) in points.iter_mut().enumerate() {
            let jitter: f64 = rng.gen_range(0.0..1.0);
            point[k] = ((perm[i] as f64 + jitter) / n as f64).clamp(1e-12, 1.0 - 1e-12);
        }
    }
    points
}

/// Bounded scalar hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameter {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

/// Cost of one evaluation in high-fidelity units as a function of the
/// model's hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CostLaw {
    Constant { cost: f64 },
    /// `offset + scale * (reference / beta[0])^exponent`.
    StepPower {
        offset: f64,
        scale: f64,
        reference: f64,
        exponent: f64,
    },
}

impl CostLaw {
    pub fn cost(&self, beta: &[f64]) -> f64 {
        match *self {
            CostLaw::Constant { cost } => cost,
            CostLaw::StepPower {
                offset,
                scale,
                reference,
                exponent,
            } => offset + scale * (reference / beta[0]).powf(exponent),
        }
    }
}

/// Scalar model of an input point and the model's own hyperparameters.
pub trait Model: Send + Sync {
    fn evaluate(&self, point: &[f64], beta: &[f64]) -> f64;
}

impl<F> Model for F
where
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
{
    fn evaluate(&self, point: &[f64], beta: &[f64]) -> f64 {
        self(point, beta)
    }
}

/// One member of an ensemble.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub hyperparameters: Vec<Hyperparameter>,
    pub cost: CostLaw,
    pub model: Arc<dyn Model>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("hyperparameters", &self.hyperparameters)
            .field("cost", &self.cost)
            .finish()
    }
}

impl ModelSpec {
    pub fn fixed(name: impl Into<String>, cost: f64, model: Arc<dyn Model>) -> Self {
        Self {
            name: name.into(),
            hyperparameters: Vec::new(),
            cost: CostLaw::Constant { cost },
            model,
        }
    }

    pub fn is_tunable(&self) -> bool {
        !self.hyperparameters.is_empty()
    }

    pub fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.hyperparameters.len() {
            return Err(Error::Domain(format!(
                "model `{}` expects {} hyperparameters, got {}",
                self.name,
                self.hyperparameters.len(),
                beta.len()
            )));
        }
        for (b, h) in beta.iter().zip(&self.hyperparameters) {
            // Bounds carry a relative slack so grid end points built in
            // log space are accepted.
            let slack = 1e-12 * h.upper.abs().max(h.lower.abs());
            if !(*b >= h.lower - slack && *b <= h.upper + slack) {
                return Err(Error::Domain(format!(
                    "{} = {b} outside [{}, {}] for model `{}`",
                    h.name, h.lower, h.upper, self.name
                )));
            }
        }
        Ok(())
    }
}

/// Evaluation counts and costs charged per model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub evaluations: Vec<u64>,
    pub cost: Vec<f64>,
}

impl CostLedger {
    pub fn new(num_models: usize) -> Self {
        Self {
            evaluations: vec![0; num_models],
            cost: vec![0.0; num_models],
        }
    }

    pub fn charge(&mut self, model: usize, count: usize, unit_cost: f64) {
        if self.evaluations.len() <= model {
            self.evaluations.resize(model + 1, 0);
            self.cost.resize(model + 1, 0.0);
        }
        self.evaluations[model] += count as u64;
        self.cost[model] += count as f64 * unit_cost;
    }

    pub fn total(&self) -> f64 {
        self.cost.iter().sum()
    }

    pub fn merge(&mut self, other: &CostLedger) {
        for (model, (&n, &c)) in other.evaluations.iter().zip(&other.cost).enumerate() {
            if self.evaluations.len() <= model {
                self.evaluations.resize(model + 1, 0);
                self.cost.resize(model + 1, 0.0);
            }
            self.evaluations[model] += n;
            self.cost[model] += c;
        }
    }
}

/// High-fidelity model (index 0) plus `M >= 1` low-fidelity models.
#[derive(Debug, Clone)]
pub struct ModelEnsemble {
    pub input: InputSpec,
    pub models: Vec<ModelSpec>,
}

impl ModelEnsemble {
    pub fn new(input: InputSpec, models: Vec<ModelSpec>) -> Result<Self> {
        input.validate()?;
        if models.len() < 2 {
            return Err(Error::Config("ensemble needs a high-fidelity model and at least one more".into()));
        }
        if models[0].is_tunable() || models[0].cost.cost(&[]) != 1.0 {
            return Err(Error::Config("the high-fidelity model must be fixed with unit cost".into()));
        }
        Ok(Self { input, models })
    }

    /// Number of low-fidelity models `M`.
    pub fn num_low_fidelity(&self) -> usize {
        self.models.len() - 1
    }

    /// Total hyperparameter dimension.
    pub fn beta_dim(&self) -> usize {
        self.models.iter().map(|m| m.hyperparameters.len()).sum()
    }

    /// Indices of models carrying hyperparameters.
    pub fn tunable_models(&self) -> Vec<usize> {
        (1..self.models.len()).filter(|&i| self.models[i].is_tunable()).collect()
    }

    /// Bounds of the tunable hyperparameters in flattened order.
    pub fn beta_bounds(&self) -> Vec<(f64, f64)> {
        self.models
            .iter()
            .flat_map(|m| m.hyperparameters.iter().map(|h| (h.lower, h.upper)))
            .collect()
    }

    pub fn flatten_beta(&self, beta: &[Vec<f64>]) -> Vec<f64> {
        beta.iter().flatten().copied().collect()
    }

    /// Splits a flattened hyperparameter vector into one vector per model.
    pub fn unflatten_beta(&self, flat: &[f64]) -> Result<Vec<Vec<f64>>> {
        if flat.len() != self.beta_dim() {
            return Err(Error::Domain(format!(
                "expected {} hyperparameters, got {}",
                self.beta_dim(),
                flat.len()
            )));
        }
        let mut offset = 0;
        let beta: Vec<Vec<f64>> = self
            .models
            .iter()
            .map(|m| {
                let k = m.hyperparameters.len();
                offset += k;
                flat[offset - k..offset].to_vec()
            })
            .collect();
        self.check_beta(&beta)?;
        Ok(beta)
    }

    fn spec(&self, model: usize) -> Result<&ModelSpec> {
        self.models
            .get(model)
            .ok_or_else(|| Error::Config(format!("model id {model} out of range")))
    }

    /// Cost of one evaluation of `model` at `beta_i`.
    pub fn cost(&self, model: usize, beta_i: &[f64]) -> Result<f64> {
        let spec = self.spec(model)?;
        spec.check_beta(beta_i)?;
        let w = spec.cost.cost(beta_i);
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::Domain(format!("model `{}` has nonpositive cost {w}", spec.name)));
        }
        Ok(w)
    }

    /// Costs `w_1..w_M` of the low-fidelity models.
    pub fn lf_costs(&self, beta: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_beta(beta)?;
        (1..self.models.len()).map(|i| self.cost(i, &beta[i])).collect()
    }

    /// Validates a full hyperparameter collection (one vector per model).
    pub fn check_beta(&self, beta: &[Vec<f64>]) -> Result<()> {
        if beta.len() != self.models.len() {
            return Err(Error::Domain(format!(
                "expected {} hyperparameter vectors, got {}",
                self.models.len(),
                beta.len()
            )));
        }
        for (spec, b) in self.models.iter().zip(beta) {
            spec.check_beta(b)?;
        }
        Ok(())
    }

    /// Evaluates `model` at every point and charges the ledger.
    ///
    /// Points are processed in parallel; the output order matches `points`
    /// and does not depend on the thread count.
    pub fn evaluate(
        &self,
        model: usize,
        beta_i: &[f64],
        points: &[Vec<f64>],
        ledger: &mut CostLedger,
    ) -> Result<Vec<f64>> {
        let w = self.cost(model, beta_i)?;
        let spec = self.spec(model)?;
        let values: Vec<f64> = points
            .par_iter()
            .with_min_len(16)
            .map(|p| spec.model.evaluate(p, beta_i))
            .collect();
        ledger.charge(model, points.len(), w);
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                model,
                index,
                point: points[index].clone(),
            });
        }
        Ok(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn normal_quantile_inverts_cdf() {
        for &p in &[1e-10, 0.001, 0.1, 0.5, 0.8, 0.999] {
            let x = standard_normal_quantile(p);
            assert!((normal_cdf(x) - p).abs() < 1e-14 * p.max(1e-3) + 1e-16, "p = {p}");
        }
        assert!((standard_normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
    }

    #[test]
    fn latin_hypercube_stratifies_each_coordinate() {
        let mut rng = seed::rng(3);
        let pts = latin_hypercube(20, 3, &mut rng);
        for k in 0..3 {
            let mut bins: Vec<usize> = pts.iter().map(|p| (p[k] * 20.0) as usize).collect();
            bins.sort_unstable();
            assert_eq!(bins, (0..20).collect::<Vec<_>>());
        }
    }

    #[test]
    fn ledger_accumulates_and_merges() {
        let mut a = CostLedger::new(2);
        a.charge(1, 10, 0.5);
        let mut b = CostLedger::new(3);
        b.charge(2, 4, 0.25);
        a.merge(&b);
        assert_eq!(a.evaluations, vec![0, 10, 4]);
        assert_eq!(a.total(), 6.0);
    }

    #[test]
    fn invalid_marginals_are_rejected() {
        assert!(Distribution::Uniform { low: 1.0, high: 1.0 }.validate().is_err());
        assert!(Distribution::Normal { mean: 0.0, std: 0.0 }.validate().is_err());
    }
}
