//! Control-variate weights, estimator variance and estimator assembly.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::sampleset::{AllocationProfile, SchemeMatrices};
use crate::stats::ModelStats;

/// Plain Monte Carlo mean.
pub fn mc_estimate(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Missing("Monte Carlo estimate of an empty sample".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Optimal weights and the resulting variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub variance: f64,
    pub alpha: DVector<f64>,
    pub jittered: bool,
}

/// `F ∘ P` and `f ∘ ρ`.
fn normalized_system(stats: &ModelStats, matrices: &SchemeMatrices) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = stats.num_models();
    if matrices.f.len() != m || matrices.big_f.shape() != (m, m) {
        return Err(Error::Config(format!(
            "statistics describe {m} models but the sample profile has {}",
            matrices.f.len()
        )));
    }
    Ok((matrices.big_f.component_mul(&stats.p), matrices.f.component_mul(&stats.rho)))
}

/// Fraction `1 - (f∘ρ)ᵀ (F∘P)⁻¹ (f∘ρ)` of the Monte Carlo variance kept
/// by the optimally weighted estimator, and the solve `(F∘P)⁻¹ (f∘ρ)`.
pub fn variance_factor(stats: &ModelStats, matrices: &SchemeMatrices) -> Result<(f64, DVector<f64>, bool)> {
    let (a, b) = normalized_system(stats, matrices)?;
    let sol = solve_spd(&a, &b)?;
    Ok((1.0 - b.dot(&sol.x), sol.x, sol.jittered))
}

/// Variance of the optimally weighted estimator with `n` shared samples.
pub fn predicted_variance(stats: &ModelStats, matrices: &SchemeMatrices, n: f64) -> Result<Prediction> {
    if !(n >= 1.0) {
        return Err(Error::Domain(format!("N must be at least 1, got {n}")));
    }
    let (factor, x, jittered) = variance_factor(stats, matrices)?;
    if jittered {
        warn!("near-singular F∘P; solved with diagonal ridge");
    }
    let mut variance = stats.var_q / n * factor;
    let floor = -1e-12 * stats.var_q / n;
    if variance < floor {
        return Err(Error::Numerical(format!("negative predicted variance {variance}")));
    }
    if variance < 0.0 {
        warn!("clipping predicted variance {variance} to zero");
        variance = 0.0;
    }
    let root = stats.var_q.sqrt();
    let alpha = DVector::from_fn(x.len(), |i, _| -root * x[i] / stats.sigma[i]);
    Ok(Prediction {
        variance,
        alpha,
        jittered,
    })
}

/// Variance of the estimator for arbitrary weights.
pub fn variance_with_weights(stats: &ModelStats, matrices: &SchemeMatrices, n: f64, alpha: &[f64]) -> f64 {
    let m = alpha.len();
    let root = stats.var_q.sqrt();
    let mut v = stats.var_q;
    for i in 0..m {
        v += 2.0 * root * alpha[i] * matrices.f[i] * stats.sigma[i] * stats.rho[i];
        for j in 0..m {
            v += alpha[i] * alpha[j] * matrices.big_f[(i, j)] * stats.sigma[i] * stats.sigma[j] * stats.p[(i, j)];
        }
    }
    v / n
}

/// Outputs of an allocation, `values[group][model]`, empty where the model
/// is not evaluated on the group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOutputs {
    pub values: Vec<Vec<Vec<f64>>>,
}

/// Means entering the estimator: `mean_z Q_0` and, per low-fidelity model,
/// the means over `z_i^1` and `z_i^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetMeans {
    pub shared: f64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl SetMeans {
    pub fn deltas(&self) -> Vec<f64> {
        self.first.iter().zip(&self.second).map(|(a, b)| a - b).collect()
    }

    pub fn estimate(&self, alpha: &[f64]) -> f64 {
        self.shared + alpha.iter().zip(self.deltas()).map(|(a, d)| a * d).sum::<f64>()
    }
}

/// Computes the set means, checking every group carries the outputs of
/// exactly the models evaluated on it.
pub fn set_means(profile: &AllocationProfile, outputs: &GroupOutputs) -> Result<SetMeans> {
    let m = profile.num_models();
    if outputs.values.len() != profile.groups.len() {
        return Err(Error::Missing(format!(
            "outputs for {} groups, profile has {}",
            outputs.values.len(),
            profile.groups.len()
        )));
    }
    let mut shared = 0.0;
    let mut first = vec![0.0; m];
    let mut second = vec![0.0; m];
    let mut first_n = vec![0usize; m];
    let mut second_n = vec![0usize; m];
    for (k, (group, values)) in profile.groups.iter().zip(&outputs.values).enumerate() {
        if values.len() != m + 1 {
            return Err(Error::Missing(format!("group {k} lists {} models", values.len())));
        }
        for (model, column) in values.iter().enumerate() {
            let expected = if group.evaluates(model) { group.size } else { 0 };
            if column.len() != expected {
                return Err(Error::Missing(format!(
                    "group {k} has {} outputs of model {model}, expected {expected}",
                    column.len()
                )));
            }
        }
        if group.in_shared {
            shared += values[0].iter().sum::<f64>();
        }
        for i in 1..=m {
            let s: f64 = values[i].iter().sum();
            if group.in_first(i) {
                first[i - 1] += s;
                first_n[i - 1] += group.size;
            }
            if group.in_second(i) {
                second[i - 1] += s;
                second_n[i - 1] += group.size;
            }
        }
    }
    let mean = |s: f64, n: usize| s / n as f64;
    Ok(SetMeans {
        shared: mean(shared, profile.n),
        first: first.iter().zip(&first_n).map(|(&s, &n)| mean(s, n)).collect(),
        second: second.iter().zip(&second_n).map(|(&s, &n)| mean(s, n)).collect(),
    })
}

/// How control-variate weights are chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    /// Variance-minimizing weights from the model statistics.
    #[default]
    Optimal,
    /// `α = -1` for every model, the telescoping multilevel estimator.
    ClassicalMlmc,
}

/// Cost of a run split by stage, in high-fidelity units.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub pilot: f64,
    pub tuning_overhead: f64,
    pub allocation: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.pilot + self.tuning_overhead + self.allocation
    }
}

/// Result of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub qtilde: f64,
    pub alpha: Vec<f64>,
    pub predicted_variance: f64,
    pub cost: CostBreakdown,
    /// `None` when the run fell back to plain Monte Carlo.
    pub profile: Option<AllocationProfile>,
    pub beta: Vec<Vec<f64>>,
    pub mc_fallback: bool,
}

/// Combines allocation outputs into the estimate.
///
/// `cost` is recorded as given; callers reusing pilot evaluations charge
/// only the new ones to the allocation stage.
pub fn assemble_estimator(
    outputs: &GroupOutputs,
    stats: &ModelStats,
    profile: &AllocationProfile,
    beta: &[Vec<f64>],
    rule: WeightRule,
    cost: CostBreakdown,
) -> Result<EstimatorReport> {
    let means = set_means(profile, outputs)?;
    let matrices = &profile.matrices();
    let n = profile.n as f64;
    let (alpha, predicted_variance) = match rule {
        WeightRule::Optimal => {
            let p = predicted_variance(stats, matrices, n)?;
            (p.alpha.iter().copied().collect::<Vec<f64>>(), p.variance)
        }
        WeightRule::ClassicalMlmc => {
            let alpha = vec![-1.0; profile.num_models()];
            let v = variance_with_weights(stats, matrices, n, &alpha);
            (alpha, v)
        }
    };
    Ok(EstimatorReport {
        qtilde: means.estimate(&alpha),
        alpha,
        predicted_variance,
        cost,
        profile: Some(profile.clone()),
        beta: beta.to_vec(),
        mc_fallback: false,
    })
}
