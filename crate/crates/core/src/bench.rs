//! Experiment harness: baselines, trial batches, error metrics and the
//! oracle variance grid.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acv::{assemble_estimator, mc_estimate, CostBreakdown, EstimatorReport, WeightRule};
use crate::allocation::{allocate, AllocationOptions, AllocationSolution, Strategy};
use crate::error::{Error, Result};
use crate::models::{CostLedger, ModelEnsemble};
use crate::pilot::evaluate_allocation;
use crate::seed::{self, stream};
use crate::stats::{estimate_stats, format_float, ModelStats, PilotSample};
use crate::tuning::{run_pipeline, PipelineConfig};

/// Compared estimator variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolutionType {
    MonteCarlo,
    HandSelected,
    BestCase,
    Tuned,
}

impl SolutionType {
    pub const ALL: [SolutionType; 4] = [
        SolutionType::MonteCarlo,
        SolutionType::HandSelected,
        SolutionType::BestCase,
        SolutionType::Tuned,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SolutionType::MonteCarlo => "monte-carlo",
            SolutionType::HandSelected => "hand-selected",
            SolutionType::BestCase => "best-case",
            SolutionType::Tuned => "tuned",
        }
    }
}

impl std::str::FromStr for SolutionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolutionType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown solution type `{s}`")))
    }
}

/// Seed of trial `j` in a batch.
pub fn trial_seed(base: u64, j: usize) -> u64 {
    seed::derive(base, &[stream::TRIAL, j as u64])
}

/// Stream of input points used by trial `trial_seed`.
pub fn sample_stream(trial_seed: u64) -> u64 {
    seed::derive(trial_seed, &[stream::PILOT])
}

/// Per-trial outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub qtilde: f64,
    pub predicted_variance: f64,
    pub pilot_cost: f64,
    pub tuning_overhead: f64,
    pub allocation_cost: f64,
    pub total_cost: f64,
    pub mc_fallback: bool,
    /// Flattened hyperparameters used by the estimator.
    pub beta: Vec<f64>,
}

impl TrialRecord {
    fn from_report(trial: usize, seed: u64, report: &EstimatorReport) -> Self {
        Self {
            trial,
            seed,
            qtilde: report.qtilde,
            predicted_variance: report.predicted_variance,
            pilot_cost: report.cost.pilot,
            tuning_overhead: report.cost.tuning_overhead,
            allocation_cost: report.cost.allocation,
            total_cost: report.cost.total(),
            mc_fallback: report.mc_fallback,
            beta: report.beta.iter().flatten().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialBatch {
    pub kind: SolutionType,
    pub budget: f64,
    pub base_seed: u64,
    pub trials: Vec<TrialRecord>,
}

impl TrialBatch {
    pub fn values(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.qtilde).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record([
            "kind",
            "budget",
            "trial",
            "seed",
            "qtilde",
            "predicted_variance",
            "pilot_cost",
            "tuning_overhead",
            "allocation_cost",
            "total_cost",
            "mc_fallback",
            "beta",
        ])?;
        for t in &self.trials {
            let beta: Vec<String> = t.beta.iter().map(|v| format_float(*v)).collect();
            writer.write_record([
                self.kind.name().to_string(),
                format_float(self.budget),
                t.trial.to_string(),
                t.seed.to_string(),
                format_float(t.qtilde),
                format_float(t.predicted_variance),
                format_float(t.pilot_cost),
                format_float(t.tuning_overhead),
                format_float(t.allocation_cost),
                format_float(t.total_cost),
                t.mc_fallback.to_string(),
                beta.join(" "),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Offline statistics and allocation at the oracle hyperparameters, shared
/// by every Best Case trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCaseSetup {
    pub beta: Vec<Vec<f64>>,
    pub stats: ModelStats,
    pub solution: AllocationSolution,
}

/// Offline pilot of `n_ref` points at `beta` and the allocation for the
/// full budget.
pub fn best_case_setup(
    ensemble: &ModelEnsemble,
    beta: &[Vec<f64>],
    budget: f64,
    strategy: &Strategy,
    n_ref: usize,
    seed: u64,
    options: &AllocationOptions,
) -> Result<BestCaseSetup> {
    let (solution, stats) = crate::pilot::run_offline(
        ensemble,
        beta,
        budget,
        strategy,
        n_ref,
        seed::derive(seed, &[stream::REFERENCE]),
        options,
    )?;
    Ok(BestCaseSetup {
        beta: beta.to_vec(),
        stats,
        solution,
    })
}

/// Plain Monte Carlo with `floor(budget)` high-fidelity samples.
pub fn monte_carlo_trial(ensemble: &ModelEnsemble, budget: f64, trial_seed: u64) -> Result<EstimatorReport> {
    let n = budget.floor() as usize;
    let points = ensemble.input.stream_points(sample_stream(trial_seed), 0, n);
    let mut ledger = CostLedger::new(ensemble.models.len());
    let values = ensemble.evaluate(0, &[], &points, &mut ledger)?;
    let mean = mc_estimate(&values)?;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    Ok(EstimatorReport {
        qtilde: mean,
        alpha: vec![0.0; ensemble.num_low_fidelity()],
        predicted_variance: var / n as f64,
        cost: CostBreakdown {
            allocation: ledger.total(),
            ..CostBreakdown::default()
        },
        profile: None,
        beta: vec![Vec::new(); ensemble.models.len()],
        mc_fallback: true,
    })
}

/// One Best Case trial: the shared allocation evaluated on fresh points.
pub fn best_case_trial(ensemble: &ModelEnsemble, setup: &BestCaseSetup, trial_seed: u64) -> Result<EstimatorReport> {
    let Some(profile) = setup.solution.profile()? else {
        let mut report = monte_carlo_trial(ensemble, setup.solution.n as f64, trial_seed)?;
        report.beta = setup.beta.clone();
        return Ok(report);
    };
    let mut ledger = CostLedger::new(ensemble.models.len());
    let outputs = evaluate_allocation(ensemble, &setup.beta, &profile, sample_stream(trial_seed), None, &mut ledger)?;
    assemble_estimator(
        &outputs,
        &setup.stats,
        &profile,
        &setup.beta,
        WeightRule::Optimal,
        CostBreakdown {
            allocation: ledger.total(),
            ..CostBreakdown::default()
        },
    )
}

/// Everything a batch of one solution type needs.
#[derive(Debug, Clone)]
pub struct BatchSpec<'a> {
    pub kind: SolutionType,
    pub pipeline: &'a PipelineConfig,
    pub hand_beta: &'a [Vec<f64>],
    pub best_case: Option<&'a BestCaseSetup>,
    pub n_trials: usize,
    pub base_seed: u64,
}

/// Runs one trial of a solution type.
pub fn run_trial(ensemble: &ModelEnsemble, spec: &BatchSpec<'_>, trial: usize) -> Result<TrialRecord> {
    let ts = trial_seed(spec.base_seed, trial);
    let report = match spec.kind {
        SolutionType::MonteCarlo => monte_carlo_trial(ensemble, spec.pipeline.tuning.budget, ts)?,
        SolutionType::BestCase => {
            let setup = spec.best_case.ok_or_else(|| {
                Error::Missing("Best Case needs oracle hyperparameters; run the grid sweep first".into())
            })?;
            best_case_trial(ensemble, setup, ts)?
        }
        SolutionType::HandSelected => {
            let config = PipelineConfig {
                tune: false,
                beta: Some(spec.hand_beta.to_vec()),
                ..spec.pipeline.clone()
            };
            run_pipeline(ensemble, &config, ts)?.report
        }
        SolutionType::Tuned => {
            let config = PipelineConfig {
                tune: true,
                ..spec.pipeline.clone()
            };
            run_pipeline(ensemble, &config, ts)?.report
        }
    };
    Ok(TrialRecord::from_report(trial, ts, &report))
}

/// Runs `n_trials` independent trials in parallel; results are ordered by
/// trial index and do not depend on the thread count.
pub fn run_baseline(ensemble: &ModelEnsemble, spec: &BatchSpec<'_>) -> Result<TrialBatch> {
    if spec.n_trials == 0 {
        return Err(Error::Config("a batch needs at least one trial".into()));
    }
    if spec.kind == SolutionType::BestCase && spec.best_case.is_none() {
        return Err(Error::Missing(
            "Best Case needs oracle hyperparameters; run the grid sweep first".into(),
        ));
    }
    let trials = (0..spec.n_trials)
        .into_par_iter()
        .map(|j| run_trial(ensemble, spec, j))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialBatch {
        kind: spec.kind,
        budget: spec.pipeline.tuning.budget,
        base_seed: spec.base_seed,
        trials,
    })
}

/// Mean squared error of estimates against a reference value.
pub fn compute_mse(values: &[f64], q_ref: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Missing("mean squared error of an empty batch".into()));
    }
    Ok(values.iter().map(|v| (v - q_ref).powi(2)).sum::<f64>() / values.len() as f64)
}

/// Variance of Monte Carlo over the variance of the estimator.
pub fn variance_reduction(v_mc: f64, v_est: f64) -> Result<f64> {
    if !(v_mc > 0.0 && v_est > 0.0) {
        return Err(Error::Domain(format!(
            "variance reduction needs positive variances, got {v_mc} and {v_est}"
        )));
    }
    Ok(v_mc / v_est)
}

/// Minimum, quartiles and maximum (linear interpolation between order
/// statistics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Missing("quantiles of an empty sample".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Summary statistics of a batch for boxplots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub kind: SolutionType,
    pub budget: f64,
    pub n_trials: usize,
    pub mse: f64,
    pub squared_error: Quantiles,
    pub overhead_fraction: Quantiles,
    pub total_cost: Quantiles,
}

pub fn summarize(batch: &TrialBatch, q_ref: f64) -> Result<BatchSummary> {
    let values = batch.values();
    let errors: Vec<f64> = values.iter().map(|v| (v - q_ref).powi(2)).collect();
    let overhead: Vec<f64> = batch.trials.iter().map(|t| t.tuning_overhead / batch.budget).collect();
    let cost: Vec<f64> = batch.trials.iter().map(|t| t.total_cost).collect();
    Ok(BatchSummary {
        kind: batch.kind,
        budget: batch.budget,
        n_trials: batch.trials.len(),
        mse: compute_mse(&values, q_ref)?,
        squared_error: Quantiles::of(&errors)?,
        overhead_fraction: Quantiles::of(&overhead)?,
        total_cost: Quantiles::of(&cost)?,
    })
}

/// Oracle estimator variance on a tensor grid of tunable hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceGrid {
    /// Grid nodes of each tunable hyperparameter, increasing.
    pub axes: Vec<Vec<f64>>,
    /// Node values, last axis fastest.
    pub values: Vec<f64>,
    pub budget: f64,
    pub var_q: f64,
    /// Flattened hyperparameters of the smallest node value.
    pub argmin: Vec<f64>,
}

/// Nodes equally spaced in `log` between the bounds.
pub fn log_axis(lower: f64, upper: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lower];
    }
    (0..points)
        .map(|k| {
            if k == 0 {
                lower
            } else if k == points - 1 {
                upper
            } else {
                (lower.ln() + (upper.ln() - lower.ln()) * k as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}

impl VarianceGrid {
    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.axes.len()];
        for k in (0..self.axes.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.axes[k + 1].len();
        }
        strides
    }

    /// Multilinear interpolation in log hyperparameter coordinates; exact
    /// at nodes, clamped to the grid box.
    pub fn interpolate(&self, beta: &[f64]) -> Result<f64> {
        if beta.len() != self.axes.len() {
            return Err(Error::Domain(format!(
                "grid has {} axes, got {} hyperparameters",
                self.axes.len(),
                beta.len()
            )));
        }
        let strides = self.strides();
        let mut cells = Vec::with_capacity(beta.len());
        for (axis, &b) in self.axes.iter().zip(beta) {
            if axis.len() == 1 {
                cells.push((0, 0.0));
                continue;
            }
            let x = b.clamp(axis[0], axis[axis.len() - 1]).ln();
            let k = axis.partition_point(|v| v.ln() <= x).clamp(1, axis.len() - 1) - 1;
            let t = (x - axis[k].ln()) / (axis[k + 1].ln() - axis[k].ln());
            cells.push((k, t.clamp(0.0, 1.0)));
        }
        let mut total = 0.0;
        for corner in 0..(1usize << beta.len()) {
            let mut weight = 1.0;
            let mut index = 0;
            for (dim, &(k, t)) in cells.iter().enumerate() {
                let upper = corner >> dim & 1 == 1;
                if upper && self.axes[dim].len() == 1 {
                    weight = 0.0;
                    break;
                }
                weight *= if upper { t } else { 1.0 - t };
                index += (k + usize::from(upper)) * strides[dim];
            }
            if weight != 0.0 {
                total += weight * self.values[index];
            }
        }
        Ok(total)
    }

    /// Flattened hyperparameters of node `index`.
    pub fn node(&self, index: usize) -> Vec<f64> {
        let strides = self.strides();
        self.axes
            .iter()
            .zip(&strides)
            .map(|(axis, &s)| axis[(index / s) % axis.len()])
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.axes.len()).map(|k| format!("beta{k}")).collect();
        header.push("variance".into());
        header.push("variance_reduction".into());
        writer.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let mut row: Vec<String> = self.node(i).iter().map(|b| format_float(*b)).collect();
            row.push(format_float(*v));
            row.push(format_float(self.var_q / self.budget.floor() / v));
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Oracle variance at every node of a log-spaced grid over the tunable
/// hyperparameters.
///
/// Every model is evaluated once per distinct hyperparameter value on a
/// common offline pilot of `n_ref` points; node statistics combine the
/// matching columns.
pub fn build_variance_grid(
    ensemble: &ModelEnsemble,
    budget: f64,
    strategy: &Strategy,
    points_per_dim: usize,
    n_ref: usize,
    seed: u64,
    options: &AllocationOptions,
) -> Result<VarianceGrid> {
    if points_per_dim == 0 {
        return Err(Error::Config("grid needs at least one point per dimension".into()));
    }
    let tunable = ensemble.tunable_models();
    if tunable.iter().any(|&i| ensemble.models[i].hyperparameters.len() != 1) {
        return Err(Error::Config("variance grid supports one hyperparameter per tunable model".into()));
    }
    let axes: Vec<Vec<f64>> = tunable
        .iter()
        .map(|&i| {
            let h = &ensemble.models[i].hyperparameters[0];
            log_axis(h.lower, h.upper, points_per_dim)
        })
        .collect();
    let stream_seed = seed::derive(seed, &[stream::REFERENCE]);
    let points = ensemble.input.stream_points(stream_seed, 0, n_ref);
    let mut ledger = CostLedger::new(ensemble.models.len());
    let mut fixed: Vec<Option<Vec<f64>>> = Vec::with_capacity(ensemble.models.len());
    for (model, spec) in ensemble.models.iter().enumerate() {
        fixed.push(if spec.is_tunable() {
            None
        } else {
            Some(ensemble.evaluate(model, &[], &points, &mut ledger)?)
        });
    }
    let mut columns: Vec<Vec<Vec<f64>>> = Vec::with_capacity(tunable.len());
    for (&model, axis) in tunable.iter().zip(&axes) {
        let mut per_value = Vec::with_capacity(axis.len());
        for &b in axis {
            per_value.push(ensemble.evaluate(model, &[b], &points, &mut ledger)?);
        }
        columns.push(per_value);
    }
    let count: usize = axes.iter().map(Vec::len).product();
    let mut grid = VarianceGrid {
        axes,
        values: Vec::new(),
        budget,
        var_q: 0.0,
        argmin: Vec::new(),
    };
    let strides = grid.strides();
    let nodes: Vec<Result<(f64, f64)>> = (0..count)
        .into_par_iter()
        .map(|index| {
            let mut outputs = Vec::with_capacity(fixed.len());
            let mut beta = vec![Vec::new(); fixed.len()];
            for (model, column) in fixed.iter().enumerate() {
                match column {
                    Some(c) => outputs.push(c.clone()),
                    None => {
                        let t = tunable.iter().position(|&m| m == model).expect("tunable model");
                        let k = (index / strides[t]) % grid.axes[t].len();
                        beta[model] = vec![grid.axes[t][k]];
                        outputs.push(columns[t][k].clone());
                    }
                }
            }
            let pilot = PilotSample {
                points: Vec::new(),
                outputs,
                beta: beta.clone(),
                seed: stream_seed,
                ledger: CostLedger::default(),
            };
            let stats = estimate_stats(&PilotSample {
                points: vec![Vec::new(); n_ref],
                ..pilot
            })?;
            let costs = ensemble.lf_costs(&beta)?;
            let solution = allocate(&stats, &costs, budget, strategy, options)?;
            Ok((solution.predicted_variance, stats.var_q))
        })
        .collect();
    for node in nodes {
        let (v, var_q) = node?;
        grid.values.push(v);
        grid.var_q = var_q;
    }
    let best = (0..count)
        .min_by(|&a, &b| grid.values[a].total_cmp(&grid.values[b]))
        .expect("nonempty grid");
    grid.argmin = grid.node(best);
    Ok(grid)
}

/// Oracle variance at `beta_star` inflated for the budget spent on tuning.
pub fn tuned_variance_estimate(grid: &VarianceGrid, beta_star: &[f64], overhead: f64, budget: f64) -> Result<f64> {
    scaled_variance(grid.interpolate(beta_star)?, overhead, budget)
}

/// `v * budget / (budget - overhead)`.
pub fn scaled_variance(v: f64, overhead: f64, budget: f64) -> Result<f64> {
    if !(overhead >= 0.0 && overhead < budget) {
        return Err(Error::Domain(format!("overhead {overhead} must lie in [0, {budget})")));
    }
    Ok(v * budget / (budget - overhead))
}
