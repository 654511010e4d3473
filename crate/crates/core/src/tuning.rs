//! Hyperparameter tuning of low-fidelity models by efficient global
//! optimization, and the online estimator pipeline built on it.
//!
//! Candidate hyperparameters are scored by the projected estimator
//! variance `J(β)` from a pilot at `β`. Within one run every candidate pilot
//! uses the same input points: the high-fidelity and fixed low-fidelity
//! columns are evaluated once and only the tunable models are re-run. The
//! tuning overhead is the tunable-model pilot cost of every candidate other
//! than the returned optimum, whose pilot is reused by the estimator.

use std::io::Write;

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acv::{assemble_estimator, mc_estimate, CostBreakdown, EstimatorReport, WeightRule};
use crate::allocation::{AllocationOptions, Strategy};
use crate::error::{Error, Result};
use crate::gp::{maximin_lhs, maximize_ei, GaussianProcess, GpParams};
use crate::models::{CostLedger, ModelEnsemble};
use crate::pilot::{evaluate_allocation, online_from, projection_from, PilotRun, DEFAULT_GAMMA, DEFAULT_MAX_ROUNDS};
use crate::sampleset::Scheme;
use crate::seed::{self, stream};
use crate::stats::{sample_covariance, PilotSample};

/// Multiplier on `Var[Q]` returned by `J` when the statistics are
/// degenerate.
pub const DEGENERATE_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    /// Total number of evaluated hyperparameter points.
    pub n_iter: usize,
    pub n_pilot: usize,
    /// Initial design size; three points per tunable dimension, capped at
    /// `n_iter`, when unset.
    pub n_init: Option<usize>,
    pub budget: f64,
    pub strategy: Strategy,
    pub candidates: usize,
    pub polish: usize,
    pub gp_starts: usize,
    pub allocation: AllocationOptions,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            n_iter: 5,
            n_pilot: 50,
            n_init: None,
            budget: 1000.0,
            strategy: Strategy::Scheme(Scheme::AcvMf),
            candidates: 2048,
            polish: 3,
            gp_starts: 5,
            allocation: AllocationOptions::default(),
        }
    }
}

impl TuningConfig {
    pub fn initial_size(&self, dim: usize) -> usize {
        self.n_init.unwrap_or((3 * dim).min(self.n_iter))
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let n_init = self.initial_size(dim);
        if dim == 0 {
            return Err(Error::Config("ensemble has no tunable hyperparameters".into()));
        }
        if self.n_iter == 0 || n_init < 2 || self.n_iter < n_init {
            return Err(Error::Config(format!(
                "need n_iter >= n_init >= 2, got n_iter = {}, n_init = {n_init}",
                self.n_iter
            )));
        }
        if self.n_pilot < 2 {
            return Err(Error::Config(format!("n_pilot must be at least 2, got {}", self.n_pilot)));
        }
        if !(self.budget > 0.0) || !self.budget.is_finite() {
            return Err(Error::Config(format!("budget must be positive, got {}", self.budget)));
        }
        if self.candidates == 0 {
            return Err(Error::Config("candidates must be positive".into()));
        }
        Ok(())
    }
}

/// One evaluated hyperparameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoPoint {
    pub iteration: usize,
    /// Flattened hyperparameters.
    pub beta: Vec<f64>,
    pub j: f64,
    /// `J` was replaced by the degenerate-statistics penalty.
    pub penalized: bool,
    /// Tunable-model pilot cost at this point.
    pub lf_cost: f64,
    /// Overhead charged so far if the optimum were the best point yet.
    pub overhead_so_far: f64,
    /// GP fitted before this point was chosen, `None` for the initial
    /// design or after a failed fit.
    pub gp: Option<GpParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub beta_star: Vec<Vec<f64>>,
    pub j_star: f64,
    /// Index of the optimum in `dataset`.
    pub best: usize,
    /// Tuning overhead `C_T`.
    pub overhead: f64,
    pub dataset: Vec<EgoPoint>,
    /// Pilot at the optimum, reused by the estimator.
    pub pilot: PilotSample,
}

/// Overhead from a dataset: tunable pilot cost of every point but `best`.
pub fn tuning_overhead(dataset: &[EgoPoint], best: usize) -> f64 {
    dataset
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != best)
        .map(|(_, p)| p.lf_cost)
        .sum()
}

/// Index of the smallest `J`, first on ties.
fn argmin(dataset: &[EgoPoint]) -> usize {
    let mut best = 0;
    for (k, p) in dataset.iter().enumerate() {
        if p.j < dataset[best].j {
            best = k;
        }
    }
    best
}

pub fn write_tuning_trace<W: Write>(dataset: &[EgoPoint], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let dim = dataset.first().map_or(0, |p| p.beta.len());
    let gp_dim = dataset
        .iter()
        .find_map(|p| p.gp.as_ref().map(|g| g.length_scales.len()))
        .unwrap_or(dim);
    let mut header = vec!["iteration".to_string()];
    header.extend((0..dim).map(|k| format!("beta{k}")));
    header.extend(
        ["j", "penalized", "lf_cost", "overhead_so_far", "gp_mean", "gp_signal_variance", "gp_noise_ratio"]
            .map(String::from),
    );
    header.extend((0..gp_dim).map(|k| format!("gp_length{k}")));
    writer.write_record(&header)?;
    for p in dataset {
        let mut row = vec![p.iteration.to_string()];
        row.extend(p.beta.iter().map(|v| crate::stats::format_float(*v)));
        row.push(crate::stats::format_float(p.j));
        row.push(p.penalized.to_string());
        row.push(crate::stats::format_float(p.lf_cost));
        row.push(crate::stats::format_float(p.overhead_so_far));
        match &p.gp {
            Some(g) => {
                row.push(crate::stats::format_float(g.mean));
                row.push(crate::stats::format_float(g.signal_variance));
                row.push(crate::stats::format_float(g.noise_ratio));
                row.extend(g.length_scales.iter().map(|v| crate::stats::format_float(*v)));
            }
            None => row.extend(std::iter::repeat(String::new()).take(3 + gp_dim)),
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Maps flattened hyperparameters to and from the unit cube, in log
/// coordinates for positive bounds.
#[derive(Debug, Clone)]
pub struct BetaSpace {
    bounds: Vec<(f64, f64)>,
}

impl BetaSpace {
    pub fn new(ensemble: &ModelEnsemble) -> Self {
        Self {
            bounds: ensemble.beta_bounds(),
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn to_unit(&self, beta: &[f64]) -> Vec<f64> {
        beta.iter()
            .zip(&self.bounds)
            .map(|(&b, &(lo, hi))| {
                if lo > 0.0 {
                    (b.ln() - lo.ln()) / (hi.ln() - lo.ln())
                } else {
                    (b - lo) / (hi - lo)
                }
            })
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.bounds)
            .map(|(&t, &(lo, hi))| {
                let t = t.clamp(0.0, 1.0);
                if lo > 0.0 {
                    (lo.ln() + t * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
                } else {
                    lo + t * (hi - lo)
                }
            })
            .collect()
    }
}

/// Pilot inputs shared by every candidate in one tuning run.
pub struct CandidatePilots<'a> {
    ensemble: &'a ModelEnsemble,
    points: Vec<Vec<f64>>,
    seed: u64,
    /// Columns of models without hyperparameters, `None` for tunable ones.
    fixed: Vec<Option<Vec<f64>>>,
    fixed_ledger: CostLedger,
}

impl<'a> CandidatePilots<'a> {
    /// Evaluates the models without hyperparameters on points
    /// `0..n_pilot` of stream `seed`.
    pub fn new(ensemble: &'a ModelEnsemble, n_pilot: usize, seed: u64) -> Result<Self> {
        let points = ensemble.input.stream_points(seed, 0, n_pilot);
        let mut fixed_ledger = CostLedger::new(ensemble.models.len());
        let mut fixed = Vec::with_capacity(ensemble.models.len());
        for (model, spec) in ensemble.models.iter().enumerate() {
            if spec.is_tunable() {
                fixed.push(None);
            } else {
                fixed.push(Some(ensemble.evaluate(model, &[], &points, &mut fixed_ledger)?));
            }
        }
        Ok(Self {
            ensemble,
            points,
            seed,
            fixed,
            fixed_ledger,
        })
    }

    /// Full pilot at `beta` and the cost of its tunable columns.
    pub fn pilot_at(&self, beta: &[Vec<f64>]) -> Result<(PilotSample, f64)> {
        self.ensemble.check_beta(beta)?;
        let mut tuned = CostLedger::new(self.ensemble.models.len());
        let mut outputs = Vec::with_capacity(self.fixed.len());
        for (model, column) in self.fixed.iter().enumerate() {
            match column {
                Some(c) => outputs.push(c.clone()),
                None => outputs.push(self.ensemble.evaluate(model, &beta[model], &self.points, &mut tuned)?),
            }
        }
        let lf_cost = tuned.total();
        let mut ledger = self.fixed_ledger.clone();
        ledger.merge(&tuned);
        Ok((
            PilotSample {
                points: self.points.clone(),
                outputs,
                beta: beta.to_vec(),
                seed: self.seed,
                ledger,
            },
            lf_cost,
        ))
    }

    /// Cost of the columns shared by every candidate.
    pub fn fixed_cost(&self) -> f64 {
        self.fixed_ledger.total()
    }
}

/// Projected estimator variance from a pilot, or the degenerate penalty.
pub fn objective_from_pilot(
    ensemble: &ModelEnsemble,
    pilot: PilotSample,
    budget: f64,
    strategy: &Strategy,
    options: &AllocationOptions,
) -> Result<(f64, bool, PilotSample)> {
    let costs = ensemble.lf_costs(&pilot.beta)?;
    match projection_from(pilot.clone(), &costs, budget, strategy, options) {
        Ok(run) => Ok((run.solution.predicted_variance, false, run.pilot)),
        Err(Error::DegenerateStatistics { .. } | Error::Singular(_) | Error::Numerical(_)) => {
            let hf = &pilot.outputs[0];
            let var_q = sample_covariance(std::slice::from_ref(hf))[(0, 0)];
            warn!("degenerate statistics at beta = {:?}; J penalized", pilot.beta);
            Ok((DEGENERATE_PENALTY * var_q.max(f64::MIN_POSITIVE), true, pilot))
        }
        Err(e) => Err(e),
    }
}

/// `J(β)` with a fresh pilot on stream `seed`.
pub fn objective_j(
    ensemble: &ModelEnsemble,
    beta: &[Vec<f64>],
    budget: f64,
    n_pilot: usize,
    strategy: &Strategy,
    seed: u64,
    options: &AllocationOptions,
) -> Result<f64> {
    let pilots = CandidatePilots::new(ensemble, n_pilot, seed)?;
    let (pilot, _) = pilots.pilot_at(beta)?;
    objective_from_pilot(ensemble, pilot, budget, strategy, options).map(|(j, _, _)| j)
}

/// Smallest conceivable tuning overhead plus pilot cost; tuning cannot
/// fit the budget when this already exceeds it.
fn optimistic_cost(ensemble: &ModelEnsemble, config: &TuningConfig) -> f64 {
    let cheapest: Vec<f64> = ensemble
        .models
        .iter()
        .map(|m| {
            let beta: Vec<f64> = m.hyperparameters.iter().map(|h| h.upper).collect();
            let lower: Vec<f64> = m.hyperparameters.iter().map(|h| h.lower).collect();
            m.cost.cost(&beta).min(m.cost.cost(&lower))
        })
        .collect();
    let tunable: f64 = ensemble.tunable_models().iter().map(|&i| cheapest[i]).sum();
    let n = config.n_pilot as f64;
    (config.n_iter as f64 - 1.0) * n * tunable + n * cheapest.iter().sum::<f64>()
}

/// Tunes the hyperparameters on pilot stream `seed`, drawing design and
/// acquisition randomness from streams derived from `run_seed`.
pub fn ego_tune(ensemble: &ModelEnsemble, config: &TuningConfig, pilot_seed: u64, run_seed: u64) -> Result<TuningResult> {
    let space = BetaSpace::new(ensemble);
    config.validate(space.dim())?;
    let floor = optimistic_cost(ensemble, config);
    if floor >= config.budget {
        return Err(Error::Infeasible(format!(
            "tuning needs at least {floor} of budget {}",
            config.budget
        )));
    }
    let pilots = CandidatePilots::new(ensemble, config.n_pilot, pilot_seed)?;
    let n_init = config.initial_size(space.dim());
    let mut design_rng = seed::rng(seed::derive(run_seed, &[stream::DESIGN]));
    let mut gp_rng = seed::rng(seed::derive(run_seed, &[stream::GP]));
    let mut acq_rng = seed::rng(seed::derive(run_seed, &[stream::ACQUISITION]));
    let mut fallback_rng = seed::rng(seed::derive(run_seed, &[stream::FALLBACK]));
    let design = maximin_lhs(n_init, space.dim(), 64, &mut design_rng);

    let mut dataset: Vec<EgoPoint> = Vec::with_capacity(config.n_iter);
    let mut best_pilot: Option<PilotSample> = None;
    for iteration in 0..config.n_iter {
        let (unit, gp) = if iteration < n_init {
            (design[iteration].clone(), None)
        } else {
            let x: Vec<Vec<f64>> = dataset.iter().map(|p| space.to_unit(&p.beta)).collect();
            let y: Vec<f64> = dataset.iter().map(|p| p.j.ln()).collect();
            match GaussianProcess::fit(&x, &y, config.gp_starts, None, &mut gp_rng) {
                Ok(gp) => {
                    let (u, _) = maximize_ei(&gp, config.candidates, config.polish, &mut acq_rng);
                    (u, Some(gp.params))
                }
                Err(e) => {
                    warn!("GP fit failed ({e}); drawing a random candidate");
                    ((0..space.dim()).map(|_| fallback_rng.gen_range(0.0..1.0)).collect(), None)
                }
            }
        };
        let flat = space.from_unit(&unit);
        let beta = ensemble.unflatten_beta(&flat)?;
        let (pilot, lf_cost) = pilots.pilot_at(&beta)?;
        let (j, penalized, pilot) =
            objective_from_pilot(ensemble, pilot, config.budget, &config.strategy, &config.allocation)?;
        dataset.push(EgoPoint {
            iteration,
            beta: flat,
            j,
            penalized,
            lf_cost,
            overhead_so_far: 0.0,
            gp,
        });
        let best = argmin(&dataset);
        dataset[iteration].overhead_so_far = tuning_overhead(&dataset, best);
        if best == iteration {
            best_pilot = Some(pilot);
        }
        info!("tuning iteration {iteration}: J = {j:.6e}");
    }
    let best = argmin(&dataset);
    let overhead = tuning_overhead(&dataset, best);
    Ok(TuningResult {
        beta_star: ensemble.unflatten_beta(&dataset[best].beta)?,
        j_star: dataset[best].j,
        best,
        overhead,
        dataset,
        pilot: best_pilot.expect("best point has a pilot"),
    })
}

/// Configuration of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tuning: TuningConfig,
    /// Tune the hyperparameters; otherwise use `beta`.
    pub tune: bool,
    pub beta: Option<Vec<Vec<f64>>>,
    pub gamma: f64,
    pub max_rounds: usize,
    pub weights: WeightRule,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tuning: TuningConfig::default(),
            tune: true,
            beta: None,
            gamma: DEFAULT_GAMMA,
            max_rounds: DEFAULT_MAX_ROUNDS,
            weights: WeightRule::Optimal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub report: EstimatorReport,
    pub tuning: Option<TuningResult>,
    pub online: PilotRun,
    /// Pilot and allocation evaluations; the tuning overhead is in
    /// `report.cost`.
    pub ledger: CostLedger,
}

/// Runs tuning, online pilot, allocation and estimation for one trial.
///
/// The pilot, its online growth and the allocation all draw points from
/// one stream derived from `trial_seed`, so pilot evaluations are reused
/// by the estimator.
pub fn run_pipeline(ensemble: &ModelEnsemble, config: &PipelineConfig, trial_seed: u64) -> Result<PipelineResult> {
    let budget = config.tuning.budget;
    let pilot_seed = seed::derive(trial_seed, &[stream::PILOT]);
    let options = AllocationOptions {
        seed: seed::derive(trial_seed, &[stream::ALLOCATION]),
        ..config.tuning.allocation
    };
    let (tuning, pilot, overhead) = if config.tune {
        let tuning_config = TuningConfig {
            allocation: options,
            ..config.tuning.clone()
        };
        let result = ego_tune(ensemble, &tuning_config, pilot_seed, trial_seed)?;
        let pilot = result.pilot.clone();
        let overhead = result.overhead;
        (Some(result), pilot, overhead)
    } else {
        let beta = config
            .beta
            .clone()
            .ok_or_else(|| Error::Config("pipeline without tuning needs fixed hyperparameters".into()))?;
        let costs = ensemble.lf_costs(&beta)?;
        let pilot_cost = config.tuning.n_pilot as f64 * (1.0 + costs.iter().sum::<f64>());
        if pilot_cost >= budget {
            return Err(Error::Infeasible(format!(
                "pilot of {} points costs {pilot_cost} of budget {budget}",
                config.tuning.n_pilot
            )));
        }
        let pilot = CandidatePilots::new(ensemble, config.tuning.n_pilot, pilot_seed)?.pilot_at(&beta)?.0;
        (None, pilot, 0.0)
    };
    let remaining = budget - overhead;
    if pilot.cost() >= remaining {
        return Err(Error::BudgetExhausted {
            stage: "tuning".into(),
            spent: overhead + pilot.cost(),
            budget,
        });
    }
    let beta = pilot.beta.clone();
    let online = online_from(
        ensemble,
        pilot,
        remaining,
        &config.tuning.strategy,
        config.gamma,
        config.max_rounds,
        &options,
    )?;
    let mut ledger = CostLedger::new(ensemble.models.len());
    let report = if online.solution.mc_fallback {
        let pilot = &online.pilot;
        let extra = ((remaining - pilot.cost()) + 1e-9).floor().max(0.0) as usize;
        let points = ensemble.input.stream_points(pilot.seed, pilot.len(), extra);
        let mut hf = pilot.outputs[0].clone();
        hf.extend(ensemble.evaluate(0, &[], &points, &mut ledger)?);
        EstimatorReport {
            qtilde: mc_estimate(&hf)?,
            alpha: vec![0.0; ensemble.num_low_fidelity()],
            predicted_variance: online.stats.var_q / hf.len() as f64,
            cost: CostBreakdown {
                pilot: pilot.cost(),
                tuning_overhead: overhead,
                allocation: ledger.total(),
            },
            profile: None,
            beta: beta.clone(),
            mc_fallback: true,
        }
    } else {
        let profile = online.solution.profile()?.expect("non-fallback solution has a profile");
        let outputs = evaluate_allocation(ensemble, &beta, &profile, online.pilot.seed, Some(&online.pilot), &mut ledger)?;
        assemble_estimator(
            &outputs,
            &online.stats,
            &profile,
            &beta,
            config.weights,
            CostBreakdown {
                pilot: online.pilot.cost(),
                tuning_overhead: overhead,
                allocation: ledger.total(),
            },
        )?
    };
    let spent = report.cost.total();
    if spent > budget * (1.0 + 1e-12) {
        return Err(Error::BudgetExhausted {
            stage: "allocation".into(),
            spent,
            budget,
        });
    }
    let mut total = online.pilot.ledger.clone();
    total.merge(&ledger);
    Ok(PipelineResult {
        report,
        tuning,
        online,
        ledger: total,
    })
}
