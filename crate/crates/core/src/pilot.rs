//! Pilot sampling modes and evaluation of allocations on a sample stream.
//!
//! All points of one run come from a single indexed input stream: the pilot
//! is its first `n_pilot` points, online growth appends the next ones, and
//! an allocation profile occupies consecutive index ranges group by group.
//! Because the shared group comes first and `N` never drops below the pilot
//! size, pilot evaluations are reused by the allocation.

use std::io::Write;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::acv::GroupOutputs;
use crate::allocation::{allocate, AllocationOptions, AllocationSolution, Strategy};
use crate::error::{Error, Result};
use crate::models::{CostLedger, ModelEnsemble};
use crate::sampleset::{layout, AllocationProfile, Scheme};
use crate::stats::{draw_pilot, estimate_stats, ModelStats, PilotSample};

/// How pilot cost is treated and whether the pilot grows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum PilotMode {
    /// Statistics from a large pilot whose cost is not charged.
    Offline { n_ref: usize },
    /// Pilot charged and reused, no further pilot evaluations.
    Projection { n_pilot: usize },
    /// Pilot grown towards the optimal shared sample count.
    Online {
        n_pilot: usize,
        gamma: f64,
        max_rounds: usize,
    },
}

/// Default under-relaxation of the online pilot update.
pub const DEFAULT_GAMMA: f64 = 0.5;

/// Default cap on online pilot rounds.
pub const DEFAULT_MAX_ROUNDS: usize = 20;

impl PilotMode {
    pub fn online(n_pilot: usize) -> Self {
        PilotMode::Online {
            n_pilot,
            gamma: DEFAULT_GAMMA,
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = match *self {
            PilotMode::Offline { n_ref } => n_ref,
            PilotMode::Projection { n_pilot } => n_pilot,
            PilotMode::Online {
                n_pilot,
                gamma,
                max_rounds,
            } => {
                if !(gamma > 0.0 && gamma <= 1.0) {
                    return Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")));
                }
                if max_rounds == 0 {
                    return Err(Error::Config("max_rounds must be at least 1".into()));
                }
                n_pilot
            }
        };
        if n < 2 {
            return Err(Error::Config(format!("pilot size must be at least 2, got {n}")));
        }
        Ok(())
    }
}

/// One row of the online pilot trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub n_pilot: usize,
    pub n_optimal: usize,
    pub delta_n: i64,
    pub added: usize,
    pub cumulative_cost: f64,
    pub projected_variance: f64,
}

pub fn write_trace<W: Write>(rows: &[RoundTrace], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Outcome of a pilot mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotRun {
    pub solution: AllocationSolution,
    pub stats: ModelStats,
    pub pilot: PilotSample,
    pub trace: Vec<RoundTrace>,
    /// Online mode reached `ΔN <= 0`.
    pub terminated: bool,
    /// The budget could not fund the requested pilot growth.
    pub exhausted: bool,
    /// Pilot cost not reusable by the allocation.
    pub unused_pilot_cost: f64,
}

/// Whether each low-fidelity model is evaluated on the shared set.
pub fn evaluates_shared(scheme: &Scheme, m: usize) -> Result<Vec<bool>> {
    let sizes: Vec<f64> = (0..m).map(|i| 2.0 + i as f64).collect();
    let n_lf: Vec<f64> = match scheme {
        Scheme::Mlmc => (0..m).map(|i| 2.0 * (i as f64 + 2.0)).collect(),
        _ => sizes.iter().map(|s| s + 1.0).collect(),
    };
    let groups = layout(scheme, 1.0, &n_lf)?;
    let shared = &groups[0];
    Ok((1..=m).map(|i| shared.evaluates(i)).collect())
}

/// Cost of pilot evaluations the strategy cannot reuse.
fn unused_cost(strategy: &Strategy, n_pilot: usize, costs: &[f64]) -> Result<f64> {
    let reused = match strategy {
        Strategy::Scheme(s) => evaluates_shared(s, costs.len())?,
        Strategy::GmfSearch => vec![true; costs.len()],
    };
    Ok(reused
        .iter()
        .zip(costs)
        .filter(|(r, _)| !**r)
        .map(|(_, w)| n_pilot as f64 * w)
        .sum())
}

/// Statistics from an uncharged pilot of `n_ref` points and an allocation
/// against the full budget.
pub fn run_offline(
    ensemble: &ModelEnsemble,
    beta: &[Vec<f64>],
    budget: f64,
    strategy: &Strategy,
    n_ref: usize,
    seed: u64,
    options: &AllocationOptions,
) -> Result<(AllocationSolution, ModelStats)> {
    let pilot = draw_pilot(ensemble, beta, n_ref, seed)?;
    let stats = estimate_stats(&pilot)?;
    let costs = ensemble.lf_costs(beta)?;
    let solution = allocate(&stats, &costs, budget, strategy, options)?;
    Ok((solution, stats))
}

fn projected(
    pilot: &PilotSample,
    costs: &[f64],
    budget: f64,
    strategy: &Strategy,
    options: &AllocationOptions,
) -> Result<(AllocationSolution, ModelStats, f64)> {
    let stats = estimate_stats(pilot)?;
    let unused = unused_cost(strategy, pilot.len(), costs)?;
    let opts = AllocationOptions {
        min_samples: pilot.len(),
        ..*options
    };
    let solution = allocate(&stats, costs, budget - unused, strategy, &opts)?;
    Ok((solution, stats, unused))
}

/// Pilot charged against the budget and reused as the leading shared
/// samples; no further evaluations.
pub fn run_projection(
    ensemble: &ModelEnsemble,
    beta: &[Vec<f64>],
    budget: f64,
    strategy: &Strategy,
    n_pilot: usize,
    seed: u64,
    options: &AllocationOptions,
) -> Result<PilotRun> {
    let costs = ensemble.lf_costs(beta)?;
    let per_point = 1.0 + costs.iter().sum::<f64>();
    if n_pilot as f64 * per_point >= budget {
        return Err(Error::Infeasible(format!(
            "pilot of {n_pilot} points costs {} of budget {budget}",
            n_pilot as f64 * per_point
        )));
    }
    let pilot = draw_pilot(ensemble, beta, n_pilot, seed)?;
    projection_from(pilot, &costs, budget, strategy, options)
}

/// Projection with an existing pilot.
pub fn projection_from(
    pilot: PilotSample,
    costs: &[f64],
    budget: f64,
    strategy: &Strategy,
    options: &AllocationOptions,
) -> Result<PilotRun> {
    let (solution, stats, unused_pilot_cost) = projected(&pilot, costs, budget, strategy, options)?;
    Ok(PilotRun {
        solution,
        stats,
        pilot,
        trace: Vec::new(),
        terminated: true,
        exhausted: false,
        unused_pilot_cost,
    })
}

/// Online pilot starting from a fresh pilot of `n_pilot` points.
#[allow(clippy::too_many_arguments)]
pub fn run_online(
    ensemble: &ModelEnsemble,
    beta: &[Vec<f64>],
    budget: f64,
    strategy: &Strategy,
    n_pilot: usize,
    gamma: f64,
    max_rounds: usize,
    seed: u64,
    options: &AllocationOptions,
) -> Result<PilotRun> {
    let costs = ensemble.lf_costs(beta)?;
    let per_point = 1.0 + costs.iter().sum::<f64>();
    if n_pilot as f64 * per_point >= budget {
        return Err(Error::Infeasible(format!(
            "pilot of {n_pilot} points costs {} of budget {budget}",
            n_pilot as f64 * per_point
        )));
    }
    let pilot = draw_pilot(ensemble, beta, n_pilot, seed)?;
    online_from(ensemble, pilot, budget, strategy, gamma, max_rounds, options)
}

/// Online pilot iteration starting from an existing pilot.
///
/// Each round optimizes the allocation with `N` bounded below by the pilot
/// size, so `ΔN = N_opt - N_pilot` is never negative and the loop stops at
/// `ΔN = 0`. Otherwise `ceil(gamma ΔN)` points are added on all models; if
/// the budget cannot fund them, the affordable part is added and the loop
/// stops.
pub fn online_from(
    ensemble: &ModelEnsemble,
    mut pilot: PilotSample,
    budget: f64,
    strategy: &Strategy,
    gamma: f64,
    max_rounds: usize,
    options: &AllocationOptions,
) -> Result<PilotRun> {
    PilotMode::Online {
        n_pilot: pilot.len(),
        gamma,
        max_rounds,
    }
    .validate()?;
    let costs = ensemble.lf_costs(&pilot.beta)?;
    let per_point = 1.0 + costs.iter().sum::<f64>();
    if pilot.cost() > budget {
        return Err(Error::BudgetExhausted {
            stage: "online pilot".into(),
            spent: pilot.cost(),
            budget,
        });
    }
    let mut trace = Vec::new();
    let mut terminated = false;
    let mut exhausted = false;
    let (mut solution, mut stats, mut unused) = projected(&pilot, &costs, budget, strategy, options)?;
    for round in 1..=max_rounds {
        let delta = solution.n as i64 - pilot.len() as i64;
        let mut row = RoundTrace {
            round,
            n_pilot: pilot.len(),
            n_optimal: solution.n,
            delta_n: delta,
            added: 0,
            cumulative_cost: pilot.cost(),
            projected_variance: solution.predicted_variance,
        };
        if delta <= 0 || solution.mc_fallback {
            terminated = delta <= 0;
            trace.push(row);
            break;
        }
        let wanted = (gamma * delta as f64).ceil() as usize;
        let affordable = ((budget - pilot.cost()) / per_point + 1e-9).floor().max(0.0) as usize;
        let added = wanted.min(affordable);
        if added < wanted {
            exhausted = true;
            warn!("online pilot: budget funds {added} of {wanted} requested points");
        }
        if added > 0 {
            let points = ensemble.input.stream_points(pilot.seed, pilot.len(), added);
            let mut ledger = CostLedger::new(ensemble.models.len());
            let mut outputs = Vec::with_capacity(ensemble.models.len());
            for (model, b) in pilot.beta.iter().enumerate() {
                outputs.push(ensemble.evaluate(model, b, &points, &mut ledger)?);
            }
            let extra = PilotSample {
                points,
                outputs,
                beta: pilot.beta.clone(),
                seed: pilot.seed,
                ledger,
            };
            pilot.merge(&extra)?;
            (solution, stats, unused) = projected(&pilot, &costs, budget, strategy, options)?;
        }
        row.added = added;
        row.cumulative_cost = pilot.cost();
        trace.push(row);
        if exhausted || added == 0 {
            break;
        }
    }
    info!(
        "online pilot finished after {} rounds with {} points",
        trace.len(),
        pilot.len()
    );
    Ok(PilotRun {
        solution,
        stats,
        pilot,
        trace,
        terminated,
        exhausted,
        unused_pilot_cost: unused,
    })
}

/// Start index of every group within the sample stream.
pub fn group_offsets(profile: &AllocationProfile) -> Vec<usize> {
    let mut start = 0;
    profile
        .groups
        .iter()
        .map(|g| {
            let s = start;
            start += g.size;
            s
        })
        .collect()
}

/// Evaluates the allocation on the stream `seed`, reusing pilot outputs
/// for stream indices below the pilot size. Only new evaluations are
/// charged to `ledger`.
pub fn evaluate_allocation(
    ensemble: &ModelEnsemble,
    beta: &[Vec<f64>],
    profile: &AllocationProfile,
    seed: u64,
    pilot: Option<&PilotSample>,
    ledger: &mut CostLedger,
) -> Result<GroupOutputs> {
    if let Some(p) = pilot {
        if p.seed != seed || p.beta != beta {
            return Err(Error::Config("pilot was drawn on a different stream or hyperparameters".into()));
        }
    }
    let reuse = pilot.map_or(0, PilotSample::len);
    let mut values = Vec::with_capacity(profile.groups.len());
    for (group, start) in profile.groups.iter().zip(group_offsets(profile)) {
        let end = start + group.size;
        let cached_end = reuse.clamp(start, end);
        let fresh = ensemble.input.stream_points(seed, cached_end, end - cached_end);
        let mut per_model = Vec::with_capacity(ensemble.models.len());
        for (model, b) in beta.iter().enumerate() {
            if !group.evaluates(model) {
                per_model.push(Vec::new());
                continue;
            }
            let mut column = Vec::with_capacity(group.size);
            if let Some(p) = pilot.filter(|_| cached_end > start) {
                column.extend_from_slice(&p.outputs[model][start..cached_end]);
            }
            column.extend(ensemble.evaluate(model, b, &fresh, ledger)?);
            per_model.push(column);
        }
        values.push(per_model);
    }
    Ok(GroupOutputs { values })
}
