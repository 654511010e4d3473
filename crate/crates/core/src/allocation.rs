//! Budget-constrained sample allocation.
//!
//! The relaxed problem is solved in log space of per-model sample
//! increments. Eliminating `N` through the budget identity
//! `N (1 + sum_i r_i w_i) = B` leaves an unconstrained problem in `M`
//! variables, searched by Nelder–Mead from several structured starts. The
//! relaxed optimum is then floored to integers, repaired into the budget,
//! and grown greedily by marginal variance reduction per unit cost.

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acv::variance_factor;
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::sampleset::{relaxed_matrices, AllocationProfile, RecursionTree, Scheme};
use crate::seed;
use crate::stats::ModelStats;

/// Largest `M` accepted by [`enumerate_trees`].
pub const MAX_TREE_MODELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocationOptions {
    pub starts: usize,
    pub max_iterations: usize,
    pub rtol: f64,
    /// Lower bound on the shared sample count `N`.
    pub min_samples: usize,
    pub seed: u64,
}

impl Default for AllocationOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            max_iterations: 2000,
            rtol: 1e-8,
            min_samples: 2,
            seed: 0,
        }
    }
}

/// Sample sizes and variance of the continuous relaxation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedOptimum {
    pub n: f64,
    pub n_lf: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution {
    pub scheme: Scheme,
    pub n: usize,
    /// Evaluation count of each low-fidelity model; all zero for the Monte
    /// Carlo fallback.
    pub n_lf: Vec<usize>,
    pub predicted_variance: f64,
    pub cost: f64,
    pub relaxed: RelaxedOptimum,
    pub converged: bool,
    /// Set when no multifidelity allocation beats plain Monte Carlo.
    pub mc_fallback: bool,
}

impl AllocationSolution {
    /// Group realization of the solution, `None` for the Monte Carlo
    /// fallback.
    pub fn profile(&self) -> Result<Option<AllocationProfile>> {
        if self.mc_fallback {
            return Ok(None);
        }
        AllocationProfile::build(self.scheme.clone(), self.n, self.n_lf.clone()).map(Some)
    }

    /// Variance reduction relative to Monte Carlo at the same budget.
    pub fn variance_reduction(&self, var_q: f64, budget: f64) -> f64 {
        var_q / budget.floor() / self.predicted_variance
    }
}

/// Either one scheme or the search over every recursion tree.
///
/// Serialized as its name, e.g. `acv-mf`, `gmf[0,1,1]` or `gmf-search`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    Scheme(Scheme),
    GmfSearch,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "gmf-search" {
            Ok(Strategy::GmfSearch)
        } else {
            s.parse().map(Strategy::Scheme)
        }
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.name()
    }
}

impl Strategy {
    pub fn name(&self) -> String {
        match self {
            Strategy::Scheme(s) => s.name(),
            Strategy::GmfSearch => "gmf-search".into(),
        }
    }
}

/// Runs the allocation for a strategy.
pub fn allocate(
    stats: &ModelStats,
    costs: &[f64],
    budget: f64,
    strategy: &Strategy,
    options: &AllocationOptions,
) -> Result<AllocationSolution> {
    match strategy {
        Strategy::Scheme(s) => optimize_allocation(stats, costs, budget, s, options),
        Strategy::GmfSearch => optimize_allocation_gmf(stats, costs, budget, options),
    }
}

/// How increments map to per-model evaluation counts.
#[derive(Debug, Clone)]
enum Shape {
    Nested(RecursionTree),
    Independent,
    Multilevel,
}

impl Shape {
    fn of(scheme: &Scheme, m: usize) -> Result<Self> {
        match scheme {
            Scheme::Mlmc => Ok(Shape::Multilevel),
            Scheme::AcvIs => Ok(Shape::Independent),
            other => {
                let tree = other.nesting_tree(m).expect("nested scheme");
                if tree.num_models() != m {
                    return Err(Error::Config(format!(
                        "tree has {} models but statistics have {m}",
                        tree.num_models()
                    )));
                }
                Ok(Shape::Nested(tree))
            }
        }
    }

    /// Evaluation counts from `N` and the increments `d`.
    fn counts(&self, n: f64, d: &[f64]) -> Vec<f64> {
        match self {
            Shape::Independent => d.iter().map(|x| n + x).collect(),
            Shape::Multilevel => (0..d.len())
                .map(|i| if i == 0 { n + d[0] } else { d[i - 1] + d[i] })
                .collect(),
            Shape::Nested(tree) => {
                let mut out = vec![0.0; d.len()];
                for i in tree.topological_order() {
                    let p = tree.parent(i);
                    let base = if p == 0 { n } else { out[p - 1] };
                    out[i - 1] = base + d[i - 1];
                }
                out
            }
        }
    }

    /// Cost of one more unit of `N` (index 0) or of increment `k`.
    fn unit_costs(&self, costs: &[f64]) -> Vec<f64> {
        let m = costs.len();
        let zero = vec![0.0; m];
        let base = self.counts(0.0, &zero);
        let mut units = Vec::with_capacity(m + 1);
        let with_n = self.counts(1.0, &zero);
        units.push(1.0 + dot(&with_n, costs) - dot(&base, costs));
        for k in 0..m {
            let mut d = zero.clone();
            d[k] = 1.0;
            units.push(dot(&self.counts(0.0, &d), costs) - dot(&base, costs));
        }
        units
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Problem<'a> {
    stats: &'a ModelStats,
    costs: &'a [f64],
    budget: f64,
    scheme: &'a Scheme,
    shape: Shape,
    min_samples: f64,
}

const THETA_LIMIT: f64 = 30.0;

impl Problem<'_> {
    /// `Var[Q] / N * factor` at real sizes, `inf` when undefined.
    fn variance(&self, n: f64, d: &[f64]) -> f64 {
        let counts = self.shape.counts(n, d);
        let ratios: Vec<f64> = counts.iter().map(|c| c / n).collect();
        match relaxed_matrices(self.scheme, 1.0, &ratios).and_then(|mats| variance_factor(self.stats, &mats)) {
            Ok((factor, _, _)) => self.stats.var_q / n * factor.max(0.0),
            Err(_) => f64::INFINITY,
        }
    }

    fn relaxed(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let inc: Vec<f64> = theta.iter().map(|t| t.clamp(-THETA_LIMIT, THETA_LIMIT).exp()).collect();
        let per_n = 1.0 + dot(&self.shape.counts(1.0, &inc), self.costs);
        let n = self.budget / per_n;
        (n, inc.iter().map(|x| x * n).collect())
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let (n, d) = self.relaxed(theta);
        let inc: Vec<f64> = d.iter().map(|x| x / n).collect();
        let counts = self.shape.counts(1.0, &inc);
        let factor = match relaxed_matrices(self.scheme, 1.0, &counts).and_then(|m| variance_factor(self.stats, &m)) {
            Ok((f, _, _)) => f.max(1e-300),
            Err(_) => return f64::INFINITY,
        };
        let mut penalty = 0.0;
        let below = |value: f64, floor: f64| (floor / value).ln().max(0.0).powi(2);
        penalty += below(n, self.min_samples);
        for x in &d {
            penalty += below(*x, 1.0);
        }
        self.stats.var_q.ln() - n.ln() + factor.ln() + 1e4 * penalty
    }

    fn integer_cost(&self, n: usize, d: &[usize]) -> f64 {
        let d: Vec<f64> = d.iter().map(|&x| x as f64).collect();
        n as f64 + dot(&self.shape.counts(n as f64, &d), self.costs)
    }

    fn integer_variance(&self, n: usize, d: &[usize]) -> f64 {
        let d: Vec<f64> = d.iter().map(|&x| x as f64).collect();
        self.variance(n as f64, &d)
    }
}

fn structured_starts(stats: &ModelStats, costs: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let m = costs.len();
    let mut starts = vec![vec![0.05f64.ln(); m], vec![0.0; m]];
    for j in 0..m {
        let mut s = vec![0.05f64.ln(); m];
        s[j] = (0.5 / costs[j]).max(0.05).ln();
        starts.push(s);
    }
    // ratios of the two-model control variate optimum
    starts.push(
        (0..m)
            .map(|i| {
                let r2 = stats.rho[i] * stats.rho[i];
                let r = (r2 / ((1.0 - r2).max(1e-12) * costs[i])).sqrt();
                (r - 1.0).max(0.05).ln()
            })
            .collect(),
    );
    starts.truncate(count);
    let mut rng = seed::rng(seed::derive(seed, &[seed::stream::MULTISTART]));
    while starts.len() < count {
        starts.push((0..m).map(|_| rng.gen_range(-2.0..4.0)).collect());
    }
    starts
}

/// Minimizes the estimator variance of `scheme` under `budget`.
pub fn optimize_allocation(
    stats: &ModelStats,
    costs: &[f64],
    budget: f64,
    scheme: &Scheme,
    options: &AllocationOptions,
) -> Result<AllocationSolution> {
    stats.validate()?;
    let m = stats.num_models();
    if costs.len() != m {
        return Err(Error::Config(format!("{} costs for {m} low-fidelity models", costs.len())));
    }
    if costs.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::Domain(format!("costs must be positive, got {costs:?}")));
    }
    let floor = 2.0 * (1.0 + costs.iter().sum::<f64>());
    if !(budget >= floor) || !budget.is_finite() {
        return Err(Error::Infeasible(format!("budget {budget} below the minimum {floor}")));
    }
    let problem = Problem {
        stats,
        costs,
        budget,
        scheme,
        shape: Shape::of(scheme, m)?,
        min_samples: options.min_samples.max(1) as f64,
    };
    let nm = NelderMeadOptions {
        max_iterations: options.max_iterations,
        rtol: options.rtol,
        step: 1.0,
    };
    let mut best: Option<crate::optim::Minimum> = None;
    for start in structured_starts(stats, costs, options.starts.max(1), options.seed) {
        let found = nelder_mead(|t| problem.objective(t), &start, nm);
        if best.as_ref().map_or(true, |b| found.value < b.value) {
            best = Some(found);
        }
    }
    let best = best.expect("at least one start");
    if !best.converged {
        warn!("allocation search for {} stopped at the iteration cap", scheme.name());
    }
    let (n_rel, d_rel) = problem.relaxed(&best.x);
    let relaxed = RelaxedOptimum {
        n: n_rel,
        n_lf: problem.shape.counts(n_rel, &d_rel),
        variance: problem.variance(n_rel, &d_rel),
    };

    let mc_n = budget.floor() as usize;
    let mc_variance = stats.var_q / mc_n as f64;
    let fallback = |relaxed: RelaxedOptimum, converged: bool| AllocationSolution {
        scheme: scheme.clone(),
        n: mc_n,
        n_lf: vec![0; m],
        predicted_variance: mc_variance,
        cost: mc_n as f64,
        relaxed,
        converged,
        mc_fallback: true,
    };

    let min_n = options.min_samples.max(1);
    let mut n = (n_rel.floor() as usize).max(min_n);
    let mut d: Vec<usize> = d_rel.iter().map(|x| (x.floor() as usize).max(1)).collect();
    let units = problem.shape.unit_costs(costs);

    // Repair: shed the samples whose removal hurts least per unit cost.
    while problem.integer_cost(n, &d) > budget {
        let mut choice: Option<(usize, usize, f64)> = None;
        let excess = problem.integer_cost(n, &d) - budget;
        for v in 0..=m {
            let current = if v == 0 { n } else { d[v - 1] };
            let lowest = if v == 0 { min_n } else { 1 };
            if current <= lowest {
                continue;
            }
            let need = (excess / units[v]).ceil() as usize;
            let mut steps = vec![need.min(current - lowest), 1];
            steps.dedup();
            for s in steps.into_iter().filter(|&s| s >= 1) {
                let (mut n2, mut d2) = (n, d.clone());
                if v == 0 {
                    n2 -= s;
                } else {
                    d2[v - 1] -= s;
                }
                let loss = (problem.integer_variance(n2, &d2) - problem.integer_variance(n, &d)) / (s as f64 * units[v]);
                if choice.map_or(true, |(_, _, l)| loss < l) {
                    choice = Some((v, s, loss));
                }
            }
        }
        match choice {
            Some((v, s, _)) => {
                if v == 0 {
                    n -= s;
                } else {
                    d[v - 1] -= s;
                }
            }
            None => return Ok(fallback(relaxed, best.converged)),
        }
    }

    // Greedy growth with the leftover budget.
    let mut current = problem.integer_variance(n, &d);
    for _ in 0..1000 {
        let remaining = budget - problem.integer_cost(n, &d);
        let mut choice: Option<(usize, usize, f64, f64)> = None;
        for v in 0..=m {
            let max_step = (remaining / units[v] + 1e-9).floor();
            if max_step < 1.0 {
                continue;
            }
            let max_step = max_step.min(1e12) as usize;
            let mut steps = vec![max_step, max_step / 4, max_step / 16, 1];
            steps.retain(|&s| s >= 1);
            steps.dedup();
            for s in steps {
                let (mut n2, mut d2) = (n, d.clone());
                if v == 0 {
                    n2 += s;
                } else {
                    d2[v - 1] += s;
                }
                if problem.integer_cost(n2, &d2) > budget {
                    continue;
                }
                let value = problem.integer_variance(n2, &d2);
                let gain = (current - value) / (s as f64 * units[v]);
                if gain > 0.0 && choice.map_or(true, |(_, _, g, _)| gain > g) {
                    choice = Some((v, s, gain, value));
                }
            }
        }
        let Some((v, s, _, value)) = choice else { break };
        if v == 0 {
            n += s;
        } else {
            d[v - 1] += s;
        }
        current = value;
    }

    if !(current < mc_variance) {
        return Ok(fallback(relaxed, best.converged));
    }
    let d_real: Vec<f64> = d.iter().map(|&x| x as f64).collect();
    let n_lf: Vec<usize> = problem
        .shape
        .counts(n as f64, &d_real)
        .iter()
        .map(|c| c.round() as usize)
        .collect();
    Ok(AllocationSolution {
        scheme: scheme.clone(),
        n,
        cost: problem.integer_cost(n, &d),
        n_lf,
        predicted_variance: current,
        relaxed,
        converged: best.converged,
        mc_fallback: false,
    })
}

/// Every parent map on models `1..=m` rooted at the high-fidelity model.
pub fn enumerate_trees(m: usize) -> Result<Vec<RecursionTree>> {
    if m == 0 || m > MAX_TREE_MODELS {
        return Err(Error::Config(format!("tree enumeration supports 1..={MAX_TREE_MODELS} models, got {m}")));
    }
    let mut trees = Vec::new();
    let mut parents = vec![0usize; m];
    loop {
        if let Ok(tree) = RecursionTree::new(parents.clone()) {
            trees.push(tree);
        }
        // odometer over {0..m}^m
        let mut k = 0;
        loop {
            if k == m {
                return Ok(trees);
            }
            parents[k] += 1;
            if parents[k] <= m {
                break;
            }
            parents[k] = 0;
            k += 1;
        }
    }
}

/// Best allocation over all recursion trees.
pub fn optimize_allocation_gmf(
    stats: &ModelStats,
    costs: &[f64],
    budget: f64,
    options: &AllocationOptions,
) -> Result<AllocationSolution> {
    let trees = enumerate_trees(stats.num_models())?;
    let solutions: Vec<Result<AllocationSolution>> = trees
        .into_par_iter()
        .map(|tree| optimize_allocation(stats, costs, budget, &Scheme::Gmf(tree), options))
        .collect();
    let mut best: Option<AllocationSolution> = None;
    for s in solutions {
        let s = s?;
        if best.as_ref().map_or(true, |b| s.predicted_variance < b.predicted_variance) {
            best = Some(s);
        }
    }
    Ok(best.expect("at least one tree"))
}
