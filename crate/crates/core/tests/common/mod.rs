//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use acvtune::acv::GroupOutputs;
use acvtune::models::analytic::AnalyticEnsemble;
use acvtune::sampleset::{AllocationProfile, RecursionTree, Scheme};
use acvtune::stats::ModelStats;
use nalgebra::DMatrix;
use num_rational::Ratio;
use rand::Rng;
use rand_distr::StandardNormal;

pub type Q = Ratio<i128>;

/// Explicit index sets `z`, `z_i^1`, `z_i^2` of a scheme.
#[derive(Debug, Clone)]
pub struct IndexSets {
    pub z: BTreeSet<usize>,
    pub first: Vec<BTreeSet<usize>>,
    pub second: Vec<BTreeSet<usize>>,
}

impl IndexSets {
    /// Model `i` (1-based) is evaluated on `z_i^1 ∪ z_i^2`.
    pub fn evaluated(&self, i: usize) -> BTreeSet<usize> {
        self.first[i - 1].union(&self.second[i - 1]).copied().collect()
    }

    pub fn universe(&self) -> BTreeSet<usize> {
        let mut all = self.z.clone();
        for s in self.first.iter().chain(&self.second) {
            all.extend(s);
        }
        all
    }
}

fn range(lo: usize, hi: usize) -> BTreeSet<usize> {
    (lo..hi).collect()
}

/// Materializes the sets of a scheme with `n` shared points and `n_lf[i]`
/// evaluations of model `i + 1`, or `None` when the counts are infeasible.
pub fn index_sets(scheme: &Scheme, n: usize, n_lf: &[usize]) -> Option<IndexSets> {
    let m = n_lf.len();
    let z = range(0, n);
    let mut first = Vec::with_capacity(m);
    let mut second = Vec::with_capacity(m);
    match scheme {
        Scheme::Mlmc => {
            let mut next = n;
            let mut previous = z.clone();
            for &total in n_lf {
                if total <= previous.len() {
                    return None;
                }
                let fresh = range(next, next + total - previous.len());
                next += fresh.len();
                first.push(previous.clone());
                second.push(fresh.clone());
                previous = fresh;
            }
        }
        Scheme::AcvIs => {
            let mut next = n;
            for &total in n_lf {
                if total <= n {
                    return None;
                }
                first.push(z.clone());
                second.push(range(next, next + total - n));
                next += total - n;
            }
        }
        nested => {
            let tree = match nested {
                Scheme::Mfmc => RecursionTree::chain(m),
                Scheme::AcvMf => RecursionTree::star(m),
                Scheme::Gmf(t) => t.clone(),
                _ => unreachable!(),
            };
            let size = |k: usize| if k == 0 { n } else { n_lf[k - 1] };
            for i in 1..=m {
                let p = tree.parent(i);
                if size(i) <= size(p) {
                    return None;
                }
                first.push(range(0, size(p)));
                second.push(range(0, size(i)));
            }
        }
    }
    Some(IndexSets { z, first, second })
}

/// `f` and `F` from explicit set intersections in exact arithmetic.
pub fn brute_force_f(sets: &IndexSets) -> (Vec<Q>, Vec<Vec<Q>>) {
    let n = sets.z.len() as i128;
    let r = |s: &BTreeSet<usize>| Q::new(s.len() as i128, n);
    let r_cap = |a: &BTreeSet<usize>, b: &BTreeSet<usize>| Q::new(a.intersection(b).count() as i128, n);
    let m = sets.first.len();
    let pick = |i: usize, which: usize| if which == 1 { &sets.first[i] } else { &sets.second[i] };
    let sign = |which: usize| Q::from_integer(if which == 1 { 1 } else { -1 });
    let mut f = Vec::with_capacity(m);
    let mut big_f = vec![vec![Q::from_integer(0); m]; m];
    for i in 0..m {
        let mut fi = Q::from_integer(0);
        for a in [1, 2] {
            fi += sign(a) * r_cap(pick(i, a), &sets.z) / r(pick(i, a));
        }
        f.push(fi);
        for j in 0..m {
            let mut fij = Q::from_integer(0);
            for a in [1, 2] {
                for b in [1, 2] {
                    let (x, y) = (pick(i, a), pick(j, b));
                    fij += sign(a) * sign(b) * r_cap(x, y) / (r(x) * r(y));
                }
            }
            big_f[i][j] = fij;
        }
    }
    (f, big_f)
}

/// Draws a fresh standard-normal input pair.
pub fn normal_point<R: Rng>(rng: &mut R) -> [f64; 2] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

/// Outputs of one replicate of an allocation on the analytic ensemble,
/// drawn from `rng`, grouped as the profile's partition.
pub fn replicate_outputs<R: Rng>(ens: &AnalyticEnsemble, profile: &AllocationProfile, rng: &mut R) -> GroupOutputs {
    let models = ens.models.len();
    let values = profile
        .groups
        .iter()
        .map(|g| {
            let points: Vec<[f64; 2]> = (0..g.size).map(|_| normal_point(rng)).collect();
            (0..models)
                .map(|k| {
                    if g.evaluates(k) {
                        points.iter().map(|p| ens.models[k].evaluate(p)).collect()
                    } else {
                        Vec::new()
                    }
                })
                .collect()
        })
        .collect();
    GroupOutputs { values }
}

pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// The four named schemes plus a non-trivial recursion tree for `m` models.
pub fn schemes(m: usize) -> Vec<Scheme> {
    let mut out = vec![Scheme::Mlmc, Scheme::Mfmc, Scheme::AcvIs, Scheme::AcvMf];
    if m >= 2 {
        let mut parents = vec![0; m];
        for (i, p) in parents.iter_mut().enumerate().skip(1) {
            *p = i;
        }
        parents[m - 1] = 1;
        out.push(Scheme::Gmf(RecursionTree::new(parents).unwrap()));
    }
    out
}

pub fn two_model_stats(rho: f64, sigma: f64) -> ModelStats {
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, rho * sigma, rho * sigma, sigma * sigma]);
    ModelStats::from_covariance(&cov)
}

/// Smallest `Var[Q]/N (1 - ρ² (r-1)/r)` over a 500×500 log grid of
/// feasible `(N, r)` with `N (1 + r w) <= budget`, for unit `Var[Q]`.
pub fn grid_oracle(rho: f64, w: f64, budget: f64) -> f64 {
    let steps = 500;
    let (n_lo, n_hi) = (2.0f64, budget);
    let (r_lo, r_hi) = (1.0f64 + 1e-9, budget / (2.0 * w));
    let mut best = f64::INFINITY;
    for a in 0..steps {
        let n = (n_lo.ln() + (n_hi.ln() - n_lo.ln()) * a as f64 / (steps - 1) as f64).exp();
        for b in 0..steps {
            let r = (r_lo.ln() + (r_hi.ln() - r_lo.ln()) * b as f64 / (steps - 1) as f64).exp();
            if n * (1.0 + r * w) > budget || n * r - n < 1.0 {
                continue;
            }
            best = best.min((1.0 - rho * rho * (r - 1.0) / r) / n);
        }
    }
    best
}
