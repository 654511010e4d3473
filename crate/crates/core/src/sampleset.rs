//! Sample-set algebra for ACV allocations.
//!
//! Every allocation is stored as a partition of all drawn points into
//! disjoint groups. Each group records whether it belongs to the shared set
//! `z` and, per low-fidelity model, whether it belongs to `z_i^1` and
//! `z_i^2`. Cardinalities of any intersection are then sums of group sizes,
//! which is all the `f`/`F` formulas need.
//!
//! Nested schemes (MFMC, ACV-MF and the tree-structured GMF family) use
//! prefix semantics: every set is the first `N_k` points of one common
//! stream, `z_i^1` is the parent's set and `z_i^2 = z_i`.

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of low-fidelity models supported by the bitmask layout.
pub const MAX_MODELS: usize = 32;

/// Parent map over low-fidelity models `1..=M`; entry `i - 1` holds the
/// parent of model `i` (0 is the high-fidelity root).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecursionTree {
    pub parents: Vec<usize>,
}

impl RecursionTree {
    pub fn new(parents: Vec<usize>) -> Result<Self> {
        let tree = Self { parents };
        tree.validate()?;
        Ok(tree)
    }

    /// Every model hangs directly off the root (the ACV-MF structure).
    pub fn star(m: usize) -> Self {
        Self { parents: vec![0; m] }
    }

    /// The chain 0 <- 1 <- 2 <- ... (the MFMC structure).
    pub fn chain(m: usize) -> Self {
        Self {
            parents: (0..m).collect(),
        }
    }

    pub fn num_models(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, model: usize) -> usize {
        self.parents[model - 1]
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.parents.len();
        if m == 0 || m > MAX_MODELS {
            return Err(Error::Config(format!("tree must have 1..={MAX_MODELS} models, got {m}")));
        }
        for (idx, &p) in self.parents.iter().enumerate() {
            if p > m || p == idx + 1 {
                return Err(Error::Config(format!("invalid parent {p} for model {}", idx + 1)));
            }
        }
        for start in 1..=m {
            let mut node = start;
            let mut hops = 0;
            while node != 0 {
                node = self.parent(node);
                hops += 1;
                if hops > m {
                    return Err(Error::Config(format!("tree contains a cycle through model {start}")));
                }
            }
        }
        Ok(())
    }

    /// Models ordered so that each appears after its parent.
    pub fn topological_order(&self) -> Vec<usize> {
        let m = self.parents.len();
        let mut depth = vec![0usize; m + 1];
        for i in 1..=m {
            let mut node = i;
            while node != 0 {
                node = self.parent(node);
                depth[i] += 1;
            }
        }
        let mut order: Vec<usize> = (1..=m).collect();
        order.sort_by_key(|&i| (depth[i], i));
        order
    }
}

/// Sampling scheme defining the set relations of an allocation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "tree", rename_all = "kebab-case")]
pub enum Scheme {
    Mlmc,
    Mfmc,
    AcvIs,
    AcvMf,
    Gmf(RecursionTree),
}

impl Scheme {
    pub fn name(&self) -> String {
        match self {
            Scheme::Mlmc => "mlmc".into(),
            Scheme::Mfmc => "mfmc".into(),
            Scheme::AcvIs => "acv-is".into(),
            Scheme::AcvMf => "acv-mf".into(),
            Scheme::Gmf(tree) => format!(
                "gmf[{}]",
                tree.parents.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",")
            ),
        }
    }

    /// Parent of each model when the scheme nests prefixes of one stream.
    pub fn nesting_tree(&self, m: usize) -> Option<RecursionTree> {
        match self {
            Scheme::Mfmc => Some(RecursionTree::chain(m)),
            Scheme::AcvMf => Some(RecursionTree::star(m)),
            Scheme::Gmf(tree) => Some(tree.clone()),
            Scheme::Mlmc | Scheme::AcvIs => None,
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "mlmc" => Ok(Scheme::Mlmc),
            "mfmc" => Ok(Scheme::Mfmc),
            "acv-is" | "acvis" => Ok(Scheme::AcvIs),
            "acv-mf" | "acvmf" => Ok(Scheme::AcvMf),
            other => {
                if let Some(body) = other.strip_prefix("gmf[").and_then(|b| b.strip_suffix(']')) {
                    let parents = body
                        .split(',')
                        .map(|t| t.trim().parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::Config(format!("bad tree `{s}`: {e}")))?;
                    Ok(Scheme::Gmf(RecursionTree::new(parents)?))
                } else {
                    Err(Error::Config(format!("unknown scheme `{s}`")))
                }
            }
        }
    }
}

/// One block of the partition of drawn points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Group<T> {
    pub size: T,
    pub in_shared: bool,
    /// Bit `i - 1` set when the group belongs to `z_i^1`.
    pub first: u32,
    /// Bit `i - 1` set when the group belongs to `z_i^2`.
    pub second: u32,
}

impl<T> Group<T> {
    pub fn in_first(&self, model: usize) -> bool {
        self.first & (1 << (model - 1)) != 0
    }

    pub fn in_second(&self, model: usize) -> bool {
        self.second & (1 << (model - 1)) != 0
    }

    /// Whether `model` (0 = high fidelity) is evaluated on this group.
    pub fn evaluates(&self, model: usize) -> bool {
        if model == 0 {
            self.in_shared
        } else {
            self.in_first(model) || self.in_second(model)
        }
    }
}

/// Integer sample allocation realized as a group partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProfile {
    pub scheme: Scheme,
    pub n: usize,
    /// Number of evaluations of each low-fidelity model, `|z_i^1 ∪ z_i^2|`.
    pub n_lf: Vec<usize>,
    pub groups: Vec<Group<usize>>,
}

/// Cardinality-derived quantities entering the estimator variance.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeMatrices {
    pub f: DVector<f64>,
    pub big_f: DMatrix<f64>,
    /// Oversampling ratios `N_i / N` of each model's evaluation set.
    pub ratios: Vec<f64>,
}

/// Exact rational counterpart of [`SchemeMatrices`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactMatrices {
    pub f: Vec<Ratio<i128>>,
    pub big_f: Vec<Vec<Ratio<i128>>>,
}

fn constraint(relation: &str, detail: String) -> Error {
    Error::Constraint {
        relation: relation.to_string(),
        detail,
    }
}

/// Builds the group layout of a scheme from real-valued set sizes.
///
/// `n_lf[i]` is the total evaluation count of model `i + 1`. Sizes may be
/// fractional, which lets the allocation optimizer evaluate `f`/`F` on the
/// continuous relaxation with the same code path as integer profiles.
pub fn layout(scheme: &Scheme, n: f64, n_lf: &[f64]) -> Result<Vec<Group<f64>>> {
    let m = n_lf.len();
    if m == 0 || m > MAX_MODELS {
        return Err(Error::Config(format!("need 1..={MAX_MODELS} low-fidelity models, got {m}")));
    }
    if !(n >= 1.0) {
        return Err(constraint("N >= 1", format!("N = {n}")));
    }
    let all = if m == 32 { u32::MAX } else { (1u32 << m) - 1 };
    match scheme {
        Scheme::Mlmc => {
            // z_1^1 = z, z_i^1 = z_{i-1}^2, z_i^2 fresh.
            let mut groups = vec![Group {
                size: n,
                in_shared: true,
                first: 1,
                second: 0,
            }];
            let mut previous = n;
            for (idx, &total) in n_lf.iter().enumerate() {
                let fresh = total - previous;
                if !(fresh > 0.0) {
                    return Err(constraint(
                        "|z_i^2| > 0 with z_i^1 = z_{i-1}^2",
                        format!("model {} has N_i = {total} but |z_i^1| = {previous}", idx + 1),
                    ));
                }
                let bit = 1u32 << idx;
                let next = if idx + 1 < m { bit << 1 } else { 0 };
                groups.push(Group {
                    size: fresh,
                    in_shared: false,
                    first: next,
                    second: bit,
                });
                previous = fresh;
            }
            Ok(groups)
        }
        Scheme::AcvIs => {
            let mut groups = vec![Group {
                size: n,
                in_shared: true,
                first: all,
                second: 0,
            }];
            for (idx, &total) in n_lf.iter().enumerate() {
                let extra = total - n;
                if !(extra > 0.0) {
                    return Err(constraint(
                        "N_i > N",
                        format!("model {} has N_i = {total} with N = {n}", idx + 1),
                    ));
                }
                groups.push(Group {
                    size: extra,
                    in_shared: false,
                    first: 0,
                    second: 1 << idx,
                });
            }
            Ok(groups)
        }
        _ => {
            let tree = scheme.nesting_tree(m).expect("nested scheme");
            if tree.num_models() != m {
                return Err(Error::Config(format!(
                    "tree has {} models but {m} sample counts were given",
                    tree.num_models()
                )));
            }
            let size_of = |k: usize| if k == 0 { n } else { n_lf[k - 1] };
            for i in 1..=m {
                let p = tree.parent(i);
                if !(size_of(i) > size_of(p)) {
                    return Err(constraint(
                        "N_i > N_parent(i)",
                        format!(
                            "model {i} has N_i = {} but its parent {p} has {}",
                            size_of(i),
                            size_of(p)
                        ),
                    ));
                }
            }
            let mut cuts: Vec<f64> = std::iter::once(n).chain(n_lf.iter().copied()).collect();
            cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite sizes"));
            cuts.dedup();
            let mut groups = Vec::with_capacity(cuts.len());
            let mut lower = 0.0;
            for &upper in &cuts {
                let mut first = 0u32;
                let mut second = 0u32;
                for i in 1..=m {
                    if upper <= size_of(tree.parent(i)) {
                        first |= 1 << (i - 1);
                    }
                    if upper <= size_of(i) {
                        second |= 1 << (i - 1);
                    }
                }
                groups.push(Group {
                    size: upper - lower,
                    in_shared: upper <= n,
                    first,
                    second,
                });
                lower = upper;
            }
            Ok(groups)
        }
    }
}

impl AllocationProfile {
    /// Realizes `scheme` with `n` shared points and `n_lf[i]` evaluations of
    /// model `i + 1`.
    pub fn build(scheme: Scheme, n: usize, n_lf: Vec<usize>) -> Result<Self> {
        let real: Vec<f64> = n_lf.iter().map(|&v| v as f64).collect();
        let groups = layout(&scheme, n as f64, &real)?
            .into_iter()
            .map(|g| Group {
                size: g.size.round() as usize,
                in_shared: g.in_shared,
                first: g.first,
                second: g.second,
            })
            .collect();
        let profile = Self {
            scheme,
            n,
            n_lf,
            groups,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn num_models(&self) -> usize {
        self.n_lf.len()
    }

    /// Checks nonempty sets, the partition sizes, and `z_i^1 != z_i^2`.
    pub fn validate(&self) -> Result<()> {
        let shared: usize = self.groups.iter().filter(|g| g.in_shared).map(|g| g.size).sum();
        if shared != self.n || self.n == 0 {
            return Err(constraint("|z| = N", format!("groups give {shared}, N = {}", self.n)));
        }
        for i in 1..=self.num_models() {
            let first = self.count(|g| g.in_first(i));
            let second = self.count(|g| g.in_second(i));
            let total = self.count(|g| g.evaluates(i));
            if first == 0 || second == 0 {
                return Err(constraint("z_i^1, z_i^2 nonempty", format!("model {i}")));
            }
            if total != self.n_lf[i - 1] {
                return Err(constraint(
                    "|z_i| = N_i",
                    format!("model {i}: groups give {total}, N_i = {}", self.n_lf[i - 1]),
                ));
            }
            let differs = self.groups.iter().any(|g| g.size > 0 && g.in_first(i) != g.in_second(i));
            if !differs {
                return Err(constraint("z_i^1 != z_i^2", format!("model {i}")));
            }
        }
        Ok(())
    }

    fn count(&self, pred: impl Fn(&Group<usize>) -> bool) -> usize {
        self.groups.iter().filter(|g| pred(g)).map(|g| g.size).sum()
    }

    /// Total number of distinct points drawn.
    pub fn total_points(&self) -> usize {
        self.groups.iter().map(|g| g.size).sum()
    }

    /// Cost `N + sum_i N_i w_i` in high-fidelity units.
    pub fn cost(&self, weights: &[f64]) -> f64 {
        self.n as f64 + self.n_lf.iter().zip(weights).map(|(&c, &w)| c as f64 * w).sum::<f64>()
    }

    pub fn matrices(&self) -> SchemeMatrices {
        let groups: Vec<Group<f64>> = self
            .groups
            .iter()
            .map(|g| Group {
                size: g.size as f64,
                in_shared: g.in_shared,
                first: g.first,
                second: g.second,
            })
            .collect();
        matrices_from_groups(&groups, self.num_models())
    }

    /// `f` and `F` in exact rational arithmetic.
    pub fn exact_matrices(&self) -> ExactMatrices {
        let m = self.num_models();
        let n = self.n as i128;
        let card = |pred: &dyn Fn(&Group<usize>) -> bool| -> i128 {
            self.groups.iter().filter(|g| pred(g)).map(|g| g.size as i128).sum()
        };
        // r(A ∩ B) / (r(A) r(B)) = N |A ∩ B| / (|A| |B|)
        let term = |ab: i128, a: i128, b: i128| Ratio::new(n * ab, a * b);
        let sets = |i: usize, which: u8| -> Box<dyn Fn(&Group<usize>) -> bool> {
            if which == 1 {
                Box::new(move |g: &Group<usize>| g.in_first(i))
            } else {
                Box::new(move |g: &Group<usize>| g.in_second(i))
            }
        };
        let mut f = Vec::with_capacity(m);
        let mut big_f = vec![vec![Ratio::from_integer(0); m]; m];
        for i in 1..=m {
            let mut fi = Ratio::from_integer(0);
            for (which, sign) in [(1u8, 1i128), (2u8, -1i128)] {
                let a = sets(i, which);
                let both = card(&|g| a(g) && g.in_shared);
                fi += Ratio::from_integer(sign) * term(both, card(&*a), n);
            }
            f.push(fi);
            for j in 1..=m {
                let mut fij = Ratio::from_integer(0);
                for (wi, si) in [(1u8, 1i128), (2u8, -1i128)] {
                    for (wj, sj) in [(1u8, 1i128), (2u8, -1i128)] {
                        let a = sets(i, wi);
                        let b = sets(j, wj);
                        let both = card(&|g| a(g) && b(g));
                        fij += Ratio::from_integer(si * sj) * term(both, card(&*a), card(&*b));
                    }
                }
                big_f[i - 1][j - 1] = fij;
            }
        }
        ExactMatrices { f, big_f }
    }
}

/// Computes `f`, `F` and the oversampling ratios from a group layout.
pub fn matrices_from_groups(groups: &[Group<f64>], m: usize) -> SchemeMatrices {
    let n: f64 = groups.iter().filter(|g| g.in_shared).map(|g| g.size).sum();
    let mut first = vec![0.0; m];
    let mut second = vec![0.0; m];
    let mut first_shared = vec![0.0; m];
    let mut second_shared = vec![0.0; m];
    let mut total = vec![0.0; m];
    for g in groups {
        for i in 0..m {
            let (a, b) = (g.in_first(i + 1), g.in_second(i + 1));
            if a {
                first[i] += g.size;
                if g.in_shared {
                    first_shared[i] += g.size;
                }
            }
            if b {
                second[i] += g.size;
                if g.in_shared {
                    second_shared[i] += g.size;
                }
            }
            if a || b {
                total[i] += g.size;
            }
        }
    }
    let f = DVector::from_fn(m, |i, _| first_shared[i] / first[i] - second_shared[i] / second[i]);
    let mut big_f = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let mut c = [[0.0f64; 2]; 2];
            for g in groups {
                let gi = [g.in_first(i + 1), g.in_second(i + 1)];
                let gj = [g.in_first(j + 1), g.in_second(j + 1)];
                for (a, &ia) in gi.iter().enumerate() {
                    for (b, &jb) in gj.iter().enumerate() {
                        if ia && jb {
                            c[a][b] += g.size;
                        }
                    }
                }
            }
            let si = [first[i], second[i]];
            let sj = [first[j], second[j]];
            let value = n
                * (c[0][0] / (si[0] * sj[0]) - c[0][1] / (si[0] * sj[1]) - c[1][0] / (si[1] * sj[0])
                    + c[1][1] / (si[1] * sj[1]));
            big_f[(i, j)] = value;
            big_f[(j, i)] = value;
        }
    }
    SchemeMatrices {
        f,
        big_f,
        ratios: total.iter().map(|t| t / n).collect(),
    }
}

/// `f`/`F` for a scheme evaluated at real-valued sizes.
pub fn relaxed_matrices(scheme: &Scheme, n: f64, n_lf: &[f64]) -> Result<SchemeMatrices> {
    Ok(matrices_from_groups(&layout(scheme, n, n_lf)?, n_lf.len()))
}
