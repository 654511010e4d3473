//! Pilot sampling and empirical model statistics.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{CostLedger, ModelEnsemble};

/// Variance of the high-fidelity output and correlation structure of the
/// low-fidelity outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub var_q: f64,
    pub sigma: DVector<f64>,
    /// Correlation of each low-fidelity model with the high-fidelity one.
    pub rho: DVector<f64>,
    /// Correlations among low-fidelity models.
    pub p: DMatrix<f64>,
}

impl ModelStats {
    /// Statistics of an `(M + 1) x (M + 1)` covariance matrix with the
    /// high-fidelity model first.
    pub fn from_covariance(cov: &DMatrix<f64>) -> Self {
        let m = cov.nrows() - 1;
        let sd: Vec<f64> = (0..=m).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
        let corr = |i: usize, j: usize| {
            if i == j {
                1.0
            } else {
                (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
            }
        };
        Self {
            var_q: cov[(0, 0)],
            sigma: DVector::from_fn(m, |i, _| sd[i + 1]),
            rho: DVector::from_fn(m, |i, _| corr(0, i + 1)),
            p: DMatrix::from_fn(m, m, |i, j| 0.5 * (corr(i + 1, j + 1) + corr(j + 1, i + 1))),
        }
    }

    pub fn num_models(&self) -> usize {
        self.rho.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_models();
        let finite = self.var_q.is_finite()
            && self.sigma.iter().all(|v| v.is_finite())
            && self.rho.iter().all(|v| v.is_finite())
            && self.p.iter().all(|v| v.is_finite());
        if !finite || self.sigma.len() != m || self.p.shape() != (m, m) {
            return Err(Error::Numerical("malformed model statistics".into()));
        }
        if !(self.var_q > 0.0) {
            return Err(Error::DegenerateStatistics { model: 0 });
        }
        if let Some(i) = self.sigma.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::DegenerateStatistics { model: i + 1 });
        }
        if self.rho.iter().chain(self.p.iter()).any(|r| r.abs() > 1.0 + 1e-12) {
            return Err(Error::Numerical("correlation outside [-1, 1]".into()));
        }
        Ok(())
    }

    /// Keeps only the listed low-fidelity models (1-based ids).
    pub fn select(&self, models: &[usize]) -> Self {
        let idx: Vec<usize> = models.iter().map(|&i| i - 1).collect();
        Self {
            var_q: self.var_q,
            sigma: DVector::from_fn(idx.len(), |k, _| self.sigma[idx[k]]),
            rho: DVector::from_fn(idx.len(), |k, _| self.rho[idx[k]]),
            p: DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.p[(idx[a], idx[b])]),
        }
    }
}

/// Outputs of every model on a shared set of input points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotSample {
    pub points: Vec<Vec<f64>>,
    /// `outputs[model][k]` is the output of `model` at `points[k]`.
    pub outputs: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub seed: u64,
    pub ledger: CostLedger,
}

impl PilotSample {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_models(&self) -> usize {
        self.outputs.len()
    }

    pub fn cost(&self) -> f64 {
        self.ledger.total()
    }

    /// Appends the rows of `other`, which must share `beta`.
    pub fn merge(&mut self, other: &PilotSample) -> Result<()> {
        if other.beta != self.beta || other.outputs.len() != self.outputs.len() {
            return Err(Error::Config("cannot merge pilots with different models or hyperparameters".into()));
        }
        self.points.extend(other.points.iter().cloned());
        for (mine, theirs) in self.outputs.iter_mut().zip(&other.outputs) {
            mine.extend_from_slice(theirs);
        }
        self.ledger.merge(&other.ledger);
        Ok(())
    }

    /// Writes the pilot as CSV with `#` metadata lines.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# seed={}", self.seed)?;
        writeln!(out, "# beta={}", serde_json::to_string(&self.beta)?)?;
        writeln!(out, "# ledger={}", serde_json::to_string(&self.ledger)?)?;
        let dim = self.points.first().map_or(0, Vec::len);
        let mut writer = csv::Writer::from_writer(out);
        let header: Vec<String> = (0..dim)
            .map(|k| format!("z{k}"))
            .chain((0..self.outputs.len()).map(|i| format!("q{i}")))
            .collect();
        writer.write_record(&header)?;
        for (k, point) in self.points.iter().enumerate() {
            let row: Vec<String> = point
                .iter()
                .copied()
                .chain(self.outputs.iter().map(|col| col[k]))
                .map(format_float)
                .collect();
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut seed = None;
        let mut beta = None;
        let mut ledger = None;
        let mut body = String::new();
        let mut line = String::new();
        while reader.read_line(&mut line)? > 0 {
            if let Some(meta) = line.strip_prefix("# ") {
                let (key, value) = meta
                    .trim_end()
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("bad metadata line `{}`", line.trim_end())))?;
                match key {
                    "seed" => seed = Some(value.parse::<u64>().map_err(|e| Error::Config(e.to_string()))?),
                    "beta" => beta = Some(serde_json::from_str(value)?),
                    "ledger" => ledger = Some(serde_json::from_str(value)?),
                    _ => {}
                }
            } else {
                body.push_str(&line);
            }
            line.clear();
        }
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let header = rdr.headers()?.clone();
        let dim = header.iter().filter(|h| h.starts_with('z')).count();
        let models = header.len() - dim;
        let mut points = Vec::new();
        let mut outputs = vec![Vec::new(); models];
        for record in rdr.records() {
            let record = record?;
            let values = record
                .iter()
                .map(|v| v.parse::<f64>().map_err(|e| Error::Config(format!("bad number `{v}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            points.push(values[..dim].to_vec());
            for (col, v) in outputs.iter_mut().zip(&values[dim..]) {
                col.push(*v);
            }
        }
        Ok(Self {
            points,
            outputs,
            beta: beta.ok_or_else(|| Error::Missing("pilot csv lacks beta metadata".into()))?,
            seed: seed.ok_or_else(|| Error::Missing("pilot csv lacks seed metadata".into()))?,
            ledger: ledger.ok_or_else(|| Error::Missing("pilot csv lacks ledger metadata".into()))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// Evaluates every model on points `0..n_pilot` of the input stream `seed`.
pub fn draw_pilot(ensemble: &ModelEnsemble, beta: &[Vec<f64>], n_pilot: usize, seed: u64) -> Result<PilotSample> {
    if n_pilot < 2 {
        return Err(Error::Config(format!("pilot needs at least 2 points, got {n_pilot}")));
    }
    if n_pilot < 10 {
        warn!("pilot of {n_pilot} points gives unreliable correlations");
    }
    ensemble.check_beta(beta)?;
    let points = ensemble.input.stream_points(seed, 0, n_pilot);
    let mut ledger = CostLedger::new(ensemble.models.len());
    let mut outputs = Vec::with_capacity(ensemble.models.len());
    for (model, b) in beta.iter().enumerate() {
        outputs.push(ensemble.evaluate(model, b, &points, &mut ledger)?);
    }
    Ok(PilotSample {
        points,
        outputs,
        beta: beta.to_vec(),
        seed,
        ledger,
    })
}

/// Sample covariance of equally long columns, divisor `n - 1`, fixed
/// summation order.
pub fn sample_covariance(columns: &[Vec<f64>]) -> DMatrix<f64> {
    let k = columns.len();
    let n = columns[0].len();
    let means: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let mut cov = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let mut acc = 0.0;
            for t in 0..n {
                acc += (columns[i][t] - means[i]) * (columns[j][t] - means[j]);
            }
            let v = acc / (n as f64 - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Unbiased variance and Pearson correlations from a pilot.
pub fn estimate_stats(pilot: &PilotSample) -> Result<ModelStats> {
    if pilot.len() < 2 {
        return Err(Error::Config(format!("pilot needs at least 2 points, got {}", pilot.len())));
    }
    let cov = sample_covariance(&pilot.outputs);
    for i in 0..cov.nrows() {
        if !(cov[(i, i)] > 0.0) {
            return Err(Error::DegenerateStatistics { model: i });
        }
    }
    let stats = ModelStats::from_covariance(&cov);
    stats.validate()?;
    Ok(stats)
}
