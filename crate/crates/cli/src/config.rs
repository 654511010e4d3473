use std::path::Path;

use acvtune::allocation::Strategy;
use acvtune::bench::SolutionType;
use acvtune::models::benchmark::{default_inputs, BenchmarkConfig, BenchmarkName, Qoi, DT_HF};
use acvtune::tuning::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Trial counts and sweep axes for `baseline`, `grid` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_trials: usize,
    pub budgets: Vec<f64>,
    pub n_pilots: Vec<usize>,
    pub n_iters: Vec<usize>,
    pub solutions: Vec<SolutionType>,
    /// Grid nodes per tunable hyperparameter.
    pub grid_points: usize,
    /// Offline sample size of the oracle grid and the Best Case statistics.
    pub n_ref: usize,
    /// Reference mean for error metrics; the stored value of the default
    /// benchmark is used when unset.
    pub q_ref: Option<f64>,
    /// Flattened oracle hyperparameters; the grid minimum is used when unset.
    pub oracle_beta: Option<Vec<f64>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_trials: 100,
            budgets: vec![500.0, 1000.0, 2000.0],
            n_pilots: vec![10, 50, 100],
            n_iters: vec![5, 10, 20],
            solutions: SolutionType::ALL.to_vec(),
            grid_points: 25,
            n_ref: 10_000,
            q_ref: None,
            oracle_beta: None,
        }
    }
}

/// Fully resolved run configuration; persisted in every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub benchmark: BenchmarkConfig,
    pub pipeline: PipelineConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            benchmark: BenchmarkConfig::default(),
            pipeline: PipelineConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

/// Command-line values that replace configuration entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub budget: Option<f64>,
    pub n_pilot: Option<usize>,
    pub n_iter: Option<usize>,
    pub scheme: Option<String>,
    pub qoi: Option<String>,
    pub benchmark: Option<String>,
    pub trials: Option<usize>,
    pub solutions: Vec<String>,
}

/// Written next to every result set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl RunConfig {
    /// Reads a TOML configuration, or the configuration recorded in a JSON
    /// manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: Manifest = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("bad manifest {}: {e}", path.display())))?;
            Ok(manifest.config)
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(budget) = o.budget {
            self.pipeline.tuning.budget = budget;
            self.experiment.budgets = vec![budget];
        }
        if let Some(n) = o.n_pilot {
            self.pipeline.tuning.n_pilot = n;
            self.experiment.n_pilots = vec![n];
        }
        if let Some(n) = o.n_iter {
            self.pipeline.tuning.n_iter = n;
            self.experiment.n_iters = vec![n];
        }
        if let Some(s) = &o.scheme {
            self.pipeline.tuning.strategy = s.parse::<Strategy>()?;
        }
        if let Some(q) = &o.qoi {
            self.benchmark.qoi = q.parse::<Qoi>()?;
        }
        if let Some(b) = &o.benchmark {
            self.benchmark.name = b.parse::<BenchmarkName>()?;
        }
        if let Some(n) = o.trials {
            self.experiment.n_trials = n;
        }
        if !o.solutions.is_empty() {
            self.experiment.solutions = o
                .solutions
                .iter()
                .map(|s| s.parse::<SolutionType>())
                .collect::<Result<_, _>>()?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.benchmark.validate()?;
        let e = &self.experiment;
        if e.n_trials == 0 || e.grid_points == 0 || e.n_ref < 2 {
            return Err(CliError::Config(
                "n_trials and grid_points must be positive and n_ref at least 2".into(),
            ));
        }
        if e.budgets.is_empty() || e.n_pilots.is_empty() || e.n_iters.is_empty() || e.solutions.is_empty() {
            return Err(CliError::Config("sweep lists must be nonempty".into()));
        }
        Ok(())
    }

    /// Reference mean used for error metrics.
    pub fn q_ref(&self) -> Result<f64, CliError> {
        if let Some(q) = self.experiment.q_ref {
            return Ok(q);
        }
        if self.benchmark.inputs == default_inputs() && self.benchmark.dt_hf == DT_HF {
            Ok(self.benchmark.qoi.reference_mean())
        } else {
            Err(CliError::Config(
                "no stored reference for a modified benchmark; set experiment.q_ref".into(),
            ))
        }
    }
}
