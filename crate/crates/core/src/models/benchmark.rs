//! Synthetic descent-trajectory ensemble with tunable time steps.
//!
//! Models, in ensemble order:
//!
//! 0. `high-fidelity`: full atmosphere, step `dt_hf`.
//! 1. `reduced-physics`: constant-density atmosphere, tunable step.
//! 2. `coarse-step`: full atmosphere, tunable step.
//! 3. `surrogate`: frozen quadratic fit of the high-fidelity output in the
//!    first four inputs, cost 1e-5.
//!
//! The `trajectory-1d` variant fixes the reduced-physics step at `dt_hf`
//! and leaves only the coarse step tunable.
//!
//! Step costs follow `w(dt) = a + b (dt_hf / dt)^p`, which gives speedups of
//! 78.125X at `100 dt_hf` and 159X at `250 dt_hf` for the coarse-step model
//! and 5X to 351X for the reduced-physics model over the same steps. The
//! tunable range stops at [`STABLE_DT`]: beyond roughly `1.5` seconds the
//! post-deployment drag makes RK4 diverge for parts of the input box.

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::surrogate::QuadraticSurrogate;
use super::trajectory::{simulate, Atmosphere, TrajectoryInput, TrajectoryOutcome, TrajectoryParams};
use super::{CostLaw, Distribution, Hyperparameter, InputSpec, ModelEnsemble, ModelSpec};
use crate::error::{Error, Result};

/// Step of the high-fidelity model in seconds.
pub const DT_HF: f64 = 0.01;

/// Largest step for which every point of the default input box integrates
/// to a finite outcome.
pub const STABLE_DT: f64 = 1.25;

/// Exponent of the step-cost law.
pub const COST_EXPONENT: f64 = 0.9790445426778012;
const COARSE_OFFSET: f64 = 0.001806764360726243;
const COARSE_SCALE: f64 = 0.9981932356392738;
const REDUCED_OFFSET: f64 = 0.0019596715876555038;
const REDUCED_SCALE: f64 = 0.1980403284123445;

/// Cost of the surrogate in high-fidelity units.
pub const SURROGATE_COST: f64 = 1e-5;

/// Sample size behind the stored reference means.
pub const REFERENCE_SAMPLES: usize = 4_000_000;

/// Scalar output selected from a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Qoi {
    TimeOfFlight,
    LandingRange,
    SpeedAtReference,
}

impl Qoi {
    pub const ALL: [Qoi; 3] = [Qoi::TimeOfFlight, Qoi::LandingRange, Qoi::SpeedAtReference];

    pub fn select(&self, out: &TrajectoryOutcome) -> f64 {
        match self {
            Qoi::TimeOfFlight => out.time_of_flight,
            Qoi::LandingRange => out.landing_range,
            Qoi::SpeedAtReference => out.speed_at_reference,
        }
    }

    /// Brute-force mean of the high-fidelity output under
    /// [`default_inputs`], from [`REFERENCE_SAMPLES`] samples.
    pub fn reference_mean(&self) -> f64 {
        match self {
            Qoi::TimeOfFlight => 7.9768485221870185,
            Qoi::LandingRange => 224.6329937173881,
            Qoi::SpeedAtReference => 40.214480012736395,
        }
    }

    /// Standard error of [`Qoi::reference_mean`].
    pub fn reference_stderr(&self) -> f64 {
        match self {
            Qoi::TimeOfFlight => 0.0004921653527793805,
            Qoi::LandingRange => 0.023112079751341753,
            Qoi::SpeedAtReference => 0.0055300667288472405,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Qoi::TimeOfFlight => "time-of-flight",
            Qoi::LandingRange => "landing-range",
            Qoi::SpeedAtReference => "speed-at-reference",
        }
    }
}

impl FromStr for Qoi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Qoi::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown qoi `{s}`")))
    }
}

/// Shipped benchmark variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkName {
    /// Both time steps tunable.
    Trajectory,
    /// Only the coarse step tunable.
    #[serde(rename = "trajectory-1d")]
    Trajectory1d,
}

impl FromStr for BenchmarkName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trajectory" => Ok(BenchmarkName::Trajectory),
            "trajectory-1d" => Ok(BenchmarkName::Trajectory1d),
            other => Err(Error::Config(format!("unknown benchmark `{other}`"))),
        }
    }
}

/// Declarative benchmark configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub name: BenchmarkName,
    pub qoi: Qoi,
    /// High-fidelity step, seconds.
    pub dt_hf: f64,
    /// Bounds on the tunable steps, seconds; the upper bound may not
    /// exceed [`STABLE_DT`].
    pub dt_bounds: [f64; 2],
    /// Hand-selected `[reduced-physics, coarse-step]` steps.
    pub hand_dt: [f64; 2],
    /// Marginals of speed (m/s), path angle (deg), drag coefficient,
    /// surface density (kg/m^3) and density-wave phase (rad).
    pub inputs: Vec<Distribution>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            name: BenchmarkName::Trajectory,
            qoi: Qoi::TimeOfFlight,
            dt_hf: DT_HF,
            dt_bounds: [DT_HF, STABLE_DT],
            hand_dt: [DT_HF, 100.0 * DT_HF],
            inputs: default_inputs(),
        }
    }
}

pub fn default_inputs() -> Vec<Distribution> {
    vec![
        Distribution::Uniform { low: 60.0, high: 100.0 },
        Distribution::Uniform { low: 20.0, high: 50.0 },
        Distribution::Uniform { low: 0.8, high: 1.2 },
        Distribution::Uniform { low: 1.0, high: 1.4 },
        Distribution::Uniform {
            low: 0.0,
            high: std::f64::consts::TAU,
        },
    ]
}

impl BenchmarkConfig {
    pub fn one_dimensional() -> Self {
        Self {
            name: BenchmarkName::Trajectory1d,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.dt_bounds;
        if !(self.dt_hf > 0.0) {
            return Err(Error::Config(format!("dt_hf must be positive, got {}", self.dt_hf)));
        }
        if !(lo >= self.dt_hf && lo < hi) {
            return Err(Error::Config(format!(
                "dt_bounds must satisfy dt_hf <= lower < upper, got [{lo}, {hi}]"
            )));
        }
        if hi > STABLE_DT {
            return Err(Error::Config(format!(
                "dt_bounds upper {hi} exceeds the RK4 stability bound {STABLE_DT}"
            )));
        }
        for dt in self.hand_dt {
            if !(dt >= lo && dt <= hi) {
                return Err(Error::Config(format!("hand-selected step {dt} outside dt_bounds")));
            }
        }
        if self.inputs.len() != super::trajectory::INPUT_DIM {
            return Err(Error::Config(format!(
                "the trajectory takes {} inputs, got {}",
                super::trajectory::INPUT_DIM,
                self.inputs.len()
            )));
        }
        InputSpec::new(self.inputs.clone()).map(|_| ())
    }

    /// Hand-selected hyperparameters, one vector per model.
    pub fn hand_beta(&self) -> Vec<Vec<f64>> {
        match self.name {
            BenchmarkName::Trajectory => vec![vec![], vec![self.hand_dt[0]], vec![self.hand_dt[1]], vec![]],
            BenchmarkName::Trajectory1d => vec![vec![], vec![], vec![self.hand_dt[1]], vec![]],
        }
    }
}

/// Cost law of the reduced-physics model.
pub fn reduced_physics_cost(dt_hf: f64) -> CostLaw {
    CostLaw::StepPower {
        offset: REDUCED_OFFSET,
        scale: REDUCED_SCALE,
        reference: dt_hf,
        exponent: COST_EXPONENT,
    }
}

/// Cost law of the coarse-step model.
pub fn coarse_step_cost(dt_hf: f64) -> CostLaw {
    CostLaw::StepPower {
        offset: COARSE_OFFSET,
        scale: COARSE_SCALE,
        reference: dt_hf,
        exponent: COST_EXPONENT,
    }
}

fn trajectory_model(qoi: Qoi, atmosphere: Atmosphere, fixed_dt: Option<f64>) -> Arc<dyn super::Model> {
    let params = TrajectoryParams::default();
    Arc::new(move |z: &[f64], beta: &[f64]| {
        let dt = fixed_dt.unwrap_or_else(|| beta[0]);
        qoi.select(&simulate(&params, &TrajectoryInput::from_slice(z), atmosphere, dt))
    })
}

/// Builds the four-model ensemble described in the module docs.
pub fn make_benchmark_ensemble(config: &BenchmarkConfig) -> Result<ModelEnsemble> {
    config.validate()?;
    let dt_param = |name: &str| Hyperparameter {
        name: name.to_string(),
        lower: config.dt_bounds[0],
        upper: config.dt_bounds[1],
    };
    let high = ModelSpec::fixed(
        "high-fidelity",
        1.0,
        trajectory_model(config.qoi, Atmosphere::Full, Some(config.dt_hf)),
    );
    let reduced = match config.name {
        BenchmarkName::Trajectory => ModelSpec {
            name: "reduced-physics".into(),
            hyperparameters: vec![dt_param("dt_reduced_physics")],
            cost: reduced_physics_cost(config.dt_hf),
            model: trajectory_model(config.qoi, Atmosphere::ConstantDensity, None),
        },
        BenchmarkName::Trajectory1d => ModelSpec::fixed(
            "reduced-physics",
            reduced_physics_cost(config.dt_hf).cost(&[config.dt_hf]),
            trajectory_model(config.qoi, Atmosphere::ConstantDensity, Some(config.dt_hf)),
        ),
    };
    let coarse = ModelSpec {
        name: "coarse-step".into(),
        hyperparameters: vec![dt_param("dt_coarse_step")],
        cost: coarse_step_cost(config.dt_hf),
        model: trajectory_model(config.qoi, Atmosphere::Full, None),
    };
    let surrogate = frozen_surrogate(config.qoi);
    let surrogate = ModelSpec::fixed(
        "surrogate",
        SURROGATE_COST,
        Arc::new(move |z: &[f64], _: &[f64]| surrogate.evaluate(z)),
    );
    ModelEnsemble::new(InputSpec::new(config.inputs.clone())?, vec![high, reduced, coarse, surrogate])
}

/// Center and half width of the four surrogate features in the default box.
fn surrogate_box() -> (Vec<f64>, Vec<f64>) {
    let mut center = Vec::new();
    let mut half = Vec::new();
    for d in default_inputs().iter().take(4) {
        if let Distribution::Uniform { low, high } = *d {
            center.push(0.5 * (low + high));
            half.push(0.5 * (high - low));
        }
    }
    (center, half)
}

/// Number of high-fidelity runs behind the frozen surrogate.
pub const SURROGATE_TRAINING_POINTS: usize = 500;

/// Seed of the Latin hypercube behind the frozen surrogate.
pub const SURROGATE_TRAINING_SEED: u64 = 20_240_501;

/// Refits the surrogate from high-fidelity runs on the training design.
pub fn fit_surrogate(qoi: Qoi) -> Result<QuadraticSurrogate> {
    let input = InputSpec::new(default_inputs())?;
    let mut rng = crate::seed::rng(SURROGATE_TRAINING_SEED);
    let points = input.latin_hypercube(SURROGATE_TRAINING_POINTS, &mut rng);
    let params = TrajectoryParams::default();
    let values: Vec<f64> = points
        .iter()
        .map(|z| qoi.select(&simulate(&params, &TrajectoryInput::from_slice(z), Atmosphere::Full, DT_HF)))
        .collect();
    let (center, half) = surrogate_box();
    QuadraticSurrogate::fit(center, half, &points, &values)
}

/// Surrogate with coefficients frozen from [`fit_surrogate`].
pub fn frozen_surrogate(qoi: Qoi) -> QuadraticSurrogate {
    let (center, half_width) = surrogate_box();
    let coefficients = match qoi {
        Qoi::TimeOfFlight => TIME_OF_FLIGHT_COEFFICIENTS,
        Qoi::LandingRange => LANDING_RANGE_COEFFICIENTS,
        Qoi::SpeedAtReference => SPEED_AT_REFERENCE_COEFFICIENTS,
    };
    QuadraticSurrogate {
        center,
        half_width,
        coefficients: coefficients.to_vec(),
    }
}

const TIME_OF_FLIGHT_COEFFICIENTS: [f64; 15] = [
    7.896894042527109,
    -0.4179006676754493,
    -1.1539501188591892,
    0.5958777482951769,
    0.46199629553527066,
    0.07205510904949897,
    -0.2162344649858305,
    -0.014981497245024067,
    0.005077311858568134,
    0.23544420644014652,
    -0.001265829915630845,
    -0.02134738361290861,
    -0.050078363160044326,
    0.0569389666379983,
    -0.03098658242458807,
];
const LANDING_RANGE_COEFFICIENTS: [f64; 15] = [
    224.85236768197836,
    28.628120917932232,
    -69.87977816142985,
    -11.333954868501028,
    -8.832076675115218,
    -4.725162502233566,
    -12.989417359416734,
    -1.6907502688217484,
    -1.758103994033597,
    2.536598960627657,
    4.98702723285343,
    4.862194815441036,
    1.3747547853242708,
    -0.36534926226392095,
    -0.1280975113202274,
];
const SPEED_AT_REFERENCE_COEFFICIENTS: [f64; 15] = [
    38.67033167618141,
    3.3309306854349847,
    2.878106827259924,
    -6.080563035729094,
    -5.088632211268947,
    1.1904975323820448,
    1.1051345873232148,
    -1.2615326446118211,
    0.8710558679430829,
    1.1822457164621678,
    -0.6832865088357589,
    1.528894565569789,
    -0.05715341072073432,
    0.03230759072916478,
    2.5886988824158426,
];
