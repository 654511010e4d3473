use acvtune::gp::{expected_improvement, GaussianProcess};
use acvtune::models::benchmark::{make_benchmark_ensemble, BenchmarkConfig};
use acvtune::models::ModelEnsemble;
use acvtune::tuning::{ego_tune, run_pipeline, PipelineConfig, TuningConfig, TuningResult};
use acvtune::{seed, Error};

fn overhead_oracle(ens: &ModelEnsemble, result: &TuningResult, n_pilot: usize) -> f64 {
    let mut total = 0.0;
    for (k, point) in result.dataset.iter().enumerate() {
        if k == result.best {
            continue;
        }
        let beta = ens.unflatten_beta(&point.beta).unwrap();
        for model in ens.tunable_models() {
            total += n_pilot as f64 * ens.cost(model, &beta[model]).unwrap();
        }
    }
    total
}

#[test]
fn overhead_is_the_pilot_cost_of_discarded_points() {
    let ens = make_benchmark_ensemble(&BenchmarkConfig::default()).unwrap();
    let config = TuningConfig {
        n_iter: 8,
        n_pilot: 20,
        budget: 1000.0,
        candidates: 256,
        ..TuningConfig::default()
    };
    for s in 0..3 {
        let result = ego_tune(&ens, &config, seed::derive(s, &[1]), s).unwrap();
        assert_eq!(result.dataset.len(), 8);
        let oracle = overhead_oracle(&ens, &result, 20);
        assert!((result.overhead - oracle).abs() <= 1e-9 * oracle.max(1.0), "{} vs {oracle}", result.overhead);
        let j_min = result.dataset.iter().map(|p| p.j).fold(f64::INFINITY, f64::min);
        assert_eq!(result.j_star, j_min);
        assert_eq!(ens.flatten_beta(&result.beta_star), result.dataset[result.best].beta);
        for (lo, hi) in ens.beta_bounds().iter().zip(&result.dataset[result.best].beta) {
            assert!(*hi >= lo.0 && *hi <= lo.1);
        }
    }
}

#[test]
fn tuning_is_deterministic() {
    let ens = make_benchmark_ensemble(&BenchmarkConfig::one_dimensional()).unwrap();
    let config = TuningConfig {
        n_iter: 5,
        n_pilot: 15,
        candidates: 128,
        ..TuningConfig::default()
    };
    let a = ego_tune(&ens, &config, 3, 4).unwrap();
    let b = ego_tune(&ens, &config, 3, 4).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tuning_that_cannot_fit_the_budget_is_rejected() {
    let ens = make_benchmark_ensemble(&BenchmarkConfig::default()).unwrap();
    let config = TuningConfig {
        n_iter: 10,
        n_pilot: 50,
        budget: 40.0,
        ..TuningConfig::default()
    };
    assert!(matches!(ego_tune(&ens, &config, 1, 1), Err(Error::Infeasible(_))));
    let too_few = TuningConfig { n_iter: 1, ..TuningConfig::default() };
    assert!(matches!(ego_tune(&ens, &too_few, 1, 1), Err(Error::Config(_))));
}

#[test]
fn pipeline_spends_no_more_than_the_budget() {
    let ens = make_benchmark_ensemble(&BenchmarkConfig::default()).unwrap();
    let config = PipelineConfig {
        tuning: TuningConfig {
            n_iter: 6,
            n_pilot: 20,
            budget: 800.0,
            candidates: 256,
            ..TuningConfig::default()
        },
        ..PipelineConfig::default()
    };
    let result = run_pipeline(&ens, &config, 11).unwrap();
    let cost = result.report.cost;
    assert!(cost.total() <= 800.0 * (1.0 + 1e-12));
    let overhead = result.tuning.as_ref().unwrap().overhead;
    assert_eq!(cost.tuning_overhead, overhead);
    assert!((result.ledger.total() - cost.pilot - cost.allocation).abs() < 1e-9 * result.ledger.total());
    assert!(result.report.qtilde.is_finite());
}

#[test]
fn fixed_pipeline_needs_hyperparameters() {
    let ens = make_benchmark_ensemble(&BenchmarkConfig::default()).unwrap();
    let config = PipelineConfig {
        tune: false,
        ..PipelineConfig::default()
    };
    assert!(matches!(run_pipeline(&ens, &config, 1), Err(Error::Config(_))));
    let hand = PipelineConfig {
        tune: false,
        beta: Some(BenchmarkConfig::default().hand_beta()),
        ..PipelineConfig::default()
    };
    let result = run_pipeline(&ens, &hand, 1).unwrap();
    assert_eq!(result.report.cost.tuning_overhead, 0.0);
    assert!(result.report.cost.total() <= 1000.0 * (1.0 + 1e-12));
}

#[test]
fn gp_interpolates_noise_free_data() {
    let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0]).collect();
    let y: Vec<f64> = x.iter().map(|p| (4.0 * p[0]).sin()).collect();
    let mut rng = seed::rng(2);
    let gp = GaussianProcess::fit(&x, &y, 4, Some(1e-10), &mut rng).unwrap();
    for (p, v) in x.iter().zip(&y) {
        let (mean, std) = gp.predict(p);
        assert!((mean - v).abs() < 1e-4, "{mean} vs {v}");
        assert!(std < 1e-2);
    }
    let (_, far) = gp.predict(&[0.5 / 7.0]);
    assert!(far > gp.predict(&x[0]).1);
}

#[test]
fn expected_improvement_limits() {
    assert_eq!(expected_improvement(1.0, 0.0, 2.0), 1.0);
    assert_eq!(expected_improvement(3.0, 0.0, 2.0), 0.0);
    // At mean == best the improvement is std / sqrt(2π).
    let ei = expected_improvement(2.0, 0.5, 2.0);
    assert!((ei - 0.5 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    assert!(expected_improvement(1.0, 1.0, 2.0) > expected_improvement(1.5, 1.0, 2.0));
    assert!(expected_improvement(2.0, 2.0, 2.0) > expected_improvement(2.0, 1.0, 2.0));
}
