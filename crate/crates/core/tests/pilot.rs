use acvtune::allocation::{AllocationOptions, Strategy};
use acvtune::models::analytic::AnalyticEnsemble;
use acvtune::models::ModelEnsemble;
use acvtune::pilot::{online_from, run_offline, run_online, run_projection};
use acvtune::sampleset::Scheme;
use acvtune::stats::draw_pilot;
use acvtune::Error;

fn setup() -> (ModelEnsemble, Vec<Vec<f64>>, Strategy, AllocationOptions) {
    let ens = AnalyticEnsemble::default().ensemble().unwrap();
    (ens, vec![vec![]; 4], Strategy::Scheme(Scheme::AcvMf), AllocationOptions::default())
}

#[test]
fn projection_respects_the_pilot_lower_bound() {
    let (ens, beta, strategy, options) = setup();
    let run = run_projection(&ens, &beta, 1000.0, &strategy, 50, 3, &options).unwrap();
    let sol = &run.solution;
    assert!(sol.n >= 50);
    if !sol.mc_fallback {
        assert!(sol.n_lf.iter().all(|&c| c >= 50));
    }
    assert!(run.pilot.ledger.evaluations.iter().all(|&e| e == 50));
}

#[test]
fn projection_rejects_a_pilot_over_budget() {
    let (ens, beta, strategy, options) = setup();
    let err = run_projection(&ens, &beta, 50.0, &strategy, 50, 3, &options);
    assert!(matches!(err, Err(Error::Infeasible(_))));
}

#[test]
fn offline_runs_are_reproducible() {
    let (ens, beta, strategy, options) = setup();
    let a = run_offline(&ens, &beta, 500.0, &strategy, 2000, 8, &options).unwrap();
    let b = run_offline(&ens, &beta, 500.0, &strategy, 2000, 8, &options).unwrap();
    assert_eq!(a, b);
}

#[test]
fn online_rounds_charge_exactly_the_added_points() {
    let (ens, beta, strategy, options) = setup();
    let per_point = 1.0 + [0.1, 0.05, 0.01].iter().sum::<f64>();
    for gamma in [0.5, 1.0] {
        for seed in 0..10 {
            let run = run_online(&ens, &beta, 2000.0, &strategy, 10, gamma, 20, seed, &options).unwrap();
            assert!(run.trace.len() <= 20);
            assert!(run.pilot.cost() <= 2000.0 + 1e-9);
            let mut previous = 10.0 * per_point;
            for row in &run.trace {
                let expected = previous + row.added as f64 * per_point;
                assert!((row.cumulative_cost - expected).abs() < 1e-9 * expected);
                if row.delta_n > 0 && !run.exhausted {
                    let wanted = (gamma * row.delta_n as f64).ceil() as usize;
                    assert!(row.added == wanted || row == run.trace.last().unwrap());
                }
                previous = row.cumulative_cost;
            }
            if run.terminated {
                assert!(run.trace.last().unwrap().delta_n <= 0);
            }
        }
    }
}

#[test]
fn online_and_projection_share_the_initial_pilot() {
    let (ens, beta, strategy, options) = setup();
    let projection = run_projection(&ens, &beta, 2000.0, &strategy, 10, 4, &options).unwrap();
    let online = run_online(&ens, &beta, 2000.0, &strategy, 10, 0.5, 20, 4, &options).unwrap();
    for (a, b) in projection.pilot.outputs.iter().zip(&online.pilot.outputs) {
        assert_eq!(&a[..], &b[..10]);
    }
}

#[test]
fn optimal_pilot_terminates_immediately() {
    let (ens, beta, strategy, options) = setup();
    let pilot = draw_pilot(&ens, &beta, 600, 2).unwrap();
    let cost = pilot.cost();
    let run = online_from(&ens, pilot, 1000.0, &strategy, 0.5, 20, &options).unwrap();
    assert_eq!(run.trace.len(), 1);
    assert!(run.terminated);
    assert_eq!(run.trace[0].added, 0);
    assert_eq!(run.pilot.cost(), cost);
}

#[test]
fn online_budget_exhaustion_is_flagged() {
    let (ens, beta, strategy, options) = setup();
    let run = run_online(&ens, &beta, 40.0, &strategy, 20, 1.0, 20, 1, &options).unwrap();
    assert!(run.pilot.cost() <= 40.0 + 1e-9);
    assert!(run.terminated || run.exhausted || run.solution.mc_fallback);
}

#[test]
fn invalid_online_settings_are_rejected() {
    let (ens, beta, strategy, options) = setup();
    assert!(run_online(&ens, &beta, 100.0, &strategy, 10, 0.0, 20, 1, &options).is_err());
    assert!(run_online(&ens, &beta, 100.0, &strategy, 10, 0.5, 0, 1, &options).is_err());
    assert!(run_online(&ens, &beta, 100.0, &strategy, 1, 0.5, 20, 1, &options).is_err());
}
