use acvtune::models::analytic::AnalyticEnsemble;
use acvtune::stats::{draw_pilot, estimate_stats, PilotSample};

#[test]
fn pilot_csv_round_trip_is_exact() {
    let ens = AnalyticEnsemble::default().ensemble().unwrap();
    let pilot = draw_pilot(&ens, &vec![vec![]; 4], 25, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pilot.csv");
    pilot.save(&path).unwrap();
    let back = PilotSample::load(&path).unwrap();
    assert_eq!(back, pilot);
}

#[test]
fn pilot_statistics_converge_to_the_analytic_covariance() {
    let analytic = AnalyticEnsemble::default();
    let ens = analytic.ensemble().unwrap();
    let pilot = draw_pilot(&ens, &vec![vec![]; 4], 40_000, 12).unwrap();
    let stats = estimate_stats(&pilot).unwrap();
    let exact = analytic.stats();
    assert!((stats.var_q - exact.var_q).abs() / exact.var_q < 0.05);
    for i in 0..3 {
        assert!((stats.rho[i] - exact.rho[i]).abs() < 0.01, "rho[{i}]");
        assert!((stats.sigma[i] - exact.sigma[i]).abs() / exact.sigma[i] < 0.03, "sigma[{i}]");
        for j in 0..3 {
            assert!((stats.p[(i, j)] - exact.p[(i, j)]).abs() < 0.01);
        }
    }
}

#[test]
fn merging_pilots_concatenates_rows() {
    let ens = AnalyticEnsemble::default().ensemble().unwrap();
    let beta = vec![vec![]; 4];
    let mut a = draw_pilot(&ens, &beta, 10, 1).unwrap();
    let b = draw_pilot(&ens, &beta, 5, 2).unwrap();
    a.merge(&b).unwrap();
    assert_eq!(a.len(), 15);
    assert_eq!(a.ledger.evaluations, vec![15; 4]);
    assert_eq!(&a.outputs[2][10..], &b.outputs[2][..]);
}

#[test]
fn constant_column_is_degenerate() {
    let ens = AnalyticEnsemble::default().ensemble().unwrap();
    let mut pilot = draw_pilot(&ens, &vec![vec![]; 4], 10, 1).unwrap();
    pilot.outputs[2] = vec![1.0; 10];
    assert!(matches!(
        estimate_stats(&pilot),
        Err(acvtune::Error::DegenerateStatistics { model: 2 })
    ));
}
