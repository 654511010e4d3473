mod common;

use acvtune::acv::{
    assemble_estimator, predicted_variance, set_means, variance_with_weights, CostBreakdown, WeightRule,
};
use acvtune::models::analytic::AnalyticEnsemble;
use acvtune::sampleset::{AllocationProfile, Scheme};
use acvtune::seed;
use common::{mean_and_variance, replicate_outputs};

fn replicates(ens: &AnalyticEnsemble, profile: &AllocationProfile, rule: WeightRule, reps: usize, s: u64) -> Vec<f64> {
    let stats = ens.stats();
    let mut rng = seed::rng(s);
    (0..reps)
        .map(|_| {
            let outputs = replicate_outputs(ens, profile, &mut rng);
            assemble_estimator(&outputs, &stats, profile, &[], rule, CostBreakdown::default())
                .unwrap()
                .qtilde
        })
        .collect()
}

#[test]
fn replicate_variance_matches_prediction() {
    let ens = AnalyticEnsemble::default();
    let stats = ens.stats();
    for (scheme, n, counts) in [
        (Scheme::AcvMf, 8, vec![16, 24, 40]),
        (Scheme::Mfmc, 8, vec![12, 20, 32]),
        (Scheme::AcvIs, 8, vec![14, 20, 30]),
        (Scheme::Mlmc, 8, vec![14, 12, 20]),
    ] {
        let profile = AllocationProfile::build(scheme.clone(), n, counts).unwrap();
        let predicted = predicted_variance(&stats, &profile.matrices(), n as f64).unwrap().variance;
        let (_, var) = mean_and_variance(&replicates(&ens, &profile, WeightRule::Optimal, 20_000, 5));
        let rel = (var - predicted).abs() / predicted;
        assert!(rel < 0.05, "{scheme:?}: replicate {var:.5e} vs predicted {predicted:.5e}");
    }
}

#[test]
fn classical_weights_variance_matches_general_formula() {
    let ens = AnalyticEnsemble::default();
    let stats = ens.stats();
    let profile = AllocationProfile::build(Scheme::Mlmc, 10, vec![20, 15, 25]).unwrap();
    let predicted = variance_with_weights(&stats, &profile.matrices(), 10.0, &[-1.0; 3]);
    let (_, var) = mean_and_variance(&replicates(&ens, &profile, WeightRule::ClassicalMlmc, 20_000, 6));
    assert!((var - predicted).abs() / predicted < 0.05, "{var} vs {predicted}");
}

#[test]
fn assembled_estimate_matches_explicit_set_means() {
    let ens = AnalyticEnsemble::default();
    let profile = AllocationProfile::build(Scheme::AcvIs, 4, vec![7, 9, 6]).unwrap();
    let mut rng = seed::rng(9);
    let outputs = replicate_outputs(&ens, &profile, &mut rng);
    let alpha = [-0.3, 0.7, -1.1];
    // Flatten the groups into one indexed sample and average over the
    // oracle sets directly.
    let mut columns = vec![Vec::new(); 4];
    let mut ids = vec![Vec::new(); 4];
    let mut next = 0;
    for (g, values) in profile.groups.iter().zip(&outputs.values) {
        for k in 0..4 {
            if g.evaluates(k) {
                columns[k].extend(values[k].iter().copied());
                ids[k].extend(next..next + g.size);
            }
        }
        next += g.size;
    }
    let sets = common::index_sets(&Scheme::AcvIs, 4, &[7, 9, 6]).unwrap();
    let lookup = |k: usize, set: &std::collections::BTreeSet<usize>| {
        let vals: Vec<f64> = ids[k]
            .iter()
            .zip(&columns[k])
            .filter(|(i, _)| set.contains(i))
            .map(|(_, v)| *v)
            .collect();
        assert_eq!(vals.len(), set.len());
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let mut direct = lookup(0, &sets.z);
    for i in 1..=3 {
        direct += alpha[i - 1] * (lookup(i, &sets.first[i - 1]) - lookup(i, &sets.second[i - 1]));
    }
    let means = set_means(&profile, &outputs).unwrap();
    assert!((means.estimate(&alpha) - direct).abs() < 1e-12);
}

#[test]
fn single_model_acv_mf_closed_form() {
    let ens = AnalyticEnsemble::truncated(1);
    let stats = ens.stats();
    let rho = stats.rho[0];
    for (n, r) in [(5usize, 2usize), (10, 7), (3, 40)] {
        let profile = AllocationProfile::build(Scheme::AcvMf, n, vec![n * r]).unwrap();
        let v = predicted_variance(&stats, &profile.matrices(), n as f64).unwrap().variance;
        let r = r as f64;
        let expected = stats.var_q / n as f64 * (1.0 - rho * rho * (r - 1.0) / r);
        assert!((v - expected).abs() < 1e-12 * expected);
    }
}

#[test]
fn estimator_is_unbiased_with_optimal_weights() {
    let ens = AnalyticEnsemble::default();
    let profile = AllocationProfile::build(Scheme::Mfmc, 6, vec![10, 18, 30]).unwrap();
    let values = replicates(&ens, &profile, WeightRule::Optimal, 10_000, 13);
    let (mean, var) = mean_and_variance(&values);
    let stderr = (var / values.len() as f64).sqrt();
    assert!((mean - ens.mean()).abs() < 4.0 * stderr, "{mean} vs {}", ens.mean());
}

#[test]
fn mismatched_outputs_are_rejected() {
    let ens = AnalyticEnsemble::default();
    let profile = AllocationProfile::build(Scheme::AcvMf, 4, vec![8, 8, 8]).unwrap();
    let mut rng = seed::rng(1);
    let mut outputs = replicate_outputs(&ens, &profile, &mut rng);
    outputs.values[0][1].pop();
    assert!(set_means(&profile, &outputs).is_err());
}
