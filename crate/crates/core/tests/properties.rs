//! Cross-module properties checked against independent computations.

use fairldp_core::classify::{evaluate, train_logistic, Calibration, EvalOptions, TrainParams};
use fairldp_core::mechanisms::perturb_dataset;
use fairldp_core::synth::{planted, PlantedConfig};
use fairldp_core::{
    delta, delta_prime, equivalence_bounds, estimate_distribution, grr_matrix, induced_distribution,
    matrix_of_binary, opt_binary, JointDistribution, Mechanism,
};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn distribution() -> impl Strategy<Value = JointDistribution> {
    (2usize..9).prop_flat_map(|k| {
        (prop::collection::vec(0.01f64..1.0, k), prop::collection::vec(0.0f64..=1.0, k)).prop_map(|(w, r)| {
            let s: f64 = w.iter().sum();
            JointDistribution::new(w.iter().map(|x| x / s).collect(), r).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn grr_never_widens_rate_gaps(d in distribution(), eps in 0.01f64..8.0) {
        let q = grr_matrix(d.k(), eps).unwrap();
        let z = induced_distribution(&d, &q).unwrap();
        prop_assert!(delta_prime(&z) <= delta_prime(&d) + 1e-12);
    }

    #[test]
    fn unfairness_measures_sandwich(d in distribution()) {
        prop_assume!(d.pos_marginal() > 0.0);
        let (c1, c2) = equivalence_bounds(&d).unwrap();
        let (a, b) = (delta(&d).unwrap(), delta_prime(&d));
        prop_assert!(a <= c1 * b + 1e-12);
        prop_assert!(b <= c2 * a + 1e-12);
    }
}

#[test]
fn perturbed_data_matches_predicted_gap() {
    // 2·10^5 records; each induced rate has sd below 2e-3
    let cfg = PlantedConfig { records: 200_000, noise_features: 0, ..PlantedConfig::default() };
    let data = planted(&cfg, 21).unwrap();
    let empirical = estimate_distribution(&data).unwrap();
    let design = opt_binary(&empirical, 1.0).unwrap();
    let q = matrix_of_binary(&design.mechanism());
    let predicted = delta_prime(&induced_distribution(&empirical, &q).unwrap());
    let out = perturb_dataset(&data, &Mechanism::Matrix(q), 5).unwrap();
    let observed = delta_prime(&estimate_distribution(&out).unwrap());
    assert!((observed - predicted).abs() < 0.012, "{observed} vs {predicted}");
    assert!(observed < delta_prime(&empirical));
}

/// Accuracy of the per-group threshold rule on the informative feature,
/// integrated in closed form.
fn bayes_accuracy(cfg: &PlantedConfig) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    let cuts = cfg.bayes_cuts();
    (0..cfg.group_probs.len())
        .map(|a| {
            let (r, t) = (cfg.pos_rates[a], cuts[a]);
            cfg.group_probs[a] * (r * (1.0 - n.cdf(t - cfg.signal)) + (1.0 - r) * n.cdf(t))
        })
        .sum()
}

#[test]
fn logistic_reaches_bayes_rate() {
    let cfg = PlantedConfig { records: 40_000, ..PlantedConfig::default() };
    let bayes = bayes_accuracy(&cfg);
    assert!((bayes - 0.776).abs() < 5e-3, "{bayes}");
    let data = planted(&cfg, 2).unwrap();
    let train = data.select(&(0..20_000).collect::<Vec<_>>());
    let test = data.select(&(20_000..40_000).collect::<Vec<_>>());
    let model = train_logistic(&train, &TrainParams::default(), Calibration::default()).unwrap();
    let acc = evaluate(&model, &test, EvalOptions::default()).unwrap().accuracy;
    assert!((acc - bayes).abs() < 0.02, "{acc} vs {bayes}");
}
