//! End-to-end behavior of the two-stage effect-interval pipeline on small
//! simulated data.

use ite_conformal::conformal::{ConformalConfig, ScoreKind};
use ite_conformal::evaluation::{average_length, empirical_coverage};
use ite_conformal::ite::{estimate_propensity, run_pipeline, ItePipelineConfig, Variant};
use ite_conformal::learners::LearnerConfig;
use ite_conformal::simulation::{gen_scenario, true_propensity, ScenarioConfig, SigmaKind};
use ite_conformal::tabular::{Columns, Dataset};
use ite_conformal::rng::rng;
use ndarray::Array2;
use rand::Rng;

fn small(sigma_kind: SigmaKind, gamma: u8, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n: 1500,
        n_test: 300,
        ..ScenarioConfig::new(sigma_kind, gamma, seed)
    }
}

fn cfg(score: ScoreKind, variant: Variant) -> ItePipelineConfig {
    ItePipelineConfig {
        score,
        variant,
        conformal: ConformalConfig {
            grid_points: 256,
            ..ConformalConfig::default()
        },
        ..ItePipelineConfig::default()
    }
}

#[test]
fn every_variant_gives_finite_ordered_intervals() {
    let data = gen_scenario(&small(SigmaKind::Homoscedastic, 0, 3)).unwrap();
    for score in [ScoreKind::Cd, ScoreKind::Cqr] {
        for variant in [Variant::Exact, Variant::Naive, Variant::Inexact, Variant::X] {
            let iv = run_pipeline(&data.train, &cfg(score, variant), data.test.features(), 7).unwrap();
            assert_eq!(iv.len(), data.test.n());
            assert!(
                iv.iter().all(|(lo, hi)| lo.is_finite() && hi.is_finite() && lo <= hi),
                "{score:?} {variant:?}"
            );
        }
    }
}

#[test]
fn pipeline_is_deterministic_in_seed() {
    let data = gen_scenario(&small(SigmaKind::Heteroscedastic, 1, 4)).unwrap();
    let c = cfg(ScoreKind::Cd, Variant::Exact);
    let a = run_pipeline(&data.train, &c, data.test.features(), 1).unwrap();
    let b = run_pipeline(&data.train, &c, data.test.features(), 1).unwrap();
    assert_eq!(a, b);
    let other = run_pipeline(&data.train, &c, data.test.features(), 2).unwrap();
    assert_ne!(a, other);
}

#[test]
fn guaranteed_variants_cover_and_exact_is_wider_than_x() {
    let data = gen_scenario(&small(SigmaKind::Homoscedastic, 1, 5)).unwrap();
    let truth = data.test.true_ite().unwrap();
    let exact = run_pipeline(&data.train, &cfg(ScoreKind::Cd, Variant::Exact), data.test.features(), 3).unwrap();
    let naive = run_pipeline(&data.train, &cfg(ScoreKind::Cd, Variant::Naive), data.test.features(), 3).unwrap();
    let x = run_pipeline(&data.train, &cfg(ScoreKind::Cd, Variant::X), data.test.features(), 3).unwrap();
    assert!(empirical_coverage(&exact, truth).unwrap() >= 0.85);
    assert!(empirical_coverage(&naive, truth).unwrap() >= 0.85);
    assert!(average_length(&exact).unwrap() >= average_length(&x).unwrap());
}

#[test]
fn randomized_treatment_gives_flat_propensity() {
    let n = 4000;
    let mut r = rng(8);
    let x = Array2::from_shape_simple_fn((n, 3), || r.gen::<f64>());
    let a: Vec<u8> = (0..n).map(|_| u8::from(r.gen::<f64>() < 0.5)).collect();
    let ds = Dataset::new(
        x,
        Columns {
            treatment: Some(a),
            ..Columns::default()
        },
    )
    .unwrap();
    let model = estimate_propensity(&ds, &LearnerConfig::default(), 0.05).unwrap();
    for probe in [[0.1, 0.1, 0.1], [0.5, 0.5, 0.5], [0.9, 0.2, 0.7]] {
        let p = model.predict(&probe).unwrap();
        assert!((p - 0.5).abs() < 0.1, "{probe:?}: {p}");
    }
}

#[test]
fn propensity_tracks_the_generating_curve() {
    let data = gen_scenario(&ScenarioConfig {
        n: 5000,
        n_test: 1,
        ..ScenarioConfig::new(SigmaKind::Homoscedastic, 1, 6)
    })
    .unwrap();
    let model = estimate_propensity(&data.train, &LearnerConfig::default(), 0.05).unwrap();
    let mut probe = vec![0.5; 10];
    probe[0] = 0.02;
    let low = model.predict(&probe).unwrap();
    assert!((low - true_propensity(0.02).unwrap()).abs() < 0.15, "x1 near 0: {low}");
    probe[0] = 0.25;
    let peak = model.predict(&probe).unwrap();
    assert!(peak > low + 0.2, "peak {peak} vs edge {low}");
}

#[test]
fn too_few_units_in_an_arm_is_an_error() {
    let data = gen_scenario(&small(SigmaKind::Homoscedastic, 1, 9)).unwrap();
    let ds = &data.train;
    let all_treated = Dataset::new(
        ds.features().to_owned(),
        Columns {
            treatment: Some(vec![1; ds.n()]),
            outcome: Some(ds.outcome().unwrap().to_vec()),
            ..Columns::default()
        },
    )
    .unwrap();
    assert!(run_pipeline(&all_treated, &cfg(ScoreKind::Cd, Variant::Exact), data.test.features(), 0).is_err());
}
