use odernn::autodiff::Tape;
use odernn::data::IrregularSeries;
use odernn::evolver::EvolverConfig;
use odernn::models::{combined_time_forward, odernn_forward, Model, ModelKind, TimeSeriesBatch};
use odernn::testing::{model_gradient_error, random_batch};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ODE_KINDS: [ModelKind; 4] = [
    ModelKind::Odernn { evolver: EvolverConfig::FixedDt { step_size: 0.1 } },
    ModelKind::Odernn { evolver: EvolverConfig::AdaptiveFixed { num_steps: 3 } },
    ModelKind::Odernn {
        evolver: EvolverConfig::AdaptiveGeometric { initial_step: 0.05, growth_factor: 1.5 },
    },
    ModelKind::CombinedTime { step_size: 0.1 },
];

fn combined_vs_odernn(batch: &TimeSeriesBatch, seed: u64, step: f64) -> f64 {
    let model = Model::new(ModelKind::CombinedTime { step_size: step }, 1, 1, 5, seed).unwrap();
    let mut tape = Tape::new();
    let ct = combined_time_forward(&mut tape, &model, batch, step).unwrap();
    let ct = tape.value(ct.prediction).clone();
    let mut tape = Tape::new();
    let od = odernn_forward(&mut tape, &model, batch, &EvolverConfig::FixedDt { step_size: step }).unwrap();
    tape.value(od.prediction).max_abs_diff(&ct)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn combined_time_matches_odernn_on_shared_grids(seed in any::<u64>(), rows in 1usize..6, points in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = random_batch(&mut rng, rows, points, true);
        prop_assert!(combined_vs_odernn(&batch, seed, 0.1) <= 1e-9);
    }

    #[test]
    fn combined_time_matches_odernn_on_single_rows(seed in any::<u64>(), points in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = random_batch(&mut rng, 1, points, false);
        prop_assert!(combined_vs_odernn(&batch, seed, 0.07) <= 1e-9);
    }

    #[test]
    fn predictions_follow_row_permutations(seed in any::<u64>(), kind in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let series: Vec<IrregularSeries> = (0..4)
            .map(|i| {
                let times: Vec<f64> = (0..5).map(|k| f64::from(k) * 0.3 + f64::from(i) * 0.1).collect();
                let values = times.iter().map(|t| vec![(t * 2.0).sin() + rand::Rng::random_range(&mut rng, -0.1..0.1)]).collect();
                IrregularSeries { times, values, target: None }
            })
            .collect();
        let model = Model::new(ODE_KINDS[kind], 1, 1, 4, seed).unwrap();
        let fwd: Vec<&IrregularSeries> = series.iter().collect();
        let rev: Vec<&IrregularSeries> = series.iter().rev().collect();
        let a = model.predict(&TimeSeriesBatch::from_series(&fwd).unwrap()).unwrap();
        let b = model.predict(&TimeSeriesBatch::from_series(&rev).unwrap()).unwrap();
        for i in 0..4 {
            prop_assert!((a.get(i, 0) - b.get(3 - i, 0)).abs() <= 1e-12);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let kinds = std::iter::once(ModelKind::SimpleRnn).chain(ODE_KINDS);
    for kind in kinds {
        for seed in 0..3 {
            let err = model_gradient_error(kind, seed);
            assert!(err < 1e-4, "{kind:?} seed {seed}: rel err {err}");
        }
    }
}

#[test]
fn odernn_loop_length_ignores_time_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dense = random_batch(&mut rng, 6, 5, false);
    let shared = random_batch(&mut rng, 6, 5, true);
    let model = Model::new(ODE_KINDS[1], 1, 1, 3, 0).unwrap();
    for batch in [&dense, &shared] {
        let mut tape = Tape::new();
        let fp = model.forward(&mut tape, batch).unwrap();
        assert_eq!(fp.stats.evolver_calls, 6);
        assert_eq!(fp.stats.euler_iterations, 6 * 3);
    }
    let ct = Model::new(ODE_KINDS[3], 1, 1, 3, 0).unwrap();
    let (mut t1, mut t2) = (Tape::new(), Tape::new());
    let irregular = ct.forward(&mut t1, &dense).unwrap().stats.outer_iterations;
    let regular = ct.forward(&mut t2, &shared).unwrap().stats.outer_iterations;
    assert_eq!(regular, 6);
    assert!(irregular > regular);
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = random_batch(&mut rng, 4, 6, false);
    for kind in ODE_KINDS {
        let a = Model::new(kind, 1, 1, 4, 9).unwrap().predict(&batch).unwrap();
        let b = Model::new(kind, 1, 1, 4, 9).unwrap().predict(&batch).unwrap();
        assert_eq!(a, b);
    }
}
