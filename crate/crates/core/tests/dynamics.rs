use comet_core::datagen::{generate, GenConfig};
use comet_core::evalkit::{drift_curve, AnchorPlan, Persistence};
use comet_core::format::{from_bytes, to_bytes};
use comet_core::linalg::Matrix;
use comet_core::model::{BehaviorState, CometModel};
use comet_core::rng::SeededRng;
use comet_core::series::{TimeSeries, WindowSpec};
use comet_core::trainer::{train, train_observed, Hyper, TrainConfig};

fn short_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        seed,
        ..TrainConfig::default()
    }
}

fn generated(seed: u64, length: usize) -> Vec<f64> {
    generate(&GenConfig {
        seed,
        length,
        ..GenConfig::default()
    })
    .unwrap()
    .into_values()
}

fn ramp(n: usize) -> Vec<f64> {
    (1..=n).map(|t| t as f64).collect()
}

#[test]
fn output_ignores_state_and_correction() {
    let values = generated(3, 1200);
    let mut rng = SeededRng::new(11);
    let mut model =
        CometModel::initialize(&values[..800], 8, 8, WindowSpec::default(), &mut rng).unwrap();
    let history = &values[..900];
    let base = model
        .predict_step(history, &BehaviorState::zeros(8))
        .unwrap()
        .x_next;
    for _ in 0..20 {
        model.correction.weights = Matrix::uniform(8, 32, 5.0, &mut rng);
        let state = BehaviorState {
            z: (0..8).map(|_| rng.uniform_in(-100.0, 100.0)).collect(),
        };
        let x = model.predict_step(history, &state).unwrap().x_next;
        assert_eq!(x.to_bits(), base.to_bits());
    }
}

#[test]
fn rollouts_stay_within_memory_increment_bound() {
    for seed in 0..4 {
        let values = generated(seed, 1500);
        let (model, _) = train(
            &values[..1000],
            None,
            WindowSpec::default(),
            &short_config(seed),
            Hyper::default(),
        )
        .unwrap();
        let bound = model.memory.max_abs_dx();
        for anchor in [60, 400, 1000, 1400] {
            let seed_hist = &values[..anchor];
            let r = model.rollout(seed_hist, 300, false).unwrap();
            let mut prev = seed_hist[anchor - 1];
            for (h, x) in r.predictions.iter().enumerate() {
                assert!((x - prev).abs() <= bound * (1.0 + 1e-12));
                let cumulative = (x - seed_hist[anchor - 1]).abs();
                assert!(cumulative <= (h + 1) as f64 * bound * (1.0 + 1e-12));
                prev = *x;
            }
        }
    }
}

#[test]
fn constant_series_has_zero_drift() {
    let values = vec![1.5; 400];
    let (model, report) = train(
        &values,
        None,
        WindowSpec::default(),
        &short_config(0),
        Hyper::default(),
    )
    .unwrap();
    assert!(report.epoch_losses.iter().all(|l| *l == 0.0));
    let test = TimeSeries::new(vec![1.5; 400]).unwrap();
    let plan = AnchorPlan {
        first: 60,
        stride: 10,
    };
    for (_, d) in drift_curve(&model, &test, &[1, 10, 50, 200, 300], &plan).unwrap() {
        assert_eq!(d, 0.0);
    }
}

#[test]
fn ramp_model_continues_slope() {
    let values = ramp(300);
    let (model, _) = train(
        &values,
        None,
        WindowSpec::default(),
        &short_config(1),
        Hyper::default(),
    )
    .unwrap();
    let seed_hist = ramp(150);
    let r = model.rollout(&seed_hist, 10, false).unwrap();
    for (h, x) in r.predictions.iter().enumerate() {
        let truth = 150.0 + (h + 1) as f64;
        assert!((x - truth).abs() <= 1e-6, "h={} {x}", h + 1);
    }
}

#[test]
fn persistence_drift_on_ramp_equals_horizon() {
    let test = TimeSeries::new(ramp(600)).unwrap();
    let plan = AnchorPlan {
        first: 60,
        stride: 10,
    };
    let hs: Vec<usize> = (1..=200).collect();
    for (h, d) in drift_curve(&Persistence, &test, &hs, &plan).unwrap() {
        assert_eq!(d, h as f64);
    }
}

#[test]
fn save_load_preserves_predictions() {
    let values = generated(5, 1500);
    let (model, _) = train(
        &values[..1000],
        None,
        WindowSpec::default(),
        &short_config(5),
        Hyper::default(),
    )
    .unwrap();
    let restored = from_bytes(&to_bytes(&model).unwrap()).unwrap();
    let mut rng = SeededRng::new(99);
    for _ in 0..100 {
        let end = 60 + rng.below(values.len() - 60);
        let state = BehaviorState {
            z: (0..8).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        };
        let a = model.predict_step(&values[..end], &state).unwrap();
        let b = restored.predict_step(&values[..end], &state).unwrap();
        assert!((a.x_next - b.x_next).abs() <= 1e-6 * a.x_next.abs().max(1e-12));
        for (p, q) in a.state.z.iter().zip(&b.state.z) {
            assert!((p - q).abs() <= 1e-6 * p.abs().max(1.0));
        }
    }
}

#[test]
fn training_uses_ground_truth_history() {
    let values = generated(2, 500);
    let mut seen = 0usize;
    let mut mismatches = 0usize;
    let cfg = short_config(2);
    train_observed(
        &values,
        None,
        WindowSpec::default(),
        &cfg,
        Hyper::default(),
        &mut |ev| {
            seen += 1;
            if ev.history != &values[..ev.anchor] || ev.target != values[ev.anchor] {
                mismatches += 1;
            }
        },
    )
    .unwrap();
    assert_eq!(seen, cfg.epochs * (values.len() - 60));
    assert_eq!(mismatches, 0);
}

#[test]
fn training_is_deterministic_per_seed() {
    let values = generated(4, 700);
    let run = |seed| {
        train(
            &values,
            None,
            WindowSpec::default(),
            &short_config(seed),
            Hyper::default(),
        )
        .unwrap()
        .0
    };
    let a = run(7);
    assert_eq!(to_bytes(&a).unwrap(), to_bytes(&run(7)).unwrap());
    assert_ne!(to_bytes(&a).unwrap(), to_bytes(&run(8)).unwrap());
}
