use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsparse_core::autodiff::Tape;
use dsparse_core::eval::{evaluate, AggregateReport};
use dsparse_core::kg::{generate_toy_kg, KnowledgeGraph, Split};
use dsparse_core::model::{DSparsE, Mode, ModelConfig};
use dsparse_core::train::{
    load_checkpoint, repeated_runs, save_checkpoint, smooth_labels, train_run, Adam, AdamConfig, TrainConfig,
    TrainState,
};
use dsparse_core::{Error, Real};

fn configs(kg: &KnowledgeGraph, epochs: usize) -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        n_entities: kg.n_entities(),
        n_relations: kg.n_relations(),
        dim: 8,
        hidden: 8,
        depth: 2,
        dropout: 0.2,
        seed: 1,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        batch_size: 16,
        epochs,
        seed: 1,
        ..TrainConfig::default()
    };
    (model, train)
}

fn forward_values(model: &DSparsE) -> Vec<Real> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &[0, 3, 5, 9], &[0, 1, 4, 5], &mut Mode::Eval).unwrap();
    tape.value(out.scores).to_vec()
}

#[test]
fn checkpoint_restores_forward_and_masks() {
    let kg = generate_toy_kg(30, 3).unwrap();
    let (m, t) = configs(&kg, 3);
    let out = train_run(&kg, &m, &t).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt");
    save_checkpoint(&out.state, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(forward_values(&back.model), forward_values(out.model()));
    for ((_, a), (_, b)) in out.model().store().iter().zip(back.model.store().iter()) {
        let zeros = |p: &dsparse_core::autodiff::Param| {
            p.value.values().iter().enumerate().filter(|(_, v)| **v == 0.0).map(|(i, _)| i).collect::<Vec<_>>()
        };
        assert_eq!(a.mask, b.mask);
        assert_eq!(zeros(a), zeros(b));
    }

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Integrity(_))));
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let kg = generate_toy_kg(30, 3).unwrap();
    let (m, t) = configs(&kg, 4);
    let straight = train_run(&kg, &m, &t).unwrap();

    let mut half = TrainState::new(m, TrainConfig { epochs: 2, ..t }).unwrap();
    let first = half.fit(&kg, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&half, &dir.path().join("c")).unwrap();
    let mut resumed = load_checkpoint(&dir.path().join("c")).unwrap();
    resumed.train.epochs = 4;
    let second = resumed.fit(&kg, |_| {}).unwrap();

    let joined: Vec<_> = first.into_iter().chain(second).collect();
    assert_eq!(joined, straight.history);
    assert_eq!(forward_values(&resumed.model), forward_values(straight.model()));
}

#[test]
fn masks_survive_random_adam_steps() {
    let kg = generate_toy_kg(20, 1).unwrap();
    let (m, _) = configs(&kg, 1);
    let mut model = DSparsE::new(m).unwrap();
    let mut adam = Adam::new(model.store(), AdamConfig::with_lr(0.05));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        for (_, p) in model.store_mut().iter_mut() {
            let g: Vec<Real> = (0..p.value.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
            p.value.accumulate_grad(&g);
        }
        adam.step(model.store_mut()).unwrap();
    }
    let mut masked = 0;
    for (_, p) in model.store().iter() {
        if let Some(mask) = &p.mask {
            for (v, keep) in p.value.values().iter().zip(mask) {
                if !keep {
                    assert_eq!(*v, 0.0, "{}", p.name);
                    masked += 1;
                }
            }
        }
    }
    assert!(masked > 0);
}

#[test]
fn smoothing_preserves_row_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (b, n, ls) = (6, 13, 0.1);
    let y: Vec<Real> = (0..b * n).map(|_| if rng.random_bool(0.2) { 1.0 } else { 0.0 }).collect();
    let s = smooth_labels(&y, n, ls).unwrap();
    let total_y: Real = y.iter().sum();
    let total_s: Real = s.iter().sum();
    assert!((total_s - ((1.0 - ls) * total_y + ls * b as Real)).abs() < 1e-9);
}

#[test]
fn aggregate_std_matches_hand_computation() {
    let kg = generate_toy_kg(30, 6).unwrap();
    let (m, t) = configs(&kg, 2);
    let rr = repeated_runs(&kg, &m, &t, 5, Split::Test).unwrap();
    let h: Vec<f64> = rr.aggregate.runs.iter().map(|r| r.metrics.hits1).collect();
    let mean = h.iter().sum::<f64>() / 5.0;
    let std = (h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!((rr.aggregate.mean.hits1 - mean).abs() < 1e-12);
    assert!((rr.aggregate.std.hits1 - std).abs() < 1e-12);
    let seeds: Vec<u64> = rr.aggregate.runs.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![1, 2, 3, 4, 5]);
}

#[test]
fn identical_seeds_give_zero_spread() {
    let kg = generate_toy_kg(30, 6).unwrap();
    let (m, t) = configs(&kg, 2);
    let reports: Vec<_> = (0..3)
        .map(|_| (t.seed, evaluate(train_run(&kg, &m, &t).unwrap().model(), &kg, Split::Test).unwrap()))
        .collect();
    let agg = AggregateReport::from_runs(&reports).unwrap();
    assert_eq!(agg.std.mrr, 0.0);
    assert_eq!(agg.std.hits1, 0.0);
}

#[test]
fn toy_loss_trends_down() {
    let kg = generate_toy_kg(40, 1).unwrap();
    let model = ModelConfig {
        n_entities: kg.n_entities(),
        n_relations: kg.n_relations(),
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        epochs: 200,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let out = train_run(&kg, &model, &train).unwrap();
    let loss: Vec<Real> = out.history.iter().map(|r| r.loss).collect();
    assert!(loss.iter().all(|l| l.is_finite()));
    assert!(loss.last().unwrap() < &loss[0]);
    let avg: Vec<Real> = loss.windows(20).map(|w| w.iter().sum::<Real>() / 20.0).collect();
    for w in avg.windows(2) {
        assert!(w[1] <= w[0], "moving average rose: {} -> {}", w[0], w[1]);
    }
}
