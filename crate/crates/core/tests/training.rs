mod common;

use overnet::model::init_params;
use overnet::train::{train_loop, Event, TrainConfig, TrainPairs};
use overnet::{Checkpoint, ModelConfig, ParamStore};

fn config(iters: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig::tiny(),
        patch: 8,
        batch_size: 2,
        total_iters: iters,
        log_every: 5,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn pairs(cfg: &TrainConfig) -> TrainPairs {
    let images = vec![
        ("a".to_string(), common::scene(1, 64, 64)),
        ("b".to_string(), common::scene(2, 48, 56)),
    ];
    TrainPairs::prepare(&images, cfg).unwrap()
}

fn run(cfg: &TrainConfig, data: &TrainPairs, p: &mut ParamStore<f32>) -> Vec<Event> {
    let mut events = Vec::new();
    train_loop(cfg, data, p, &mut |e, _| {
        events.push(e.clone());
        Ok(())
    })
    .unwrap();
    events
}

fn assert_same(a: &ParamStore<f32>, b: &ParamStore<f32>) {
    assert_eq!(a.step_count(), b.step_count());
    for ((na, ea), (nb, eb)) in a.iter().zip(b.iter()) {
        assert_eq!(na, nb);
        assert_eq!(ea.value, eb.value, "{na}");
        assert_eq!(ea.adam_m, eb.adam_m, "{na}");
        assert_eq!(ea.adam_v, eb.adam_v, "{na}");
    }
}

#[test]
fn zero_iterations_leave_the_initialization() {
    let cfg = config(0);
    let mut p = init_params::<f32>(&cfg.model, cfg.seed).unwrap();
    assert!(run(&cfg, &pairs(&cfg), &mut p).is_empty());
    assert_same(&p, &init_params(&cfg.model, cfg.seed).unwrap());
}

#[test]
fn identical_runs_are_bit_identical() {
    let cfg = config(12);
    let data = pairs(&cfg);
    let mut a = init_params::<f32>(&cfg.model, cfg.seed).unwrap();
    let mut b = init_params::<f32>(&cfg.model, cfg.seed).unwrap();
    assert_eq!(run(&cfg, &data, &mut a), run(&cfg, &data, &mut b));
    assert_same(&a, &b);
}

#[test]
fn resuming_from_a_saved_checkpoint_is_exact() {
    let full = config(16);
    let half = config(8);
    let data = pairs(&full);
    let mut straight = init_params::<f32>(&full.model, full.seed).unwrap();
    let straight_events = run(&full, &data, &mut straight);

    let mut first = init_params::<f32>(&half.model, half.seed).unwrap();
    let mut events = run(&half, &data, &mut first);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ovnt");
    Checkpoint::new(half.model.clone(), first).save(&path).unwrap();
    let mut resumed = Checkpoint::load(&path).unwrap().params;
    events.retain(|e| !matches!(e, Event::Log { step: 7, .. }));
    events.extend(run(&full, &data, &mut resumed));

    assert_same(&straight, &resumed);
    assert_eq!(events, straight_events);
}

#[test]
fn events_follow_the_cadence() {
    let mut cfg = config(12);
    cfg.checkpoint_every = 4;
    let mut p = init_params::<f32>(&cfg.model, cfg.seed).unwrap();
    let events = run(&cfg, &pairs(&cfg), &mut p);
    let logs: Vec<u64> = events
        .iter()
        .filter_map(|e| match e {
            Event::Log { step, .. } => Some(*step),
            _ => None,
        })
        .collect();
    let saves: Vec<u64> = events
        .iter()
        .filter_map(|e| match e {
            Event::Checkpoint { step } => Some(*step),
            _ => None,
        })
        .collect();
    assert_eq!(logs, [0, 5, 10, 11]);
    assert_eq!(saves, [4, 8, 12]);
}

#[test]
fn loss_falls_over_a_short_run() {
    let mut cfg = config(150);
    cfg.lr0 = 4e-3;
    cfg.log_every = 1;
    let mut p = init_params::<f32>(&cfg.model, cfg.seed).unwrap();
    let losses: Vec<f64> = run(&cfg, &pairs(&cfg), &mut p)
        .iter()
        .filter_map(|e| match e {
            Event::Log { loss, .. } => Some(*loss),
            _ => None,
        })
        .collect();
    let tail: f64 = losses[losses.len() - 20..].iter().sum::<f64>() / 20.0;
    assert!(tail < 0.2 * losses[0], "{} → {tail}", losses[0]);
}
