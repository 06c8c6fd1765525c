use std::fs;
use std::path::Path;

use vgs::config::RunConfig;
use vgs::corpus::{generate_synthetic, Corpus, SyntheticSpec};
use vgs::encoders::{is_trainable, load_checkpoint};
use vgs::objectives::ScenarioName;
use vgs::trainer::{checkpoint_name, resume, train, EpochLog, TrainOptions};
use vgs::Error;

fn corpus(dir: &Path, n: usize, n_val: usize) -> Corpus {
    let spec = SyntheticSpec {
        n_triples: n,
        n_val: Some(n_val),
        seed: 5,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec, dir).unwrap()
}

fn short_config(rounds: usize, per_round: usize, decay_every: usize) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.train.rounds = rounds;
    cfg.train.epochs_per_round = per_round;
    cfg.train.decay_every = decay_every;
    cfg.train.eval_every = 0;
    cfg
}

fn without_time(logs: &[EpochLog]) -> Vec<EpochLog> {
    logs.iter()
        .map(|l| EpochLog {
            wall_time_s: 0.0,
            ..l.clone()
        })
        .collect()
}

#[test]
fn desk_training_reduces_loss() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), 200, 8);
    let cfg = short_config(2, 10, 5);
    let out = train(&cfg, &c, &TrainOptions::default()).unwrap();
    assert_eq!(out.logs.len(), 20);
    let (first, last) = (out.logs[0].mean_loss, out.logs[19].mean_loss);
    assert!(last < first, "loss went from {first} to {last}");
    assert!(out.logs.iter().all(|l| l.mean_loss.is_finite()));
    assert_eq!(out.logs[10].lr, out.logs[0].lr);
}

#[test]
fn zero_learning_rate_leaves_weights_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), 40, 4);
    let mut cfg = short_config(1, 1, 1);
    cfg.train.base_lr = Some(0.0);
    let init = vgs::encoders::Model::<f32>::init(&cfg.encoder, vgs::seed::derive(cfg.train.seed, "init", &[])).unwrap();
    let out = train(&cfg, &c, &TrainOptions::default()).unwrap();
    for (name, t) in init.params().iter() {
        let after = out.model.params().get(name).unwrap();
        if is_trainable(name) {
            assert_eq!(t.data, after.data, "{name} changed");
        }
    }
    assert_ne!(
        init.params().get("audio_e.bn.running_mean").unwrap().data,
        out.model.params().get("audio_e.bn.running_mean").unwrap().data
    );
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(&dir.path().join("data"), 64, 8);
    let mut cfg = short_config(2, 2, 1);
    cfg.train.eval_every = 2;
    let full_dir = dir.path().join("full");
    let full = train(
        &cfg,
        &c,
        &TrainOptions {
            out_dir: Some(full_dir.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(full.epoch, 4);

    let part_dir = dir.path().join("part");
    let part_opts = TrainOptions {
        out_dir: Some(part_dir.clone()),
        stop_after: Some(2),
        ..Default::default()
    };
    let first = train(&cfg, &c, &part_opts).unwrap();
    assert_eq!(first.epoch, 2);
    let rest = resume(
        &part_dir.join(checkpoint_name(2)),
        &cfg,
        &c,
        &TrainOptions {
            out_dir: Some(part_dir.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(rest.logs.first().map(|l| l.epoch), Some(3));
    assert_eq!(rest.logs[0].lr, full.logs[2].lr);
    assert_eq!(without_time(&rest.logs), without_time(&full.logs[2..]));
    assert!(rest.logs[1].recall.is_some());
    for e in 1..=4 {
        let a = fs::read(full_dir.join(checkpoint_name(e))).unwrap();
        let b = fs::read(part_dir.join(checkpoint_name(e))).unwrap();
        assert!(a == b, "checkpoint {e} differs");
    }
    let log = fs::read_to_string(full_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let (_, meta) = load_checkpoint(&full_dir.join(checkpoint_name(4))).unwrap();
    assert_eq!(meta.epoch, 4);
    assert_eq!(meta.scenario, "h-e-i-h");
    assert_eq!(meta.config_hash, cfg.config_hash());

    let done = resume(&full_dir.join(checkpoint_name(4)), &cfg, &c, &TrainOptions::default()).unwrap();
    assert!(done.logs.is_empty());
    assert_eq!(done.model.params(), full.model.params());

    let mut other = cfg.clone();
    other.train.scenario = ScenarioName::EI;
    let err = resume(&full_dir.join(checkpoint_name(2)), &other, &c, &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, Error::ConfigHashMismatch { .. }));
}

#[test]
fn runaway_learning_rate_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), 40, 4);
    let mut cfg = short_config(1, 1, 1);
    cfg.train.base_lr = Some(1e30);
    match train(&cfg, &c, &TrainOptions::default()) {
        Err(Error::Diverged { epoch: 1, loss }) => assert!(!loss.is_finite()),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.logs)),
    }
}

#[test]
fn batch_larger_than_split_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), 12, 2);
    let cfg = short_config(1, 1, 1);
    assert!(train(&cfg, &c, &TrainOptions::default()).is_err());
}
