use std::fs;

use xcrossnet::datagen::{build_dataset, generate_entry, DatagenConfig, MixtureSample, Split};
use xcrossnet::losses::METRIC_CAP_DB;
use xcrossnet::model::{Checkpoint, InitMode, Model, ModelConfig};
use xcrossnet::trainer::{
    evaluate, evaluate_manifest, read_log, speaker_accuracy, Identity, LogRecord, Oracle, TrainConfig, TrainData,
    Trainer, BEST_CKPT, CRASH_DUMP, LAST_CKPT, LOG_FILE,
};
use xcrossnet::Error;

fn samples(seed: u64, split: Split, n: usize, seconds: f64) -> Vec<MixtureSample> {
    // Four speakers keeps every label inside the toy model's four classes.
    let cfg = DatagenConfig {
        seed,
        speakers: 4,
        duration: (seconds, seconds),
        enroll_s: 0.5,
        ..Default::default()
    };
    (0..n).map(|i| generate_entry(&cfg, split, i, i as u64).unwrap().sample).collect()
}

fn toy_trainer(cfg: TrainConfig) -> Trainer {
    Trainer::new(Model::new(ModelConfig::toy(), 1, InitMode::Standard).unwrap(), cfg).unwrap()
}

#[test]
fn fixed_batch_loss_strictly_decreases() {
    let batch = samples(3, Split::Train, 2, 0.5);
    let mut model_cfg = ModelConfig::toy();
    // rcpe_max = T pins the positional offset, so every step sees the same input.
    model_cfg.rcpe_max = model_cfg.stft().unwrap().num_frames(batch[0].y.len());
    let model = Model::new(model_cfg, 2, InitMode::Standard).unwrap();
    let cfg = TrainConfig {
        max_lr: 1e-3,
        min_lr: 1e-3 * 0.999,
        warmup_epochs: 0,
        max_epochs: 1000,
        batch_size: 2,
        ..Default::default()
    };
    let mut tr = Trainer::new(model, cfg).unwrap();
    let refs: Vec<&MixtureSample> = batch.iter().collect();
    let mut prev = f64::INFINITY;
    for step in 0..50 {
        let LogRecord::Step { total, .. } = tr.train_step(&refs, 1).unwrap() else { unreachable!() };
        assert!(total < prev, "step {step}: {total} ≥ {prev}");
        prev = total;
    }
}

#[test]
fn log_has_one_line_per_step_and_dev_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let data = TrainData {
        train: samples(4, Split::Train, 5, 0.5),
        dev: samples(4, Split::Dev, 2, 0.5),
    };
    let cfg = TrainConfig {
        max_epochs: 3,
        warmup_epochs: 1,
        batch_size: 2,
        ..Default::default()
    };
    let mut tr = toy_trainer(cfg.clone()).with_run_dir(dir.path());
    let recs = tr.run(&data, &mut |_| {}).unwrap();
    let steps = cfg.steps_per_epoch(5) * 3;
    assert_eq!(steps, 9);
    let log = read_log(&dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(log.len(), steps + 3);
    assert_eq!(log, recs);
    let dev: Vec<usize> = log
        .iter()
        .filter_map(|r| match r {
            LogRecord::Dev { epoch, n, .. } => Some(*epoch * 10 + n),
            _ => None,
        })
        .collect();
    assert_eq!(dev, [12, 22, 32]);
    assert_eq!(tr.state.step, steps as u64);
    assert!(dir.path().join(LAST_CKPT).exists() && dir.path().join(BEST_CKPT).exists());
    let first = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert!(first.lines().next().unwrap().contains("\"kind\":\"step\""));
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = TrainData {
        train: samples(5, Split::Train, 2, 0.5),
        dev: vec![],
    };
    let mut tr = toy_trainer(TrainConfig {
        max_epochs: 0,
        ..Default::default()
    })
    .with_run_dir(dir.path());
    assert!(tr.run(&data, &mut |_| {}).unwrap().is_empty());
    let back = Trainer::resume(&dir.path().join(LAST_CKPT)).unwrap();
    assert_eq!(back.state.step, 0);
    assert_eq!(back.model.params, tr.model.params);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = TrainData {
        train: samples(6, Split::Train, 4, 0.5),
        dev: vec![],
    };
    let cfg = TrainConfig {
        max_lr: 3e-3,
        max_epochs: 3,
        warmup_epochs: 1,
        batch_size: 2,
        ..Default::default()
    };
    let mut whole = toy_trainer(cfg.clone());
    let all = whole.run(&data, &mut |_| {}).unwrap();

    let mut first = toy_trainer(cfg);
    let mut parts = first.run_epochs(&data, 1, &mut |_| {}).unwrap();
    let mut resumed = Trainer::from_checkpoint(&first.to_checkpoint().unwrap()).unwrap();
    parts.extend(resumed.run(&data, &mut |_| {}).unwrap());

    assert_eq!(parts, all);
    assert_eq!(resumed.opt, whole.opt);
    for ((_, a), (_, b)) in resumed.model.params.iter().zip(whole.model.params.iter()) {
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn non_finite_loss_leaves_crash_dump() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = Model::new(ModelConfig::toy(), 1, InitMode::Standard).unwrap();
    model.params.get_mut("dec.w").unwrap().data[0] = f64::NAN;
    let mut tr = Trainer::new(model, TrainConfig::default()).unwrap().with_run_dir(dir.path());
    let s = samples(7, Split::Train, 1, 0.5);
    let err = tr.train_step(&[&s[0]], 1).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert!(err.to_string().contains(CRASH_DUMP));
    let dump = Checkpoint::read(&dir.path().join(CRASH_DUMP)).unwrap();
    assert_eq!(dump.header["kind"], "crash");
    assert_eq!(dump.header["sample"], s[0].id.as_str());
    assert_eq!(dump.blobs["input/y"].data, s[0].y.samples);
}

#[test]
fn labels_beyond_classifier_rejected() {
    let cfg = DatagenConfig { duration: (0.5, 0.5), enroll_s: 0.5, ..Default::default() };
    let s = generate_entry(&cfg, Split::Train, 5, 5).unwrap().sample;
    assert_eq!(s.speaker_id, 5);
    let data = TrainData { train: vec![s], dev: vec![] };
    let err = toy_trainer(TrainConfig::default()).run(&data, &mut |_| {}).unwrap_err().to_string();
    assert!(err.contains("model.N_s is 4"), "{err}");
}

#[test]
fn model_checkpoint_is_not_a_training_checkpoint() {
    let m = Model::new(ModelConfig::toy(), 1, InitMode::Standard).unwrap();
    let err = Trainer::from_checkpoint(&m.to_checkpoint(Default::default()).unwrap()).err().unwrap();
    assert!(err.to_string().contains("not a training checkpoint"), "{err}");
}

#[test]
fn reference_extractors_bracket_the_metric() {
    let test = samples(8, Split::Test, 4, 0.5);
    let id = evaluate(&Identity, &test).unwrap().summary();
    assert_eq!((id.si_sdri, id.sdri), (0.0, 0.0));
    let or = evaluate(&Oracle, &test).unwrap();
    assert!(or.rows.iter().all(|r| r.si_sdr_out == METRIC_CAP_DB && r.sdr_out == METRIC_CAP_DB));
}

#[test]
fn manifest_evaluation_has_one_row_per_entry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatagenConfig {
        seed: 9,
        train: 2,
        dev: 1,
        test: 3,
        duration: (0.5, 0.8),
        enroll_s: 0.5,
        ..Default::default()
    };
    let manifest = build_dataset(&cfg, dir.path()).unwrap();
    let m = Model::new(ModelConfig::toy(), 1, InitMode::Standard).unwrap();
    let rep = evaluate_manifest(&m, &manifest, Split::Test).unwrap();
    let ids: Vec<&str> = rep.rows.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["test/00000", "test/00001", "test/00002"]);
    let jsonl = rep.to_jsonl().unwrap();
    assert_eq!(jsonl.lines().count(), 4);
    assert!(jsonl.lines().last().unwrap().contains("\"mean\""));
}

#[test]
fn speaker_accuracy_counts_argmax_hits() {
    let m = Model::new(ModelConfig::toy(), 1, InitMode::Standard).unwrap();
    assert_eq!(speaker_accuracy(&m, &[]).unwrap(), 0.0);
    let s = samples(10, Split::Train, 6, 0.5);
    let b = m.bind(false).unwrap();
    let expected = s
        .iter()
        .filter(|x| {
            let l = m.speaker_logits(&b, &x.a).unwrap();
            let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            l[x.speaker_id] == max
        })
        .count();
    assert_eq!(speaker_accuracy(&m, &s).unwrap(), expected as f64 / 6.0);
}
