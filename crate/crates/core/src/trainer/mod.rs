//! Optimization loop: per-sample forward/backward, gradient averaging over a
//! batch, global-norm clipping, AdamW under a warmup-cosine schedule, and
//! per-epoch dev evaluation with checkpointing.

mod eval;
mod optim;

pub use eval::{evaluate, evaluate_manifest, speaker_accuracy, Extractor, Identity, Oracle};
pub use optim::{check_finite_grads, clip_global_norm, global_norm, lr_schedule, AdamW};

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::MixtureSample;
use crate::error::{Error, Result};
use crate::losses::loss_total;
use crate::model::{Checkpoint, Mode, Model, Param};
use crate::rng::{domain, keyed_rng};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const LAST_CKPT: &str = "last.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";
pub const CRASH_DUMP: &str = "crash.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub adam_eps: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_lr: 1e-3,
            min_lr: 1e-5,
            warmup_epochs: 10,
            max_epochs: 30,
            batch_size: 4,
            weight_decay: 1e-2,
            betas: [0.9, 0.999],
            adam_eps: 1e-8,
            grad_clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs > 0 && self.warmup_epochs >= self.max_epochs {
            return Err(Error::Config(format!(
                "train.warmup_epochs ({}) must be below train.max_epochs ({})",
                self.warmup_epochs, self.max_epochs
            )));
        }
        if !(self.max_lr > self.min_lr && self.min_lr > 0.0) {
            return Err(Error::Config(format!(
                "need train.max_lr > train.min_lr > 0, got {} and {}",
                self.max_lr, self.min_lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) {
            return Err(Error::Config(format!("train.betas must lie in [0, 1), got {:?}", self.betas)));
        }
        if !(self.weight_decay >= 0.0 && self.adam_eps > 0.0 && self.grad_clip_norm > 0.0) {
            return Err(Error::Config(
                "train.weight_decay must be ≥ 0; train.adam_eps and train.grad_clip_norm > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, num_train: usize) -> usize {
        num_train.div_ceil(self.batch_size)
    }
}

/// Progress counters; the moments live in [`AdamW`]. All sampling randomness
/// is keyed by `(seed, epoch)` or `(seed, step)`, so no generator state needs
/// saving.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub best_dev_si_sdri: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: u64,
        epoch: usize,
        lr: f64,
        mag: f64,
        sisdr: f64,
        ce: f64,
        total: f64,
        grad_norm: f64,
    },
    Dev {
        step: u64,
        epoch: usize,
        n: usize,
        si_sdri: f64,
        sdri: f64,
    },
}

#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub train: Vec<MixtureSample>,
    pub dev: Vec<MixtureSample>,
}

pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub state: TrainState,
    pub opt: AdamW,
    run_dir: Option<PathBuf>,
}

const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

fn sample_seed(seed: u64, counter: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ counter
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = AdamW::new(&model.params);
        Ok(Trainer {
            model,
            cfg,
            state: TrainState::default(),
            opt,
            run_dir: None,
        })
    }

    /// Writes the log and checkpoints under `dir` from now on.
    pub fn with_run_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.run_dir = Some(dir.into());
        self
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut extra = serde_json::Map::new();
        extra.insert("kind".into(), "train".into());
        extra.insert("train".into(), serde_json::to_value(&self.cfg)?);
        extra.insert("state".into(), serde_json::to_value(&self.state)?);
        extra.insert("adam_t".into(), self.opt.t.into());
        let mut ck = self.model.to_checkpoint(extra)?;
        for (prefix, moments) in [(M_PREFIX, &self.opt.m), (V_PREFIX, &self.opt.v)] {
            for (name, data) in moments {
                let shape = self.model.params.get(name).map_or(vec![data.len()], |p| p.shape.clone());
                ck.blobs.insert(format!("{prefix}{name}"), Param { shape, data: data.clone() });
            }
        }
        Ok(ck)
    }

    /// Restores model, optimizer and counters from a training checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = Model::from_checkpoint(ck)?;
        let field = |k: &str| {
            ck.header
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("not a training checkpoint (no '{k}' field)")))
        };
        let cfg: TrainConfig = serde_json::from_value(field("train")?)?;
        let state: TrainState = serde_json::from_value(field("state")?)?;
        let t = field("adam_t")?
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("adam_t is not an integer".into()))?;
        let mut opt = AdamW {
            t,
            ..AdamW::default()
        };
        for name in model.params.names() {
            for (prefix, dst) in [(M_PREFIX, &mut opt.m), (V_PREFIX, &mut opt.v)] {
                let key = format!("{prefix}{name}");
                let p = ck
                    .blobs
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer blob {key}")))?;
                dst.insert(name.to_string(), p.data.clone());
            }
        }
        let mut tr = Trainer::new(model, cfg)?;
        tr.state = state;
        tr.opt = opt;
        Ok(tr)
    }

    pub fn resume(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }

    /// One optimizer update on `batch`: per-sample gradients are summed in
    /// batch order and averaged.
    pub fn train_step(&mut self, batch: &[&MixtureSample], steps_per_epoch: usize) -> Result<LogRecord> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let stft = self.model.cfg.stft()?;
        let mut acc: IndexMap<String, Vec<f64>> = IndexMap::new();
        let (mut mag, mut sisdr, mut ce, mut total) = (0.0, 0.0, 0.0, 0.0);
        for (j, sample) in batch.iter().enumerate() {
            let b = self.model.bind(true)?;
            let mode = Mode::Train {
                seed: sample_seed(self.cfg.seed, self.state.step * self.cfg.batch_size as u64 + j as u64),
            };
            let out = self.model.forward(&b, &sample.y, &sample.a, mode)?;
            let lb = loss_total(&out.estimate, &sample.s.samples, &out.speaker.logits, sample.speaker_id, &stft)?;
            let value = lb.total.item()?;
            if !value.is_finite() {
                let why = format!("loss is {value} at step {} on {}", self.state.step, sample.id);
                return Err(self.crash(sample, &why));
            }
            lb.total.backward()?;
            for (name, g) in b.grads() {
                match acc.get_mut(&name) {
                    Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| *a += g),
                    None => {
                        acc.insert(name, g);
                    }
                }
            }
            mag += lb.mag;
            sisdr += lb.sisdr;
            ce += lb.ce;
            total += value;
        }
        let n = batch.len() as f64;
        acc.values_mut().flatten().for_each(|g| *g /= n);
        if let Err(e) = check_finite_grads(&acc) {
            return Err(self.crash(batch[0], &e.to_string()));
        }
        let grad_norm = clip_global_norm(&mut acc, self.cfg.grad_clip_norm);
        let lr = lr_schedule(self.state.step, steps_per_epoch, &self.cfg);
        self.opt.step(&mut self.model.params, &acc, lr, &self.cfg)?;
        let rec = LogRecord::Step {
            step: self.state.step,
            epoch: self.state.epoch,
            lr,
            mag: mag / n,
            sisdr: sisdr / n,
            ce: ce / n,
            total: total / n,
            grad_norm,
        };
        self.state.step += 1;
        Ok(rec)
    }

    /// Writes a crash dump when a run directory is set and returns the error
    /// to propagate.
    fn crash(&self, sample: &MixtureSample, why: &str) -> Error {
        let Some(dir) = &self.run_dir else {
            return Error::NonFinite(why.to_string());
        };
        let path = dir.join(CRASH_DUMP);
        let dump = self.to_checkpoint().and_then(|mut ck| {
            if let serde_json::Value::Object(h) = &mut ck.header {
                h.insert("kind".into(), "crash".into());
                h.insert("reason".into(), why.into());
                h.insert("sample".into(), sample.id.clone().into());
            }
            for (name, w) in [("input/y", &sample.y), ("input/a", &sample.a), ("input/s", &sample.s)] {
                ck.blobs.insert(
                    name.into(),
                    Param {
                        shape: vec![w.len()],
                        data: w.samples.clone(),
                    },
                );
            }
            ck.write(&path)
        });
        match dump {
            Ok(()) => Error::NonFinite(format!("{why}; crash dump written to {}", path.display())),
            Err(e) => Error::NonFinite(format!("{why}; writing the crash dump failed: {e}")),
        }
    }

    fn append_log(&self, rec: &LogRecord) -> Result<()> {
        if let Some(dir) = &self.run_dir {
            let path = dir.join(LOG_FILE);
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{}", serde_json::to_string(rec)?).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn save(&self, name: &str) -> Result<()> {
        if let Some(dir) = &self.run_dir {
            self.to_checkpoint()?.write(&dir.join(name))?;
        }
        Ok(())
    }

    /// Runs the remaining epochs. Every record is passed to `on_record` and,
    /// with a run directory, appended to the log file.
    pub fn run(&mut self, data: &TrainData, on_record: &mut dyn FnMut(&LogRecord)) -> Result<Vec<LogRecord>> {
        self.run_epochs(data, usize::MAX, on_record)
    }

    /// Like [`Trainer::run`] but stops after at most `limit` more epochs.
    /// The schedule still spans `max_epochs`, so a later run continues it.
    pub fn run_epochs(
        &mut self,
        data: &TrainData,
        limit: usize,
        on_record: &mut dyn FnMut(&LogRecord),
    ) -> Result<Vec<LogRecord>> {
        if data.train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if let Some(s) = data.train.iter().find(|s| s.speaker_id >= self.model.cfg.n_s) {
            return Err(Error::Config(format!(
                "{} has speaker id {} but model.N_s is {}; raise model.N_s",
                s.id, s.speaker_id, self.model.cfg.n_s
            )));
        }
        let spe = self.cfg.steps_per_epoch(data.train.len());
        let mut records = Vec::new();
        let mut emit = |tr: &Self, rec: LogRecord| -> Result<()> {
            tr.append_log(&rec)?;
            on_record(&rec);
            records.push(rec);
            Ok(())
        };
        if self.state.step == 0 && self.state.epoch == 0 {
            self.save(LAST_CKPT)?;
        }
        let stop = self.cfg.max_epochs.min(self.state.epoch.saturating_add(limit));
        while self.state.epoch < stop {
            let mut order: Vec<usize> = (0..data.train.len()).collect();
            order.shuffle(&mut keyed_rng(self.cfg.seed, domain::SHUFFLE, self.state.epoch as u64));
            for chunk in order.chunks(self.cfg.batch_size) {
                let batch: Vec<&MixtureSample> = chunk.iter().map(|&i| &data.train[i]).collect();
                let rec = self.train_step(&batch, spe)?;
                emit(self, rec)?;
            }
            self.state.epoch += 1;
            let mut improved = false;
            if !data.dev.is_empty() {
                let s = evaluate(&self.model, &data.dev)?.summary();
                improved = self.state.best_dev_si_sdri.is_none_or(|b| s.si_sdri > b);
                if improved {
                    self.state.best_dev_si_sdri = Some(s.si_sdri);
                }
                let rec = LogRecord::Dev {
                    step: self.state.step,
                    epoch: self.state.epoch,
                    n: s.n,
                    si_sdri: s.si_sdri,
                    sdri: s.sdri,
                };
                emit(self, rec)?;
            }
            self.save(LAST_CKPT)?;
            if improved || data.dev.is_empty() {
                self.save(BEST_CKPT)?;
            }
        }
        Ok(records)
    }
}

/// Reads a training log back.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
