//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Runs without the libtest harness so the lines are
//! always visible:
//!
//! ```text
//! cargo test --release -p xcrossnet --test acceptance
//! ```

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xcrossnet::config::RunConfig;
use xcrossnet::datagen::{generate_entry, DatagenConfig, MixtureSample, Split};
use xcrossnet::dsp::{Waveform, SAMPLE_RATE};
use xcrossnet::losses::{loss_total, si_sdr};
use xcrossnet::model::{InitMode, Model, ModelConfig};
use xcrossnet::trainer::{evaluate, read_log, speaker_accuracy, TrainConfig, TrainData, Trainer, LAST_CKPT, LOG_FILE};
use xcrossnet::verify::{self, Check};

const SMOKE_CONFIG: &str = include_str!("../../../configs/smoke.toml");

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// Folds suite checks into one outcome; failing checks are listed.
fn from_checks(checks: &[Check]) -> Outcome {
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.to_string()).collect();
    if failed.is_empty() {
        outcome(true, format!("{} checks", checks.len()))
    } else {
        outcome(false, format!("{} of {} checks failed: {}", failed.len(), checks.len(), failed.join("; ")))
    }
}

fn within(elapsed: Duration, limit_s: f64, o: Outcome) -> Outcome {
    let secs = elapsed.as_secs_f64();
    let ok = secs < limit_s;
    let mut detail = format!("{}; {secs:.1} s (limit {limit_s} s)", o.detail);
    if !ok {
        detail.push_str(" TOO SLOW");
    }
    outcome(o.passed && ok, detail)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

// ------------------------------------------------------------- criteria

fn non_reproducibility() -> Outcome {
    outcome(
        true,
        "published SI-SDRi/SDRi of 19.9/20.5 dB (WSJ0-2mix) and 14.6/14.1 dB (WHAMR!) need the licensed \
         corpora and GPU-scale training; they are not attempted here. The criteria below are the \
         property-based substitutes.",
    )
}

fn params() -> Outcome {
    let t = Instant::now();
    let checks = verify::params_suite();
    for c in &checks {
        println!("    {c}");
    }
    within(t.elapsed(), 5.0, from_checks(&checks))
}

fn dsp() -> xcrossnet::Result<Outcome> {
    let t = Instant::now();
    let checks = verify::dsp_suite()?;
    let worst: Vec<String> = checks.iter().map(|c| c.measured.clone()).collect();
    let o = from_checks(&checks);
    Ok(within(t.elapsed(), 5.0, outcome(o.passed, format!("{}; {}", o.detail, worst.join("; ")))))
}

fn gradients() -> xcrossnet::Result<Outcome> {
    let t = Instant::now();
    let checks = verify::gradcheck_suite()?;
    let worst = checks
        .iter()
        .filter_map(|c| {
            let v: f64 = c.measured.split_whitespace().nth(3)?.parse().ok()?;
            Some((v, c.name.clone()))
        })
        .fold((0.0, String::new()), |a, b| if b.0 > a.0 { b } else { a });
    let o = from_checks(&checks);
    let detail = format!("{}; worst relative error {:.2e} in {}", o.detail, worst.0, worst.1);
    Ok(within(t.elapsed(), 180.0, outcome(o.passed, detail)))
}

/// The suite's checks plus a direct-formula SI-SDR oracle and additivity of
/// the total loss, both computed here.
fn loss_metric_algebra() -> xcrossnet::Result<Outcome> {
    let checks = verify::metrics_suite()?;
    let mut o = from_checks(&checks);

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(16..512);
        let s = randn(&mut rng, n);
        let e: Vec<f64> = s.iter().map(|v| v * rng.random_range(0.2..2.0) + rng.random_range(-0.5..0.5)).collect();
        let alpha = dot(&e, &s) / dot(&s, &s);
        let proj: Vec<f64> = s.iter().map(|v| alpha * v).collect();
        let resid: Vec<f64> = proj.iter().zip(&e).map(|(p, x)| p - x).collect();
        let direct = 10.0 * (dot(&proj, &proj) / dot(&resid, &resid)).log10();
        worst = worst.max((si_sdr(&e, &s)? - direct).abs());
    }
    let oracle_ok = worst < 1e-9;

    let cfg = ModelConfig::toy();
    let m = Model::new(cfg.clone(), 3, InitMode::RandomNonzero)?;
    let n = 12 * cfg.stft()?.hop;
    let y = Waveform::new(randn(&mut rng, n), SAMPLE_RATE)?;
    let a = Waveform::new(randn(&mut rng, n), SAMPLE_RATE)?;
    let target = randn(&mut rng, n);
    let b = m.bind(false)?;
    let out = m.forward(&b, &y, &a, xcrossnet::model::Mode::Eval)?;
    let lb = loss_total(&out.estimate, &target, &out.speaker.logits, 1, &cfg.stft()?)?;
    let additive = lb.total.item()? == (lb.mag + lb.sisdr) + lb.ce;

    o.passed &= oracle_ok && additive;
    o.detail = format!(
        "{}; direct-formula oracle max |Δ| {worst:.2e} dB over 1000 pairs; total = mag + sisdr + ce exactly: {additive}",
        o.detail
    );
    Ok(o)
}

fn structural() -> xcrossnet::Result<Outcome> {
    let checks: Vec<Check> = verify::shapes_suite()?
        .into_iter()
        .filter(|c| !c.name.contains("4 s inference"))
        .collect();
    let mut o = from_checks(&checks);
    let (invariant, varies) = verify::enrollment_influence(&ModelConfig::small())?;
    o.passed &= invariant && varies;
    o.detail = format!(
        "{}; small config: ablated ⇒ invariant {invariant}, active ⇒ varies {varies}",
        o.detail
    );
    Ok(o)
}

fn smoke_data(cfg: &DatagenConfig) -> xcrossnet::Result<Vec<MixtureSample>> {
    (0..cfg.train)
        .map(|i| Ok(generate_entry(cfg, Split::Train, i, i as u64)?.sample))
        .collect()
}

/// Trains the smoke recipe from `configs/smoke.toml` and returns the model.
fn overfit_smoke() -> xcrossnet::Result<(Outcome, Model)> {
    let t = Instant::now();
    let run = RunConfig::from_toml_with(SMOKE_CONFIG, &[])?;
    let dc = DatagenConfig {
        seed: 7,
        speakers: 8,
        train: 64,
        dev: 0,
        test: 0,
        duration: (1.0, 1.0),
        enroll_s: 1.0,
        snr_lo: 0.0,
        snr_hi: 5.0,
        whamr_style: false,
    };
    let train = smoke_data(&dc)?;
    let steps = run.train.steps_per_epoch(train.len()) * run.train.max_epochs;
    let model = Model::new(run.model.clone(), run.train.seed, InitMode::Standard)?;
    let mut tr = Trainer::new(model, run.train.clone())?;
    let data = TrainData {
        train: train.clone(),
        dev: vec![],
    };
    tr.run(&data, &mut |_| {})?;
    let si_sdri = evaluate(&tr.model, &train)?.summary().si_sdri;
    let acc = speaker_accuracy(&tr.model, &train)?;
    let ok = steps <= 300 && si_sdri >= 5.0 && acc >= 0.9;
    let o = outcome(
        ok,
        format!(
            "{steps} steps (≤ 300); train SI-SDRi {si_sdri:+.2} dB (≥ +5); speaker accuracy {:.1}% (≥ 90%); {:.0} s",
            100.0 * acc,
            t.elapsed().as_secs_f64()
        ),
    );
    Ok((o, tr.model))
}

fn length_generalization(trained: &Model) -> xcrossnet::Result<Outcome> {
    let (frames, finite) = verify::length_generalization_with(trained, 4.0)?;
    let train_frames = trained.cfg.stft()?.num_frames(SAMPLE_RATE as usize);
    Ok(outcome(
        finite,
        format!("trained on {train_frames}-frame inputs; 4 s inference at {frames} frames, finite output: {finite}"),
    ))
}

/// Re-measures the target/interferer power ratio of generated anechoic
/// mixtures and compares it with the recorded SNR.
fn mixing_fidelity() -> xcrossnet::Result<Outcome> {
    let mut worst = 0.0f64;
    let mut in_range = true;
    let mut n = 0;
    for seed in 0..4u64 {
        let cfg = DatagenConfig {
            seed,
            duration: (1.0, 4.0),
            ..Default::default()
        };
        for (split, count) in [(Split::Train, 40), (Split::Test, 20)] {
            for i in 0..count {
                let g = generate_entry(&cfg, split, i, 1000 * seed + i as u64)?;
                let (s, itf) = (&g.sample.s.samples, &g.interferer.samples);
                let mix_ok = g.sample.y.samples.iter().zip(s.iter().zip(itf)).all(|(y, (a, b))| y == &(a + b));
                let measured = 10.0 * (dot(s, s) / dot(itf, itf)).log10();
                worst = worst.max((measured - g.entry.snr_db).abs());
                in_range &= (0.0..=5.0).contains(&g.entry.snr_db) && mix_ok;
                n += 1;
            }
        }
    }
    Ok(outcome(
        worst <= 0.01 && in_range,
        format!("{n} mixtures; max |measured − recorded| {worst:.2e} dB (≤ 0.01); all recorded SNRs in [0, 5]: {in_range}"),
    ))
}

fn determinism() -> xcrossnet::Result<Outcome> {
    let dc = DatagenConfig {
        seed: 11,
        speakers: 4,
        train: 6,
        dev: 2,
        test: 0,
        duration: (0.5, 0.5),
        enroll_s: 0.5,
        ..Default::default()
    };
    let samples: Vec<MixtureSample> = (0..8)
        .map(|i| Ok(generate_entry(&dc, if i < 6 { Split::Train } else { Split::Dev }, i, i as u64)?.sample))
        .collect::<xcrossnet::Result<_>>()?;
    let data = TrainData {
        train: samples[..6].to_vec(),
        dev: samples[6..].to_vec(),
    };
    let cfg = TrainConfig {
        max_lr: 5e-3,
        warmup_epochs: 1,
        max_epochs: 4,
        batch_size: 2,
        seed: 3,
        ..Default::default()
    };
    let tmp = tempfile::tempdir().map_err(|e| xcrossnet::Error::io(Path::new("tempdir"), e))?;
    let dir = |name: &str| -> xcrossnet::Result<std::path::PathBuf> {
        let d = tmp.path().join(name);
        fs::create_dir_all(&d).map_err(|e| xcrossnet::Error::io(&d, e))?;
        Ok(d)
    };
    let fresh = |d: &Path| -> xcrossnet::Result<Trainer> {
        Ok(Trainer::new(Model::new(ModelConfig::toy(), 9, InitMode::Standard)?, cfg.clone())?.with_run_dir(d))
    };
    let read = |p: &Path| fs::read(p).map_err(|e| xcrossnet::Error::io(p, e));

    let (a, b, c) = (dir("a")?, dir("b")?, dir("c")?);
    fresh(&a)?.run(&data, &mut |_| {})?;
    fresh(&b)?.run(&data, &mut |_| {})?;
    let same_logs = read(&a.join(LOG_FILE))? == read(&b.join(LOG_FILE))?;

    fresh(&c)?.run_epochs(&data, 2, &mut |_| {})?;
    let resumed_from = Trainer::resume(&c.join(LAST_CKPT))?.state.epoch;
    Trainer::resume(&c.join(LAST_CKPT))?.with_run_dir(&c).run(&data, &mut |_| {})?;
    let resume_log = read(&c.join(LOG_FILE))? == read(&a.join(LOG_FILE))?;
    let resume_ckpt = read(&c.join(LAST_CKPT))? == read(&a.join(LAST_CKPT))?;
    let records = read_log(&a.join(LOG_FILE))?.len();

    Ok(outcome(
        same_logs && resume_log && resume_ckpt && resumed_from == 2,
        format!(
            "two runs, {records}-record logs byte-identical: {same_logs}; resumed at epoch {resumed_from}: \
             log identical {resume_log}, final checkpoint identical {resume_ckpt}"
        ),
    ))
}

fn report(n: usize, name: &str, r: xcrossnet::Result<Outcome>, failures: &mut usize) {
    let o = r.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
    if !o.passed {
        *failures += 1;
    }
    println!("{} [{n:>2}] {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
}

fn main() -> ExitCode {
    // libtest flags such as --list must not start an 8-minute run.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut failures = 0;
    report(1, "non-reproducibility statement", Ok(non_reproducibility()), &mut failures);
    report(2, "parameter-count anchor", Ok(params()), &mut failures);
    report(3, "dsp suite", dsp(), &mut failures);
    report(4, "gradient suite", gradients(), &mut failures);
    report(5, "loss/metric algebra", loss_metric_algebra(), &mut failures);
    report(6, "structural identities", structural(), &mut failures);
    let trained = match overfit_smoke() {
        Ok((o, m)) => {
            report(7, "overfit smoke", Ok(o), &mut failures);
            Some(m)
        }
        Err(e) => {
            report(7, "overfit smoke", Err(e), &mut failures);
            None
        }
    };
    match &trained {
        Some(m) => report(8, "length generalization", length_generalization(m), &mut failures),
        None => report(8, "length generalization", Ok(outcome(false, "no trained model")), &mut failures),
    }
    report(9, "mixing fidelity", mixing_fidelity(), &mut failures);
    report(10, "determinism", determinism(), &mut failures);
    println!("{} of 10 criteria passed", 10 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
