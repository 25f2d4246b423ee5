use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xcrossnet::config::{parse_override, RunConfig};
use xcrossnet::datagen::{build_dataset, file_digest, DatagenConfig, DatasetManifest, Split, MANIFEST_FILE};
use xcrossnet::dsp::wav::{read_wav, write_wav};
use xcrossnet::losses::si_sdr;
use xcrossnet::model::{InitMode, Model};
use xcrossnet::trainer::{evaluate, evaluate_manifest, speaker_accuracy, LogRecord, TrainData, Trainer, BEST_CKPT, CRASH_DUMP, LAST_CKPT, LOG_FILE};
use xcrossnet::verify::{self, Suite};
use xcrossnet::Error;

const OVERRIDE_HELP: &str = "Config keys can be overridden as `--section.key value` or `--section.key=value` \
(for example `--train.max-epochs 0`), or with `--set section.key=value`. Keys are case-insensitive and `-` \
reads as `_`.";

#[derive(Parser, Debug)]
#[command(name = "xcrossnet", version, about = "Target speaker extraction: data generation, training, evaluation, inference")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic two-speaker dataset and its manifest.
    Datagen(DatagenArgs),
    /// Train a model; writes a run directory with the resolved config, log and checkpoints.
    #[command(after_help = OVERRIDE_HELP)]
    Train(TrainArgs),
    /// Report SI-SDRi and SDRi of a checkpoint on one manifest split.
    #[command(after_help = OVERRIDE_HELP)]
    Eval(EvalArgs),
    /// Extract the enrolled speaker from one mixture.
    Extract(ExtractArgs),
    /// Run self-check suites.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct DatagenArgs {
    /// Output directory; receives the WAV files and manifest.jsonl.
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of synthetic speakers (at least 4; the last quarter, minimum 2, is held out for test).
    #[arg(long, default_value_t = 8)]
    speakers: usize,
    #[arg(long, default_value_t = 64)]
    train: usize,
    #[arg(long, default_value_t = 16)]
    dev: usize,
    #[arg(long, default_value_t = 16)]
    test: usize,
    /// Shortest mixture, seconds.
    #[arg(long, default_value_t = 1.0)]
    min_duration: f64,
    /// Longest mixture, seconds.
    #[arg(long, default_value_t = 4.0)]
    max_duration: f64,
    /// Enrollment length, seconds.
    #[arg(long, default_value_t = 2.0)]
    enroll_s: f64,
    /// Lowest target-to-interferer SNR, dB.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    snr_lo: f64,
    /// Highest target-to-interferer SNR, dB.
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    snr_hi: f64,
    /// Add reverberation and background noise.
    #[arg(long)]
    whamr_style: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML run configuration; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    run_dir: PathBuf,
    /// Allow writing into an existing non-empty run directory.
    #[arg(long)]
    force: bool,
    /// Continue from `last.ckpt` in the run directory.
    #[arg(long, conflicts_with = "force")]
    resume: bool,
    /// `section.key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest to evaluate; defaults to `data.manifest` of the resolved config.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// When given, its model section must match the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write per-utterance records here (JSON lines).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    mixture: PathBuf,
    #[arg(long)]
    enrollment: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Clean reference; prints SI-SDR of the output and of the mixture.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// One of gradcheck, dsp, metrics, shapes, params, all.
    suite: String,
}

/// Failure with its exit code: 1 for preconditions and usage, 2 at runtime.
struct Fail(u8, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Manifest(_) | Error::Wav { .. } | Error::Io { .. } => 1,
            _ => 2,
        };
        Fail(code, e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> Fail {
    Fail(1, msg.into())
}

/// Pulls `--a.b value` and `--a.b=value` out of `argv`.
fn split_overrides(argv: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), Fail> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        let dotted = arg
            .strip_prefix("--")
            .filter(|s| s.split('=').next().is_some_and(|k| k.contains('.') && !k.contains('/')));
        match dotted {
            Some(body) => {
                if let Some((k, v)) = body.split_once('=') {
                    overrides.push((k.to_string(), v.to_string()));
                } else {
                    let v = it.next().ok_or_else(|| usage(format!("--{body} needs a value")))?;
                    overrides.push((body.to_string(), v));
                }
            }
            None => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}

fn resolve_config(path: Option<&Path>, set: &[String], mut overrides: Vec<(String, String)>) -> Result<RunConfig, Fail> {
    for s in set {
        overrides.push(parse_override(s)?);
    }
    Ok(RunConfig::load(path, &overrides)?)
}

fn cmd_datagen(a: DatagenArgs) -> Result<(), Fail> {
    let cfg = DatagenConfig {
        seed: a.seed,
        speakers: a.speakers,
        train: a.train,
        dev: a.dev,
        test: a.test,
        duration: (a.min_duration, a.max_duration),
        enroll_s: a.enroll_s,
        snr_lo: a.snr_lo,
        snr_hi: a.snr_hi,
        whamr_style: a.whamr_style,
    };
    let m = build_dataset(&cfg, &a.out)?;
    let path = a.out.join(MANIFEST_FILE);
    println!("wrote {} entries; manifest {}", m.entries.len(), path.display());
    println!("manifest sha256 {}", file_digest(&path)?);
    Ok(())
}

fn non_empty_dir(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn take(samples: Vec<xcrossnet::datagen::MixtureSample>, max: usize) -> Vec<xcrossnet::datagen::MixtureSample> {
    if max == 0 {
        samples
    } else {
        samples.into_iter().take(max).collect()
    }
}

fn cmd_train(a: TrainArgs, overrides: Vec<(String, String)>) -> Result<(), Fail> {
    let cfg = resolve_config(a.config.as_deref(), &a.set, overrides)?;
    let dir = &a.run_dir;
    if non_empty_dir(dir) && !a.force && !a.resume {
        return Err(usage(format!(
            "run directory {} is not empty; pass --force to write into it or --resume to continue",
            dir.display()
        )));
    }
    let manifest = DatasetManifest::load(&cfg.data.manifest)?;
    let data = TrainData {
        train: take(manifest.load_split(Split::Train)?, cfg.data.max_train),
        dev: take(manifest.load_split(Split::Dev)?, cfg.data.max_dev),
    };
    if data.train.is_empty() {
        return Err(usage(format!("{} has no train rows", cfg.data.manifest.display())));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if a.force {
        for name in [LOG_FILE, LAST_CKPT, BEST_CKPT, CRASH_DUMP, "summary.json"] {
            let p = dir.join(name);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }

    let mut trainer = if a.resume {
        let t = Trainer::resume(&dir.join(LAST_CKPT))?;
        if t.model.cfg != cfg.model || t.cfg != cfg.train {
            return Err(usage("the resolved config differs from the one stored in last.ckpt; resume with the original config"));
        }
        println!("resuming after epoch {} (step {})", t.state.epoch, t.state.step);
        t.with_run_dir(dir)
    } else {
        let path = dir.join("config.toml");
        fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
        let model = Model::new(cfg.model.clone(), cfg.train.seed, InitMode::Standard)?;
        println!(
            "model: {} parameters; {} train / {} dev mixtures",
            model.num_params(),
            data.train.len(),
            data.dev.len()
        );
        Trainer::new(model, cfg.train.clone())?.with_run_dir(dir)
    };
    let spe = cfg.train.steps_per_epoch(data.train.len());
    trainer.run(&data, &mut |r| match r {
        LogRecord::Step {
            step, epoch, lr, total, ..
        } if (step + 1) % spe as u64 == 0 => {
            println!("epoch {:>3} step {:>5} lr {lr:.2e} loss {total:.4}", epoch + 1, step + 1)
        }
        LogRecord::Dev { epoch, si_sdri, sdri, .. } => {
            println!("epoch {epoch:>3} dev SI-SDRi {si_sdri:.2} dB, SDRi {sdri:.2} dB")
        }
        _ => {}
    })?;
    let rep = evaluate(&trainer.model, &data.train)?.summary();
    let acc = speaker_accuracy(&trainer.model, &data.train)?;
    println!(
        "final train SI-SDRi {:.2} dB, SDRi {:.2} dB, speaker accuracy {:.1}%",
        rep.si_sdri,
        rep.sdri,
        100.0 * acc
    );
    let summary = serde_json::json!({
        "steps": trainer.state.step,
        "epochs": trainer.state.epoch,
        "train": rep,
        "train_speaker_accuracy": acc,
        "best_dev_si_sdri": trainer.state.best_dev_si_sdri,
    });
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).map_err(Error::from)?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn cmd_eval(a: EvalArgs, overrides: Vec<(String, String)>) -> Result<(), Fail> {
    let split: Split = a.split.parse()?;
    let (model, default_manifest) = if a.config.is_some() || !a.set.is_empty() || !overrides.is_empty() {
        let cfg = resolve_config(a.config.as_deref(), &a.set, overrides)?;
        (Model::load_expecting(&a.checkpoint, &cfg.model)?, cfg.data.manifest)
    } else {
        (Model::load(&a.checkpoint)?, RunConfig::default().data.manifest)
    };
    let manifest = a.manifest.unwrap_or(default_manifest);
    finish_eval(&model, &manifest, split, a.out.as_deref())
}

fn finish_eval(model: &Model, manifest: &Path, split: Split, out: Option<&Path>) -> Result<(), Fail> {
    let m = DatasetManifest::load(manifest)?;
    let rep = evaluate_manifest(model, &m, split)?;
    if rep.rows.is_empty() {
        return Err(usage(format!("{} has no {split} rows", manifest.display())));
    }
    print!("{}", rep.to_table());
    println!("(SDR is the plain energy ratio ‖s‖²/‖s − ŝ‖², not the BSS-eval projection)");
    if let Some(p) = out {
        fs::write(p, rep.to_jsonl()?).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> Result<(), Fail> {
    let model = Model::load(&a.checkpoint)?;
    let y = read_wav(&a.mixture)?;
    let e = read_wav(&a.enrollment)?;
    if y.sample_rate != e.sample_rate {
        return Err(usage(format!(
            "sample rates differ: mixture {} Hz, enrollment {} Hz",
            y.sample_rate, e.sample_rate
        )));
    }
    let est = model.extract(&y, &e)?;
    write_wav(&a.out, &est)?;
    println!("wrote {} samples to {}", est.len(), a.out.display());
    if let Some(r) = &a.reference {
        let s = read_wav(r)?;
        if s.len() != y.len() {
            return Err(usage(format!("reference has {} samples, mixture {}", s.len(), y.len())));
        }
        let (out, inp) = (si_sdr(&est.samples, &s.samples)?, si_sdr(&y.samples, &s.samples)?);
        println!("SI-SDR {out:.2} dB (mixture {inp:.2} dB, improvement {:.2} dB)", out - inp);
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Fail> {
    let suite: Suite = a.suite.parse().map_err(|e: Error| usage(e.to_string()))?;
    let start = std::time::Instant::now();
    let checks = verify::run(suite)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        println!("{c}");
    }
    println!(
        "{} checks, {failed} failed, {:.1} s",
        checks.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(Fail(2, format!("{failed} verification check(s) failed")));
    }
    Ok(())
}

fn run(argv: Vec<String>) -> Result<(), Fail> {
    let (argv, overrides) = split_overrides(argv)?;
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(usage(e.render().to_string())),
    };
    let takes_overrides = matches!(cli.cmd, Cmd::Train(_) | Cmd::Eval(_));
    if !overrides.is_empty() && !takes_overrides {
        let keys: Vec<_> = overrides.iter().map(|(k, _)| format!("--{k}")).collect();
        return Err(usage(format!("config overrides ({}) only apply to train and eval", keys.join(" "))));
    }
    match cli.cmd {
        Cmd::Datagen(a) => cmd_datagen(a),
        Cmd::Train(a) => cmd_train(a, overrides),
        Cmd::Eval(a) => cmd_eval(a, overrides),
        Cmd::Extract(a) => cmd_extract(a),
        Cmd::Verify(a) => cmd_verify(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            eprintln!("error: {}", msg.trim_end());
            ExitCode::from(code)
        }
    }
}
