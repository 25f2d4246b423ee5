//! Self-checks behind `xcrossnet verify`: finite-difference gradients, STFT
//! reconstruction, loss/metric algebra, network shapes and structural
//! identities, and the parameter budget.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{istft, istft_tensor, pack_ri_tensors, stft, stft_tensor, StftConfig, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::losses::{loss_ce, loss_mag, loss_sisdr, loss_total, si_sdr};
use crate::model::{blocks, forward_with, param_count, param_ledger, Binder, InitMode, Mode, Model, ModelConfig, ParamStore};
use crate::tensor::{check_gradients, Conv1dSpec, GradInput, Tensor};

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const PARAM_BAND: (usize, usize) = (4_100_000, 6_100_000);
pub const PUBLISHED_PARAMS: f64 = 5.1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Dsp,
    Metrics,
    Shapes,
    Params,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 6] = ["gradcheck", "dsp", "metrics", "shapes", "params", "all"];
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gradcheck" => Suite::Gradcheck,
            "dsp" => Suite::Dsp,
            "metrics" => Suite::Metrics,
            "shapes" => Suite::Shapes,
            "params" => Suite::Params,
            "all" => Suite::All,
            _ => {
                return Err(Error::invalid(format!(
                    "unknown suite '{s}' (expected one of {})",
                    Suite::NAMES.join(", ")
                )))
            }
        })
    }
}

/// One verified invariant with the measured value.
#[derive(Debug, Clone)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub measured: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} [{}] {}: {}", self.suite, self.name, self.measured)
    }
}

fn check(suite: &'static str, name: impl Into<String>, passed: bool, measured: String) -> Check {
    Check {
        suite,
        name: name.into(),
        passed,
        measured,
    }
}

pub fn run(suite: Suite) -> Result<Vec<Check>> {
    match suite {
        Suite::Gradcheck => gradcheck_suite(),
        Suite::Dsp => dsp_suite(),
        Suite::Metrics => metrics_suite(),
        Suite::Shapes => shapes_suite(),
        Suite::Params => Ok(params_suite()),
        Suite::All => {
            let mut out = params_suite();
            for s in [Suite::Dsp, Suite::Metrics, Suite::Shapes, Suite::Gradcheck] {
                out.extend(run(s)?);
            }
            Ok(out)
        }
    }
}

// ---------------------------------------------------------------- params

pub fn params_suite() -> Vec<Check> {
    let cfg = ModelConfig::default();
    let total = param_count(&cfg);
    let mut out: Vec<Check> = param_ledger(&cfg)
        .into_iter()
        .map(|(name, n)| check("params", format!("ledger: {name}"), true, format!("{n}")))
        .collect();
    out.push(check(
        "params",
        format!("total for H={} k={} B={} heads={}", cfg.h, cfg.k, cfg.b, cfg.heads),
        (PARAM_BAND.0..=PARAM_BAND.1).contains(&total),
        format!(
            "{total} ({:.3} M; target band [{:.1} M, {:.1} M] around {:.1} M)",
            total as f64 / 1e6,
            PARAM_BAND.0 as f64 / 1e6,
            PARAM_BAND.1 as f64 / 1e6,
            PUBLISHED_PARAMS / 1e6
        ),
    ));
    out
}

// ---------------------------------------------------------------- dsp

/// Worst relative L2 reconstruction error over `n` random signals.
pub fn stft_round_trip_error(n: usize, seed: u64) -> Result<f64> {
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let len = rng.random_range(1000..=40000);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Waveform::new(x, SAMPLE_RATE)?;
        let back = istft(&stft(&w, &cfg)?, len)?;
        let err: f64 = w.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).powi(2)).sum();
        worst = worst.max((err / w.samples.iter().map(|v| v * v).sum::<f64>()).sqrt());
    }
    Ok(worst)
}

/// Worst relative deviation of `STFT(a·x + b·y)` from `a·STFT(x) + b·STFT(y)`.
pub fn stft_linearity_error(n: usize, seed: u64) -> Result<f64> {
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let len = rng.random_range(1000..=8000);
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let [sx, sy, sz] = [x, y, z].map(|v| stft(&Waveform::new(v, SAMPLE_RATE).unwrap(), &cfg));
        let (sx, sy, sz) = (sx?, sy?, sz?);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..sz.real.len() {
            let er = sz.real[i] - (a * sx.real[i] + b * sy.real[i]);
            let ei = sz.imag[i] - (a * sx.imag[i] + b * sy.imag[i]);
            num += er * er + ei * ei;
            den += sz.real[i].powi(2) + sz.imag[i].powi(2);
        }
        worst = worst.max((num / den).sqrt());
    }
    Ok(worst)
}

pub fn dsp_suite() -> Result<Vec<Check>> {
    let rt = stft_round_trip_error(100, 11)?;
    let lin = stft_linearity_error(20, 12)?;
    Ok(vec![
        check(
            "dsp",
            "STFT→iSTFT relative L2 error, 100 signals of 1000–40000 samples",
            rt < 1e-10,
            format!("{rt:.3e} (< 1e-10)"),
        ),
        check("dsp", "STFT linearity", lin < 1e-10, format!("{lin:.3e} (< 1e-10)")),
    ])
}

// ---------------------------------------------------------------- metrics

/// SI-SDR through the normalized correlation `ρ`: `10·log10(ρ² / (1 − ρ²))`.
pub fn si_sdr_via_correlation(est: &[f64], reference: &[f64]) -> f64 {
    let dot: f64 = est.iter().zip(reference).map(|(a, b)| a * b).sum();
    let ee: f64 = est.iter().map(|v| v * v).sum();
    let ss: f64 = reference.iter().map(|v| v * v).sum();
    let r2 = dot * dot / (ee * ss);
    10.0 * (r2 / (1.0 - r2)).log10()
}

pub fn metrics_suite() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut rand_vec = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let mut out = Vec::new();

    let stft_cfg = StftConfig::default();
    let mut worst_add = 0.0f64;
    for _ in 0..10 {
        let (e, s, l) = (rand_vec(400), rand_vec(400), rand_vec(4));
        let b = loss_total(&Tensor::new(e, &[400])?, &s, &Tensor::new(l, &[4])?, 1, &stft_cfg)?;
        worst_add = worst_add.max((b.total.item()? - ((b.mag + b.sisdr) + b.ce)).abs());
    }
    out.push(check(
        "metrics",
        "total = mag + sisdr + ce",
        worst_add == 0.0,
        format!("max |difference| {worst_add:e}"),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst_scale = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(16..256);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noise = rng.random_range(0.05..2.0);
        let e: Vec<f64> = s.iter().map(|v| v + noise * rng.random_range(-1.0..1.0)).collect();
        let beta = rng.random_range(0.1..10.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let eb: Vec<f64> = e.iter().map(|v| beta * v).collect();
        let base = si_sdr(&e, &s)?;
        worst_scale = worst_scale.max((si_sdr(&eb, &s)? - base).abs());
        worst_oracle = worst_oracle.max((base - si_sdr_via_correlation(&e, &s)).abs());
    }
    out.push(check(
        "metrics",
        "SI-SDR scale invariance, 1000 random triples",
        worst_scale < 1e-9,
        format!("max deviation {worst_scale:.3e} dB (< 1e-9)"),
    ));
    out.push(check(
        "metrics",
        "SI-SDR against correlation-form oracle, 1000 pairs",
        worst_oracle < 1e-9,
        format!("max deviation {worst_oracle:.3e} dB (< 1e-9)"),
    ));
    let hand = si_sdr(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0])?;
    out.push(check(
        "metrics",
        "s=[1,0,0,0], ŝ=[1,1,0,0] gives 0 dB",
        hand == 0.0,
        format!("{hand} dB"),
    ));
    Ok(out)
}

// ---------------------------------------------------------------- gradcheck

/// Deterministic data in `[lo, hi)`, bounded away from zero when `lo > 0`.
fn data(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values in `±[0.2, 1)`, away from the kinks of abs/relu/prelu.
fn signed(seed: u64, n: usize) -> Vec<f64> {
    data(seed, n, 0.2, 1.0)
        .into_iter()
        .zip(data(seed + 1000, n, 0.0, 1.0))
        .map(|(v, s)| if s < 0.5 { -v } else { v })
        .collect()
}

fn input(name: &str, seed: u64, shape: &[usize]) -> GradInput {
    GradInput::new(name, data(seed, shape.iter().product(), -1.0, 1.0), shape)
}

/// Reduces `t` to a scalar with fixed pseudo-random weights so every output
/// element contributes a distinct gradient.
fn wsum(t: &Tensor) -> Result<Tensor> {
    let w = Tensor::new(data(777 + t.numel() as u64, t.numel(), -1.0, 1.0), t.shape())?;
    Ok(t.mul(&w)?.sum_all())
}

type GradFn = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;

fn primitive_cases() -> Vec<(&'static str, Vec<GradInput>, GradFn)> {
    let pos = |name: &str, seed, shape: &[usize]| GradInput::new(name, data(seed, shape.iter().product(), 0.5, 2.0), shape);
    let sgn = |name: &str, seed, shape: &[usize]| GradInput::new(name, signed(seed, shape.iter().product()), shape);
    let un = |f: fn(&Tensor) -> Tensor| -> GradFn { Box::new(move |t: &[Tensor]| wsum(&f(&t[0]))) };
    vec![
        ("add (broadcast)", vec![input("a", 1, &[3, 4]), input("b", 2, &[4])], Box::new(|t: &[Tensor]| wsum(&t[0].add(&t[1])?))),
        ("sub (broadcast)", vec![input("a", 3, &[2, 3, 4]), input("b", 4, &[3, 1])], Box::new(|t: &[Tensor]| wsum(&t[0].sub(&t[1])?))),
        ("mul (broadcast)", vec![input("a", 5, &[3, 4]), input("b", 6, &[3, 1])], Box::new(|t: &[Tensor]| wsum(&t[0].mul(&t[1])?))),
        ("div", vec![input("a", 7, &[3, 4]), pos("b", 8, &[4])], Box::new(|t: &[Tensor]| wsum(&t[0].div(&t[1])?))),
        ("scale", vec![input("x", 9, &[5])], un(|x| x.scale(-1.7))),
        ("add_scalar", vec![input("x", 10, &[5])], un(|x| x.add_scalar(0.3))),
        ("neg", vec![input("x", 11, &[5])], un(|x| x.neg())),
        ("square", vec![input("x", 12, &[5])], un(|x| x.square())),
        ("sqrt", vec![pos("x", 13, &[5])], un(|x| x.sqrt())),
        ("exp", vec![input("x", 14, &[5])], un(|x| x.exp())),
        ("ln", vec![pos("x", 15, &[5])], un(|x| x.ln())),
        ("log10", vec![pos("x", 16, &[5])], un(|x| x.log10())),
        ("abs", vec![sgn("x", 17, &[6])], un(|x| x.abs())),
        ("sigmoid", vec![input("x", 18, &[5])], un(|x| x.sigmoid())),
        ("relu", vec![sgn("x", 19, &[6])], un(|x| x.relu())),
        ("silu", vec![input("x", 20, &[5])], un(|x| x.silu())),
        (
            "prelu",
            vec![sgn("x", 21, &[2, 3, 4]), pos("a", 22, &[3])],
            Box::new(|t: &[Tensor]| wsum(&t[0].prelu(&t[1], 1)?)),
        ),
        ("glu", vec![input("x", 23, &[3, 6])], Box::new(|t: &[Tensor]| wsum(&t[0].glu(1)?))),
        ("matmul (batched)", vec![input("a", 24, &[2, 3, 4]), input("b", 25, &[2, 4, 5])], Box::new(|t: &[Tensor]| wsum(&t[0].matmul(&t[1])?))),
        ("matmul (shared rhs)", vec![input("a", 26, &[2, 3, 4]), input("b", 27, &[4, 2])], Box::new(|t: &[Tensor]| wsum(&t[0].matmul(&t[1])?))),
        ("matmul_t", vec![input("a", 28, &[2, 3, 4]), input("b", 29, &[2, 5, 4])], Box::new(|t: &[Tensor]| wsum(&t[0].matmul_t(&t[1])?))),
        (
            "linear",
            vec![input("x", 30, &[2, 3, 4]), input("w", 31, &[5, 4]), input("b", 32, &[5])],
            Box::new(|t: &[Tensor]| wsum(&t[0].linear(&t[1], Some(&t[2]))?)),
        ),
        (
            "conv1d (grouped, same)",
            vec![input("x", 33, &[2, 4, 7]), input("w", 34, &[6, 2, 3]), input("b", 35, &[6])],
            Box::new(|t: &[Tensor]| wsum(&t[0].conv1d(&t[1], Some(&t[2]), Conv1dSpec::same(3, 2))?)),
        ),
        (
            "conv1d (im2col path)",
            vec![input("x", 36, &[1, 3, 9]), input("w", 37, &[4, 3, 5])],
            Box::new(|t: &[Tensor]| wsum(&t[0].conv1d(&t[1], None, Conv1dSpec::same(5, 1))?)),
        ),
        (
            "conv1d (stride 2)",
            vec![input("x", 38, &[1, 2, 9]), input("w", 39, &[3, 2, 3]), input("b", 40, &[3])],
            Box::new(|t: &[Tensor]| {
                let spec = Conv1dSpec {
                    stride: 2,
                    padding: 1,
                    groups: 1,
                };
                wsum(&t[0].conv1d(&t[1], Some(&t[2]), spec)?)
            }),
        ),
        (
            "conv1d_along",
            vec![input("x", 41, &[5, 2, 4]), input("w", 42, &[4, 1, 3])],
            Box::new(|t: &[Tensor]| wsum(&t[0].conv1d_along(2, 0, &t[1], None, Conv1dSpec::same(3, 4))?)),
        ),
        (
            "layer_norm",
            vec![input("x", 43, &[3, 2, 4]), input("g", 44, &[2, 4]), input("b", 45, &[2, 4])],
            Box::new(|t: &[Tensor]| wsum(&t[0].layer_norm(1..3, &t[1], &t[2], 1e-5)?)),
        ),
        ("softmax", vec![input("x", 46, &[3, 5])], Box::new(|t: &[Tensor]| wsum(&t[0].softmax_lastdim()?))),
        ("log_softmax", vec![input("x", 47, &[3, 5])], Box::new(|t: &[Tensor]| wsum(&t[0].log_softmax_lastdim()?))),
        ("sum_all", vec![input("x", 48, &[3, 2])], Box::new(|t: &[Tensor]| Ok(t[0].sum_all().square()))),
        ("mean_all", vec![input("x", 49, &[3, 2])], Box::new(|t: &[Tensor]| Ok(t[0].mean_all().square()))),
        ("sum_axis", vec![input("x", 50, &[3, 4, 2])], Box::new(|t: &[Tensor]| wsum(&t[0].sum_axis(1)?))),
        ("mean_axis", vec![input("x", 51, &[3, 4, 2])], Box::new(|t: &[Tensor]| wsum(&t[0].mean_axis(2)?))),
        (
            "mean_axis_order_invariant",
            vec![input("x", 52, &[3, 4, 2])],
            Box::new(|t: &[Tensor]| wsum(&t[0].mean_axis_order_invariant(1)?)),
        ),
        ("reshape", vec![input("x", 53, &[3, 4])], Box::new(|t: &[Tensor]| wsum(&t[0].reshape(&[2, 6])?))),
        ("permute", vec![input("x", 54, &[2, 3, 4])], Box::new(|t: &[Tensor]| wsum(&t[0].permute(&[2, 0, 1])?))),
        ("transpose", vec![input("x", 55, &[2, 3, 4])], Box::new(|t: &[Tensor]| wsum(&t[0].transpose(0, 2)?))),
        (
            "concat",
            vec![input("a", 56, &[2, 3]), input("b", 57, &[2, 2])],
            Box::new(|t: &[Tensor]| wsum(&Tensor::concat(&[t[0].clone(), t[1].clone()], 1)?)),
        ),
        ("slice", vec![input("x", 58, &[3, 6])], Box::new(|t: &[Tensor]| wsum(&t[0].slice(1, 1, 4)?))),
        ("upsample_nearest", vec![input("x", 59, &[2, 3])], Box::new(|t: &[Tensor]| wsum(&t[0].upsample_nearest(1, 2)?))),
        (
            "embedding_add",
            vec![input("x", 60, &[2, 3, 4])],
            Box::new(|t: &[Tensor]| {
                let table = Tensor::new(data(61, 14, -1.0, 1.0), &[7, 2])?;
                wsum(&t[0].embedding_add(&table, 2)?)
            }),
        ),
        (
            "stft",
            vec![input("x", 62, &[30])],
            Box::new(|t: &[Tensor]| wsum(&stft_tensor(&t[0], &StftConfig::for_bins(5)?)?)),
        ),
        (
            "istft",
            vec![input("X", 63, &[2, 5, 6])],
            Box::new(|t: &[Tensor]| wsum(&istft_tensor(&t[0], &StftConfig::for_bins(5)?, 19)?)),
        ),
        (
            "pack_ri",
            vec![input("re", 64, &[3, 4]), input("im", 65, &[3, 4])],
            Box::new(|t: &[Tensor]| wsum(&pack_ri_tensors(&t[0], &t[1])?)),
        ),
    ]
}

/// Toy-config store with every parameter nonzero so no path is gated off.
fn toy_model() -> Result<(ModelConfig, ParamStore, Tensor)> {
    let cfg = ModelConfig::toy();
    let m = Model::new(cfg.clone(), 5, InitMode::RandomNonzero)?;
    let table = m.table().clone();
    Ok((cfg, m.params, table))
}

fn param_inputs(store: &ParamStore, prefixes: &[&str]) -> Vec<GradInput> {
    store
        .iter()
        .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
        .map(|(n, p)| GradInput::new(n, p.data.clone(), &p.shape))
        .collect()
}

/// Gradient check of `f(binder, extra inputs)` over the parameters under
/// `prefixes` and the given extra inputs.
fn block_case<F>(store: &ParamStore, prefixes: &[&str], extra: Vec<GradInput>, f: F) -> Result<crate::tensor::GradReport>
where
    F: Fn(&Binder, &[Tensor]) -> Result<Tensor>,
{
    let mut inputs = param_inputs(store, prefixes);
    let np = inputs.len();
    let names: Vec<String> = inputs.iter().map(|i| i.name.clone()).collect();
    inputs.extend(extra);
    check_gradients(
        |ts| {
            let b = Binder::from_tensors(&names, &ts[..np])?;
            f(&b, &ts[np..])
        },
        &inputs,
        GRAD_EPS,
    )
}

/// Samples giving `frames` STFT frames for the toy config.
fn toy_len(frames: usize) -> usize {
    (frames - 1) * 4
}

pub fn gradcheck_suite() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut push = |name: String, r: crate::tensor::GradReport| {
        let worst = r
            .rows
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
            .map(|w| format!(" (worst {}[{}])", w.name, w.index))
            .unwrap_or_default();
        out.push(check(
            "gradcheck",
            name,
            r.passes(GRAD_TOL),
            format!("max rel err {:.2e}{worst}", r.max_rel_err),
        ));
    };
    for (name, inputs, f) in primitive_cases() {
        push(format!("op {name}"), check_gradients(|t| f(t), &inputs, GRAD_EPS)?);
    }

    let (cfg, store, table) = toy_model()?;
    let (h, f, d) = (cfg.h, cfg.f, cfg.d_attn);
    let (t, ta) = (6, 4);
    push(
        "block speech_encode".into(),
        block_case(&store, &["enc."], vec![input("X", 100, &[2, f, t])], |b, x| {
            wsum(&blocks::speech_encode(b, &cfg, &x[0])?)
        })?,
    );
    push(
        "block rel_block".into(),
        block_case(&store, &["spk.rel0."], vec![input("x", 101, &[h, f, ta])], |b, x| {
            wsum(&blocks::rel_block(b, "spk.rel0", &cfg, &x[0])?)
        })?,
    );
    push(
        "block speaker_encode".into(),
        block_case(&store, &["spk."], vec![input("r_a", 102, &[h, f, ta])], |b, x| {
            let e = blocks::speaker_encode(b, &cfg, &x[0])?;
            wsum(&e.tokens)?.add(&wsum(&e.logits)?)
        })?,
    );
    push(
        "block cross-attention mha".into(),
        block_case(
            &store,
            &["blk0.attn.ca.q.", "blk0.attn.ca.k.", "blk0.attn.ca.v."],
            vec![input("q", 103, &[t, d]), input("kv", 104, &[ta, d])],
            |b, x| wsum(&blocks::mha(b, "blk0.attn.ca", cfg.heads, &x[0], &x[1])?.0),
        )?,
    );
    push(
        "block fused_gmhsa".into(),
        block_case(
            &store,
            &["blk0.attn."],
            vec![input("x", 105, &[h, f, t]), input("tokens", 106, &[ta, d])],
            |b, x| wsum(&blocks::fused_gmhsa(b, "blk0.attn", &cfg, &x[0], &x[1])?),
        )?,
    );
    push(
        "block cross_band".into(),
        block_case(&store, &["blk0.cross."], vec![input("x", 107, &[h, f, t])], |b, x| {
            wsum(&blocks::cross_band(b, "blk0.cross", &cfg, &x[0])?)
        })?,
    );
    push(
        "block narrow_band".into(),
        block_case(&store, &["blk0.narrow."], vec![input("x", 108, &[h, f, t])], |b, x| {
            wsum(&blocks::narrow_band(b, "blk0.narrow", &cfg, &x[0])?)
        })?,
    );
    push(
        "block rcpe".into(),
        block_case(&store, &[], vec![input("x", 109, &[h, f, t])], |_, x| wsum(&blocks::rcpe(&table, &x[0], 3)?))?,
    );
    push(
        "block extractor".into(),
        block_case(
            &store,
            &["blk"],
            vec![input("r_y", 110, &[h, f, t]), input("tokens", 111, &[ta, d])],
            |b, x| wsum(&blocks::extractor(b, &cfg, &table, &x[0], &x[1], 2)?),
        )?,
    );
    push(
        "block decode".into(),
        block_case(&store, &["dec."], vec![input("e", 112, &[h, f, t])], |b, x| {
            wsum(&blocks::decode(b, &cfg, &x[0])?)
        })?,
    );

    let sr = SAMPLE_RATE;
    let y = Waveform::new(data(120, toy_len(t), -1.0, 1.0), sr)?;
    let a = Waveform::new(data(121, toy_len(ta), -1.0, 1.0), sr)?;
    let target = data(122, y.len(), -1.0, 1.0);
    let stft_cfg = cfg.stft()?;
    push(
        format!("full model, toy config (T={t}, T_a={ta}), all parameters"),
        block_case(&store, &[""], vec![], |b, _| {
            let o = forward_with(b, &cfg, &table, &y, &a, Mode::Eval)?;
            Ok(loss_total(&o.estimate, &target, &o.speaker.logits, 1, &stft_cfg)?.total)
        })?,
    );

    let s = data(130, 40, -1.0, 1.0);
    push(
        "loss_mag".into(),
        check_gradients(|x| loss_mag(&x[0], &s, &StftConfig::for_bins(5)?), &[input("est", 131, &[40])], GRAD_EPS)?,
    );
    push(
        "loss_sisdr".into(),
        check_gradients(|x| Ok(loss_sisdr(&x[0], &s)?.0), &[input("est", 132, &[40])], GRAD_EPS)?,
    );
    push(
        "loss_ce".into(),
        check_gradients(|x| loss_ce(&x[0], 2), &[input("logits", 133, &[4])], GRAD_EPS)?,
    );
    Ok(out)
}

// ---------------------------------------------------------------- shapes

fn bit_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn shapes_suite() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let sr = SAMPLE_RATE;

    let (cfg, store, table) = toy_model()?;
    let b = Binder::new(&store, false)?;
    let mut ok = true;
    let mut seen = Vec::new();
    for (n, na) in [(17, 9), (40, 12), (101, 33)] {
        let y = Waveform::new(data(200 + n as u64, n, -1.0, 1.0), sr)?;
        let a = Waveform::new(data(300 + n as u64, na, -1.0, 1.0), sr)?;
        let o = forward_with(&b, &cfg, &table, &y, &a, Mode::Eval)?;
        let t = cfg.stft()?.num_frames(n);
        let ta = cfg.stft()?.num_frames(na);
        ok &= o.estimate.shape() == [n]
            && o.spec.shape() == [2, cfg.f, t]
            && o.speaker.tokens.shape() == [ta, cfg.d_attn]
            && o.speaker.logits.shape() == [cfg.n_s]
            && o.estimate.all_finite();
        seen.push(format!("{n}→[2,{},{t}]→{}", cfg.f, o.estimate.numel()));
    }
    out.push(check("shapes", "toy forward: output length = mixture length", ok, seen.join(", ")));

    let zeroed = Model::new(cfg.clone(), 6, InitMode::Standard)?;
    let zb = zeroed.bind(false)?;
    let x = Tensor::new(data(400, cfg.h * cfg.f * 6, -1.0, 1.0), &[cfg.h, cfg.f, 6])?;
    let tok = Tensor::new(data(401, 4 * cfg.d_attn, -1.0, 1.0), &[4, cfg.d_attn])?;
    let ident = |name: &str, y: Tensor| check("shapes", format!("zero residual output: {name} is identity"), bit_equal(y.data(), x.data()), "bitwise".into());
    out.push(ident("rel_block", blocks::rel_block(&zb, "spk.rel0", &cfg, &x)?));
    out.push(ident("fused_gmhsa", blocks::fused_gmhsa(&zb, "blk0.attn", &cfg, &x, &tok)?));
    out.push(ident("cross_band", blocks::cross_band(&zb, "blk0.cross", &cfg, &x)?));
    out.push(ident("narrow_band", blocks::narrow_band(&zb, "blk0.narrow", &cfg, &x)?));
    let zero_table = Tensor::zeros(&[cfg.rcpe_max, cfg.h])?;
    out.push(ident("extractor (zero positional table)", blocks::extractor(&zb, &cfg, &zero_table, &x, &tok, 0)?));

    let (invariant_when_ablated, varies_otherwise) = enrollment_influence(&ModelConfig::toy())?;
    out.push(check(
        "shapes",
        "cross-attention zeroed ⇒ output independent of enrollment",
        invariant_when_ablated,
        "two enrollments, bitwise comparison".into(),
    ));
    out.push(check(
        "shapes",
        "cross-attention active ⇒ output depends on enrollment",
        varies_otherwise,
        "two enrollments differ".into(),
    ));

    let (frames, finite) = length_generalization()?;
    out.push(check(
        "shapes",
        "small config: 4 s inference (untrained weights)",
        finite,
        format!("{frames} frames, finite output"),
    ));
    Ok(out)
}

/// `(outputs equal for two enrollments with cross-attention zeroed, outputs
/// differ with it active)`.
pub fn enrollment_influence(cfg: &ModelConfig) -> Result<(bool, bool)> {
    let sr = SAMPLE_RATE;
    let stft_cfg = cfg.stft()?;
    let n = 8 * stft_cfg.hop;
    let y = Waveform::new(data(500, n, -1.0, 1.0), sr)?;
    let a1 = Waveform::new(data(501, n, -1.0, 1.0), sr)?;
    let a2 = Waveform::new(data(502, n + stft_cfg.hop, -1.0, 1.0), sr)?;
    let mut m = Model::new(cfg.clone(), 7, InitMode::RandomNonzero)?;
    let varies = !bit_equal(&m.extract(&y, &a1)?.samples, &m.extract(&y, &a2)?.samples);
    m.ablate_cross_attention();
    let invariant = bit_equal(&m.extract(&y, &a1)?.samples, &m.extract(&y, &a2)?.samples);
    Ok((invariant, varies))
}

/// Runs the small config on a 4 s mixture; returns the frame count and
/// whether every output sample is finite.
pub fn length_generalization() -> Result<(usize, bool)> {
    length_generalization_with(&Model::new(ModelConfig::small(), 8, InitMode::Standard)?, 4.0)
}

/// Extracts from a `seconds`-long random mixture with `m`.
pub fn length_generalization_with(m: &Model, seconds: f64) -> Result<(usize, bool)> {
    let n = (seconds * SAMPLE_RATE as f64).round() as usize;
    let y = Waveform::new(data(600, n, -0.5, 0.5), SAMPLE_RATE)?;
    let a = Waveform::new(data(601, SAMPLE_RATE as usize, -0.5, 0.5), SAMPLE_RATE)?;
    let est = m.extract(&y, &a)?;
    Ok((m.cfg.stft()?.num_frames(n), est.len() == n && est.samples.iter().all(|v| v.is_finite())))
}
