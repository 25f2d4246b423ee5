//! Network blocks. Feature maps are `[H, F, T]` between blocks; each block
//! permutes internally to whatever layout its kernels want.

use super::{Binder, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Conv1dSpec, Tensor};

const LN_EPS: f64 = 1e-5;

fn expect_hft(op: &'static str, x: &Tensor, cfg: &ModelConfig) -> Result<usize> {
    let s = x.shape();
    if s.len() != 3 || s[0] != cfg.h || s[1] != cfg.f || s[2] == 0 {
        return Err(Error::shape(op, format!("expected [{}, {}, T], got {s:?}", cfg.h, cfg.f)));
    }
    Ok(s[2])
}

/// `[2, F, T]` → `[H, F, T]`: a time convolution whose input channels are the
/// real and imaginary parts of one bin, shared across bins.
pub fn speech_encode(b: &Binder, cfg: &ModelConfig, packed: &Tensor) -> Result<Tensor> {
    let s = packed.shape();
    if s.len() != 3 || s[0] != 2 || s[1] != cfg.f || s[2] == 0 {
        return Err(Error::shape("speech_encode", format!("expected [2, {}, T] with T ≥ 1, got {s:?}", cfg.f)));
    }
    packed
        .permute(&[1, 0, 2])?
        .conv1d(&b.get("enc.w")?, Some(&b.get("enc.b")?), Conv1dSpec::same(cfg.k, 1))?
        .permute(&[1, 0, 2])
}

fn down(b: &Binder, p: &str, x: &Tensor) -> Result<Tensor> {
    let spec = Conv1dSpec {
        stride: 2,
        padding: 1,
        groups: 1,
    };
    x.conv1d(&b.get(&format!("{p}.w"))?, Some(&b.get(&format!("{p}.b"))?), spec)?
        .prelu(&b.get(&format!("{p}.a"))?, 1)
}

fn up_add(x: &Tensor, skip: &Tensor) -> Result<Tensor> {
    let len = skip.shape()[2];
    x.upsample_nearest(2, 2)?.slice(2, 0, len)?.add(skip)
}

/// GLU gate followed by a two-level U-Net over time, with a residual around
/// the whole block.
pub fn rel_block(b: &Binder, p: &str, cfg: &ModelConfig, x: &Tensor) -> Result<Tensor> {
    let t = expect_hft("rel_block", x, cfg)?;
    if t < 4 {
        return Err(Error::shape("rel_block", format!("need at least 4 frames to downsample twice, got {t}")));
    }
    let g = x
        .permute(&[1, 2, 0])?
        .linear(&b.get(&format!("{p}.glu.w"))?, Some(&b.get(&format!("{p}.glu.b"))?))?
        .glu(2)?
        .permute(&[0, 2, 1])?;
    let e1 = down(b, &format!("{p}.e1"), &g)?;
    let e2 = down(b, &format!("{p}.e2"), &e1)?;
    let same = Conv1dSpec::same(3, 1);
    let d1 = up_add(&e2, &e1)?
        .conv1d(&b.get(&format!("{p}.d1.w"))?, Some(&b.get(&format!("{p}.d1.b"))?), same)?
        .prelu(&b.get(&format!("{p}.d1.a"))?, 1)?;
    let out = up_add(&d1, &g)?.conv1d(&b.get(&format!("{p}.out.w"))?, Some(&b.get(&format!("{p}.out.b"))?), same)?;
    x.add(&out.permute(&[1, 0, 2])?)
}

#[derive(Debug, Clone)]
pub struct SpeakerEmbedding {
    /// `[T_a, d_attn]`, keys and values for cross-attention.
    pub tokens: Tensor,
    /// `[H]`.
    pub pooled: Tensor,
    /// `[N_s]`.
    pub logits: Tensor,
}

pub fn speaker_encode(b: &Binder, cfg: &ModelConfig, r_a: &Tensor) -> Result<SpeakerEmbedding> {
    expect_hft("speaker_encode", r_a, cfg)?;
    let mut x = r_a.clone();
    for i in 0..cfg.b_spk {
        x = rel_block(b, &format!("spk.rel{i}"), cfg, &x)?;
    }
    let m = x.mean_axis_order_invariant(1)?;
    let tokens = m.transpose(0, 1)?.linear(&b.get("spk.tok.w")?, Some(&b.get("spk.tok.b")?))?;
    let pooled = m.mean_axis(1)?;
    let logits = pooled.linear(&b.get("spk.cls.w")?, Some(&b.get("spk.cls.b")?))?;
    Ok(SpeakerEmbedding { tokens, pooled, logits })
}

/// Sinusoidal table `[positions, channels]`.
pub fn positional_table(positions: usize, channels: usize) -> Result<Tensor> {
    let mut data = vec![0.0; positions * channels];
    for p in 0..positions {
        for c in 0..channels {
            let rate = 10000f64.powf(-((c / 2 * 2) as f64) / channels as f64);
            let a = p as f64 * rate;
            data[p * channels + c] = if c % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::new(data, &[positions, channels])
}

/// Adds table rows `offset .. offset + T` to every frequency bin.
pub fn rcpe(table: &Tensor, x: &Tensor, offset: usize) -> Result<Tensor> {
    let t = x.shape().last().copied().unwrap_or(0);
    let max = table.shape()[0];
    if t > max {
        return Err(Error::Config(format!(
            "input has {t} frames but the positional table holds {max}; increase model.rcpe_max"
        )));
    }
    if offset + t > max {
        return Err(Error::invalid(format!("positional offset {offset} + {t} frames exceeds {max}")));
    }
    x.embedding_add(table, offset)
}

/// Multi-head attention of queries `[T, d]` over keys/values `[S, d]`.
/// Returns the output `[T, d]` and the attention maps `[heads, T, S]`.
pub fn mha(b: &Binder, p: &str, heads: usize, q_in: &Tensor, kv_in: &Tensor) -> Result<(Tensor, Tensor)> {
    let d = q_in.shape()[1];
    let dh = d / heads;
    let proj = |m: &str, x: &Tensor| -> Result<Tensor> {
        let (t, _) = (x.shape()[0], x.shape()[1]);
        x.linear(&b.get(&format!("{p}.{m}.w"))?, Some(&b.get(&format!("{p}.{m}.b"))?))?
            .reshape(&[t, heads, dh])?
            .permute(&[1, 0, 2])
    };
    let (q, k, v) = (proj("q", q_in)?, proj("k", kv_in)?, proj("v", kv_in)?);
    let attn = q.matmul_t(&k)?.scale(1.0 / (dh as f64).sqrt()).softmax_lastdim()?;
    let out = attn.matmul(&v)?.permute(&[1, 0, 2])?.reshape(&[q_in.shape()[0], d])?;
    Ok((out, attn))
}

/// Self-attention over time-frame tokens fused with cross-attention to the
/// speaker tokens.
pub fn fused_gmhsa(b: &Binder, p: &str, cfg: &ModelConfig, x: &Tensor, spk_tokens: &Tensor) -> Result<Tensor> {
    let t = expect_hft("fused_gmhsa", x, cfg)?;
    let (d, e, f) = (cfg.d_attn, cfg.attn_bin_dim, cfg.f);
    if spk_tokens.ndim() != 2 || spk_tokens.shape()[1] != d {
        return Err(Error::shape(
            "fused_gmhsa",
            format!("speaker tokens {:?} do not have width d_attn = {d}", spk_tokens.shape()),
        ));
    }
    let w = |n: &str| b.get(&format!("{p}.{n}"));
    let z = x
        .permute(&[2, 1, 0])?
        .layer_norm(1..3, &w("ln.g")?, &w("ln.b")?, LN_EPS)?
        .linear(&w("bin.w")?, Some(&w("bin.b")?))?
        .reshape(&[t, f * e])?
        .linear(&w("proj.w")?, Some(&w("proj.b")?))?;
    let s = spk_tokens.layer_norm(1..2, &w("spk.ln.g")?, &w("spk.ln.b")?, LN_EPS)?;
    let (sa, _) = mha(b, &format!("{p}.sa"), cfg.heads, &z, &z)?;
    let (ca, _) = mha(b, &format!("{p}.ca"), cfg.heads, &z, &s)?;
    let o = sa
        .linear(&w("sa.out.w")?, Some(&w("sa.out.b")?))?
        .add(&ca.linear(&w("ca.out.w")?, None)?)?
        .reshape(&[t, f, e])?
        .linear(&w("unbin.w")?, Some(&w("unbin.b")?))?
        .permute(&[2, 1, 0])?;
    x.add(&o)
}

fn freq_conv(b: &Binder, p: &str, cfg: &ModelConfig, x: &Tensor) -> Result<Tensor> {
    let w = |n: &str| b.get(&format!("{p}.{n}"));
    x.layer_norm(1..2, &w("ln.g")?, &w("ln.b")?, LN_EPS)?
        .conv1d_along(1, 2, &w("w")?, Some(&w("b")?), Conv1dSpec::same(cfg.cross_kernel, cfg.cross_groups))?
        .prelu(&w("a")?, 1)
}

fn full_band(b: &Binder, p: &str, x: &Tensor) -> Result<Tensor> {
    let w = |n: &str| b.get(&format!("{p}.{n}"));
    w("in.w")?
        .matmul(x)?
        .add(&w("in.b")?)?
        .silu()
        .permute(&[1, 0, 2])?
        .matmul_t(&w("freq.w")?)?
        .add(&w("freq.b")?)?
        .permute(&[1, 0, 2])
        .and_then(|u| w("out.w")?.matmul(&u))?
        .add(&w("out.b")?)
}

/// Frequency convolution, full-band linear, frequency convolution, with one
/// residual around the three.
pub fn cross_band(b: &Binder, p: &str, cfg: &ModelConfig, x: &Tensor) -> Result<Tensor> {
    expect_hft("cross_band", x, cfg)?;
    let xt = x.permute(&[2, 0, 1])?;
    let h = freq_conv(b, &format!("{p}.fc1"), cfg, &xt)?;
    let h = full_band(b, &format!("{p}.fb"), &h)?;
    let h = freq_conv(b, &format!("{p}.fc2"), cfg, &h)?;
    x.add(&h.permute(&[1, 2, 0])?)
}

/// Per-bin temporal convolution block.
pub fn narrow_band(b: &Binder, p: &str, cfg: &ModelConfig, x: &Tensor) -> Result<Tensor> {
    expect_hft("narrow_band", x, cfg)?;
    let w = |n: &str| b.get(&format!("{p}.{n}"));
    let o = x
        .permute(&[1, 2, 0])?
        .layer_norm(2..3, &w("ln.g")?, &w("ln.b")?, LN_EPS)?
        .linear(&w("in.w")?, Some(&w("in.b")?))?
        .silu()
        .conv1d_along(2, 1, &w("dw.w")?, Some(&w("dw.b")?), Conv1dSpec::same(cfg.nb_kernel, 2 * cfg.h))?
        .linear(&w("out.w")?, Some(&w("out.b")?))?
        .permute(&[2, 0, 1])?;
    x.add(&o)
}

/// Positional encoding followed by `B` CrossNet blocks sharing the speaker tokens.
pub fn extractor(
    b: &Binder,
    cfg: &ModelConfig,
    table: &Tensor,
    r_y: &Tensor,
    spk_tokens: &Tensor,
    offset: usize,
) -> Result<Tensor> {
    let mut x = rcpe(table, r_y, offset)?;
    for blk in 0..cfg.b {
        x = fused_gmhsa(b, &format!("blk{blk}.attn"), cfg, &x, spk_tokens)?;
        x = cross_band(b, &format!("blk{blk}.cross"), cfg, &x)?;
        x = narrow_band(b, &format!("blk{blk}.narrow"), cfg, &x)?;
    }
    Ok(x)
}

/// `[H, F, T]` → `[2, F, T]`. Imaginary outputs at DC and Nyquist are zeroed.
pub fn decode(b: &Binder, cfg: &ModelConfig, e: &Tensor) -> Result<Tensor> {
    expect_hft("decode", e, cfg)?;
    let out = e
        .permute(&[1, 2, 0])?
        .linear(&b.get("dec.w")?, Some(&b.get("dec.b")?))?
        .permute(&[2, 0, 1])?;
    let mut mask = vec![1.0; 2 * cfg.f];
    mask[cfg.f] = 0.0;
    mask[2 * cfg.f - 1] = 0.0;
    out.mul(&Tensor::new(mask, &[2, cfg.f, 1])?)
}
