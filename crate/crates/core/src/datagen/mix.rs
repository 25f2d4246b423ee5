use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{power, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::{domain, keyed_rng};

const SILENCE: f64 = 1e-10;

/// Output of [`mix_at_snr`]: the mixture and the two scaled components.
#[derive(Debug, Clone)]
pub struct Mixed {
    pub y: Waveform,
    pub target: Waveform,
    pub interferer: Waveform,
    pub gain: f64,
}

/// `10·log10(P(a) / P(b))`.
pub fn snr_db(a: &[f64], b: &[f64]) -> f64 {
    10.0 * (power(a) / power(b)).log10()
}

/// Repeats `x` cyclically to `len` samples (or truncates).
pub fn tile_to(x: &[f64], len: usize) -> Vec<f64> {
    if x.is_empty() {
        return vec![0.0; len];
    }
    x.iter().copied().cycle().take(len).collect()
}

/// Scales `s2` so that `s1` sits `snr_db` above it and sums the two. The
/// shorter input is tile-padded to the longer one first.
pub fn mix_at_snr(s1: &Waveform, s2: &Waveform, snr_db: f64) -> Result<Mixed> {
    if s1.sample_rate != s2.sample_rate {
        return Err(Error::invalid(format!("sample rates differ: {} vs {}", s1.sample_rate, s2.sample_rate)));
    }
    let len = s1.len().max(s2.len());
    let a = tile_to(&s1.samples, len);
    let b = tile_to(&s2.samples, len);
    let (p1, p2) = (power(&a), power(&b));
    if p1 <= SILENCE || p2 <= SILENCE {
        return Err(Error::invalid(format!(
            "cannot mix a silent source (powers {p1:.3e} and {p2:.3e})"
        )));
    }
    let gain = (p1 / (p2 * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = b.iter().map(|v| gain * v).collect();
    let y: Vec<f64> = a.iter().zip(&scaled).map(|(x, z)| x + z).collect();
    let sr = s1.sample_rate;
    Ok(Mixed {
        y: Waveform::new(y, sr)?,
        target: Waveform::new(a, sr)?,
        interferer: Waveform::new(scaled, sr)?,
        gain,
    })
}

/// Room impulse response: a unit direct path followed by a Gaussian tail with
/// amplitude envelope `exp(-6.91·t/t60)`, so energy falls 60 dB by `t60`. The
/// tail carries as much energy as the direct path.
pub fn make_rir(t60_s: f64, seed: u64, length_samples: usize) -> Result<Vec<f64>> {
    make_rir_with_gain(t60_s, seed, length_samples, 1.0)
}

/// [`make_rir`] with the tail energy set to `tail_gain²`. A gain of 0 gives
/// the identity impulse.
pub fn make_rir_with_gain(t60_s: f64, seed: u64, length_samples: usize, tail_gain: f64) -> Result<Vec<f64>> {
    if !(0.1..=1.0).contains(&t60_s) {
        return Err(Error::invalid(format!("t60 must be in [0.1, 1.0] s, got {t60_s}")));
    }
    if length_samples == 0 {
        return Err(Error::invalid("impulse response length must be positive"));
    }
    let mut h = vec![0.0; length_samples];
    h[0] = 1.0;
    if tail_gain == 0.0 || length_samples == 1 {
        return Ok(h);
    }
    let mut rng = keyed_rng(seed, domain::RIR, 0);
    let sr = SAMPLE_RATE as f64;
    for (n, v) in h.iter_mut().enumerate().skip(1) {
        let noise: f64 = rng.sample(StandardNormal);
        *v = noise * (-6.91 * n as f64 / (sr * t60_s)).exp();
    }
    let energy: f64 = h[1..].iter().map(|v| v * v).sum();
    let scale = tail_gain / energy.sqrt();
    h[1..].iter_mut().for_each(|v| *v *= scale);
    Ok(h)
}

/// Full linear convolution truncated to the input length.
pub fn apply_reverb(w: &Waveform, rir: &[f64]) -> Result<Waveform> {
    if rir.is_empty() {
        return Err(Error::invalid("empty impulse response"));
    }
    let x = &w.samples;
    let mut out = vec![0.0; x.len()];
    for (k, &h) in rir.iter().enumerate() {
        if h == 0.0 || k >= x.len() {
            continue;
        }
        for (o, &v) in out[k..].iter_mut().zip(x) {
            *o += h * v;
        }
    }
    Waveform::new(out, w.sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
}

fn noise(kind: NoiseKind, len: usize, seed: u64) -> Vec<f64> {
    let mut rng = keyed_rng(seed, domain::NOISE, kind as u64);
    let white: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    match kind {
        NoiseKind::White => white,
        NoiseKind::Pink => {
            // Paul Kellet's economy pink filter.
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            white
                .iter()
                .map(|&w| {
                    b0 = 0.99765 * b0 + w * 0.0990460;
                    b1 = 0.96300 * b1 + w * 0.2965164;
                    b2 = 0.57000 * b2 + w * 1.0526913;
                    b0 + b1 + b2 + w * 0.1848
                })
                .collect()
        }
    }
}

/// Adds `kind` noise scaled so that `w` sits `snr_db` above it. Returns the
/// noisy signal and the noise that was added.
pub fn add_noise(w: &Waveform, kind: NoiseKind, snr_db: f64, seed: u64) -> Result<(Waveform, Vec<f64>)> {
    let ps = w.power();
    if ps <= SILENCE {
        return Err(Error::invalid("cannot set an SNR against a silent signal"));
    }
    let mut v = noise(kind, w.len(), seed);
    let pn = power(&v);
    let g = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    v.iter_mut().for_each(|x| *x *= g);
    let y = w.samples.iter().zip(&v).map(|(a, b)| a + b).collect();
    Ok((Waveform::new(y, w.sample_rate)?, v))
}
