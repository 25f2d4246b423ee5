//! Short-time Fourier analysis and synthesis.
//!
//! Framing is centered with reflect padding, so a signal of `n` samples
//! always yields `1 + ceil(n / hop)` frames. Synthesis is weighted
//! overlap-add divided by the summed squared window, which reconstructs the
//! input exactly (to rounding) for any hop where that sum stays positive.

mod diff;
mod kernel;
pub mod wav;

pub use diff::{istft_tensor, pack_ri_tensors, stft_tensor};
pub use kernel::StftKernel;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// DFT-even Hann: `0.5 − 0.5·cos(2πn/N)`.
    HannPeriodic,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::HannPeriodic => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            frame_len: 128,
            hop: 64,
            window: Window::HannPeriodic,
            sample_rate: SAMPLE_RATE,
        }
    }
}

impl StftConfig {
    /// Half-overlap configuration with `bins` one-sided frequency bins.
    pub fn for_bins(bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::invalid(format!("need at least 2 frequency bins, got {bins}")));
        }
        let frame_len = 2 * (bins - 1);
        Ok(StftConfig {
            frame_len,
            hop: frame_len / 2,
            ..Default::default()
        })
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        1 + num_samples.div_ceil(self.hop)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || self.frame_len % 2 != 0 {
            return Err(Error::invalid(format!("frame length must be even and ≥ 2, got {}", self.frame_len)));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::invalid(format!("hop must be in 1..={}, got {}", self.frame_len, self.hop)));
        }
        if self.sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn power(&self) -> f64 {
        power(&self.samples)
    }
}

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// One-sided complex spectrogram, stored frequency-major (`[F, T]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
    pub bins: usize,
    pub frames: usize,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn zeros(bins: usize, frames: usize, config: StftConfig) -> Self {
        Spectrogram {
            real: vec![0.0; bins * frames],
            imag: vec![0.0; bins * frames],
            bins,
            frames,
            config,
        }
    }

    pub fn at(&self, f: usize, t: usize) -> (f64, f64) {
        let i = f * self.frames + t;
        (self.real[i], self.imag[i])
    }
}

pub fn stft(w: &Waveform, config: &StftConfig) -> Result<Spectrogram> {
    if w.is_empty() {
        return Err(Error::invalid("stft of an empty signal"));
    }
    let kernel = StftKernel::new(*config)?;
    let (real, imag) = kernel.analyze(&w.samples);
    Ok(Spectrogram {
        real,
        imag,
        bins: config.bins(),
        frames: config.num_frames(w.len()),
        config: *config,
    })
}

pub fn istft(spec: &Spectrogram, out_len: usize) -> Result<Waveform> {
    if out_len == 0 {
        return Err(Error::invalid("istft output length must be positive"));
    }
    check_meta(spec)?;
    let kernel = StftKernel::new(spec.config)?;
    let samples = kernel.synthesize(&spec.real, &spec.imag, spec.frames, out_len);
    Waveform::new(samples, spec.config.sample_rate)
}

fn check_meta(spec: &Spectrogram) -> Result<()> {
    spec.config.validate()?;
    if spec.bins != spec.config.bins() {
        return Err(Error::shape(
            "istft",
            format!("{} bins inconsistent with frame length {} (expected {})", spec.bins, spec.config.frame_len, spec.config.bins()),
        ));
    }
    let n = spec.bins * spec.frames;
    if spec.real.len() != n || spec.imag.len() != n {
        return Err(Error::shape("istft", format!("buffers of {}/{} values for [{}, {}]", spec.real.len(), spec.imag.len(), spec.bins, spec.frames)));
    }
    Ok(())
}

/// `[2, F, T]` with channel 0 real and channel 1 imaginary.
pub fn pack_ri(spec: &Spectrogram) -> Result<Tensor> {
    let mut data = Vec::with_capacity(2 * spec.real.len());
    data.extend_from_slice(&spec.real);
    data.extend_from_slice(&spec.imag);
    Tensor::new(data, &[2, spec.bins, spec.frames])
}

/// Inverse of [`pack_ri`]. The imaginary parts of the DC and Nyquist bins
/// are dropped, as a real signal cannot carry them.
pub fn unpack_ri(packed: &Tensor, config: &StftConfig) -> Result<Spectrogram> {
    let s = packed.shape();
    if s.len() != 3 || s[0] != 2 {
        return Err(Error::shape("unpack_ri", format!("expected [2, F, T], got {s:?}")));
    }
    let (bins, frames) = (s[1], s[2]);
    let n = bins * frames;
    let mut spec = Spectrogram {
        real: packed.data()[..n].to_vec(),
        imag: packed.data()[n..].to_vec(),
        bins,
        frames,
        config: *config,
    };
    if bins == config.bins() {
        spec.imag[..frames].fill(0.0);
        spec.imag[(bins - 1) * frames..].fill(0.0);
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_arithmetic_four_seconds() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.bins(), 65);
        assert_eq!(cfg.num_frames(32000), 501);
    }

    #[test]
    fn zero_signal_zero_spectrum() {
        let w = Waveform::new(vec![0.0; 8000], SAMPLE_RATE).unwrap();
        let s = stft(&w, &StftConfig::default()).unwrap();
        assert!(s.real.iter().chain(&s.imag).all(|&v| v == 0.0));
        let back = istft(&Spectrogram::zeros(65, 20, StftConfig::default()), 1200).unwrap();
        assert!(back.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_signal_shows_only_window_spectrum() {
        let cfg = StftConfig::default();
        let w = Waveform::new(vec![1.0; 2000], SAMPLE_RATE).unwrap();
        let s = stft(&w, &cfg).unwrap();
        let wsum: f64 = cfg.window.coefficients(cfg.frame_len).iter().sum();
        for t in 2..s.frames - 2 {
            let (re, im) = s.at(0, t);
            assert!((re - wsum).abs() < 1e-10 && im.abs() < 1e-12);
            let (re, im) = s.at(1, t);
            assert!((re + cfg.frame_len as f64 / 4.0).abs() < 1e-10 && im.abs() < 1e-10);
            for f in 2..s.bins {
                let (re, im) = s.at(f, t);
                assert!(re.abs() < 1e-10 && im.abs() < 1e-10, "bin {f} frame {t}: {re} {im}");
            }
        }
    }

    #[test]
    fn empty_signal_rejected() {
        let w = Waveform::new(vec![], SAMPLE_RATE).unwrap();
        assert!(stft(&w, &StftConfig::default()).is_err());
    }

    #[test]
    fn istft_rejects_inconsistent_bins() {
        let mut spec = Spectrogram::zeros(65, 4, StftConfig::default());
        spec.bins = 33;
        spec.real.truncate(33 * 4);
        spec.imag.truncate(33 * 4);
        assert!(istft(&spec, 100).is_err());
    }

    #[test]
    fn pack_unpack_round_trip() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..700).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let s = stft(&Waveform::new(x, SAMPLE_RATE).unwrap(), &cfg).unwrap();
        let packed = pack_ri(&s).unwrap();
        assert_eq!(packed.shape(), &[2, 65, s.frames]);
        let back = unpack_ri(&packed, &cfg).unwrap();
        assert_eq!(back.real, s.real);
        // DC / Nyquist imaginary parts are structurally zero for real input.
        for (a, b) in back.imag.iter().zip(&s.imag) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(unpack_ri(&Tensor::zeros(&[3, 65, 2]).unwrap(), &cfg).is_err());
    }
}
