use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::{domain, keyed_rng};

pub const F0_RANGE: (f64, f64) = (90.0, 260.0);
pub const PEAK: f64 = 0.9;

/// One formant of the timbre profile: center and bandwidth in Hz, linear gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub center: f64,
    pub bandwidth: f64,
    pub gain: f64,
}

/// A parametric voice: harmonic source at `f0`, shaped by three formants and
/// a spectral tilt, with a slow amplitude modulation standing in for syllables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeaker {
    pub speaker_id: usize,
    pub f0: f64,
    pub formants: [Formant; 3],
    /// Harmonic amplitudes fall off as `h^-tilt`.
    pub tilt: f64,
    pub am_rate: f64,
    pub global_seed: u64,
}

impl SyntheticSpeaker {
    /// Speaker `id` of `num_speakers`. The f0 range is split into one band per
    /// speaker, so distinct ids never share a fundamental.
    pub fn new(id: usize, num_speakers: usize, global_seed: u64) -> Result<Self> {
        if id >= num_speakers {
            return Err(Error::invalid(format!("speaker id {id} out of range for {num_speakers} speakers")));
        }
        let mut rng = keyed_rng(global_seed, domain::SPEAKER, id as u64);
        let width = (F0_RANGE.1 - F0_RANGE.0) / num_speakers as f64;
        let f0 = F0_RANGE.0 + width * (id as f64 + rng.random_range(0.2..0.8));
        let formants = [
            Formant {
                center: rng.random_range(300.0..850.0),
                bandwidth: rng.random_range(80.0..180.0),
                gain: 1.0,
            },
            Formant {
                center: rng.random_range(950.0..2200.0),
                bandwidth: rng.random_range(100.0..250.0),
                gain: rng.random_range(0.35..0.8),
            },
            Formant {
                center: rng.random_range(2400.0..3400.0),
                bandwidth: rng.random_range(150.0..350.0),
                gain: rng.random_range(0.1..0.4),
            },
        ];
        Ok(SyntheticSpeaker {
            speaker_id: id,
            f0,
            formants,
            tilt: rng.random_range(0.4..1.2),
            am_rate: rng.random_range(2.0..7.0),
            global_seed,
        })
    }

    /// Spectral envelope at `freq` Hz, with formant centers scaled by `shift`.
    fn envelope(&self, freq: f64, shift: f64) -> f64 {
        let floor = 0.02;
        floor
            + self
                .formants
                .iter()
                .map(|f| {
                    let z = (freq - f.center * shift) / f.bandwidth;
                    f.gain * (-0.5 * z * z).exp()
                })
                .sum::<f64>()
    }
}

/// Renders one utterance. Identical `(speaker, utt_seed, duration_s)` give
/// bit-identical output.
pub fn synth_utterance(speaker: &SyntheticSpeaker, utt_seed: u64, duration_s: f64) -> Result<Waveform> {
    if !(0.5..=10.0).contains(&duration_s) {
        return Err(Error::invalid(format!("utterance duration must be in [0.5, 10] s, got {duration_s}")));
    }
    let sr = SAMPLE_RATE as f64;
    let n = (duration_s * sr).round() as usize;
    let mut rng = keyed_rng(
        speaker.global_seed,
        domain::UTTERANCE,
        ((speaker.speaker_id as u64) << 40) ^ utt_seed,
    );
    let shift = rng.random_range(0.93..1.07);
    let vib_rate = rng.random_range(3.0..6.0);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let drift: f64 = rng.random_range(-0.05..0.05);
    let am_rate = speaker.am_rate * rng.random_range(0.85..1.15);
    let am_phase = rng.random_range(0.0..2.0 * PI);
    let noise_level = 0.02;

    let f0_max = speaker.f0 * (1.0 + drift.abs() + 0.04);
    let harmonics = ((0.95 * sr / 2.0) / f0_max).floor().max(1.0) as usize;
    let amps: Vec<f64> = (1..=harmonics)
        .map(|h| speaker.envelope(h as f64 * speaker.f0, shift) * (h as f64).powf(-speaker.tilt))
        .collect();
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let mut out = vec![0.0; n];
    let mut base_phase = 0.0;
    for (i, v) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let progress = i as f64 / n as f64;
        let f0 = speaker.f0 * (1.0 + drift * (progress - 0.5) + 0.03 * (2.0 * PI * vib_rate * t + vib_phase).sin());
        base_phase += 2.0 * PI * f0 / sr;
        let voiced: f64 = amps
            .iter()
            .zip(&phases)
            .enumerate()
            .map(|(h, (a, p))| a * ((h + 1) as f64 * base_phase + p).sin())
            .sum();
        let am = 0.55 + 0.45 * (2.0 * PI * am_rate * t + am_phase).sin();
        let noise: f64 = rng.sample(StandardNormal);
        *v = am * am * (voiced + noise_level * noise);
    }
    let fade = (0.01 * sr) as usize;
    for i in 0..fade.min(n / 2) {
        let g = i as f64 / fade as f64;
        out[i] *= g;
        out[n - 1 - i] *= g;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    Waveform::new(out, SAMPLE_RATE)
}
