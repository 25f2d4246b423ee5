//! 16-bit PCM mono WAV at 8 kHz, the only format the pipeline reads or writes.

use std::path::Path;

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const FULL_SCALE: f64 = 32768.0;

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let err = |msg: String| Error::Wav {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| err(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(err(format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(err(format!(
            "expected 16-bit PCM, found {:?} with {} bits",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(err(format!("expected {SAMPLE_RATE} Hz, found {} Hz", spec.sample_rate)));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| err(e.to_string()))?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes `w` as 16-bit PCM. Samples outside `[-1, 1)` are clipped and a
/// warning is logged.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let err = |msg: String| Error::Wav {
        path: path.to_path_buf(),
        msg,
    };
    if w.sample_rate != SAMPLE_RATE {
        return Err(err(format!("refusing to write {} Hz audio; only {SAMPLE_RATE} Hz is supported", w.sample_rate)));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| err(e.to_string()))?;
    let mut clipped = 0usize;
    for &x in &w.samples {
        let q = (x * FULL_SCALE).round();
        if !(-FULL_SCALE..FULL_SCALE).contains(&q) {
            clipped += 1;
        }
        let v = q.clamp(-FULL_SCALE, FULL_SCALE - 1.0) as i16;
        writer.write_sample(v).map_err(|e| err(e.to_string()))?;
    }
    writer.finalize().map_err(|e| err(e.to_string()))?;
    if clipped > 0 {
        log::warn!("{}: clipped {clipped} of {} samples to [-1, 1)", path.display(), w.len());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_quantizes_to_16_bits() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = Waveform::new(vec![0.0, 0.5, -0.25, 0.999, -1.0, 1.5], SAMPLE_RATE).unwrap();
        write_wav(&p, &w).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.len(), w.len());
        for (a, b) in r.samples.iter().zip(&w.samples[..5]) {
            assert!((a - b).abs() <= 0.5 / FULL_SCALE + 1e-12);
        }
        assert_eq!(r.samples[5], (FULL_SCALE - 1.0) / FULL_SCALE);
    }

    #[test]
    fn rejects_other_formats() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&p, spec).unwrap();
        wr.write_sample(0i16).unwrap();
        wr.finalize().unwrap();
        let msg = read_wav(&p).unwrap_err().to_string();
        assert!(msg.contains("16000"), "{msg}");

        let p2 = dir.path().join("c.wav");
        let spec = hound::WavSpec { channels: 2, sample_rate: 8000, ..spec };
        let mut wr = hound::WavWriter::create(&p2, spec).unwrap();
        wr.write_sample(0i16).unwrap();
        wr.write_sample(0i16).unwrap();
        wr.finalize().unwrap();
        assert!(read_wav(&p2).unwrap_err().to_string().contains("mono"));
    }
}
