//! Synthetic two-speaker mixtures with enrollment utterances.
//!
//! Every speaker is a parametric harmonic voice and every dataset is a pure
//! function of its global seed: the randomness of entry `i` is drawn from a
//! stream keyed by `(seed, i)` alone.

mod mix;
mod speaker;

pub use mix::{add_noise, apply_reverb, make_rir, make_rir_with_gain, mix_at_snr, snr_db, tile_to, Mixed, NoiseKind};
pub use speaker::{synth_utterance, Formant, SyntheticSpeaker, F0_RANGE, PEAK};

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::wav::{read_wav, write_wav};
use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::{domain, keyed_rng};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown split '{s}' (expected train, dev or test)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatagenConfig {
    pub seed: u64,
    pub speakers: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Mixture length is drawn uniformly from `[lo, hi]` seconds.
    pub duration: (f64, f64),
    pub enroll_s: f64,
    pub snr_lo: f64,
    pub snr_hi: f64,
    /// Adds reverberation and background noise.
    pub whamr_style: bool,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            seed: 0,
            speakers: 8,
            train: 64,
            dev: 16,
            test: 16,
            duration: (1.0, 4.0),
            enroll_s: 2.0,
            snr_lo: 0.0,
            snr_hi: 5.0,
            whamr_style: false,
        }
    }
}

impl DatagenConfig {
    pub fn validate(&self) -> Result<()> {
        speaker_splits(self.speakers)?;
        let (lo, hi) = self.duration;
        if !(0.5..=10.0).contains(&lo) || !(0.5..=10.0).contains(&hi) || lo > hi {
            return Err(Error::invalid(format!("duration range must lie in [0.5, 10] s with lo ≤ hi, got {lo}:{hi}")));
        }
        if !(0.5..=10.0).contains(&self.enroll_s) {
            return Err(Error::invalid(format!("enrollment duration must be in [0.5, 10] s, got {}", self.enroll_s)));
        }
        if !(self.snr_lo.is_finite() && self.snr_hi.is_finite()) || self.snr_lo > self.snr_hi {
            return Err(Error::invalid(format!("invalid SNR range {}:{}", self.snr_lo, self.snr_hi)));
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }
}

/// `(train/dev speakers, test speakers)`: the last `max(2, n/4)` ids are held
/// out for test.
pub fn speaker_splits(num_speakers: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_test = 2.max(num_speakers / 4);
    if num_speakers < n_test + 2 {
        return Err(Error::invalid(format!(
            "need at least 4 speakers for disjoint train/test speaker sets (2 each), got {num_speakers}"
        )));
    }
    let cut = num_speakers - n_test;
    Ok(((0..cut).collect(), (cut..num_speakers).collect()))
}

/// One manifest line. Field order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub split: Split,
    pub index: usize,
    pub mixture: String,
    pub target: String,
    pub interferer: String,
    pub enrollment: String,
    pub speaker_id: usize,
    pub interferer_id: usize,
    pub snr_db: f64,
    pub target_utt: u64,
    pub interferer_utt: u64,
    pub enroll_utt: u64,
    pub rir_seed: Option<u64>,
    pub noise_snr_db: Option<f64>,
    pub global_seed: u64,
}

impl ManifestEntry {
    pub fn id(&self) -> String {
        format!("{}/{:05}", self.split, self.index)
    }
}

/// An in-memory training item.
#[derive(Debug, Clone)]
pub struct MixtureSample {
    pub id: String,
    pub y: Waveform,
    pub a: Waveform,
    pub s: Waveform,
    pub speaker_id: usize,
    pub interferer_id: usize,
    pub snr_db: f64,
    pub rir_seed: Option<u64>,
    pub noise_snr_db: Option<f64>,
}

/// A generated entry together with its interferer component.
#[derive(Debug, Clone)]
pub struct GeneratedEntry {
    pub entry: ManifestEntry,
    pub sample: MixtureSample,
    pub interferer: Waveform,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    /// Directory that entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

fn peak(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn scaled(w: &Waveform, c: f64) -> Waveform {
    Waveform {
        samples: w.samples.iter().map(|v| c * v).collect(),
        sample_rate: w.sample_rate,
    }
}

fn draw(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Renders entry `index` of `split`. `global_index` keys the randomness.
pub fn generate_entry(cfg: &DatagenConfig, split: Split, index: usize, global_index: u64) -> Result<GeneratedEntry> {
    let (train_spk, test_spk) = speaker_splits(cfg.speakers)?;
    let pool = if split == Split::Test { &test_spk } else { &train_spk };
    let mut rng = keyed_rng(cfg.seed, domain::ENTRY, global_index);

    let target_id = pool[index % pool.len()];
    let others: Vec<usize> = pool.iter().copied().filter(|&s| s != target_id).collect();
    let interferer_id = others[rng.random_range(0..others.len())];
    let duration = draw(&mut rng, cfg.duration.0, cfg.duration.1);
    let snr = draw(&mut rng, cfg.snr_lo, cfg.snr_hi);
    let target_utt: u64 = rng.random::<u32>() as u64;
    let interferer_utt: u64 = rng.random::<u32>() as u64;
    let mut enroll_utt: u64 = rng.random::<u32>() as u64;
    while enroll_utt == target_utt {
        enroll_utt = rng.random::<u32>() as u64;
    }

    let tspk = SyntheticSpeaker::new(target_id, cfg.speakers, cfg.seed)?;
    let ispk = SyntheticSpeaker::new(interferer_id, cfg.speakers, cfg.seed)?;
    let s = synth_utterance(&tspk, target_utt, duration)?;
    let i = synth_utterance(&ispk, interferer_utt, duration)?;
    let a = synth_utterance(&tspk, enroll_utt, cfg.enroll_s)?;

    let (y, s, itf, rir_seed, noise_snr_db) = if cfg.whamr_style {
        let rir_seed: u64 = rng.random();
        let sr = SAMPLE_RATE as f64;
        let t60_s = rng.random_range(0.2..0.6);
        let t60_i = rng.random_range(0.2..0.6);
        let h_s = make_rir(t60_s, rir_seed, (t60_s * sr).ceil() as usize)?;
        let h_i = make_rir(t60_i, rir_seed.wrapping_add(1), (t60_i * sr).ceil() as usize)?;
        let mixed = mix_at_snr(&apply_reverb(&s, &h_s)?, &apply_reverb(&i, &h_i)?, snr)?;
        let noise_snr = rng.random_range(6.0..12.0);
        let kind = if rng.random::<bool>() { NoiseKind::Pink } else { NoiseKind::White };
        let (y, _) = add_noise(&mixed.y, kind, noise_snr, rir_seed.wrapping_add(2))?;
        let c = (PEAK / peak(&y.samples).max(peak(&s.samples)).max(peak(&mixed.interferer.samples))).min(1.0);
        (scaled(&y, c), scaled(&s, c), scaled(&mixed.interferer, c), Some(rir_seed), Some(noise_snr))
    } else {
        let mixed = mix_at_snr(&s, &i, snr)?;
        let c = (PEAK
            / peak(&mixed.y.samples)
                .max(peak(&mixed.target.samples))
                .max(peak(&mixed.interferer.samples)))
        .min(1.0);
        let (s, itf) = (scaled(&mixed.target, c), scaled(&mixed.interferer, c));
        let y = Waveform {
            samples: s.samples.iter().zip(&itf.samples).map(|(a, b)| a + b).collect(),
            sample_rate: s.sample_rate,
        };
        (y, s, itf, None, None)
    };

    let stem = format!("{}/spk{:03}/{:05}", split, target_id, index);
    let entry = ManifestEntry {
        split,
        index,
        mixture: format!("{stem}_mix.wav"),
        target: format!("{stem}_tgt.wav"),
        interferer: format!("{stem}_itf.wav"),
        enrollment: format!("{stem}_enr.wav"),
        speaker_id: target_id,
        interferer_id,
        snr_db: snr,
        target_utt,
        interferer_utt,
        enroll_utt,
        rir_seed,
        noise_snr_db,
        global_seed: cfg.seed,
    };
    let sample = MixtureSample {
        id: entry.id(),
        y,
        a,
        s,
        speaker_id: target_id,
        interferer_id,
        snr_db: snr,
        rir_seed,
        noise_snr_db,
    };
    Ok(GeneratedEntry {
        entry,
        sample,
        interferer: itf,
    })
}

/// Generates every split, writes the WAV files and `manifest.jsonl` under
/// `out_dir`, and returns the manifest.
pub fn build_dataset(cfg: &DatagenConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut entries = Vec::new();
    let mut global = 0u64;
    for split in Split::ALL {
        for index in 0..cfg.count(split) {
            let g = generate_entry(cfg, split, index, global)?;
            global += 1;
            let dir = out_dir.join(Path::new(&g.entry.mixture).parent().unwrap_or(Path::new("")));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_wav(out_dir.join(&g.entry.mixture), &g.sample.y)?;
            write_wav(out_dir.join(&g.entry.target), &g.sample.s)?;
            write_wav(out_dir.join(&g.entry.interferer), &g.interferer)?;
            write_wav(out_dir.join(&g.entry.enrollment), &g.sample.a)?;
            entries.push(g.entry);
        }
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    log::info!("wrote {} entries to {}", manifest.entries.len(), out_dir.display());
    Ok(manifest)
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| Error::Manifest(format!("{} line {}: {e}", path.display(), n + 1)))?;
            entries.push(e);
        }
        Ok(DatasetManifest {
            root: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            entries,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for e in &self.entries {
            writeln!(f, "{}", serde_json::to_string(e)?).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Reads the audio of one entry.
    pub fn load_sample(&self, entry: &ManifestEntry) -> Result<MixtureSample> {
        let read = |rel: &str| {
            read_wav(self.root.join(rel)).map_err(|e| Error::Manifest(format!("row {}: {e}", entry.id())))
        };
        Ok(MixtureSample {
            id: entry.id(),
            y: read(&entry.mixture)?,
            a: read(&entry.enrollment)?,
            s: read(&entry.target)?,
            speaker_id: entry.speaker_id,
            interferer_id: entry.interferer_id,
            snr_db: entry.snr_db,
            rir_seed: entry.rir_seed,
            noise_snr_db: entry.noise_snr_db,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<MixtureSample>> {
        self.split(split).map(|e| self.load_sample(e)).collect()
    }
}

/// SHA-256 of a file, hex encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speaker_split_sizes() {
        assert_eq!(speaker_splits(8).unwrap(), ((0..6).collect(), vec![6, 7]));
        assert_eq!(speaker_splits(4).unwrap().1, vec![2, 3]);
        assert_eq!(speaker_splits(12).unwrap().1, vec![9, 10, 11]);
        assert!(speaker_splits(3).is_err());
        assert!(speaker_splits(1).is_err());
    }

    #[test]
    fn split_names_round_trip() {
        for s in Split::ALL {
            assert_eq!(s.name().parse::<Split>().unwrap(), s);
        }
        assert!("eval".parse::<Split>().is_err());
    }

    #[test]
    fn anechoic_mixture_is_exact_sum() {
        let cfg = DatagenConfig {
            duration: (0.5, 0.5),
            ..Default::default()
        };
        let g = generate_entry(&cfg, Split::Train, 3, 3).unwrap();
        for ((y, s), i) in g.sample.y.samples.iter().zip(&g.sample.s.samples).zip(&g.interferer.samples) {
            assert_eq!(*y, s + i);
        }
        assert_ne!(g.entry.speaker_id, g.entry.interferer_id);
        assert_ne!(g.entry.enroll_utt, g.entry.target_utt);
        assert!((snr_db(&g.sample.s.samples, &g.interferer.samples) - g.entry.snr_db).abs() < 1e-9);
    }
}
