//! The extraction network: a shared speech encoder, a speaker encoder over
//! the enrollment, CrossNet blocks that attend to the speaker tokens, and a
//! linear decoder to the complex target spectrum.

pub mod blocks;
pub mod checkpoint;
mod config;
mod params;

pub use blocks::SpeakerEmbedding;
pub use checkpoint::{json_field_diff, Checkpoint};
pub use config::ModelConfig;
pub use params::{param_specs, Binder, InitMode, Param, ParamKind, ParamSpec, ParamStore};

use rand::Rng;

use crate::dsp::{istft_tensor, stft_tensor, Waveform};
use crate::error::{Error, Result};
use crate::rng::{domain, keyed_rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Positional offset 0.
    Eval,
    /// Positional offset drawn from the stream keyed by `seed`.
    Train { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Time-domain estimate, same length as the mixture.
    pub estimate: Tensor,
    /// Predicted spectrum `[2, F, T]`.
    pub spec: Tensor,
    pub speaker: SpeakerEmbedding,
}

fn rms(w: &Waveform, what: &str) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    let r = w.power().sqrt();
    if r < 1e-8 {
        return Err(Error::invalid(format!("{what} is silent")));
    }
    Ok(r)
}

/// Full forward pass with parameters from `b`. Both inputs are scaled to unit
/// RMS; the estimate is returned at the mixture's scale.
pub fn forward_with(
    b: &Binder,
    cfg: &ModelConfig,
    table: &Tensor,
    y: &Waveform,
    a: &Waveform,
    mode: Mode,
) -> Result<ForwardOutput> {
    let stft = cfg.stft()?;
    let ry = rms(y, "mixture")?;
    let ra = rms(a, "enrollment")?;
    let yn = Tensor::new(y.samples.iter().map(|v| v / ry).collect(), &[y.len()])?;
    let an = Tensor::new(a.samples.iter().map(|v| v / ra).collect(), &[a.len()])?;
    let r_y = blocks::speech_encode(b, cfg, &stft_tensor(&yn, &stft)?)?;
    let r_a = blocks::speech_encode(b, cfg, &stft_tensor(&an, &stft)?)?;
    let speaker = blocks::speaker_encode(b, cfg, &r_a)?;
    let t = r_y.shape()[2];
    if t > cfg.rcpe_max {
        return Err(Error::Config(format!(
            "mixture has {t} frames but model.rcpe_max is {}; increase model.rcpe_max",
            cfg.rcpe_max
        )));
    }
    let offset = match mode {
        Mode::Eval => 0,
        Mode::Train { seed } => keyed_rng(seed, domain::RCPE, 0).random_range(0..=cfg.rcpe_max - t),
    };
    let e_y = blocks::extractor(b, cfg, table, &r_y, &speaker.tokens, offset)?;
    let spec = blocks::decode(b, cfg, &e_y)?;
    let estimate = istft_tensor(&spec, &stft, y.len())?.scale(ry);
    Ok(ForwardOutput { estimate, spec, speaker })
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    table: Tensor,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64, init: InitMode) -> Result<Self> {
        cfg.validate()?;
        let params = ParamStore::init(&param_specs(&cfg), seed, init)?;
        Self::from_params(cfg, params)
    }

    /// Checks that `params` has exactly the names and shapes `cfg` declares.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let specs = param_specs(&cfg);
        if specs.len() != params.len() {
            return Err(Error::invalid(format!("config declares {} parameters, store has {}", specs.len(), params.len())));
        }
        for s in &specs {
            match params.get(&s.name) {
                Some(p) if p.shape == s.shape => {}
                Some(p) => {
                    return Err(Error::shape("params", format!("{} has shape {:?}, config expects {:?}", s.name, p.shape, s.shape)))
                }
                None => return Err(Error::invalid(format!("missing parameter {}", s.name))),
            }
        }
        let table = blocks::positional_table(cfg.rcpe_max, cfg.h)?;
        Ok(Model { cfg, params, table })
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn bind(&self, requires_grad: bool) -> Result<Binder> {
        Binder::new(&self.params, requires_grad)
    }

    pub fn forward(&self, b: &Binder, y: &Waveform, a: &Waveform, mode: Mode) -> Result<ForwardOutput> {
        forward_with(b, &self.cfg, &self.table, y, a, mode)
    }

    /// Eval-mode extraction.
    pub fn extract(&self, y: &Waveform, a: &Waveform) -> Result<Waveform> {
        let out = self.forward(&self.bind(false)?, y, a, Mode::Eval)?;
        Waveform::new(out.estimate.to_vec(), y.sample_rate)
    }

    /// Speaker-classifier logits for an enrollment alone.
    pub fn speaker_logits(&self, b: &Binder, a: &Waveform) -> Result<Vec<f64>> {
        let ra = rms(a, "enrollment")?;
        let an = Tensor::new(a.samples.iter().map(|v| v / ra).collect(), &[a.len()])?;
        let r_a = blocks::speech_encode(b, &self.cfg, &stft_tensor(&an, &self.cfg.stft()?)?)?;
        Ok(blocks::speaker_encode(b, &self.cfg, &r_a)?.logits.to_vec())
    }

    /// A checkpoint holding the config under `"model"` plus `extra` header fields.
    pub fn to_checkpoint(&self, extra: serde_json::Map<String, serde_json::Value>) -> Result<Checkpoint> {
        let mut header = serde_json::Map::new();
        header.insert("model".into(), serde_json::to_value(&self.cfg)?);
        header.extend(extra);
        let blobs = self.params.iter().map(|(n, p)| (n.to_string(), p.clone())).collect();
        Ok(Checkpoint {
            header: serde_json::Value::Object(header),
            blobs,
        })
    }

    /// Rebuilds a model from any checkpoint with a `"model"` header; blobs
    /// outside the parameter set (optimizer moments, dumps) are ignored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg_json = ck
            .header
            .get("model")
            .ok_or_else(|| Error::Checkpoint("header has no model config".into()))?;
        let cfg: ModelConfig = serde_json::from_value(cfg_json.clone())
            .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let mut params = ParamStore::default();
        for spec in param_specs(&cfg) {
            let p = ck
                .blobs
                .get(&spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", spec.name)))?;
            params.insert(spec.name, p.shape.clone(), p.data.clone())?;
        }
        Self::from_params(cfg, params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }

    /// Loads a checkpoint and insists its config equals `expected`, listing
    /// every differing field otherwise.
    pub fn load_expecting(path: &std::path::Path, expected: &ModelConfig) -> Result<Self> {
        let m = Self::load(path)?;
        if &m.cfg != expected {
            let diff = json_field_diff(&serde_json::to_value(&m.cfg)?, &serde_json::to_value(expected)?);
            return Err(Error::Config(format!(
                "{} was trained with a different model config (checkpoint → requested):\n  {}",
                path.display(),
                diff.join("\n  ")
            )));
        }
        Ok(m)
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    /// Zeroes the output projection of every cross-attention branch, which
    /// makes the extraction independent of the enrollment.
    pub fn ablate_cross_attention(&mut self) {
        for blk in 0..self.cfg.b {
            if let Some(p) = self.params.get_mut(&format!("blk{blk}.attn.ca.out.w")) {
                p.data.fill(0.0);
            }
        }
    }
}

/// Total trainable elements for `cfg`.
pub fn param_count(cfg: &ModelConfig) -> usize {
    param_specs(cfg).iter().map(|s| s.numel()).sum()
}

/// Parameter counts grouped by submodule, in network order.
pub fn param_ledger(cfg: &ModelConfig) -> Vec<(&'static str, usize)> {
    let groups: [(&str, fn(&str) -> bool); 6] = [
        ("speech encoder", |n| n.starts_with("enc.")),
        ("speaker encoder", |n| n.starts_with("spk.")),
        ("gmhsa + cross-attention", |n| n.contains(".attn.")),
        ("cross-band", |n| n.contains(".cross.")),
        ("narrow-band", |n| n.contains(".narrow.")),
        ("decoder", |n| n.starts_with("dec.")),
    ];
    let specs = param_specs(cfg);
    groups
        .iter()
        .map(|(label, pred)| (*label, specs.iter().filter(|s| pred(&s.name)).map(|s| s.numel()).sum()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_covers_every_parameter() {
        for cfg in [ModelConfig::toy(), ModelConfig::default()] {
            let total: usize = param_ledger(&cfg).iter().map(|(_, n)| n).sum();
            assert_eq!(total, param_count(&cfg));
        }
    }

    #[test]
    fn from_params_rejects_wrong_shapes() {
        let m = Model::new(ModelConfig::toy(), 0, InitMode::Standard).unwrap();
        let mut p = m.params.clone();
        p.get_mut("dec.b").unwrap().shape = vec![1, 2];
        assert!(Model::from_params(ModelConfig::toy(), p).is_err());
    }
}
