use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden channels.
    #[serde(rename = "H")]
    pub h: usize,
    /// Speech-encoder kernel size.
    pub k: usize,
    /// Extractor blocks.
    #[serde(rename = "B")]
    pub b: usize,
    pub heads: usize,
    pub d_attn: usize,
    #[serde(rename = "B_spk")]
    pub b_spk: usize,
    /// Frequency bins; fixes the STFT frame length at `2·(F − 1)`.
    #[serde(rename = "F")]
    pub f: usize,
    #[serde(rename = "N_s")]
    pub n_s: usize,
    pub rcpe_max: usize,
    pub cross_kernel: usize,
    pub cross_groups: usize,
    pub nb_kernel: usize,
    /// Per-bin width of the attention token projection.
    pub attn_bin_dim: usize,
    /// Channels of the full-band linear module.
    pub fullband_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            h: 96,
            k: 5,
            b: 12,
            heads: 4,
            d_attn: 64,
            b_spk: 3,
            f: 65,
            n_s: 8,
            rcpe_max: 2000,
            cross_kernel: 3,
            cross_groups: 8,
            nb_kernel: 5,
            attn_bin_dim: 20,
            fullband_dim: 12,
        }
    }
}

impl ModelConfig {
    /// The smallest configuration used by gradient checks.
    pub fn toy() -> Self {
        ModelConfig {
            h: 4,
            k: 3,
            b: 1,
            heads: 2,
            d_attn: 8,
            b_spk: 1,
            f: 5,
            n_s: 4,
            rcpe_max: 2048,
            cross_kernel: 3,
            cross_groups: 2,
            nb_kernel: 3,
            attn_bin_dim: 2,
            fullband_dim: 2,
        }
    }

    /// A model small enough to train on a laptop CPU in minutes.
    pub fn small() -> Self {
        ModelConfig {
            h: 16,
            b: 2,
            b_spk: 2,
            heads: 2,
            d_attn: 32,
            rcpe_max: 512,
            cross_groups: 4,
            attn_bin_dim: 4,
            fullband_dim: 8,
            ..Default::default()
        }
    }

    pub fn stft(&self) -> Result<StftConfig> {
        StftConfig::for_bins(self.f)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("H", self.h),
            ("k", self.k),
            ("heads", self.heads),
            ("d_attn", self.d_attn),
            ("N_s", self.n_s),
            ("rcpe_max", self.rcpe_max),
            ("cross_kernel", self.cross_kernel),
            ("cross_groups", self.cross_groups),
            ("nb_kernel", self.nb_kernel),
            ("attn_bin_dim", self.attn_bin_dim),
            ("fullband_dim", self.fullband_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.d_attn % self.heads != 0 {
            return Err(Error::Config(format!("model.d_attn ({}) must be divisible by model.heads ({})", self.d_attn, self.heads)));
        }
        if self.h % self.cross_groups != 0 {
            return Err(Error::Config(format!("model.cross_groups ({}) must divide model.H ({})", self.cross_groups, self.h)));
        }
        for (name, v) in [("k", self.k), ("cross_kernel", self.cross_kernel), ("nb_kernel", self.nb_kernel)] {
            if v % 2 == 0 {
                return Err(Error::Config(format!("model.{name} must be odd, got {v}")));
            }
        }
        if self.f < 2 {
            return Err(Error::Config(format!("model.F must be at least 2, got {}", self.f)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for c in [ModelConfig::default(), ModelConfig::toy(), ModelConfig::small()] {
            c.validate().unwrap();
        }
        assert_eq!(ModelConfig::toy().stft().unwrap().frame_len, 8);
        assert_eq!(ModelConfig::default().stft().unwrap().frame_len, 128);
    }

    #[test]
    fn invariants_enforced() {
        let bad = [
            ModelConfig { d_attn: 10, heads: 4, ..ModelConfig::toy() },
            ModelConfig { cross_groups: 3, ..ModelConfig::toy() },
            ModelConfig { k: 4, ..ModelConfig::toy() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn serde_uses_short_names() {
        let v = serde_json::to_value(ModelConfig::toy()).unwrap();
        assert_eq!(v["H"], 4);
        assert_eq!(v["B_spk"], 1);
        assert_eq!(v["N_s"], 4);
        let back: ModelConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, ModelConfig::toy());
    }
}
