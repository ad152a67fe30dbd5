//! Named per-corpus defaults: modality clip lengths and training hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityProfile {
    pub name: String,
    pub clip_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    /// Empty means "whatever the manifest declares", each at `default_clip_seconds`.
    pub modalities: Vec<ModalityProfile>,
    pub default_clip_seconds: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub heads: usize,
    pub attn_dropout: f64,
    pub out_dropout: f64,
    pub epochs: usize,
    /// Oversample the minority class of each training fold.
    pub smote: bool,
}

pub const NAMES: [&str; 6] = ["coswara", "sound-dr", "ipvs", "pc-gita", "svd", "synth"];

fn mods(list: &[(&str, f64)]) -> Vec<ModalityProfile> {
    list.iter()
        .map(|&(name, clip_seconds)| ModalityProfile {
            name: name.into(),
            clip_seconds,
        })
        .collect()
}

impl Profile {
    pub fn named(name: &str) -> Result<Profile> {
        let base = |modalities, batch_size, learning_rate, heads, epochs, smote| Profile {
            name: name.to_ascii_lowercase(),
            modalities,
            default_clip_seconds: 1.0,
            batch_size,
            learning_rate,
            hidden: 40,
            heads,
            attn_dropout: 0.1,
            out_dropout: 0.1,
            epochs,
            smote,
        };
        let p = match name.to_ascii_lowercase().as_str() {
            "coswara" => base(
                mods(&[("breathing", 19.0), ("cough", 8.0), ("counting", 18.0), ("vowel", 20.0)]),
                32,
                1e-3,
                5,
                60,
                true,
            ),
            "sound-dr" => base(
                mods(&[("mouth_breathing", 15.0), ("nose_breathing", 15.0), ("cough", 15.0)]),
                16,
                1e-3,
                5,
                60,
                true,
            ),
            "ipvs" => base(
                mods(&[("text_reading", 5.0), ("phrase", 5.0), ("syllable", 5.0)]),
                16,
                1e-3,
                5,
                100,
                false,
            ),
            "pc-gita" => base(
                mods(&[("phrase", 3.0), ("sentence", 15.0), ("ddk", 6.0), ("vowel", 6.0)]),
                16,
                1e-4,
                3,
                80,
                false,
            ),
            "svd" => base(
                mods(&[("phrase", 3.0), ("vowel_a", 6.0), ("vowel_i", 6.0), ("vowel_u", 6.0)]),
                16,
                1e-3,
                3,
                80,
                false,
            ),
            "synth" => base(Vec::new(), 16, 1e-3, 5, 20, false),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown profile `{other}` (expected one of {})",
                    NAMES.join(", ")
                )))
            }
        };
        Ok(p)
    }

    /// Target clip length for a modality.
    pub fn clip_seconds(&self, modality: &str) -> Result<f64> {
        if self.modalities.is_empty() {
            return Ok(self.default_clip_seconds);
        }
        self.modalities
            .iter()
            .find(|m| m.name == modality)
            .map(|m| m.clip_seconds)
            .ok_or_else(|| {
                Error::Data(format!("profile `{}` has no modality `{modality}`", self.name))
            })
    }
}
