//! Flat `key = value` training configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::config_hash;
use crate::dsp::Domain;
use crate::error::{Error, Result};
use crate::model::{AblationMode, NetworkSpec};
use crate::profiles::Profile;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub profile: String,
    /// Empty means every modality present in the data, in cache order.
    pub modalities: Vec<String>,
    pub d_tc: usize,
    pub intra_depth: usize,
    pub inter_depth: usize,
    pub heads: usize,
    pub intra_heads: usize,
    pub attn_dropout: f64,
    pub out_dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub ablation_mode: AblationMode,
    pub max_tokens_per_domain: usize,
    pub scalar_kernel: usize,
    pub spectral_kernel: usize,
    pub smote: bool,
    pub smote_k: usize,
}

pub const KEYS: [&str; 21] = [
    "profile",
    "modalities",
    "d_tc",
    "intra_depth",
    "inter_depth",
    "heads",
    "intra_heads",
    "attn_dropout",
    "out_dropout",
    "batch_size",
    "learning_rate",
    "momentum",
    "weight_decay",
    "epochs",
    "seed",
    "ablation_mode",
    "max_tokens_per_domain",
    "scalar_kernel",
    "spectral_kernel",
    "smote",
    "smote_k",
];

impl ModelConfig {
    /// Defaults taken from a named profile.
    pub fn for_profile(name: &str) -> Result<Self> {
        let p = Profile::named(name)?;
        Ok(ModelConfig {
            profile: p.name.clone(),
            modalities: p.modalities.iter().map(|m| m.name.clone()).collect(),
            d_tc: p.hidden,
            intra_depth: 2,
            inter_depth: 2,
            heads: p.heads,
            intra_heads: p.heads,
            attn_dropout: p.attn_dropout,
            out_dropout: p.out_dropout,
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
            epochs: p.epochs,
            seed: 0,
            ablation_mode: AblationMode::Full,
            max_tokens_per_domain: 64,
            scalar_kernel: 3,
            spectral_kernel: 5,
            smote: p.smote,
            smote_k: crate::dataset::smote::DEFAULT_K,
        })
    }

    /// Parses `key = value` lines; `#` starts a comment. A `profile` key
    /// selects the defaults, whatever its position in the file.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !KEYS.contains(&k.as_str()) {
                return Err(err(i + 1, format!("unknown key `{k}`")));
            }
            if pairs.iter().any(|p| p.1 == k) {
                return Err(err(i + 1, format!("duplicate key `{k}`")));
            }
            pairs.push((i + 1, k, v));
        }
        let (line, profile) = pairs
            .iter()
            .find(|p| p.1 == "profile")
            .map_or((0, "synth"), |p| (p.0, p.2.as_str()));
        let mut cfg = ModelConfig::for_profile(profile).map_err(|e| err(line, e.to_string()))?;
        for (line, k, v) in &pairs {
            cfg.set(k, v).map_err(|e| err(*line, e.to_string()))?;
        }
        cfg.validate().map_err(|e| err(0, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelConfig::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("`{key}`: cannot parse `{v}`")))
        }
        match key {
            "profile" => self.profile = Profile::named(value)?.name,
            "modalities" => {
                self.modalities = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "d_tc" => self.d_tc = num(key, value)?,
            "intra_depth" => self.intra_depth = num(key, value)?,
            "inter_depth" => self.inter_depth = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "intra_heads" => self.intra_heads = num(key, value)?,
            "attn_dropout" => self.attn_dropout = num(key, value)?,
            "out_dropout" => self.out_dropout = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "ablation_mode" => self.ablation_mode = value.parse()?,
            "max_tokens_per_domain" => self.max_tokens_per_domain = num(key, value)?,
            "scalar_kernel" => self.scalar_kernel = num(key, value)?,
            "spectral_kernel" => self.spectral_kernel = num(key, value)?,
            "smote" => self.smote = num(key, value)?,
            "smote_k" => self.smote_k = num(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.d_tc == 0 || self.heads == 0 || self.intra_heads == 0 {
            return bad("d_tc, heads and intra_heads must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0, 1) and weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.attn_dropout) || !(0.0..1.0).contains(&self.out_dropout) {
            return bad("dropout rates must lie in [0, 1)");
        }
        if self.max_tokens_per_domain == 0 || self.scalar_kernel == 0 || self.spectral_kernel == 0 {
            return bad("token cap and kernel sizes must be positive");
        }
        if self.smote && self.smote_k == 0 {
            return bad("smote_k must be positive");
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("profile", self.profile.clone());
        line("modalities", self.modalities.join(","));
        line("d_tc", self.d_tc.to_string());
        line("intra_depth", self.intra_depth.to_string());
        line("inter_depth", self.inter_depth.to_string());
        line("heads", self.heads.to_string());
        line("intra_heads", self.intra_heads.to_string());
        line("attn_dropout", self.attn_dropout.to_string());
        line("out_dropout", self.out_dropout.to_string());
        line("batch_size", self.batch_size.to_string());
        line("learning_rate", self.learning_rate.to_string());
        line("momentum", self.momentum.to_string());
        line("weight_decay", self.weight_decay.to_string());
        line("epochs", self.epochs.to_string());
        line("seed", self.seed.to_string());
        line("ablation_mode", self.ablation_mode.to_string());
        line("max_tokens_per_domain", self.max_tokens_per_domain.to_string());
        line("scalar_kernel", self.scalar_kernel.to_string());
        line("spectral_kernel", self.spectral_kernel.to_string());
        line("smote", self.smote.to_string());
        line("smote_k", self.smote_k.to_string());
        s
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    pub fn network_spec(&self, modalities: Vec<String>, domain_dims: Vec<usize>) -> NetworkSpec {
        debug_assert_eq!(domain_dims.len(), Domain::ALL.len());
        NetworkSpec {
            modalities,
            domain_dims,
            d_tc: self.d_tc,
            intra_depth: self.intra_depth,
            inter_depth: self.inter_depth,
            heads: self.heads,
            intra_heads: self.intra_heads,
            attn_dropout: self.attn_dropout,
            out_dropout: self.out_dropout,
            max_tokens_per_domain: self.max_tokens_per_domain,
            scalar_kernel: self.scalar_kernel,
            spectral_kernel: self.spectral_kernel,
            ablation_mode: self.ablation_mode,
        }
    }
}
