//! Checkpoint directory: one AUDT file per parameter plus `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::dataset::Normalizer;
use crate::error::{Error, Result};
use crate::model::{AudFormer, NetworkSpec};
use crate::numerics::container::{self, DType};

pub const MANIFEST: &str = "manifest.json";
const FORMAT: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub config_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    /// Root of every random stream used in training; shuffles and dropout
    /// masks of a given epoch are derived from it.
    pub rng_seed: u64,
    pub normalizer: Normalizer,
    pub model: AudFormer,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: u32,
    config: ModelConfig,
    config_hash: String,
    spec: NetworkSpec,
    epoch: usize,
    rng_seed: u64,
    normalizer: Normalizer,
    params: Vec<ParamEntry>,
}

fn file_name(i: usize, name: &str) -> String {
    format!("{i:03}_{name}.audt")
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut params = Vec::with_capacity(self.model.store.len());
        for (i, (name, t)) in self.model.store.iter().enumerate() {
            let file = file_name(i, name);
            container::write_as(&dir.join(&file), t, DType::F64)?;
            params.push(ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                file,
            });
        }
        let manifest = Manifest {
            format: FORMAT,
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            spec: self.model.spec.clone(),
            epoch: self.epoch,
            rng_seed: self.rng_seed,
            normalizer: self.normalizer.clone(),
            params,
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if m.format != FORMAT {
            return Err(Error::Data(format!("{}: unsupported checkpoint format {}", path.display(), m.format)));
        }
        if m.config.hash()? != m.config_hash {
            return Err(Error::Data(format!("{}: configuration hash does not match", path.display())));
        }
        let mut model = AudFormer::new(m.spec, 0)?;
        if model.store.len() != m.params.len() {
            return Err(Error::Data(format!(
                "{}: {} parameters listed, model has {}",
                path.display(),
                m.params.len(),
                model.store.len()
            )));
        }
        for entry in &m.params {
            let t = container::read(&dir.join(&entry.file))?;
            if t.shape() != entry.shape.as_slice() {
                return Err(Error::Data(format!("{}: shape differs from manifest", entry.file)));
            }
            model.store.set(&entry.name, t)?;
        }
        let listed: Vec<&str> = m.params.iter().map(|p| p.name.as_str()).collect();
        let expected: Vec<&str> = model.store.iter().map(|(n, _)| n).collect();
        if listed != expected {
            return Err(Error::Data(format!("{}: parameter layout differs from the model", path.display())));
        }
        Ok(Checkpoint {
            config: m.config,
            config_hash: m.config_hash,
            epoch: m.epoch,
            rng_seed: m.rng_seed,
            normalizer: m.normalizer,
            model,
        })
    }
}
