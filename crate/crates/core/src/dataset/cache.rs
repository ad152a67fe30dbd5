//! On-disk feature cache.
//!
//! ```text
//! C/index.json                       profile, modalities, settings, subject list
//! C/<subject>/meta.json              label, shapes, settings hash
//! C/<subject>/<modality>__<DOMAIN>.audt
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AssemblyConfig, Instance, Label};
use crate::dsp::{Domain, FeatureMatrix, ModalityFeatureSet};
use crate::error::{Error, Result};
use crate::numerics::container::{self, DType};

/// Hex SHA-256 of the JSON form of `value`.
pub fn config_hash(value: &impl Serialize) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub subject_id: String,
    pub label: Label,
    pub dir: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheIndex {
    pub profile: String,
    pub modalities: Vec<String>,
    pub assembly: AssemblyConfig,
    pub config_hash: String,
    pub subjects: Vec<CacheEntry>,
}

#[derive(Serialize, Deserialize)]
struct SubjectMeta {
    subject_id: String,
    label: Label,
    config_hash: String,
    shapes: IndexMap<String, Vec<usize>>,
}

fn dir_name(subject: &str) -> String {
    subject
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn file_name(modality: &str, domain: Domain) -> String {
    format!("{modality}__{}.audt", domain.name())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_cache(
    root: &Path,
    profile: &str,
    assembly: &AssemblyConfig,
    instances: &[Instance],
) -> Result<CacheIndex> {
    let first = instances.first().ok_or_else(|| Error::Data("nothing to cache".into()))?;
    let modalities: Vec<String> = first.features.keys().cloned().collect();
    let hash = config_hash(&(profile, assembly))?;
    let mut used = HashSet::new();
    let mut subjects = Vec::with_capacity(instances.len());
    for inst in instances {
        let dir = dir_name(&inst.subject_id);
        if !used.insert(dir.clone()) {
            return Err(Error::Data(format!(
                "subject ids collide on cache directory `{dir}`"
            )));
        }
        subjects.push(CacheEntry {
            subject_id: inst.subject_id.clone(),
            label: inst.label,
            dir,
        });
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    instances
        .par_iter()
        .zip(&subjects)
        .try_for_each(|(inst, entry)| -> Result<()> {
            let dir = root.join(&entry.dir);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut shapes = IndexMap::new();
            for (modality, fs) in &inst.features {
                for m in fs.iter() {
                    let name = file_name(modality, m.domain);
                    container::write_as(&dir.join(&name), &m.data, DType::F64)?;
                    shapes.insert(name, m.data.shape().to_vec());
                }
            }
            let meta = SubjectMeta {
                subject_id: inst.subject_id.clone(),
                label: inst.label,
                config_hash: hash.clone(),
                shapes,
            };
            write_json(&dir.join("meta.json"), &meta)
        })?;
    let index = CacheIndex {
        profile: profile.to_string(),
        modalities,
        assembly: assembly.clone(),
        config_hash: hash,
        subjects,
    };
    write_json(&root.join("index.json"), &index)?;
    Ok(index)
}

pub fn read_index(root: &Path) -> Result<CacheIndex> {
    read_json(&root.join("index.json"))
}

pub fn read_cache(root: &Path) -> Result<(CacheIndex, Vec<Instance>)> {
    let index = read_index(root)?;
    let instances = index
        .subjects
        .par_iter()
        .map(|entry| read_subject(&root.join(&entry.dir), entry, &index))
        .collect::<Result<Vec<_>>>()?;
    Ok((index, instances))
}

fn read_subject(dir: &Path, entry: &CacheEntry, index: &CacheIndex) -> Result<Instance> {
    let meta: SubjectMeta = read_json(&dir.join("meta.json"))?;
    if meta.config_hash != index.config_hash {
        return Err(Error::Data(format!(
            "{}: cached with settings {} but index says {}",
            dir.display(),
            meta.config_hash,
            index.config_hash
        )));
    }
    let mut features = IndexMap::new();
    for modality in &index.modalities {
        let mats = Domain::ALL
            .iter()
            .map(|&d| {
                let path: PathBuf = dir.join(file_name(modality, d));
                Ok(FeatureMatrix::new(d, container::read(&path)?))
            })
            .collect::<Result<Vec<_>>>()?;
        features.insert(modality.clone(), ModalityFeatureSet::new(mats)?);
    }
    Ok(Instance {
        subject_id: entry.subject_id.clone(),
        label: entry.label,
        features,
        synthetic: None,
    })
}
