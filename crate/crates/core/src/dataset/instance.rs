use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{Label, Manifest, ManifestEntry};
use crate::dsp::{
    read_wav, standardize_length, trim_silence, Extractor, FeatureConfig, ModalityFeatureSet,
    Waveform, DEFAULT_SAMPLE_RATE,
};
use crate::error::{Error, Result};
use crate::profiles::Profile;

/// Provenance of an oversampled instance: `parent + u·(neighbor − parent)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOrigin {
    pub parent: String,
    pub neighbor: String,
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub subject_id: String,
    pub label: Label,
    pub features: IndexMap<String, ModalityFeatureSet>,
    pub synthetic: Option<SyntheticOrigin>,
}

impl Instance {
    pub fn is_synthetic(&self) -> bool {
        self.synthetic.is_some()
    }

    /// The subject whose fold this instance belongs to.
    pub fn root_subject(&self) -> &str {
        self.synthetic.as_ref().map_or(&self.subject_id, |s| &s.parent)
    }

    /// Every feature value, modality by modality in domain order.
    pub fn flatten(&self) -> Vec<f64> {
        self.features
            .values()
            .flat_map(|fs| fs.iter().flat_map(|m| m.data.values().iter().copied()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssemblyConfig {
    pub features: FeatureConfig,
    pub trim_db: f64,
    pub sample_rate: u32,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig {
            features: FeatureConfig::default(),
            trim_db: 60.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

/// Concatenates one modality's recordings, trims silence and fixes the length.
pub fn prepare_modality(paths: &[impl AsRef<Path>], clip_seconds: f64, cfg: &AssemblyConfig) -> Result<Waveform> {
    let clips = paths
        .iter()
        .map(|p| read_wav(p.as_ref())?.resample(cfg.sample_rate))
        .collect::<Result<Vec<_>>>()?;
    let joined = Waveform::concat(&clips)?;
    let trimmed = trim_silence(&joined, cfg.trim_db)?;
    standardize_length(&trimmed, clip_seconds)
}

fn assemble_one(
    entry: &ManifestEntry,
    profile: &Profile,
    extractor: &Extractor,
    cfg: &AssemblyConfig,
) -> std::result::Result<Instance, Vec<String>> {
    let mut features = IndexMap::new();
    let mut errors = Vec::new();
    for (modality, paths) in &entry.modality_paths {
        let result = profile
            .clip_seconds(modality)
            .and_then(|secs| prepare_modality(paths, secs, cfg))
            .and_then(|w| extractor.extract(&w));
        match result {
            Ok(fs) => {
                features.insert(modality.clone(), fs);
            }
            Err(e) => errors.push(format!("{} / {modality}: {e}", entry.subject_id)),
        }
    }
    if errors.is_empty() {
        Ok(Instance {
            subject_id: entry.subject_id.clone(),
            label: entry.label,
            features,
            synthetic: None,
        })
    } else {
        Err(errors)
    }
}

/// Builds one instance per subject, in parallel; all failures are reported together.
pub fn assemble(manifest: &Manifest, profile: &Profile, cfg: &AssemblyConfig) -> Result<Vec<Instance>> {
    let extractor = Extractor::new(cfg.features.clone(), cfg.sample_rate)?;
    let results: Vec<_> = manifest
        .entries
        .par_iter()
        .map(|e| assemble_one(e, profile, &extractor, cfg))
        .collect();
    let mut instances = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(i) => instances.push(i),
            Err(e) => errors.extend(e),
        }
    }
    if errors.is_empty() {
        Ok(instances)
    } else {
        Err(Error::Aggregate {
            count: errors.len(),
            errors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{extract_all, write_wav};
    use std::f64::consts::PI;

    fn tone(freq: f64, n: usize) -> Waveform {
        let x = (0..n).map(|i| 0.4 * (2.0 * PI * freq * i as f64 / 44_100.0).sin()).collect();
        Waveform::new(x, 44_100).unwrap()
    }

    fn entry(id: &str, paths: Vec<(&str, Vec<std::path::PathBuf>)>) -> ManifestEntry {
        ManifestEntry {
            subject_id: id.into(),
            label: Label::Positive,
            modality_paths: paths.into_iter().map(|(m, p)| (m.to_string(), p)).collect(),
        }
    }

    #[test]
    fn recordings_are_joined_before_trimming() {
        let d = tempfile::tempdir().unwrap();
        let (a, b) = (d.path().join("deep.wav"), d.path().join("shallow.wav"));
        write_wav(&a, &tone(300.0, 22_050)).unwrap();
        write_wav(&b, &tone(600.0, 22_050)).unwrap();
        let cfg = AssemblyConfig::default();
        let joined = prepare_modality(&[&a, &b], 1.0, &cfg).unwrap();
        let direct = Waveform::concat(&[read_wav(&a).unwrap(), read_wav(&b).unwrap()]).unwrap();
        let expect = standardize_length(&trim_silence(&direct, 60.0).unwrap(), 1.0).unwrap();
        assert_eq!(joined, expect);
        assert_eq!(joined.len(), 44_100);
    }

    #[test]
    fn single_recording_matches_direct_extraction() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("c.wav");
        write_wav(&p, &tone(440.0, 30_000)).unwrap();
        let profile = Profile::named("synth").unwrap();
        let m = Manifest::new(vec![entry("s", vec![("cough", vec![p.clone()])])]).unwrap();
        let cfg = AssemblyConfig::default();
        let inst = assemble(&m, &profile, &cfg).unwrap();
        let w = standardize_length(&trim_silence(&read_wav(&p).unwrap(), 60.0).unwrap(), 1.0).unwrap();
        assert_eq!(inst[0].features["cough"], extract_all(&w, &cfg.features).unwrap());
    }

    #[test]
    fn corrupt_wav_names_subject_and_path() {
        let d = tempfile::tempdir().unwrap();
        let bad = d.path().join("bad.wav");
        std::fs::write(&bad, b"RIFF nonsense").unwrap();
        let m = Manifest::new(vec![entry("subj-7", vec![("vowel", vec![bad.clone()])])]).unwrap();
        let err = assemble(&m, &Profile::named("synth").unwrap(), &AssemblyConfig::default())
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("subj-7") && msg.contains("bad.wav"), "{msg}");
    }
}
