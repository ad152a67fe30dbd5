//! Labeled synthetic multimodal corpora: class-conditioned harmonic tones in
//! Gaussian noise, written as 16-bit WAV files plus a manifest.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, Manifest, ManifestEntry};
use crate::dsp::{write_wav, Waveform};
use crate::error::{Error, Result};
use crate::trainer::derive_seed;

/// Tone frequency and noise level of one class in one modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub frequency: f64,
    pub snr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthModality {
    pub name: String,
    pub clip_seconds: f64,
    /// Negative class first.
    pub class_signatures: [Signature; 2],
    /// When set, only subjects of this evidence group get the class
    /// signature; the others get `neutral`.
    #[serde(default)]
    pub evidence_group: Option<usize>,
    #[serde(default)]
    pub neutral: Option<Signature>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub modalities: Vec<SynthModality>,
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_fraction")]
    pub positive_fraction: f64,
    /// Subjects of each class are dealt round-robin into this many groups.
    #[serde(default = "default_groups")]
    pub evidence_groups: usize,
    /// Peak amplitude of the clean tone.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_rate() -> u32 {
    22_050
}
fn default_fraction() -> f64 {
    0.5
}
fn default_groups() -> usize {
    1
}
fn default_amplitude() -> f64 {
    0.3
}

/// Relative level of the second harmonic.
const HARMONIC: f64 = 0.5;
const PEAK: f64 = 0.99;

impl SynthSpec {
    /// Every modality separates the classes with 440 Hz against 880 Hz.
    pub fn tones(n_subjects: usize, n_modalities: usize, snr_db: f64, seed: u64) -> SynthSpec {
        let modalities = (0..n_modalities)
            .map(|m| SynthModality {
                name: format!("m{}", m + 1),
                clip_seconds: 1.0,
                class_signatures: [
                    Signature { frequency: 440.0, snr_db },
                    Signature { frequency: 880.0, snr_db },
                ],
                evidence_group: None,
                neutral: None,
            })
            .collect();
        SynthSpec {
            n_subjects,
            modalities,
            seed,
            sample_rate: default_rate(),
            positive_fraction: 0.5,
            evidence_groups: 1,
            amplitude: default_amplitude(),
        }
    }

    /// Two modalities; the first carries class evidence only for half the
    /// subjects and the second only for the other half. Outside its group a
    /// modality plays a 660 Hz tone whatever the class.
    pub fn complementary(n_subjects: usize, snr_db: f64, seed: u64) -> SynthSpec {
        let mut s = SynthSpec::tones(n_subjects, 2, snr_db, seed);
        s.evidence_groups = 2;
        for (g, m) in s.modalities.iter_mut().enumerate() {
            m.evidence_group = Some(g);
            m.neutral = Some(Signature { frequency: 660.0, snr_db });
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_subjects < 2 {
            return bad("need at least two subjects".into());
        }
        if self.modalities.is_empty() {
            return bad("need at least one modality".into());
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) || self.evidence_groups == 0 {
            return bad("positive_fraction must lie in [0, 1] and evidence_groups must be positive".into());
        }
        if !(self.amplitude > 0.0 && self.amplitude * (1.0 + HARMONIC) <= PEAK) {
            return bad(format!("amplitude must lie in (0, {:.3}]", PEAK / (1.0 + HARMONIC)));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let mut separates = false;
        for m in &self.modalities {
            if m.name.is_empty() || !(m.clip_seconds > 0.0) {
                return bad(format!("modality `{}` needs a name and a positive clip length", m.name));
            }
            for s in m.class_signatures.iter().chain(&m.neutral) {
                if !(s.frequency > 0.0 && 2.0 * s.frequency < nyquist) || !s.snr_db.is_finite() {
                    return bad(format!("modality `{}`: tone and harmonic must stay below Nyquist", m.name));
                }
            }
            if m.evidence_group.is_some_and(|g| g >= self.evidence_groups) {
                return bad(format!("modality `{}`: evidence group out of range", m.name));
            }
            if m.evidence_group.is_some() && m.neutral.is_none() {
                return bad(format!("modality `{}`: evidence group needs a neutral signature", m.name));
            }
            separates |= m.class_signatures[0] != m.class_signatures[1];
        }
        if !separates {
            return bad("class signatures must differ in at least one modality".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SynthSpec> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Label and evidence group of every subject.
    pub fn assignments(&self) -> Vec<(Label, usize)> {
        let n_pos = (self.n_subjects as f64 * self.positive_fraction).round() as usize;
        let mut labels: Vec<Label> = (0..self.n_subjects).map(|i| Label::from_index(usize::from(i < n_pos))).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[u64::MAX])));
        let mut seen = [0usize; 2];
        labels
            .into_iter()
            .map(|l| {
                let c = usize::from(l.is_positive());
                seen[c] += 1;
                (l, (seen[c] - 1) % self.evidence_groups)
            })
            .collect()
    }
}

/// `a·(sin(2πft + φ₁) + ½·sin(4πft + φ₂))` plus white noise at the given SNR,
/// with random phases.
pub fn render(sig: &Signature, amplitude: f64, seconds: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p1, p2) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
    let signal_power = amplitude * amplitude * (1.0 + HARMONIC * HARMONIC) / 2.0;
    let sigma = (signal_power / 10f64.powf(sig.snr_db / 10.0)).sqrt();
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let n = (seconds * sample_rate as f64).round() as usize;
    let sr = sample_rate as f64;
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            amplitude * ((TAU * sig.frequency * t + p1).sin() + HARMONIC * (2.0 * TAU * sig.frequency * t + p2).sin())
                + noise.sample(&mut rng)
        })
        .collect();
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > PEAK {
        x.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    Waveform::new(x, sample_rate)
}

fn clip_path(subject: &str, modality: &str) -> PathBuf {
    Path::new("wav").join(subject).join(format!("{modality}.wav"))
}

/// Writes `out/wav/<subject>/<modality>.wav` and `out/manifest.jsonl`.
pub fn generate(spec: &SynthSpec, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    let assignments = spec.assignments();
    let width = spec.n_subjects.to_string().len();
    let subjects: Vec<String> = (0..spec.n_subjects).map(|i| format!("subj{i:0width$}")).collect();
    let jobs: Vec<(usize, usize)> = (0..spec.n_subjects)
        .flat_map(|s| (0..spec.modalities.len()).map(move |m| (s, m)))
        .collect();
    jobs.par_iter().try_for_each(|&(s, m)| -> Result<()> {
        let modality = &spec.modalities[m];
        let (label, group) = assignments[s];
        let sig = match (modality.evidence_group, &modality.neutral) {
            (Some(g), Some(neutral)) if g != group => neutral,
            _ => &modality.class_signatures[usize::from(label.is_positive())],
        };
        let seed = derive_seed(spec.seed, &[s as u64, m as u64]);
        let w = render(sig, spec.amplitude, modality.clip_seconds, spec.sample_rate, seed)?;
        let path = out.join(clip_path(&subjects[s], &modality.name));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_wav(&path, &w)
    })?;
    let entries = subjects
        .iter()
        .zip(&assignments)
        .map(|(id, &(label, _))| ManifestEntry {
            subject_id: id.clone(),
            label,
            modality_paths: spec
                .modalities
                .iter()
                .map(|m| (m.name.clone(), vec![clip_path(id, &m.name)]))
                .collect::<IndexMap<_, _>>(),
        })
        .collect();
    let manifest = Manifest::new(entries)?;
    let path = out.join("manifest.jsonl");
    fs::write(&path, manifest.to_jsonl()?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_manifest;
    use crate::dsp::read_wav;

    #[test]
    fn counts_and_balance() {
        let d = tempfile::tempdir().unwrap();
        let spec = SynthSpec::tones(10, 3, 10.0, 1);
        let m = generate(&spec, d.path()).unwrap();
        assert_eq!(m.len(), 10);
        let wavs = fs::read_dir(d.path().join("wav")).unwrap().map(|e| fs::read_dir(e.unwrap().path()).unwrap().count()).sum::<usize>();
        assert_eq!(wavs, 30);
        assert_eq!(m.entries.iter().filter(|e| e.label.is_positive()).count(), 5);
        let back = load_manifest(&d.path().join("manifest.jsonl")).unwrap();
        assert_eq!(back.modalities, vec!["m1", "m2", "m3"]);
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let spec = SynthSpec::tones(4, 2, 10.0, 5);
        generate(&spec, a.path()).unwrap();
        generate(&spec, b.path()).unwrap();
        for rel in ["manifest.jsonl", "wav/subj0/m1.wav", "wav/subj3/m2.wav"] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
        }
    }

    #[test]
    fn peak_and_rate() {
        let d = tempfile::tempdir().unwrap();
        let mut spec = SynthSpec::tones(2, 1, -5.0, 2);
        spec.amplitude = 0.66;
        generate(&spec, d.path()).unwrap();
        let w = read_wav(&d.path().join("wav/subj0/m1.wav")).unwrap();
        assert_eq!(w.sample_rate(), 22_050);
        assert_eq!(w.len(), 22_050);
        assert!(w.samples().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn noise_level_matches_snr() {
        let sig = Signature { frequency: 500.0, snr_db: 0.0 };
        let clean = Signature { frequency: 500.0, snr_db: 300.0 };
        let a = render(&sig, 0.2, 2.0, 16_000, 3).unwrap();
        let b = render(&clean, 0.2, 2.0, 16_000, 3).unwrap();
        let noise_power = a.samples().iter().zip(b.samples()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
        let signal_power = 0.2f64.powi(2) * 1.25 / 2.0;
        assert!((noise_power / signal_power - 1.0).abs() < 0.05, "{}", noise_power / signal_power);
    }

    #[test]
    fn complementary_groups_are_balanced() {
        let spec = SynthSpec::complementary(40, 10.0, 0);
        spec.validate().unwrap();
        let a = spec.assignments();
        for label in [Label::Negative, Label::Positive] {
            for g in 0..2 {
                assert_eq!(a.iter().filter(|x| **x == (label, g)).count(), 10);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = SynthSpec::tones(4, 1, 10.0, 0);
        s.modalities[0].class_signatures[1] = s.modalities[0].class_signatures[0].clone();
        assert!(s.validate().is_err());
        let mut s = SynthSpec::tones(4, 1, 10.0, 0);
        s.modalities[0].class_signatures[1].frequency = 6000.0;
        assert!(s.validate().is_err());
        let mut s = SynthSpec::tones(4, 1, 10.0, 0);
        s.modalities[0].evidence_group = Some(0);
        assert!(s.validate().is_err());
    }
}
