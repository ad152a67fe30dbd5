use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    #[serde(alias = "Negative", alias = "NEGATIVE", alias = "healthy")]
    Negative,
    #[serde(alias = "Positive", alias = "POSITIVE")]
    Positive,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Negative => 0.0,
            Label::Positive => 1.0,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 0 {
            Label::Negative
        } else {
            Label::Positive
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub label: Label,
    /// Recordings per modality, in the order they are concatenated.
    #[serde(alias = "modalities")]
    pub modality_paths: IndexMap<String, Vec<PathBuf>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Modality names in declared order (from the first entry).
    pub modalities: Vec<String>,
}

impl Manifest {
    /// Checks modality consistency and subject uniqueness.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Manifest> {
        let first = entries.first().ok_or_else(|| Error::Data("manifest has no entries".into()))?;
        let modalities: Vec<String> = first.modality_paths.keys().cloned().collect();
        if modalities.is_empty() {
            return Err(Error::Data(format!(
                "subject `{}` declares no modalities",
                first.subject_id
            )));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.subject_id.as_str()) {
                return Err(Error::Data(format!("duplicate subject `{}`", e.subject_id)));
            }
            for m in &modalities {
                match e.modality_paths.get(m) {
                    Some(p) if !p.is_empty() => {}
                    _ => {
                        return Err(Error::Data(format!(
                            "subject `{}` has no recording for modality `{m}`",
                            e.subject_id
                        )))
                    }
                }
            }
            if let Some(extra) = e.modality_paths.keys().find(|k| !modalities.contains(k)) {
                return Err(Error::Data(format!(
                    "subject `{}` has undeclared modality `{extra}`",
                    e.subject_id
                )));
            }
        }
        Ok(Manifest {
            entries,
            modalities,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Reads a JSON-lines manifest. Relative audio paths resolve against the
/// manifest's directory; every missing file is reported in one error.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        for paths in entry.modality_paths.values_mut() {
            for p in paths.iter_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        entries.push(entry);
    }
    let manifest = Manifest::new(entries)?;
    let missing: Vec<String> = manifest
        .entries
        .iter()
        .flat_map(|e| {
            e.modality_paths.iter().flat_map(move |(m, ps)| {
                ps.iter()
                    .filter(|p| !p.is_file())
                    .map(move |p| format!("{} / {m}: missing {}", e.subject_id, p.display()))
            })
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Aggregate {
            count: missing.len(),
            errors: missing,
        });
    }
    Ok(manifest)
}
