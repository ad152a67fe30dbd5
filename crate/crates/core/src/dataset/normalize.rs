use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::Instance;
use crate::dsp::Domain;
use crate::error::{Error, Result};

/// Column statistics of one domain matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per (modality, domain, column) z-normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub stats: IndexMap<String, IndexMap<Domain, ColumnStats>>,
}

/// Standard deviations below this are treated as 1 (constant columns).
const MIN_STD: f64 = 1e-12;

impl Normalizer {
    /// Fits on every frame of every given instance.
    pub fn fit<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> Result<Normalizer> {
        let mut sums: IndexMap<String, IndexMap<Domain, (Vec<f64>, Vec<f64>, usize)>> = IndexMap::new();
        let mut any = false;
        for inst in instances {
            any = true;
            for (modality, fs) in &inst.features {
                let per = sums.entry(modality.clone()).or_default();
                for m in fs.iter() {
                    let c = m.data.cols();
                    let (s, sq, n) = per
                        .entry(m.domain)
                        .or_insert_with(|| (vec![0.0; c], vec![0.0; c], 0));
                    if s.len() != c {
                        return Err(Error::Data(format!(
                            "{} / {modality} / {}: {} columns, expected {}",
                            inst.subject_id,
                            m.domain,
                            c,
                            s.len()
                        )));
                    }
                    for row in m.data.values().chunks(c) {
                        for j in 0..c {
                            s[j] += row[j];
                            sq[j] += row[j] * row[j];
                        }
                    }
                    *n += m.data.rows();
                }
            }
        }
        if !any {
            return Err(Error::Data("cannot fit normalization on zero instances".into()));
        }
        let stats = sums
            .into_iter()
            .map(|(modality, per)| {
                let per = per
                    .into_iter()
                    .map(|(d, (s, sq, n))| {
                        let n = n as f64;
                        let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
                        let std = sq
                            .iter()
                            .zip(&mean)
                            .map(|(q, m)| {
                                let sd = (q / n - m * m).max(0.0).sqrt();
                                if sd < MIN_STD { 1.0 } else { sd }
                            })
                            .collect();
                        (d, ColumnStats { mean, std })
                    })
                    .collect();
                (modality, per)
            })
            .collect();
        Ok(Normalizer { stats })
    }

    pub fn apply(&self, inst: &Instance) -> Result<Instance> {
        let mut out = inst.clone();
        for (modality, fs) in out.features.iter_mut() {
            let per = self.stats.get(modality).ok_or_else(|| {
                Error::Data(format!("no normalization statistics for modality `{modality}`"))
            })?;
            for m in fs.iter_mut() {
                let st = &per[&m.domain];
                let c = m.data.cols();
                if st.mean.len() != c {
                    return Err(Error::Data(format!(
                        "{} / {modality} / {}: {c} columns, normalizer has {}",
                        inst.subject_id,
                        m.domain,
                        st.mean.len()
                    )));
                }
                for row in m.data.values_mut().chunks_mut(c) {
                    for j in 0..c {
                        row[j] = (row[j] - st.mean[j]) / st.std[j];
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn apply_all(&self, instances: &[Instance]) -> Result<Vec<Instance>> {
        instances.iter().map(|i| self.apply(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testing::instance;

    #[test]
    fn fitted_data_is_standardized() {
        let a = [instance("a", 0.0), instance("b", 10.0)];
        let n = Normalizer::fit(&a).unwrap();
        let z: Vec<f64> = a.iter().flat_map(|i| n.apply(i).unwrap().flatten()).collect();
        // Column-wise: 2 instances × 7 domains × 3 rows each with 2 columns.
        let col = |j: usize| z.iter().skip(j).step_by(2).copied().collect::<Vec<_>>();
        for j in 0..2 {
            let c = col(j);
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_columns_keep_unit_scale() {
        let a = [instance("a", 5.0), instance("b", 5.0)];
        let n = Normalizer::fit(&a).unwrap();
        assert!(n.stats["m"][&Domain::Zcr].std.iter().all(|s| *s > 0.0));
    }
}
