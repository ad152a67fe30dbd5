use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Instance, Label, Normalizer, SyntheticOrigin};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Interpolates every feature tensor of `x` towards `nn` by `u`.
pub fn interpolate(x: &Instance, nn: &Instance, u: f64, subject_id: String) -> Result<Instance> {
    let mut out = x.clone();
    for (modality, fs) in out.features.iter_mut() {
        let other = nn.features.get(modality).ok_or_else(|| {
            Error::Data(format!("`{}` lacks modality `{modality}`", nn.subject_id))
        })?;
        for m in fs.iter_mut() {
            let o = &other.get(m.domain).data;
            if o.shape() != m.data.shape() {
                return Err(Error::ShapeMismatch {
                    op: "smote",
                    left: m.data.shape().to_vec(),
                    right: o.shape().to_vec(),
                });
            }
            for (v, w) in m.data.values_mut().iter_mut().zip(o.values()) {
                *v += u * (w - *v);
            }
        }
    }
    out.subject_id = subject_id;
    out.synthetic = Some(SyntheticOrigin {
        parent: x.subject_id.clone(),
        neighbor: nn.subject_id.clone(),
        u,
    });
    Ok(out)
}

/// Returns `instances` followed by enough synthetic minority instances to
/// balance the two classes.
///
/// Neighbors are found by Euclidean distance on z-normalized flattened
/// features; interpolation happens on the raw features.
pub fn smote(instances: &[Instance], k_neighbors: usize, seed: u64) -> Result<Vec<Instance>> {
    if k_neighbors == 0 {
        return Err(Error::InvalidArgument("SMOTE needs k_neighbors ≥ 1".into()));
    }
    let pos: Vec<usize> = (0..instances.len()).filter(|&i| instances[i].label.is_positive()).collect();
    let neg: Vec<usize> = (0..instances.len()).filter(|&i| !instances[i].label.is_positive()).collect();
    let (minority, majority_len, label) = if pos.len() < neg.len() {
        (pos, neg.len(), Label::Positive)
    } else {
        (neg, pos.len(), Label::Negative)
    };
    let mut out = instances.to_vec();
    if minority.len() == majority_len {
        return Ok(out);
    }
    if minority.len() < 2 {
        return Err(Error::Data(format!(
            "minority class `{label}` has {} member(s); SMOTE needs at least 2",
            minority.len()
        )));
    }
    let norm = Normalizer::fit(minority.iter().map(|&i| &instances[i]))?;
    let flat: Vec<Vec<f64>> = minority
        .iter()
        .map(|&i| Ok(norm.apply(&instances[i])?.flatten()))
        .collect::<Result<_>>()?;
    let k = k_neighbors.min(minority.len() - 1);
    let neighbors: Vec<Vec<usize>> = (0..minority.len())
        .map(|a| {
            let mut others: Vec<(f64, usize)> = (0..minority.len())
                .filter(|&b| b != a)
                .map(|b| (squared_distance(&flat[a], &flat[b]), b))
                .collect();
            others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            others.into_iter().take(k).map(|(_, b)| b).collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..minority.len()).collect();
    order.shuffle(&mut rng);
    let mut taken: HashSet<String> = instances.iter().map(|i| i.subject_id.clone()).collect();
    for n in 0..majority_len - minority.len() {
        let a = order[n % order.len()];
        let b = neighbors[a][rng.random_range(0..k)];
        let u: f64 = rng.random();
        let parent = &instances[minority[a]];
        let mut id = format!("{}~smote{n}", parent.subject_id);
        while !taken.insert(id.clone()) {
            id.push('_');
        }
        out.push(interpolate(parent, &instances[minority[b]], u, id)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testing::labelled;

    fn corpus(pos: usize, neg: usize) -> Vec<Instance> {
        let mut v = Vec::new();
        for i in 0..pos {
            v.push(labelled(&format!("p{i}"), Label::Positive, i as f64 * 0.7));
        }
        for i in 0..neg {
            v.push(labelled(&format!("n{i}"), Label::Negative, -(i as f64) * 1.3));
        }
        v
    }

    #[test]
    fn balances_counts() {
        let out = smote(&corpus(4, 10), 5, 1).unwrap();
        let p = out.iter().filter(|i| i.label.is_positive()).count();
        assert_eq!((p, out.len() - p), (10, 10));
        assert_eq!(out.iter().filter(|i| i.is_synthetic()).count(), 6);
        assert!(out.iter().filter(|i| i.is_synthetic()).all(|i| i.label == Label::Positive));
    }

    #[test]
    fn synthetic_points_lie_on_parent_segment() {
        let base = corpus(5, 12);
        let out = smote(&base, 3, 9).unwrap();
        let by_id = |id: &str| base.iter().find(|i| i.subject_id == id).unwrap();
        for s in out.iter().filter(|i| i.is_synthetic()) {
            let o = s.synthetic.as_ref().unwrap();
            let (x, nn) = (by_id(&o.parent).flatten(), by_id(&o.neighbor).flatten());
            assert!((0.0..1.0).contains(&o.u));
            for ((sv, xv), nv) in s.flatten().iter().zip(&x).zip(&nn) {
                assert!((sv - (xv + o.u * (nv - xv))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_pair_reproduces_parent() {
        let mut v = vec![
            labelled("a", Label::Positive, 3.0),
            labelled("b", Label::Positive, 3.0),
        ];
        v.extend((0..5).map(|i| labelled(&format!("n{i}"), Label::Negative, i as f64)));
        let out = smote(&v, 1, 0).unwrap();
        for s in out.iter().filter(|i| i.is_synthetic()) {
            assert_eq!(s.flatten(), v[0].flatten());
        }
    }

    #[test]
    fn deterministic_per_seed_and_fresh_ids() {
        let base = corpus(3, 9);
        let a = smote(&base, 5, 4).unwrap();
        assert_eq!(a, smote(&base, 5, 4).unwrap());
        let ids: HashSet<_> = a.iter().map(|i| &i.subject_id).collect();
        assert_eq!(ids.len(), a.len());
    }

    #[test]
    fn tiny_minority_rejected() {
        assert!(smote(&corpus(1, 5), 5, 0).is_err());
        assert_eq!(smote(&corpus(3, 3), 5, 0).unwrap().len(), 6);
    }
}
