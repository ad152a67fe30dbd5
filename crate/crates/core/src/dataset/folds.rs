use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Instance;
use crate::error::{Error, Result};

/// Subject-level k-fold partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Real subject id → fold index.
    pub assignments: IndexMap<String, usize>,
}

impl FoldPlan {
    /// Fold of an instance; oversampled instances inherit their parent's fold.
    pub fn fold_of(&self, inst: &Instance) -> Option<usize> {
        self.assignments.get(inst.root_subject()).copied()
    }

    /// Indices of real instances in fold `f`.
    pub fn test_indices(&self, instances: &[Instance], f: usize) -> Vec<usize> {
        (0..instances.len())
            .filter(|&i| !instances[i].is_synthetic() && self.fold_of(&instances[i]) == Some(f))
            .collect()
    }

    /// Indices of instances (real or oversampled) outside fold `f`.
    pub fn train_indices(&self, instances: &[Instance], f: usize) -> Vec<usize> {
        (0..instances.len())
            .filter(|&i| matches!(self.fold_of(&instances[i]), Some(g) if g != f))
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles the distinct real subjects with `seed` and deals them round-robin.
pub fn make_folds(instances: &[Instance], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need k ≥ 2 folds, got {k}")));
    }
    let mut subjects: Vec<&str> = Vec::new();
    for inst in instances.iter().filter(|i| !i.is_synthetic()) {
        if !subjects.contains(&inst.subject_id.as_str()) {
            subjects.push(&inst.subject_id);
        }
    }
    if subjects.len() < k {
        return Err(Error::Data(format!(
            "{} real subjects cannot fill {k} folds",
            subjects.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subjects.shuffle(&mut rng);
    let assignments = subjects
        .iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), i % k))
        .collect();
    Ok(FoldPlan { k, assignments })
}
