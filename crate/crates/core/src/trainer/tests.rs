use std::collections::HashSet;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::{mean_std, Instance, Label};
use crate::dsp::{Domain, FeatureMatrix, ModalityFeatureSet};
use crate::error::Error;
use crate::model::AblationMode;
use crate::numerics::Tensor;

const DIMS: [usize; 7] = [1, 1, 1, 4, 3, 3, 3];

/// Noise plus a class-dependent offset on every feature.
fn toy(n: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = Label::from_index(i % 2);
            let shift = if label.is_positive() { 1.0 } else { -1.0 };
            let mut features = IndexMap::new();
            for m in ["a", "b"] {
                let mats = Domain::ALL
                    .iter()
                    .map(|&d| {
                        let n = 6 * DIMS[d.index()];
                        let v = (0..n).map(|_| shift + rng.random_range(-0.5..0.5)).collect();
                        FeatureMatrix::new(d, Tensor::matrix(6, DIMS[d.index()], v).unwrap())
                    })
                    .collect();
                features.insert(m.to_string(), ModalityFeatureSet::new(mats).unwrap());
            }
            Instance {
                subject_id: format!("s{i:02}"),
                label,
                features,
                synthetic: None,
            }
        })
        .collect()
}

fn config() -> ModelConfig {
    let mut c = ModelConfig::for_profile("synth").unwrap();
    c.d_tc = 8;
    c.heads = 2;
    c.intra_heads = 2;
    c.intra_depth = 1;
    c.inter_depth = 1;
    c.max_tokens_per_domain = 2;
    c.batch_size = 4;
    c.epochs = 3;
    c
}

fn dataset(n: usize) -> Dataset {
    Dataset {
        profile: "synth".into(),
        instances: toy(n, 1),
    }
}

#[test]
fn zero_epochs_returns_initialization() {
    let mut c = config();
    c.epochs = 0;
    let out = train(&c, &toy(6, 0)).unwrap();
    let fresh = crate::model::AudFormer::new(out.checkpoint.model.spec.clone(), derive_seed(c.seed, &[0, 1])).unwrap();
    assert_eq!(out.checkpoint.model.store, fresh.store);
    assert!(out.epoch_losses.is_empty());
}

#[test]
fn loss_drops_on_separable_toy_and_fits_it() {
    let mut c = config();
    c.learning_rate = 0.05;
    c.momentum = 0.9;
    c.epochs = 15;
    c.attn_dropout = 0.0;
    c.out_dropout = 0.0;
    let data = dataset(16);
    let out = train(&c, &data.instances).unwrap();
    let l = &out.epoch_losses;
    assert!(l[l.len() - 1] < l[0] * 0.5, "{l:?}");
    let r = evaluate(&out.checkpoint, &data).unwrap();
    assert!(r.folds[0].acc >= 0.99, "{:?}", r.folds[0]);
}

#[test]
fn first_steps_reduce_loss_at_default_rate() {
    let mut c = config();
    c.learning_rate = 1e-3;
    c.batch_size = 16;
    c.attn_dropout = 0.0;
    c.out_dropout = 0.0;
    let data = toy(16, 3);
    let mut losses = Vec::new();
    for epochs in 0..=5 {
        c.epochs = epochs;
        let ck = train(&c, &data).unwrap().checkpoint;
        let s = scores(&ck, &data).unwrap();
        let y: Vec<Label> = data.iter().map(|i| i.label).collect();
        losses.push(crate::model::bce_loss(&y, &s).unwrap());
    }
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn training_is_bitwise_reproducible() {
    let data = toy(10, 4);
    let a = train(&config(), &data).unwrap();
    let b = train(&config(), &data).unwrap();
    assert_eq!(a.checkpoint.model.store, b.checkpoint.model.store);
    assert_eq!(a.epoch_losses, b.epoch_losses);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let data = dataset(8);
    let out = train(&config(), &data.instances).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.checkpoint.save(dir.path()).unwrap();
    let back = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(back.model.store, out.checkpoint.model.store);
    assert_eq!(back.normalizer, out.checkpoint.normalizer);
    assert_eq!(scores(&back, &data.instances).unwrap(), scores(&out.checkpoint, &data.instances).unwrap());
    let r1 = evaluate(&back, &data).unwrap();
    assert_eq!(r1, evaluate(&out.checkpoint, &data).unwrap());
}

#[test]
fn evaluate_rejects_mismatch_and_empty() {
    let data = dataset(6);
    let ck = train(&config(), &data.instances).unwrap().checkpoint;
    let other = Dataset {
        profile: "svd".into(),
        instances: data.instances.clone(),
    };
    assert!(matches!(evaluate(&ck, &other), Err(Error::ProfileMismatch { .. })));
    let empty = Dataset {
        profile: "synth".into(),
        instances: Vec::new(),
    };
    assert!(evaluate(&ck, &empty).is_err());
}

#[test]
fn held_out_subject_in_batch_is_refused() {
    let data = toy(6, 0);
    let held: HashSet<String> = ["s03".to_string()].into();
    assert!(train_fold(&config(), &data, 0, &held).is_err());
}

#[test]
fn huge_step_diverges() {
    let mut c = config();
    c.learning_rate = 1e300;
    c.epochs = 5;
    let err = train(&c, &toy(8, 0)).unwrap_err();
    assert!(err.is_divergence(), "{err}");
}

#[test]
fn two_fold_cv_reports_two_folds() {
    let data = dataset(12);
    let out = run_cv(&config(), &data, 2).unwrap();
    assert_eq!(out.report.folds.len(), 2);
    let accs: Vec<f64> = out.report.folds.iter().map(|m| m.acc).collect();
    let (m, s) = mean_std(&accs).unwrap();
    let oracle_mean = (accs[0] + accs[1]) / 2.0;
    let oracle_std = ((accs[0] - oracle_mean).powi(2) / 2.0 + (accs[1] - oracle_mean).powi(2) / 2.0).sqrt();
    assert_eq!(out.report.mean.acc, Some(m));
    assert!((m - oracle_mean).abs() < 1e-15 && (s - oracle_std).abs() < 1e-15);
    let tested: usize = out.folds.iter().map(|f| f.test_subjects.len()).sum();
    assert_eq!(tested, 12);
}

#[test]
fn cv_with_smote_balances_train_folds_only() {
    let mut c = config();
    c.smote = true;
    c.smote_k = 2;
    c.epochs = 1;
    let mut data = dataset(12);
    // Make the positive class a minority.
    for inst in data.instances.iter_mut().take(4) {
        inst.label = Label::Negative;
    }
    let out = run_cv(&c, &data, 2).unwrap();
    for f in &out.folds {
        assert!(f.test_subjects.iter().all(|s| !s.contains("~smote")));
    }
}

#[test]
fn ablated_configs_train() {
    for mode in [AblationMode::IntraAtt, AblationMode::InterAtt] {
        let mut c = config();
        c.ablation_mode = mode;
        c.epochs = 1;
        let out = train(&c, &toy(6, 2)).unwrap();
        let names: Vec<&str> = out.checkpoint.model.store.iter().map(|(n, _)| n).collect();
        assert_eq!(names.iter().any(|n| n.starts_with("intra.")), mode.uses_intra());
        assert_eq!(names.iter().any(|n| n.starts_with("inter.")), mode.uses_inter());
    }
}

#[test]
fn profile_mismatch_in_cv() {
    let mut c = config();
    c.profile = "ipvs".into();
    assert!(matches!(run_cv(&c, &dataset(6), 2), Err(Error::ProfileMismatch { .. })));
}
