//! Mini-batch SGD, evaluation and subject-disjoint cross-validation.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use crate::dataset::{
    compute_metrics, make_folds, read_cache, smote, FoldPlan, Instance, Label, MetricReport, Metrics,
    Normalizer,
};
use crate::dsp::Domain;
use crate::error::{Error, Result};
use crate::model::AudFormer;

/// Probability threshold for a positive prediction.
pub const THRESHOLD: f64 = 0.5;

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_SMOTE: u64 = 4;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for the stream named by `parts`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Cached instances together with the profile they were extracted under.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub profile: String,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn from_cache(root: &Path) -> Result<Self> {
        let (index, instances) = read_cache(root)?;
        Ok(Dataset {
            profile: index.profile,
            instances,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    /// Mean per-instance loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

fn domain_dims(inst: &Instance, modality: &str) -> Result<Vec<usize>> {
    let fs = inst
        .features
        .get(modality)
        .ok_or_else(|| Error::Data(format!("subject `{}` has no `{modality}` features", inst.subject_id)))?;
    Ok(Domain::ALL.iter().map(|&d| fs.get(d).data.cols()).collect())
}

/// Trains on every given instance.
pub fn train(config: &ModelConfig, instances: &[Instance]) -> Result<TrainOutput> {
    train_fold(config, instances, 0, &HashSet::new())
}

/// Trains one fold. Any instance whose subject is in `held_out` reaching a
/// batch is an error.
pub fn train_fold(
    config: &ModelConfig,
    instances: &[Instance],
    fold: usize,
    held_out: &HashSet<String>,
) -> Result<TrainOutput> {
    config.validate()?;
    let first = instances
        .first()
        .ok_or_else(|| Error::Data("no training instances".into()))?;
    let modalities = if config.modalities.is_empty() {
        first.features.keys().cloned().collect()
    } else {
        config.modalities.clone()
    };
    let dims = domain_dims(first, &modalities[0])?;
    let fold = fold as u64;
    let seed = config.seed;

    let normalizer = Normalizer::fit(instances.iter().filter(|i| !i.is_synthetic()))?;
    let mut data = normalizer.apply_all(instances)?;
    if config.smote {
        data = smote(&data, config.smote_k, derive_seed(seed, &[fold, STREAM_SMOTE]))?;
    }

    let spec = config.network_spec(modalities, dims);
    let mut model = AudFormer::new(spec, derive_seed(seed, &[fold, STREAM_INIT]))?;
    let mut velocity: Vec<Vec<f64>> = if config.momentum > 0.0 {
        model.store.iter().map(|(_, t)| vec![0.0; t.len()]).collect()
    } else {
        Vec::new()
    };

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let e = epoch as u64;
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[fold, STREAM_SHUFFLE, e])));
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            for &i in batch {
                if held_out.contains(data[i].root_subject()) {
                    return Err(Error::Data(format!(
                        "held-out subject `{}` reached a training batch",
                        data[i].root_subject()
                    )));
                }
            }
            let weight = 1.0 / batch.len() as f64;
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let s = derive_seed(seed, &[fold, STREAM_DROPOUT, e, b as u64, j as u64]);
                    model.loss_and_grads(&data[i], weight, s)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut batch_loss = 0.0;
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; model.store.len()];
            for (loss, g) in results {
                batch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    if let Some(gi) = gi {
                        match acc {
                            Some(a) => a.iter_mut().zip(&gi).for_each(|(x, y)| *x += y),
                            None => *acc = Some(gi),
                        }
                    }
                }
            }
            let finite = grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()));
            if !batch_loss.is_finite() || !finite {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    loss: if batch_loss.is_finite() { f64::NAN } else { batch_loss },
                });
            }
            total += batch_loss * batch.len() as f64;
            sgd_step(&mut model, &grads, &mut velocity, config);
        }
        epoch_losses.push(total / data.len() as f64);
    }

    Ok(TrainOutput {
        checkpoint: Checkpoint {
            config: config.clone(),
            config_hash: config.hash()?,
            epoch: config.epochs,
            rng_seed: seed,
            normalizer,
            model,
        },
        epoch_losses,
    })
}

fn sgd_step(model: &mut AudFormer, grads: &[Option<Vec<f64>>], velocity: &mut [Vec<f64>], c: &ModelConfig) {
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let Some(g) = &grads[id.index()] else { continue };
        let w = model.store.get_mut(id).values_mut();
        for (k, (wk, &gk)) in w.iter_mut().zip(g).enumerate() {
            let mut step = gk + c.weight_decay * *wk;
            if let Some(v) = velocity.get_mut(id.index()) {
                v[k] = c.momentum * v[k] + step;
                step = v[k];
            }
            *wk -= c.learning_rate * step;
        }
    }
}

/// Positive-class probability of every instance, after the checkpoint's normalization.
pub fn scores(ckpt: &Checkpoint, instances: &[Instance]) -> Result<Vec<f64>> {
    instances
        .par_iter()
        .map(|inst| {
            let x = ckpt.normalizer.apply(inst)?;
            Ok(ckpt.model.infer(&x)?.probs[1])
        })
        .collect()
}

fn check_profile(checkpoint: &str, dataset: &str) -> Result<()> {
    if checkpoint != dataset {
        return Err(Error::ProfileMismatch {
            checkpoint: checkpoint.to_string(),
            dataset: dataset.to_string(),
        });
    }
    Ok(())
}

fn score_set(ckpt: &Checkpoint, instances: &[Instance]) -> Result<Metrics> {
    if instances.is_empty() {
        return Err(Error::Data("cannot evaluate an empty set".into()));
    }
    let s = scores(ckpt, instances)?;
    let labels: Vec<Label> = instances.iter().map(|i| i.label).collect();
    compute_metrics(&labels, &s, THRESHOLD)
}

pub fn evaluate(ckpt: &Checkpoint, data: &Dataset) -> Result<MetricReport> {
    check_profile(&ckpt.config.profile, &data.profile)?;
    Ok(MetricReport::from_folds(vec![score_set(ckpt, &data.instances)?]))
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub train: TrainOutput,
    pub test_subjects: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct CvOutput {
    pub report: MetricReport,
    pub plan: FoldPlan,
    pub folds: Vec<FoldResult>,
}

/// Subject-disjoint k-fold cross-validation.
pub fn run_cv(config: &ModelConfig, data: &Dataset, k: usize) -> Result<CvOutput> {
    check_profile(&config.profile, &data.profile)?;
    let instances = &data.instances;
    let plan = make_folds(instances, k, config.seed)?;
    let mut folds = Vec::with_capacity(k);
    let mut metrics = Vec::with_capacity(k);
    for f in 0..k {
        let train_set: Vec<Instance> = plan.train_indices(instances, f).into_iter().map(|i| instances[i].clone()).collect();
        let test_set: Vec<Instance> = plan.test_indices(instances, f).into_iter().map(|i| instances[i].clone()).collect();
        let held_out: HashSet<String> = test_set.iter().map(|i| i.subject_id.clone()).collect();
        let out = train_fold(config, &train_set, f, &held_out)?;
        metrics.push(score_set(&out.checkpoint, &test_set)?);
        folds.push(FoldResult {
            train: out,
            test_subjects: test_set.into_iter().map(|i| i.subject_id).collect(),
        });
    }
    Ok(CvOutput {
        report: MetricReport::from_folds(metrics),
        plan,
        folds,
    })
}
