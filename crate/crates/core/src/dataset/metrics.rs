use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Scores for one evaluation. Metrics that need both classes are `None`
/// when one is absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub sen: Option<f64>,
    pub spe: Option<f64>,
    pub confusion: Confusion,
}

pub const METRIC_NAMES: [&str; 5] = ["ACC", "F1", "AUC", "SEN", "SPE"];

impl Metrics {
    pub fn values(&self) -> [Option<f64>; 5] {
        [Some(self.acc), Some(self.f1), self.auc, self.sen, self.spe]
    }
}

/// Mann–Whitney AUC with midranks for ties.
pub fn auc(labels: &[Label], scores: &[f64]) -> Option<f64> {
    let n_pos = labels.iter().filter(|l| l.is_positive()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k].is_positive()).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// A score strictly above `threshold` predicts positive, which matches the
/// argmax of a two-way softmax at 0.5 (ties go to the first class).
pub fn compute_metrics(labels: &[Label], scores: &[f64], threshold: f64) -> Result<Metrics> {
    if labels.len() != scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Data("cannot score an empty evaluation set".into()));
    }
    let mut c = Confusion::default();
    for (l, &s) in labels.iter().zip(scores) {
        match (l.is_positive(), s > threshold) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let sen = ratio(c.tp, c.tp + c.fn_);
    let spe = ratio(c.tn, c.tn + c.fp);
    let precision = ratio(c.tp, c.tp + c.fp).unwrap_or(0.0);
    let recall = sen.unwrap_or(0.0);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Metrics {
        acc: (c.tp + c.tn) as f64 / labels.len() as f64,
        f1,
        auc: auc(labels, scores),
        sen,
        spe,
        confusion: c,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub acc: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    pub sen: Option<f64>,
    pub spe: Option<f64>,
}

impl Summary {
    fn from_array(v: [Option<f64>; 5]) -> Summary {
        Summary {
            acc: v[0],
            f1: v[1],
            auc: v[2],
            sen: v[3],
            spe: v[4],
        }
    }

    pub fn values(&self) -> [Option<f64>; 5] {
        [self.acc, self.f1, self.auc, self.sen, self.spe]
    }
}

/// Per-fold metrics with mean and population standard deviation over the
/// folds where each metric is defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub folds: Vec<Metrics>,
    pub mean: Summary,
    pub std: Summary,
}

pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

impl MetricReport {
    pub fn from_folds(folds: Vec<Metrics>) -> MetricReport {
        let mut mean = [None; 5];
        let mut std = [None; 5];
        for j in 0..5 {
            let defined: Vec<f64> = folds.iter().filter_map(|m| m.values()[j]).collect();
            if let Some((m, s)) = mean_std(&defined) {
                mean[j] = Some(m);
                std[j] = Some(s);
            }
        }
        MetricReport {
            folds,
            mean: Summary::from_array(mean),
            std: Summary::from_array(std),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned table: one row per fold, then `mean ± std`.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let mut out = format!("{:<8}", "fold");
        for name in METRIC_NAMES {
            let _ = write!(out, "{name:>18}");
        }
        out.push('\n');
        for (i, m) in self.folds.iter().enumerate() {
            let _ = write!(out, "{:<8}", i + 1);
            for v in m.values() {
                let _ = write!(out, "{:>18}", cell(v));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<8}", "mean±std");
        for (m, s) in self.mean.values().into_iter().zip(self.std.values()) {
            let text = match (m, s) {
                (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
                _ => "n/a".into(),
            };
            let _ = write!(out, "{text:>18}");
        }
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(v: &[u8]) -> Vec<Label> {
        v.iter().map(|&b| Label::from_index(b as usize)).collect()
    }

    #[test]
    fn perfect_scores() {
        let l = labels(&[1, 1, 0, 0, 1]);
        let s = [0.9, 0.9, 0.1, 0.1, 0.9];
        let m = compute_metrics(&l, &s, 0.5).unwrap();
        assert_eq!(m.values(), [Some(1.0); 5]);
    }

    #[test]
    fn ties_give_half_auc() {
        let l = labels(&[1, 0, 1, 0, 0]);
        assert_eq!(auc(&l, &[0.3; 5]), Some(0.5));
    }

    #[test]
    fn single_class_auc_undefined() {
        let l = labels(&[1, 1]);
        let m = compute_metrics(&l, &[0.2, 0.8], 0.5).unwrap();
        assert_eq!(m.auc, None);
        assert_eq!(m.spe, None);
        assert_eq!(m.sen, Some(0.5));
        assert!(compute_metrics(&[], &[], 0.5).is_err());
        assert!(compute_metrics(&l, &[0.1], 0.5).is_err());
    }

    #[test]
    fn report_std_is_population() {
        let fold = |acc: f64| Metrics {
            acc,
            f1: acc,
            auc: None,
            sen: Some(acc),
            spe: Some(acc),
            confusion: Confusion::default(),
        };
        let r = MetricReport::from_folds(vec![fold(0.8), fold(1.0)]);
        assert!((r.mean.acc.unwrap() - 0.9).abs() < 1e-15);
        assert!((r.std.acc.unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(r.mean.auc, None);
        let table = r.to_table();
        assert!(table.contains("0.9000 ± 0.1000"), "{table}");
        assert_eq!(table.lines().count(), 4);
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count(
            pairs in prop::collection::vec((0u8..2, 0u8..6), 2..60)
        ) {
            let l = labels(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
            let s: Vec<f64> = pairs.iter().map(|p| p.1 as f64 / 5.0).collect();
            let np = l.iter().filter(|x| x.is_positive()).count() as f64;
            let nn = l.len() as f64 - np;
            let mut wins = 0.0;
            for i in 0..l.len() {
                if !l[i].is_positive() { continue; }
                for j in 0..l.len() {
                    if l[j].is_positive() { continue; }
                    wins += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
            let got = auc(&l, &s);
            if np == 0.0 || nn == 0.0 {
                prop_assert!(got.is_none());
            } else {
                prop_assert!((got.unwrap() - wins / (np * nn)).abs() < 1e-12);
            }
        }
    }
}
