//! Multi-label evaluation and run-level significance tests.
//!
//! Ranking metrics are `None` when a column is single-class; such columns
//! are left out of macro averages and radar exports.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::LabelVector;
use crate::error::{Error, Result};
use crate::model::predict_labels;
use crate::NUM_ORGANS;

/// Area under the ROC curve, `P(s+ > s-) + ½ P(s+ = s-)`, via midranks.
/// `None` if either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
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
        // ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: `Σ (R_k − R_{k−1}) P_k` over descending distinct
/// score thresholds, tied scores entering together. `None` without positives.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let pos = order[i..=j].iter().filter(|&&k| labels[k]).count();
        tp += pos;
        fp += j + 1 - i - pos;
        if pos > 0 {
            ap += pos as f64 / n_pos as f64 * (tp as f64 / (tp + fp) as f64);
        }
        i = j + 1;
    }
    Some(ap)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn from_pairs(pred: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Confusion::default();
        for (p, t) in pred {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// 0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn hamming_loss(&self) -> f64 {
        ratio(self.fp + self.fn_, self.total())
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pr_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc_auc: Option<f64>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hamming_loss: f64,
    pub confusion: Confusion,
}

impl MetricSet {
    pub fn compute(scores: &[f64], truth: &[bool]) -> Self {
        let c = Confusion::from_pairs(scores.iter().map(|&s| s >= 0.5).zip(truth.iter().copied()));
        Self {
            pr_auc: pr_auc(scores, truth),
            roc_auc: roc_auc(scores, truth),
            accuracy: c.accuracy(),
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            hamming_loss: c.hamming_loss(),
            confusion: c,
        }
    }

    fn named(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("pr_auc", self.pr_auc),
            ("roc_auc", self.roc_auc),
            ("accuracy", Some(self.accuracy)),
            ("precision", Some(self.precision)),
            ("recall", Some(self.recall)),
            ("f1", Some(self.f1)),
            ("hamming_loss", Some(self.hamming_loss)),
        ]
    }
}

/// Unweighted mean over organs; ranking metrics average defined columns only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroSet {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pr_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc_auc: Option<f64>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hamming_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub micro: MetricSet,
    #[serde(rename = "macro")]
    pub macro_avg: MacroSet,
    pub per_organ: Vec<MetricSet>,
}

fn mean_defined(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

impl MetricsReport {
    /// `scores` holds one 15-vector per sample.
    pub fn compute(scores: &[Vec<f64>], truth: &[LabelVector]) -> Result<Self> {
        if scores.len() != truth.len() {
            return Err(Error::Dimension(format!(
                "{} score rows for {} label rows",
                scores.len(),
                truth.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| s.len() != NUM_ORGANS) {
            return Err(Error::Dimension(format!(
                "score row of length {}",
                bad.len()
            )));
        }
        let flat_s: Vec<f64> = scores.iter().flatten().copied().collect();
        let flat_t: Vec<bool> = truth
            .iter()
            .flat_map(|l| l.bits().iter().copied())
            .collect();
        let micro = MetricSet::compute(&flat_s, &flat_t);
        let per_organ: Vec<MetricSet> = (0..NUM_ORGANS)
            .map(|o| {
                let s: Vec<f64> = scores.iter().map(|r| r[o]).collect();
                let t: Vec<bool> = truth.iter().map(|l| l.get(o)).collect();
                MetricSet::compute(&s, &t)
            })
            .collect();
        let n = NUM_ORGANS as f64;
        let macro_avg = MacroSet {
            pr_auc: mean_defined(per_organ.iter().map(|m| m.pr_auc)),
            roc_auc: mean_defined(per_organ.iter().map(|m| m.roc_auc)),
            accuracy: per_organ.iter().map(|m| m.accuracy).sum::<f64>() / n,
            precision: per_organ.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: per_organ.iter().map(|m| m.recall).sum::<f64>() / n,
            f1: per_organ.iter().map(|m| m.f1).sum::<f64>() / n,
            hamming_loss: per_organ.iter().map(|m| m.hamming_loss).sum::<f64>() / n,
        };
        Ok(Self {
            n_samples: scores.len(),
            micro,
            macro_avg,
            per_organ,
        })
    }

    /// `organ<TAB>metric<TAB>value`, one line per defined per-organ value.
    pub fn radar_tsv(&self) -> String {
        let mut out = String::from("organ\tmetric\tvalue\n");
        for (o, m) in self.per_organ.iter().enumerate() {
            for (name, v) in m.named() {
                if let Some(v) = v {
                    out.push_str(&format!("{}\t{name}\t{v}\n", o + 1));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Thresholded label matrix for a score matrix.
pub fn predicted_labels(scores: &[Vec<f64>]) -> Vec<LabelVector> {
    scores.iter().map(|s| predict_labels(s)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignificanceTier {
    #[serde(rename = "ns")]
    NotSignificant,
    #[serde(rename = "*")]
    P05,
    #[serde(rename = "**")]
    P01,
    #[serde(rename = "***")]
    P001,
}

impl SignificanceTier {
    pub fn from_p(p: f64) -> Self {
        if p < 0.001 {
            SignificanceTier::P001
        } else if p < 0.01 {
            SignificanceTier::P01
        } else if p < 0.05 {
            SignificanceTier::P05
        } else {
            SignificanceTier::NotSignificant
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignificanceTier::NotSignificant => "ns",
            SignificanceTier::P05 => "*",
            SignificanceTier::P01 => "**",
            SignificanceTier::P001 => "***",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub mean_1: f64,
    pub mean_2: f64,
    pub t_statistic: f64,
    pub dof: f64,
    pub p_value: f64,
    pub cohens_d: f64,
    pub tier: SignificanceTier,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch two-sided t-test plus Cohen's d with pooled standard deviation.
pub fn compare_runs(runs_1: &[f64], runs_2: &[f64]) -> Result<SignificanceResult> {
    if runs_1.len() < 2 || runs_2.len() < 2 {
        return Err(Error::Invalid(
            "compare_runs needs at least 2 runs per side".into(),
        ));
    }
    if runs_1.iter().chain(runs_2).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("run values must be finite".into()));
    }
    let (n1, n2) = (runs_1.len() as f64, runs_2.len() as f64);
    let (m1, v1) = mean_var(runs_1);
    let (m2, v2) = mean_var(runs_2);
    let pooled = (((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0)).sqrt();
    let diff = m1 - m2;
    let se2 = v1 / n1 + v2 / n2;
    let (t, dof, p, d) = if se2 == 0.0 {
        if diff == 0.0 {
            (0.0, f64::NAN, 1.0, 0.0)
        } else {
            (
                diff.signum() * f64::INFINITY,
                f64::NAN,
                0.0,
                diff.signum() * f64::INFINITY,
            )
        }
    } else {
        let t = diff / se2.sqrt();
        let dof = se2 * se2 / ((v1 / n1).powi(2) / (n1 - 1.0) + (v2 / n2).powi(2) / (n2 - 1.0));
        let dist = StudentsT::new(0.0, 1.0, dof)
            .map_err(|e| Error::Invalid(format!("t distribution: {e}")))?;
        let p = (2.0 * dist.sf(t.abs())).min(1.0);
        let d = if diff == 0.0 { 0.0 } else { diff / pooled };
        (t, dof, p, d)
    };
    Ok(SignificanceResult {
        mean_1: m1,
        mean_2: m2,
        t_statistic: t,
        dof,
        p_value: p,
        cohens_d: d,
        tier: SignificanceTier::from_p(p),
    })
}

/// One value per line; a non-numeric first line is treated as a header and
/// for multi-column rows the last column is used.
pub fn read_runs(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let Some(field) = line.split('\t').map(str::trim).rfind(|f| !f.is_empty()) else {
            continue;
        };
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("bad value `{field}`: {e}"),
                ))
            }
        }
    }
    Ok(out)
}
