//! Regression and sentiment-classification metrics, and the quality of
//! learned unimodal labels against the synthetic ground truth.

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::meta::LabelStore;

/// Nearest integer with ties away from zero.
fn class7(v: f64) -> i64 {
    v.clamp(-3.0, 3.0).round() as i64
}

fn check_lengths(preds: &[f64], labels: &[f64]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

/// Seven-class accuracy: predictions and labels clamped to `[-3, 3]` and rounded.
pub fn acc7(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| class7(**p) == class7(**l)).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Mode {
    /// Per-class F1 averaged with class support as weights.
    #[default]
    Weighted,
    /// F1 of the positive class only.
    BinaryPositive,
}

/// Binary accuracy and F1 over non-neutral samples. A prediction above zero counts as positive.
pub fn acc2_f1(preds: &[f64], labels: &[f64], mode: F1Mode) -> Result<(f64, f64)> {
    check_lengths(preds, labels)?;
    // [truth][pred], index 1 = positive
    let mut cm = [[0usize; 2]; 2];
    for (&p, &l) in preds.iter().zip(labels) {
        if l == 0.0 {
            continue;
        }
        cm[(l > 0.0) as usize][(p > 0.0) as usize] += 1;
    }
    let n = cm[0][0] + cm[0][1] + cm[1][0] + cm[1][1];
    if n == 0 {
        return Err(Error::Undefined("acc2/f1 with only neutral labels"));
    }
    let acc = (cm[0][0] + cm[1][1]) as f64 / n as f64;
    let f1_of = |c: usize| {
        let tp = cm[c][c] as f64;
        let fp = cm[1 - c][c] as f64;
        let fn_ = cm[c][1 - c] as f64;
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        }
    };
    let f1 = match mode {
        F1Mode::BinaryPositive => f1_of(1),
        F1Mode::Weighted => {
            let support = [cm[0][0] + cm[0][1], cm[1][0] + cm[1][1]];
            (support[0] as f64 * f1_of(0) + support[1] as f64 * f1_of(1)) / n as f64
        }
    };
    Ok((acc, f1))
}

/// Pearson correlation.
pub fn corr(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(preds, labels)?;
    let n = preds.len() as f64;
    let mp = preds.iter().sum::<f64>() / n;
    let ml = labels.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &l) in preds.iter().zip(labels) {
        sxy += (p - mp) * (l - ml);
        sxx += (p - mp) * (p - mp);
        syy += (l - ml) * (l - ml);
    }
    if sxx / n <= 1e-12 || syy / n <= 1e-12 {
        return Err(Error::Undefined("correlation with zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn mae(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(preds, labels)?;
    Ok(preds.iter().zip(labels).map(|(p, l)| (p - l).abs()).sum::<f64>() / preds.len() as f64)
}

/// Values per modality, serialized with the short modality names.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerModality {
    pub a: f64,
    pub v: f64,
    pub l: f64,
}

impl PerModality {
    pub fn from_array(v: [f64; 3]) -> Self {
        PerModality {
            a: v[0],
            v: v[1],
            l: v[2],
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.a, self.v, self.l]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelQuality {
    /// Mean `|corrected - truth|` per modality.
    pub label_mae: [f64; 3],
    /// Mean `|y - truth|` per modality.
    pub baseline_mae: [f64; 3],
    pub n: usize,
}

/// Compares stored labels with the truth columns of `split`.
pub fn label_quality(store: &LabelStore, split: &Split) -> Result<LabelQuality> {
    let truth = split.truth()?;
    if truth.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut label = [0.0; 3];
    let mut base = [0.0; 3];
    for (obs, s) in split.observations.iter().zip(&truth) {
        let row = store.get(obs.id)?;
        for m in 0..3 {
            label[m] += (row.corrected[m] - s[m]).abs();
            base[m] += (obs.y - s[m]).abs();
        }
    }
    let n = truth.len() as f64;
    Ok(LabelQuality {
        label_mae: label.map(|v| v / n),
        baseline_mae: base.map(|v| v / n),
        n: truth.len(),
    })
}

/// Test-split evaluation. Metrics that are undefined for the data are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub mae: f64,
    pub corr: Option<f64>,
    pub acc2: Option<f64>,
    pub f1: Option<f64>,
    pub acc7: f64,
    pub label_mae: Option<PerModality>,
    pub baseline_mae: Option<PerModality>,
    pub n_eval: usize,
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(what)) => {
            log::warn!("metric undefined: {what}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

impl MetricsReport {
    pub fn evaluate(preds: &[f64], labels: &[f64], quality: Option<&LabelQuality>, f1_mode: F1Mode) -> Result<Self> {
        let binary = optional(acc2_f1(preds, labels, f1_mode))?;
        Ok(MetricsReport {
            mae: mae(preds, labels)?,
            corr: optional(corr(preds, labels))?,
            acc2: binary.map(|b| b.0),
            f1: binary.map(|b| b.1),
            acc7: acc7(preds, labels)?,
            label_mae: quality.map(|q| PerModality::from_array(q.label_mae)),
            baseline_mae: quality.map(|q| PerModality::from_array(q.baseline_mae)),
            n_eval: preds.len(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }
}
