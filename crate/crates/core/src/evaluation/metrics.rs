use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Error, Result};

/// Positive-class scores with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
}

impl PredictionSet {
    pub fn new(scores: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        check(&scores, &labels)?;
        Ok(PredictionSet { scores, labels })
    }
}

fn check(scores: &[f64], labels: &[usize]) -> Result<()> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(contract_err!("need equally many scores and labels, got {} and {}", scores.len(), labels.len()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(contract_err!("non-finite score {s}"));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(contract_err!("label {l} is not binary"));
    }
    Ok(())
}

/// Binary metrics in a fixed key order; `None` marks an undefined value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "ACC")]
    pub acc: Option<f64>,
    #[serde(rename = "AUC")]
    pub auc: Option<f64>,
    #[serde(rename = "F1")]
    pub f1: Option<f64>,
    #[serde(rename = "SEN")]
    pub sen: Option<f64>,
    #[serde(rename = "SPE")]
    pub spe: Option<f64>,
    #[serde(rename = "PRC")]
    pub prc: Option<f64>,
}

/// Softmax probability of class 1 from two logits.
pub fn positive_probability(logits: &[f64]) -> f64 {
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}

/// Fraction of concordant positive/negative pairs, ties counting one half.
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check(scores, labels)?;
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Undefined("AUC needs both classes present".into()));
    }
    let mut twice = 0u64;
    for &p in &pos {
        for &n in &neg {
            twice += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    Ok(twice as f64 / (2 * pos.len() * neg.len()) as f64)
}

pub fn accuracy_from_scores(scores: &[f64], labels: &[usize], threshold: f64) -> Result<f64> {
    check(scores, labels)?;
    let ok = scores.iter().zip(labels).filter(|(&s, &l)| usize::from(s >= threshold) == l).count();
    Ok(ok as f64 / scores.len() as f64)
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

/// Thresholds at `threshold` (score ≥ threshold predicts class 1).
pub fn compute_metrics(p: &PredictionSet, threshold: f64) -> Result<Metrics> {
    check(&p.scores, &p.labels)?;
    let (mut tp, mut tn, mut fp, mut fan) = (0, 0, 0, 0);
    for (&s, &l) in p.scores.iter().zip(&p.labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fan += 1,
        }
    }
    let sen = ratio(tp, tp + fan);
    let prc = ratio(tp, tp + fp);
    let f1 = ratio(2 * tp, 2 * tp + fp + fan);
    Ok(Metrics {
        acc: ratio(tp + tn, p.scores.len()),
        auc: match auc(&p.scores, &p.labels) {
            Ok(a) => Some(a),
            Err(Error::Undefined(_)) => None,
            Err(e) => return Err(e),
        },
        f1,
        sen,
        spe: ratio(tn, tn + fp),
        prc,
    })
}
