//! Evaluation metrics: balanced accuracy, positive-class F1, Hits@K, and
//! mean absolute error. All metrics are pure functions of predictions.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric computed over zero samples")]
    NoSamples,
    #[error("{what} have length {found}, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, found: usize },
    #[error("label {label} is not binary")]
    NotBinary { label: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("K = {k} exceeds the {negatives} negative samples")]
    KTooLarge { k: usize, negatives: usize },
    #[error("K must be at least 1")]
    KZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    AccuracyWeighted,
    F1Positive,
    HitsAtK,
    Mae,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::AccuracyWeighted => "accuracy_weighted",
            MetricKind::F1Positive => "f1_positive",
            MetricKind::HitsAtK => "hits_at_k",
            MetricKind::Mae => "mae",
        }
    }

    /// Reporting scale: accuracies and hit rates are reported x100.
    pub fn display_scale(self) -> f64 {
        match self {
            MetricKind::AccuracyWeighted | MetricKind::HitsAtK => 100.0,
            MetricKind::F1Positive | MetricKind::Mae => 1.0,
        }
    }

    /// Whether larger values are better (false for error metrics).
    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricKind::Mae)
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "accuracy_weighted" => Ok(MetricKind::AccuracyWeighted),
            "f1_positive" => Ok(MetricKind::F1Positive),
            "hits_at_k" => Ok(MetricKind::HitsAtK),
            "mae" => Ok(MetricKind::Mae),
            other => Err(format!(
                "unknown metric '{other}' (expected accuracy_weighted, f1_positive, hits_at_k, or mae)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
    pub support: usize,
}

/// Balanced accuracy: the mean of per-class recalls over classes present in
/// the ground truth.
pub fn accuracy_weighted(
    pred: &[usize],
    truth: &[usize],
    classes: usize,
) -> Result<MetricValue, MetricError> {
    if truth.is_empty() {
        return Err(MetricError::NoSamples);
    }
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            what: "predictions",
            expected: truth.len(),
            found: pred.len(),
        });
    }
    let mut correct = vec![0usize; classes];
    let mut count = vec![0usize; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if t >= classes {
            return Err(MetricError::LabelOutOfRange { label: t, classes });
        }
        count[t] += 1;
        correct[t] += (p == t) as usize;
    }
    let mut sum = 0.0;
    let mut present = 0usize;
    for c in 0..classes {
        if count[c] > 0 {
            sum += correct[c] as f64 / count[c] as f64;
            present += 1;
        }
    }
    Ok(MetricValue {
        kind: MetricKind::AccuracyWeighted,
        value: sum / present as f64,
        support: truth.len(),
    })
}

/// F1 for the positive class: 2PR/(P+R), 0 when P+R is 0.
pub fn f1_positive(pred: &[usize], truth: &[usize]) -> Result<MetricValue, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            what: "predictions",
            expected: truth.len(),
            found: pred.len(),
        });
    }
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        if p > 1 {
            return Err(MetricError::NotBinary { label: p });
        }
        if t > 1 {
            return Err(MetricError::NotBinary { label: t });
        }
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fne += 1,
            _ => {}
        }
    }
    let value = if tp == 0 {
        0.0
    } else {
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / (tp + fne) as f64;
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricValue { kind: MetricKind::F1Positive, value, support: truth.len() })
}

/// Fraction of positive scores strictly above the K-th highest negative
/// score; ties count as misses.
pub fn hits_at_k(pos: &[f64], neg: &[f64], k: usize) -> Result<MetricValue, MetricError> {
    if k == 0 {
        return Err(MetricError::KZero);
    }
    if k > neg.len() {
        return Err(MetricError::KTooLarge { k, negatives: neg.len() });
    }
    if pos.is_empty() {
        return Err(MetricError::NoSamples);
    }
    let mut sorted: Vec<f64> = neg.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let threshold = sorted[k - 1];
    let hits = pos.iter().filter(|&&s| s > threshold).count();
    Ok(MetricValue {
        kind: MetricKind::HitsAtK,
        value: hits as f64 / pos.len() as f64,
        support: pos.len(),
    })
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<MetricValue, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            what: "predictions",
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricError::NoSamples);
    }
    let total: f64 = pred.iter().zip(truth).map(|(&p, &t)| (p - t).abs()).sum();
    Ok(MetricValue {
        kind: MetricKind::Mae,
        value: total / pred.len() as f64,
        support: pred.len(),
    })
}
