use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::metrics::{confusion_counts, MetricReport, PredictionSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub pearson: f64,
    pub spearman: f64,
    pub n: usize,
    pub p_value_pearson: f64,
    pub p_value_spearman: f64,
    /// True when either variable is constant; both coefficients are then 0
    /// and both p-values 1.
    pub zero_variance: bool,
    /// Items left out before correlating (codes absent from training,
    /// documents outside the length band or with an undefined F1).
    pub n_excluded: usize,
}

/// Pearson correlation, or `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&midranks(x), &midranks(y))
}

/// Two-sided p-value of a correlation coefficient under the t approximation
/// with `n - 2` degrees of freedom.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("n >= 3 gives positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

pub fn correlate(x: &[f64], y: &[f64], n_excluded: usize) -> Result<CorrelationResult> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} x values, {} y values", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::invalid(format!("correlation needs at least 3 points, got {}", x.len())));
    }
    let n = x.len();
    Ok(match (pearson(x, y), spearman(x, y)) {
        (Some(p), Some(s)) => CorrelationResult {
            pearson: p,
            spearman: s,
            n,
            p_value_pearson: correlation_p_value(p, n),
            p_value_spearman: correlation_p_value(s, n),
            zero_variance: false,
            n_excluded,
        },
        _ => CorrelationResult {
            pearson: 0.0,
            spearman: 0.0,
            n,
            p_value_pearson: 1.0,
            p_value_spearman: 1.0,
            zero_variance: true,
            n_excluded,
        },
    })
}

/// Per-code points `(ln train count, F1)` for codes with test positives.
/// Codes never seen in training are left out and counted.
pub fn frequency_points(
    report: &MetricReport,
    train_counts: &BTreeMap<String, usize>,
) -> (Vec<(String, f64, f64)>, usize) {
    let mut points = Vec::new();
    let mut excluded = 0;
    for (code, score) in report.per_code.iter().filter(|(_, s)| s.present) {
        match train_counts.get(code) {
            Some(&c) if c >= 1 => points.push((code.clone(), (c as f64).ln(), score.f1)),
            _ => excluded += 1,
        }
    }
    (points, excluded)
}

/// Correlation between log training frequency and per-code F1.
pub fn code_frequency_correlation(
    report: &MetricReport,
    train_counts: &BTreeMap<String, usize>,
) -> Result<CorrelationResult> {
    let (points, excluded) = frequency_points(report, train_counts);
    let x: Vec<f64> = points.iter().map(|p| p.1).collect();
    let y: Vec<f64> = points.iter().map(|p| p.2).collect();
    correlate(&x, &y, excluded)
}

/// Per-document F1 `2tp / (2tp + fp + fn)`, `None` when the denominator is 0.
pub fn document_f1(preds: &PredictionSet, boundary: f64) -> Vec<Option<f64>> {
    preds
        .scores
        .rows()
        .into_iter()
        .zip(preds.targets.rows())
        .map(|(s, t)| {
            let (mut tp, mut wrong) = (0usize, 0usize);
            for (&score, &target) in s.iter().zip(t.iter()) {
                match (score > boundary, target) {
                    (true, true) => tp += 1,
                    (true, false) | (false, true) => wrong += 1,
                    _ => {}
                }
            }
            let denom = 2 * tp + wrong;
            (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
        })
        .collect()
}

/// Per-document points `(word count, F1)` inside the inclusive length band.
pub fn length_points(
    preds: &PredictionSet,
    word_counts: &[usize],
    boundary: f64,
    min_words: usize,
    max_words: usize,
) -> Result<(Vec<(usize, f64)>, usize)> {
    if word_counts.len() != preds.n_docs() {
        return Err(Error::ShapeMismatch(format!(
            "{} word counts for {} documents",
            word_counts.len(),
            preds.n_docs()
        )));
    }
    let mut points = Vec::new();
    let mut excluded = 0;
    for (&words, f1) in word_counts.iter().zip(document_f1(preds, boundary)) {
        match f1 {
            Some(f1) if (min_words..=max_words).contains(&words) => points.push((words, f1)),
            _ => excluded += 1,
        }
    }
    Ok((points, excluded))
}

/// Correlation between document length and per-document F1, restricted to
/// documents with `min_words <= words <= max_words`.
pub fn doc_length_correlation(
    preds: &PredictionSet,
    word_counts: &[usize],
    boundary: f64,
    min_words: usize,
    max_words: usize,
) -> Result<CorrelationResult> {
    let (points, excluded) = length_points(preds, word_counts, boundary, min_words, max_words)?;
    let x: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    correlate(&x, &y, excluded)
}

/// Codes with at least one positive target and no true positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeverPredicted {
    pub fraction: f64,
    pub n_present: usize,
    pub codes: Vec<String>,
}

pub fn never_predicted(preds: &PredictionSet, boundary: f64) -> NeverPredicted {
    let counts = confusion_counts(preds, boundary);
    let mut n_present = 0;
    let mut codes = Vec::new();
    for (code, c) in preds.code_universe.iter().zip(&counts) {
        if c.support() > 0 {
            n_present += 1;
            if c.tp == 0 {
                codes.push(code.clone());
            }
        }
    }
    let fraction = if n_present == 0 {
        0.0
    } else {
        codes.len() as f64 / n_present as f64
    };
    NeverPredicted {
        fraction,
        n_present,
        codes,
    }
}
