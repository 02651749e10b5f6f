use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PredictionSet;
use crate::error::{Error, Result};

/// A document-averaged ranked metric with the number of documents skipped
/// because they have no relevant codes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedValue {
    pub value: f64,
    pub n_skipped: usize,
}

/// Code indices by descending score, ties by ascending code index.
pub fn ranked_codes(scores: ArrayView1<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn per_doc<F>(preds: &PredictionSet, f: F) -> Vec<Option<f64>>
where
    F: Fn(&[usize], ArrayView1<bool>) -> Option<f64> + Sync,
{
    (0..preds.n_docs())
        .into_par_iter()
        .map(|i| {
            let order = ranked_codes(preds.scores.row(i));
            f(&order, preds.targets.row(i))
        })
        .collect()
}

fn mean_defined(values: &[Option<f64>]) -> Result<RankedValue> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::invalid("no document has a relevant code"));
    }
    Ok(RankedValue {
        value: defined.iter().sum::<f64>() / defined.len() as f64,
        n_skipped: values.len() - defined.len(),
    })
}

/// Mean over all documents of the relevant fraction among the top `k` codes.
pub fn precision_at_k(preds: &PredictionSet, k: usize) -> Result<f64> {
    if k == 0 || k > preds.n_codes() {
        return Err(Error::invalid(format!(
            "k must lie in 1..={}, got {k}",
            preds.n_codes()
        )));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let values = per_doc(preds, |order, targets| {
        let hits = order[..k].iter().filter(|&&j| targets[j]).count();
        Some(hits as f64 / k as f64)
    });
    Ok(values.iter().flatten().sum::<f64>() / values.len() as f64)
}

/// Precision among the top-R codes, R being the document's number of relevant codes.
pub fn r_precision(preds: &PredictionSet) -> Result<RankedValue> {
    let values = per_doc(preds, |order, targets| {
        let r = targets.iter().filter(|&&t| t).count();
        (r > 0).then(|| order[..r].iter().filter(|&&j| targets[j]).count() as f64 / r as f64)
    });
    mean_defined(&values)
}

/// Mean over documents of average precision at the ranks of relevant codes.
pub fn mean_average_precision(preds: &PredictionSet) -> Result<RankedValue> {
    let values = per_doc(preds, |order, targets| {
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (rank, &j) in order.iter().enumerate() {
            if targets[j] {
                hits += 1;
                sum += hits as f64 / (rank + 1) as f64;
            }
        }
        (hits > 0).then(|| sum / hits as f64)
    });
    mean_defined(&values)
}
