use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MacroFormula, MetricPolicy, MissingClass, PredictionSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2tp / (2tp + fp + fn)`, zero when the denominator is zero.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn add(self, other: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-code confusion counts with `score > boundary` as a positive prediction.
pub fn confusion_counts(preds: &PredictionSet, boundary: f64) -> Vec<Confusion> {
    (0..preds.n_codes())
        .into_par_iter()
        .map(|j| {
            let mut c = Confusion::default();
            for (s, &t) in preds.scores.column(j).iter().zip(preds.targets.column(j)) {
                match (*s > boundary, t) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
            c
        })
        .collect()
}

pub fn pooled(counts: &[Confusion]) -> Confusion {
    counts.iter().fold(Confusion::default(), |a, &c| a.add(c))
}

pub fn f1_micro(counts: &[Confusion]) -> f64 {
    pooled(counts).f1()
}

/// Macro F1 under `policy`. Codes with no positive targets are dropped
/// (`Ignore`) or scored as 0 (`ZeroFill`).
pub fn f1_macro(counts: &[Confusion], policy: &MetricPolicy) -> Result<f64> {
    let included: Vec<&Confusion> = match policy.missing_class {
        MissingClass::Ignore => counts.iter().filter(|c| c.support() > 0).collect(),
        MissingClass::ZeroFill => counts.iter().collect(),
    };
    if included.is_empty() {
        return Err(Error::NoEvaluableCodes);
    }
    let n = included.len() as f64;
    Ok(match policy.macro_formula {
        MacroFormula::Arithmetic => included.iter().map(|c| c.f1()).sum::<f64>() / n,
        MacroFormula::HarmonicOfMeans => {
            let p = included.iter().map(|c| c.precision()).sum::<f64>() / n;
            let r = included.iter().map(|c| c.recall()).sum::<f64>() / n;
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        }
    })
}

/// Fraction of documents whose thresholded row equals the target row.
pub fn exact_match_ratio(preds: &PredictionSet, boundary: f64) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let hits: usize = (0..preds.n_docs())
        .into_par_iter()
        .map(|i| {
            preds
                .scores
                .row(i)
                .iter()
                .zip(preds.targets.row(i))
                .all(|(s, &t)| (*s > boundary) == t) as usize
        })
        .sum();
    hits as f64 / preds.n_docs() as f64
}
