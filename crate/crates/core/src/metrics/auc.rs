use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MissingClass, PredictionSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucResult {
    pub value: f64,
    /// Codes left out of a macro average because their AUC is undefined.
    pub n_excluded: usize,
}

/// Mann-Whitney AUC with midranks for tied scores. `None` when either class is empty.
pub fn rank_auc(pairs: &mut [(f64, bool)]) -> Option<f64> {
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let midrank = (i + 1 + j) as f64 / 2.0;
        let positives = pairs[i..j].iter().filter(|p| p.1).count();
        rank_sum += midrank * positives as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Micro AUC pools every (document, code) cell; macro AUC averages codes
/// that have both a positive and a negative target. Undefined-AUC codes are
/// excluded under either missing-class policy and counted in `n_excluded`.
pub fn auc_roc(
    preds: &PredictionSet,
    averaging: Averaging,
    _missing_class: MissingClass,
) -> Result<AucResult> {
    match averaging {
        Averaging::Micro => {
            let mut pairs: Vec<(f64, bool)> = preds
                .scores
                .iter()
                .copied()
                .zip(preds.targets.iter().copied())
                .collect();
            let value = rank_auc(&mut pairs).ok_or_else(|| {
                Error::AucUndefined("targets are all positive or all negative".into())
            })?;
            Ok(AucResult {
                value,
                n_excluded: 0,
            })
        }
        Averaging::Macro => {
            let per_code: Vec<Option<f64>> = (0..preds.n_codes())
                .into_par_iter()
                .map(|j| {
                    let mut pairs: Vec<(f64, bool)> = preds
                        .scores
                        .column(j)
                        .iter()
                        .copied()
                        .zip(preds.targets.column(j).iter().copied())
                        .collect();
                    rank_auc(&mut pairs)
                })
                .collect();
            let defined: Vec<f64> = per_code.iter().flatten().copied().collect();
            if defined.is_empty() {
                return Err(Error::AucUndefined(
                    "no code has both positive and negative targets".into(),
                ));
            }
            Ok(AucResult {
                value: defined.iter().sum::<f64>() / defined.len() as f64,
                n_excluded: per_code.len() - defined.len(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_constant() {
        let mut perfect = vec![(1.0, true), (0.0, false), (1.0, true), (0.0, false)];
        assert_eq!(rank_auc(&mut perfect), Some(1.0));
        let mut constant = vec![(0.3, true), (0.3, false), (0.3, false)];
        assert_eq!(rank_auc(&mut constant), Some(0.5));
        let mut one_class = vec![(0.3, true), (0.2, true)];
        assert_eq!(rank_auc(&mut one_class), None);
    }

    #[test]
    fn hand_computed() {
        // positives at 0.8, 0.4; negatives at 0.6, 0.2: 3 of 4 pairs ordered
        let mut pairs = vec![(0.8, true), (0.4, true), (0.6, false), (0.2, false)];
        assert_eq!(rank_auc(&mut pairs), Some(0.75));
    }
}
