use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::error::{Error, Result};
use crate::metrics::PredictionSet;

/// Below this many discordant pairs the exact binomial test is used.
pub const EXACT_BELOW: u64 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarUnit {
    /// Every (document, code) decision is one paired outcome.
    Cell,
    /// A document counts as correct only when its whole code set is.
    Document,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarMethod {
    ExactBinomial,
    ChiSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// Outcomes A got right and B got wrong.
    pub b: u64,
    /// Outcomes A got wrong and B got right.
    pub c: u64,
    pub method: McNemarMethod,
    /// Continuity-corrected chi-squared value, or `min(b, c)` for the exact test.
    pub statistic: f64,
    pub raw_p: f64,
    pub corrected_p: f64,
    pub significant: bool,
}

/// McNemar test on discordant counts with Bonferroni correction over
/// `n_comparisons` tests.
pub fn mcnemar_counts(b: u64, c: u64, n_comparisons: usize, alpha: f64) -> McNemarResult {
    let n = b + c;
    let (method, statistic, raw_p) = if n < EXACT_BELOW {
        let k = b.min(c);
        let p = if n == 0 {
            1.0
        } else {
            let dist = Binomial::new(0.5, n).expect("valid binomial");
            (2.0 * dist.cdf(k)).min(1.0)
        };
        (McNemarMethod::ExactBinomial, k as f64, p)
    } else {
        let diff = (b.abs_diff(c) as f64 - 1.0).max(0.0);
        let stat = diff * diff / n as f64;
        let dist = ChiSquared::new(1.0).expect("valid chi-squared");
        (McNemarMethod::ChiSquared, stat, dist.sf(stat))
    };
    let corrected_p = (raw_p * n_comparisons.max(1) as f64).min(1.0);
    McNemarResult {
        b,
        c,
        method,
        statistic,
        raw_p,
        corrected_p,
        significant: corrected_p < alpha,
    }
}

/// Paired comparison of two prediction sets over identical documents and codes.
pub fn mcnemar_bonferroni(
    a: &PredictionSet,
    b: &PredictionSet,
    boundary: f64,
    n_comparisons: usize,
    unit: McNemarUnit,
    alpha: f64,
) -> Result<McNemarResult> {
    if !a.same_layout(b) {
        return Err(Error::ShapeMismatch(
            "prediction sets differ in documents or codes".into(),
        ));
    }
    let right_a = a.predicted(boundary).iter().zip(a.targets.iter()).map(|(p, t)| p == t).collect::<Vec<_>>();
    let right_b = b.predicted(boundary).iter().zip(b.targets.iter()).map(|(p, t)| p == t).collect::<Vec<_>>();
    let (ra, rb): (Vec<bool>, Vec<bool>) = match unit {
        McNemarUnit::Cell => (right_a, right_b),
        McNemarUnit::Document => {
            let width = a.n_codes().max(1);
            let rows = |v: &[bool]| -> Vec<bool> {
                if a.n_codes() == 0 {
                    return vec![true; a.n_docs()];
                }
                v.chunks(width).map(|r| r.iter().all(|&x| x)).collect()
            };
            (rows(&right_a), rows(&right_b))
        }
    };
    let mut disc_b = 0;
    let mut disc_c = 0;
    for (x, y) in ra.iter().zip(&rb) {
        match (x, y) {
            (true, false) => disc_b += 1,
            (false, true) => disc_c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_counts(disc_b, disc_c, n_comparisons, alpha))
}

/// Number of unordered pairs among `n_models`, the default correction factor.
pub fn pair_count(n_models: usize) -> usize {
    n_models * n_models.saturating_sub(1) / 2
}
