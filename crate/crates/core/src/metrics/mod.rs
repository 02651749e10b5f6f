//! Multi-label evaluation over a [`PredictionSet`].
//!
//! Thresholded metrics use the strict rule `score > boundary`. Ranked
//! metrics order codes by descending score and break ties by ascending
//! column index. Macro F1 is available both as the mean of per-code F1
//! (the default) and as the harmonic mean of macro precision and macro
//! recall, which favours classifiers biased toward frequent codes.

mod auc;
mod confusion;
mod prediction;
mod ranking;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use auc::{auc_roc, rank_auc, AucResult, Averaging};
pub use confusion::{
    confusion_counts, exact_match_ratio, f1_macro, f1_micro, pooled, Confusion,
};
pub use prediction::PredictionSet;
pub use ranking::{mean_average_precision, precision_at_k, r_precision, ranked_codes, RankedValue};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroFormula {
    Arithmetic,
    HarmonicOfMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingClass {
    /// Drop codes without positive targets from macro averages.
    Ignore,
    /// Score codes without positive targets as 0.
    ZeroFill,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPolicy {
    pub boundary: f64,
    pub macro_formula: MacroFormula,
    pub missing_class: MissingClass,
}

impl Default for MetricPolicy {
    fn default() -> Self {
        MetricPolicy {
            boundary: 0.5,
            macro_formula: MacroFormula::Arithmetic,
            missing_class: MissingClass::Ignore,
        }
    }
}

impl MetricPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.boundary > 0.0 && self.boundary < 1.0) {
            return Err(Error::invalid(format!(
                "boundary must lie in (0, 1), got {}",
                self.boundary
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeScore {
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// False when the code has no positive target in this set.
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub policy: MetricPolicy,
    pub values: BTreeMap<String, f64>,
    pub per_code: BTreeMap<String, CodeScore>,
    pub n_missing_codes: usize,
    pub auc_macro_excluded: usize,
    pub ranked_skipped_docs: usize,
    pub ks: Vec<usize>,
}

impl MetricReport {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    /// One-row markdown table in the usual column layout, values in percent.
    pub fn to_markdown(&self) -> String {
        let mut cols: Vec<(String, &str)> = vec![
            ("AUC-ROC Micro".into(), "auc_micro"),
            ("AUC-ROC Macro".into(), "auc_macro"),
            ("F1 Micro".into(), "f1_micro"),
            ("F1 Macro".into(), "f1_macro"),
            ("EMR".into(), "exact_match"),
        ];
        let p_at: Vec<String> = self.ks.iter().map(|k| format!("precision_at_{k}")).collect();
        for (k, key) in self.ks.iter().zip(&p_at) {
            cols.push((format!("P@{k}"), key.as_str()));
        }
        cols.push(("R-precision".into(), "r_precision"));
        cols.push(("MAP".into(), "map"));

        let mut out = String::new();
        let _ = writeln!(
            out,
            "| {} |",
            cols.iter().map(|c| c.0.as_str()).collect::<Vec<_>>().join(" | ")
        );
        let _ = writeln!(out, "|{}", "---|".repeat(cols.len()));
        let cells: Vec<String> = cols
            .iter()
            .map(|(_, key)| match self.value(key) {
                Some(v) => format!("{:.1}", 100.0 * v),
                None => "-".into(),
            })
            .collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        let _ = writeln!(
            out,
            "\nboundary {} · macro {} · missing codes {} ({} of {} absent)",
            self.policy.boundary,
            snake(&self.policy.macro_formula),
            snake(&self.policy.missing_class),
            self.n_missing_codes,
            self.per_code.len()
        );
        out
    }
}

/// Full metric battery. `ks` lists the precision@k cut-offs to report.
pub fn evaluate(preds: &PredictionSet, policy: &MetricPolicy, ks: &[usize]) -> Result<MetricReport> {
    policy.validate()?;
    if preds.is_empty() {
        return Err(Error::invalid("empty prediction set"));
    }
    let counts = confusion_counts(preds, policy.boundary);
    let mut values = BTreeMap::new();
    values.insert("f1_micro".to_string(), f1_micro(&counts));
    values.insert("f1_macro".to_string(), f1_macro(&counts, policy)?);
    values.insert(
        "exact_match".to_string(),
        exact_match_ratio(preds, policy.boundary),
    );
    values.insert(
        "auc_micro".to_string(),
        auc_roc(preds, Averaging::Micro, policy.missing_class)?.value,
    );
    let auc_macro = auc_roc(preds, Averaging::Macro, policy.missing_class)?;
    values.insert("auc_macro".to_string(), auc_macro.value);
    for &k in ks {
        values.insert(format!("precision_at_{k}"), precision_at_k(preds, k)?);
    }
    let rp = r_precision(preds)?;
    values.insert("r_precision".to_string(), rp.value);
    values.insert("map".to_string(), mean_average_precision(preds)?.value);

    let per_code = preds
        .code_universe
        .iter()
        .zip(&counts)
        .map(|(code, c)| {
            (
                code.clone(),
                CodeScore {
                    f1: c.f1(),
                    tp: c.tp,
                    fp: c.fp,
                    fn_: c.fn_,
                    present: c.support() > 0,
                },
            )
        })
        .collect();
    Ok(MetricReport {
        policy: *policy,
        values,
        per_code,
        n_missing_codes: counts.iter().filter(|c| c.support() == 0).count(),
        auc_macro_excluded: auc_macro.n_excluded,
        ranked_skipped_docs: rp.n_skipped,
        ks: ks.to_vec(),
    })
}

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}
