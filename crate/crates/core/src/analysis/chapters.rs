use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{CodeKind, CodeSystem};
use crate::error::{Error, Result};
use crate::metrics::{Confusion, MetricReport, MissingClass};

pub const DEFAULT_MIN_OCCURRENCES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChapterRow {
    pub chapter_id: String,
    pub chapter_label: String,
    pub n_codes: usize,
    /// Training occurrences summed over the chapter's codes.
    pub n_examples: usize,
    /// Arithmetic mean of per-code F1 under the report's missing-class
    /// policy; `None` when no code of the chapter is evaluable.
    pub f1_macro: Option<f64>,
    pub f1_micro: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChapterReport {
    pub min_occurrences: usize,
    pub n_codes: usize,
    pub chapters: Vec<ChapterRow>,
}

/// Groups diagnosis codes seen more than `min_occurrences` times in training
/// by chapter. Procedure codes are left out.
pub fn chapter_report(
    report: &MetricReport,
    code_system: &CodeSystem,
    train_counts: &BTreeMap<String, usize>,
    min_occurrences: usize,
) -> Result<ChapterReport> {
    struct Acc<'a> {
        label: &'a str,
        codes: usize,
        examples: usize,
        f1_sum: f64,
        f1_n: usize,
        pooled: Confusion,
    }
    let mut groups: BTreeMap<&str, Acc> = BTreeMap::new();
    for (code, score) in &report.per_code {
        let entry = code_system
            .get(code)
            .ok_or_else(|| Error::UnknownCode(code.clone()))?;
        let count = train_counts.get(code).copied().unwrap_or(0);
        if entry.kind != CodeKind::Diagnosis || count <= min_occurrences {
            continue;
        }
        let acc = groups.entry(entry.chapter_id.as_str()).or_insert(Acc {
            label: &entry.chapter_label,
            codes: 0,
            examples: 0,
            f1_sum: 0.0,
            f1_n: 0,
            pooled: Confusion::default(),
        });
        acc.codes += 1;
        acc.examples += count;
        if score.present || report.policy.missing_class == MissingClass::ZeroFill {
            acc.f1_sum += score.f1;
            acc.f1_n += 1;
        }
        acc.pooled = acc.pooled.add(Confusion {
            tp: score.tp,
            fp: score.fp,
            fn_: score.fn_,
            tn: 0,
        });
    }
    let chapters: Vec<ChapterRow> = groups
        .into_iter()
        .map(|(id, acc)| ChapterRow {
            chapter_id: id.to_string(),
            chapter_label: acc.label.to_string(),
            n_codes: acc.codes,
            n_examples: acc.examples,
            f1_macro: (acc.f1_n > 0).then(|| acc.f1_sum / acc.f1_n as f64),
            f1_micro: acc.pooled.f1(),
        })
        .collect();
    Ok(ChapterReport {
        min_occurrences,
        n_codes: chapters.iter().map(|c| c.n_codes).sum(),
        chapters,
    })
}
