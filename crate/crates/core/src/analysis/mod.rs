//! Error analysis over prediction sets: correlations of per-code and
//! per-document F1 with frequency and length, codes never found, per-chapter
//! aggregation, training-size curves and paired significance tests.

mod chapters;
mod correlation;
mod curves;
mod significance;

pub use chapters::{chapter_report, ChapterReport, ChapterRow, DEFAULT_MIN_OCCURRENCES};
pub use correlation::{
    code_frequency_correlation, correlate, correlation_p_value, doc_length_correlation, document_f1,
    frequency_points, length_points, midranks, never_predicted, pearson, spearman, CorrelationResult,
    NeverPredicted,
};
pub use curves::{bin_points, training_size_curve, write_bins_csv, write_size_curve_csv, Bin, SizePoint};
pub use significance::{
    mcnemar_bonferroni, mcnemar_counts, pair_count, McNemarMethod, McNemarResult, McNemarUnit, EXACT_BELOW,
};
