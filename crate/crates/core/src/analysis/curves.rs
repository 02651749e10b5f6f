use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::metrics::{confusion_counts, f1_macro, f1_micro, MetricPolicy};
use crate::models::{train, Architecture, TrainConfig};
use crate::splitter::{stratified_subset, SplitAssignment, Subset};

/// Summary of the y values whose x falls in `[lo, hi)` (the last bin is
/// closed on the right).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Equal-width bins over the range of x. Empty bins are dropped.
pub fn bin_points(points: &[(f64, f64)], n_bins: usize) -> Result<Vec<Bin>> {
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be positive"));
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for &(x, y) in points {
        let i = if width > 0.0 {
            (((x - lo) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        members[i].push(y);
    }
    Ok(members
        .into_iter()
        .enumerate()
        .filter(|(_, ys)| !ys.is_empty())
        .map(|(i, ys)| {
            let n = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / n;
            let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
            Bin {
                lo: lo + i as f64 * width,
                hi: if i + 1 == n_bins { hi } else { lo + (i + 1) as f64 * width },
                n: ys.len(),
                mean,
                std: var.sqrt(),
            }
        })
        .collect())
}

/// Writes bins with the given column names for x range, count and y.
pub fn write_bins_csv(path: &Path, bins: &[Bin], columns: [&str; 5]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(columns)?;
    for b in bins {
        w.write_record([
            b.lo.to_string(),
            b.hi.to_string(),
            b.n.to_string(),
            b.mean.to_string(),
            b.std.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePoint {
    pub size: usize,
    pub boundary: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

/// Trains one model per training-set size on stratified subsets of the
/// training documents and scores each on the fixed test set. Every size
/// uses the same seed, so the largest size equal to the full training set
/// reproduces a plain training run.
pub fn training_size_curve(
    corpus: &Corpus,
    split: &SplitAssignment,
    sizes: &[usize],
    architecture: &Architecture,
    config: &TrainConfig,
) -> Result<Vec<SizePoint>> {
    let train_docs: BTreeSet<String> = split
        .docs_in(Subset::Train)
        .into_iter()
        .map(str::to_string)
        .collect();
    if sizes.is_empty() {
        return Err(Error::invalid("no training sizes given"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("training sizes must be strictly ascending"));
    }
    if let Some(&too_big) = sizes.iter().find(|&&s| s > train_docs.len()) {
        return Err(Error::invalid(format!(
            "training size {too_big} exceeds the {} training documents",
            train_docs.len()
        )));
    }
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let selection = stratified_subset(corpus, &train_docs, size, config.seed)?;
        let mut reduced = split.clone();
        reduced
            .assignment
            .retain(|doc, s| *s != Subset::Train || selection.doc_ids.contains(doc));
        let outcome = train(corpus, &reduced, architecture, config)?;
        let boundary = outcome.model.boundary;
        let counts = confusion_counts(&outcome.test, boundary);
        let policy = MetricPolicy {
            boundary,
            ..Default::default()
        };
        out.push(SizePoint {
            size,
            boundary,
            micro_f1: f1_micro(&counts),
            macro_f1: f1_macro(&counts, &policy)?,
        });
    }
    Ok(out)
}

pub fn write_size_curve_csv(path: &Path, points: &[SizePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["size", "boundary", "micro_f1", "macro_f1"])?;
    for p in points {
        w.write_record([
            p.size.to_string(),
            p.boundary.to_string(),
            p.micro_f1.to_string(),
            p.macro_f1.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_cover_range() {
        let pts = [(0.0, 1.0), (1.0, 0.0), (1.5, 0.5), (10.0, 0.2)];
        let bins = bin_points(&pts, 5).unwrap();
        assert_eq!(bins.len(), 2);
        assert_eq!(bins[0].n, 3);
        assert!((bins[0].mean - 0.5).abs() < 1e-15);
        assert!((bins[0].std - (1.0f64 / 6.0).sqrt()).abs() < 1e-15);
        assert_eq!((bins[1].lo, bins[1].hi, bins[1].n), (8.0, 10.0, 1));
    }

    #[test]
    fn constant_x_single_bin() {
        let bins = bin_points(&[(3.0, 1.0), (3.0, 0.0)], 4).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].std, 0.5);
    }
}
