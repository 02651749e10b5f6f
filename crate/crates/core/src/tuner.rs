//! Decision-boundary selection on validation predictions.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{confusion_counts, f1_macro, f1_micro, MetricPolicy, PredictionSet};

pub const DEFAULT_GRID_STEP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySweep {
    pub grid: Vec<f64>,
    pub micro_f1: Vec<f64>,
    /// Arithmetic macro F1, ignoring codes without positives.
    pub macro_f1: Vec<f64>,
    pub best_boundary: f64,
    pub best_micro_f1: f64,
}

/// `{step, 2 step, ...}` strictly inside (0, 1).
pub fn boundary_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step < 1.0) {
        return Err(Error::invalid(format!("grid step must lie in (0, 1), got {step}")));
    }
    let n = ((1.0 / step) - 1e-9).floor() as usize;
    // when 1/step is an integer, i/(1/step) gives the closest double to each
    // grid point (0.57 rather than 57 * 0.01 = 0.5700000000000001)
    let inverse = (1.0 / step).round();
    let exact = ((1.0 / step) - inverse).abs() < 1e-9;
    Ok((1..=n)
        .map(|i| if exact { i as f64 / inverse } else { i as f64 * step })
        .filter(|&b| b < 1.0 - 1e-12)
        .collect())
}

/// Evaluates micro and macro F1 at every grid point and picks the smallest
/// boundary with the highest micro F1.
pub fn tune(preds_val: &PredictionSet, grid_step: f64) -> Result<BoundarySweep> {
    if preds_val.is_empty() || preds_val.n_codes() == 0 {
        return Err(Error::invalid("cannot tune on an empty prediction set"));
    }
    let grid = boundary_grid(grid_step)?;
    let points: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&b| {
            let counts = confusion_counts(preds_val, b);
            let policy = MetricPolicy {
                boundary: b,
                ..Default::default()
            };
            // no positives anywhere: macro over nothing is reported as 0
            let macro_f1 = f1_macro(&counts, &policy).unwrap_or(0.0);
            (f1_micro(&counts), macro_f1)
        })
        .collect();
    let (micro_f1, macro_f1): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
    let mut best = 0;
    for (i, &v) in micro_f1.iter().enumerate() {
        if v > micro_f1[best] {
            best = i;
        }
    }
    Ok(BoundarySweep {
        best_boundary: grid[best],
        best_micro_f1: micro_f1[best],
        grid,
        micro_f1,
        macro_f1,
    })
}

impl BoundarySweep {
    /// CSV with header `boundary,micro_f1,macro_f1`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["boundary", "micro_f1", "macro_f1"])?;
        for ((b, mi), ma) in self.grid.iter().zip(&self.micro_f1).zip(&self.macro_f1) {
            w.write_record([b.to_string(), mi.to_string(), ma.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn policy(&self, base: &MetricPolicy) -> MetricPolicy {
        MetricPolicy {
            boundary: self.best_boundary,
            ..*base
        }
    }
}
