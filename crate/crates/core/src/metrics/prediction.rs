use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aligned score and target matrices: rows are documents, columns follow
/// `code_universe`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub doc_ids: Vec<String>,
    pub code_universe: Vec<String>,
    pub scores: Array2<f64>,
    pub targets: Array2<bool>,
}

impl PredictionSet {
    pub fn new(
        doc_ids: Vec<String>,
        code_universe: Vec<String>,
        scores: Array2<f64>,
        targets: Array2<bool>,
    ) -> Result<Self> {
        let shape = (doc_ids.len(), code_universe.len());
        if scores.dim() != shape || targets.dim() != shape {
            return Err(Error::ShapeMismatch(format!(
                "expected {shape:?}, scores {:?}, targets {:?}",
                scores.dim(),
                targets.dim()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::invalid(format!("score {bad} outside [0, 1]")));
        }
        Ok(PredictionSet {
            doc_ids,
            code_universe,
            scores,
            targets,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_codes(&self) -> usize {
        self.code_universe.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    /// Binary predictions under the strict rule `score > boundary`.
    pub fn predicted(&self, boundary: f64) -> Array2<bool> {
        self.scores.mapv(|s| s > boundary)
    }

    /// Number of positive targets per code.
    pub fn support(&self) -> Vec<usize> {
        self.targets
            .columns()
            .into_iter()
            .map(|c| c.iter().filter(|&&t| t).count())
            .collect()
    }

    pub fn same_layout(&self, other: &PredictionSet) -> bool {
        self.doc_ids == other.doc_ids && self.code_universe == other.code_universe
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate().filter(|(_, l)| {
            l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true)
        });
        let record = |line: usize, e: &dyn std::fmt::Display| Error::Record {
            line: line + 1,
            message: e.to_string(),
        };
        let (i, header) = lines
            .next()
            .ok_or_else(|| Error::invalid("prediction file has no header"))?;
        let header: Header = serde_json::from_str(&header.map_err(|e| Error::io("<reader>", e))?)
            .map_err(|e| record(i, &e))?;
        let n_codes = header.codes.len();

        let mut doc_ids = Vec::new();
        let mut scores = Vec::new();
        let mut targets = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io("<reader>", e))?;
            let row: RowIn = serde_json::from_str(&line).map_err(|e| record(i, &e))?;
            let mut dense = vec![0.0; n_codes];
            match row.scores {
                ScoresIn::Dense(v) if v.len() == n_codes => dense = v,
                ScoresIn::Dense(v) if v.is_empty() => {}
                ScoresIn::Dense(v) => {
                    return Err(record(
                        i,
                        &format!("{} scores for {n_codes} codes", v.len()),
                    ))
                }
                ScoresIn::Sparse(pairs) => {
                    for (j, s) in pairs {
                        if j >= n_codes {
                            return Err(record(i, &format!("code index {j} out of range")));
                        }
                        dense[j] = s;
                    }
                }
            }
            if row.targets.len() != n_codes {
                return Err(record(
                    i,
                    &format!("{} targets for {n_codes} codes", row.targets.len()),
                ));
            }
            for t in &row.targets {
                match t {
                    0 => targets.push(false),
                    1 => targets.push(true),
                    other => return Err(record(i, &format!("target {other} is not 0/1"))),
                }
            }
            scores.extend(dense);
            doc_ids.push(row.doc_id);
        }
        let n = doc_ids.len();
        let scores = Array2::from_shape_vec((n, n_codes), scores)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let targets = Array2::from_shape_vec((n, n_codes), targets)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(doc_ids, header.codes, scores, targets)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out)
            .and_then(|_| out.flush().map_err(|e| Error::io(path, e)))
    }

    /// Dense JSONL: a `{"codes": [...]}` header then one row per document.
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        serde_json::to_writer(
            &mut *out,
            &HeaderOut {
                codes: &self.code_universe,
            },
        )?;
        out.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
        for (i, doc) in self.doc_ids.iter().enumerate() {
            let row = RowOut {
                doc_id: doc,
                scores: self.scores.row(i).to_vec(),
                targets: self.targets.row(i).iter().map(|&t| t as u8).collect(),
            };
            serde_json::to_writer(&mut *out, &row)?;
            out.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct Header {
    codes: Vec<String>,
}

#[derive(Serialize)]
struct HeaderOut<'a> {
    codes: &'a [String],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScoresIn {
    Dense(Vec<f64>),
    Sparse(Vec<(usize, f64)>),
}

#[derive(Deserialize)]
struct RowIn {
    doc_id: String,
    scores: ScoresIn,
    targets: Vec<u8>,
}

#[derive(Serialize)]
struct RowOut<'a> {
    doc_id: &'a str,
    scores: Vec<f64>,
    targets: Vec<u8>,
}
