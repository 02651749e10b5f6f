//! Document collections with multi-label code annotations.
//!
//! A [`Corpus`] owns its documents and a sorted code universe whose order
//! defines the label column index used by every downstream matrix.

mod codes;
mod synth;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use codes::{CodeEntry, CodeKind, CodeSystem, IcdVersion};
pub use synth::{synthesize, trigger_tokens, SyntheticSpec};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub patient_id: String,
    pub raw_text: String,
    /// Lowercased alphabetic tokens; empty until [`preprocess`] runs.
    pub tokens: Vec<String>,
    pub codes: BTreeSet<String>,
}

impl Document {
    /// Number of words kept by preprocessing, before any truncation.
    pub fn word_count(&self) -> usize {
        tokenize_iter(&self.raw_text).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub code_universe: Vec<String>,
    pub code_system: Option<CodeSystem>,
}

impl Corpus {
    /// Builds a corpus whose universe is the sorted union of document codes.
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(Error::DuplicateDocument(doc.doc_id.clone()));
            }
        }
        let universe: BTreeSet<&String> = documents.iter().flat_map(|d| d.codes.iter()).collect();
        let code_universe = universe.into_iter().cloned().collect();
        Ok(Corpus {
            documents,
            code_universe,
            code_system: None,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn with_code_system(mut self, code_system: CodeSystem) -> Self {
        self.code_system = Some(code_system);
        self
    }

    /// Column index of every code in the universe.
    pub fn code_index(&self) -> HashMap<&str, usize> {
        self.code_universe
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect()
    }

    /// Number of documents carrying each code, aligned with `code_universe`.
    pub fn document_frequencies(&self) -> Vec<usize> {
        let index = self.code_index();
        let mut counts = vec![0usize; self.code_universe.len()];
        for doc in &self.documents {
            for code in &doc.codes {
                if let Some(&j) = index.get(code.as_str()) {
                    counts[j] += 1;
                }
            }
        }
        counts
    }

    /// Document frequency per code restricted to the given documents.
    pub fn code_counts_in<'a>(&'a self, doc_ids: &HashSet<&str>) -> HashMap<&'a str, usize> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in &self.documents {
            if doc_ids.contains(doc.doc_id.as_str()) {
                for code in &doc.codes {
                    *counts.entry(code.as_str()).or_default() += 1;
                }
            }
        }
        counts
    }
}

#[derive(Deserialize)]
struct RecordIn {
    doc_id: String,
    patient_id: String,
    text: String,
    codes: Vec<String>,
    #[serde(default)]
    tokens: Option<Vec<String>>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    doc_id: &'a str,
    patient_id: &'a str,
    text: &'a str,
    codes: &'a BTreeSet<String>,
    tokens: &'a [String],
}

/// Reads a JSONL corpus. Blank lines are skipped; line numbers in errors are 1-based.
pub fn ingest(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordIn = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(rec.doc_id.clone()) {
            return Err(Error::DuplicateDocument(rec.doc_id));
        }
        documents.push(Document {
            doc_id: rec.doc_id,
            patient_id: rec.patient_id,
            raw_text: rec.text,
            tokens: rec.tokens.unwrap_or_default(),
            codes: rec.codes.into_iter().collect(),
        });
    }
    Corpus::new(documents)
}

/// Writes the corpus as JSONL, one document per line, with its `tokens` array.
pub fn emit(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_jsonl(corpus, &mut out).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn write_jsonl<W: Write>(corpus: &Corpus, out: &mut W) -> Result<()> {
    for doc in &corpus.documents {
        let rec = RecordOut {
            doc_id: &doc.doc_id,
            patient_id: &doc.patient_id,
            text: &doc.raw_text,
            codes: &doc.codes,
            tokens: &doc.tokens,
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    out.flush().map_err(|e| Error::io("<writer>", e))
}

fn tokenize_iter(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(str::to_lowercase)
        .filter(|t| t.chars().any(|c| c.is_ascii_lowercase()))
}

/// Lowercases, splits on whitespace and drops tokens without a letter in `a-z`.
pub fn tokenize(text: &str, max_words: usize) -> Vec<String> {
    tokenize_iter(text).take(max_words).collect()
}

/// Re-tokenizes every document from its raw text, keeping at most `max_words` tokens.
pub fn preprocess(corpus: &Corpus, max_words: usize) -> Result<Corpus> {
    if max_words == 0 {
        return Err(Error::invalid("max_words must be at least 1"));
    }
    let documents = corpus
        .documents
        .par_iter()
        .map(|doc| Document {
            tokens: tokenize(&doc.raw_text, max_words),
            ..doc.clone()
        })
        .collect();
    Ok(Corpus {
        documents,
        code_universe: corpus.code_universe.clone(),
        code_system: corpus.code_system.clone(),
    })
}

/// Drops codes carried by fewer than `min_count` documents. Documents left
/// without codes are kept.
pub fn filter_rare_codes(corpus: &Corpus, min_count: usize) -> Result<Corpus> {
    if min_count == 0 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    let counts = corpus.document_frequencies();
    let keep: HashSet<&str> = corpus
        .code_universe
        .iter()
        .zip(&counts)
        .filter(|(_, &n)| n >= min_count)
        .map(|(c, _)| c.as_str())
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyCodeUniverse);
    }
    let documents = corpus
        .documents
        .iter()
        .map(|doc| Document {
            codes: doc
                .codes
                .iter()
                .filter(|c| keep.contains(c.as_str()))
                .cloned()
                .collect(),
            ..doc.clone()
        })
        .collect();
    let code_universe = corpus
        .code_universe
        .iter()
        .filter(|c| keep.contains(c.as_str()))
        .cloned()
        .collect();
    Ok(Corpus {
        documents,
        code_universe,
        code_system: corpus.code_system.clone(),
    })
}

/// Median with first and third quartile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianIqr {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl MedianIqr {
    fn of(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        MedianIqr {
            median: quantile_sorted(&values, 0.5),
            q1: quantile_sorted(&values, 0.25),
            q3: quantile_sorted(&values, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_documents: usize,
    pub n_patients: usize,
    pub n_unique_codes: usize,
    pub codes_per_instance: MedianIqr,
    pub words_per_document: MedianIqr,
}

/// Linear-interpolation quantile on sorted data (position `q * (n - 1)`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Table-style summary. With `tokenized`, word counts are token-list lengths;
/// otherwise they are whitespace-separated word counts of the raw text.
pub fn stats(corpus: &Corpus, tokenized: bool) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot summarize an empty corpus"));
    }
    let patients: HashSet<&str> = corpus
        .documents
        .iter()
        .map(|d| d.patient_id.as_str())
        .collect();
    let codes = corpus
        .documents
        .iter()
        .map(|d| d.codes.len() as f64)
        .collect();
    let words = corpus
        .documents
        .iter()
        .map(|d| {
            if tokenized {
                d.tokens.len() as f64
            } else {
                d.raw_text.split_whitespace().count() as f64
            }
        })
        .collect();
    Ok(CorpusStats {
        n_documents: corpus.len(),
        n_patients: patients.len(),
        n_unique_codes: corpus.code_universe.len(),
        codes_per_instance: MedianIqr::of(codes),
        words_per_document: MedianIqr::of(words),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, patient: &str, text: &str, codes: &[&str]) -> Document {
        Document {
            doc_id: id.into(),
            patient_id: patient.into(),
            raw_text: text.into(),
            tokens: vec![],
            codes: codes.iter().map(|c| c.to_string()).collect(),
        }
    }

    #[test]
    fn ingest_two_records() {
        let data = r#"{"doc_id":"d1","patient_id":"p1","text":"a b","codes":["B","A"]}
{"doc_id":"d2","patient_id":"p2","text":"c","codes":["B","B"]}
"#;
        let c = read_jsonl(data.as_bytes()).unwrap();
        assert_eq!(c.code_universe, vec!["A", "B"]);
        assert_eq!(c.documents[1].codes.len(), 1);
        assert!(c.documents[0].tokens.is_empty());
    }

    #[test]
    fn ingest_missing_patient_names_line() {
        let data = "{\"doc_id\":\"d1\",\"patient_id\":\"p1\",\"text\":\"\",\"codes\":[]}\n\
                    {\"doc_id\":\"d2\",\"text\":\"x\",\"codes\":[\"A\"]}\n";
        match read_jsonl(data.as_bytes()) {
            Err(Error::Record { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("patient_id"));
            }
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_duplicate_doc_id() {
        let data = "{\"doc_id\":\"d1\",\"patient_id\":\"p1\",\"text\":\"\",\"codes\":[]}\n\
                    {\"doc_id\":\"d1\",\"patient_id\":\"p2\",\"text\":\"\",\"codes\":[]}\n";
        assert!(matches!(
            read_jsonl(data.as_bytes()),
            Err(Error::DuplicateDocument(id)) if id == "d1"
        ));
    }

    #[test]
    fn tokenizer_drops_numbers() {
        assert_eq!(
            tokenize("Patient BMI 31.5 stable", 4000),
            vec!["patient", "bmi", "stable"]
        );
        assert!(tokenize("", 10).is_empty());
        assert_eq!(tokenize("t2 -- 2x ÄÖ", 10), vec!["t2", "2x"]);
    }

    #[test]
    fn filter_straddles_threshold() {
        let mut docs = Vec::new();
        for i in 0..12 {
            let codes: &[&str] = if i < 9 { &["A", "B"] } else { &["A"] };
            docs.push(doc(&format!("d{i}"), "p", "x", codes));
        }
        let c = Corpus::new(docs).unwrap();
        let f = filter_rare_codes(&c, 10).unwrap();
        assert_eq!(f.code_universe, vec!["A"]);
        assert_eq!(f.len(), 12);
        assert_eq!(filter_rare_codes(&c, 1).unwrap(), c);
        assert!(matches!(
            filter_rare_codes(&c, 13),
            Err(Error::EmptyCodeUniverse)
        ));
    }

    #[test]
    fn zero_code_documents_are_kept() {
        let c = Corpus::new(vec![
            doc("a", "p", "", &["X"]),
            doc("b", "p", "", &["X"]),
            doc("c", "q", "", &["Y"]),
        ])
        .unwrap();
        let f = filter_rare_codes(&c, 2).unwrap();
        assert_eq!(f.len(), 3);
        assert!(f.documents[2].codes.is_empty());
    }

    #[test]
    fn stats_quartiles() {
        let c = Corpus::new(vec![
            doc("a", "p", "one", &["A"]),
            doc("b", "p", "one two", &["A", "B"]),
            doc("c", "q", "one two three", &["A", "B", "C"]),
        ])
        .unwrap();
        let s = stats(&c, false).unwrap();
        assert_eq!(s.n_patients, 2);
        assert_eq!(s.n_unique_codes, 3);
        assert_eq!(
            s.codes_per_instance,
            MedianIqr {
                median: 2.0,
                q1: 1.5,
                q3: 2.5
            }
        );
        let single = Corpus::new(vec![doc("a", "p", "x y", &["A"])]).unwrap();
        let s = stats(&single, false).unwrap();
        assert_eq!(s.words_per_document.q1, s.words_per_document.median);
        assert_eq!(s.words_per_document.q3, s.words_per_document.median);
        assert!(stats(&Corpus::new(vec![]).unwrap(), false).is_err());
    }
}
