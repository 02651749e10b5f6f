//! Patient-grouped multi-label stratified splits and their audit.
//!
//! Patients are the stratification unit: each one carries the union of its
//! documents' codes and weighs as many documents as it owns. Units are placed
//! greedily, rarest label first, into the subset that still needs that label
//! the most.

mod stratify;
mod subset;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use stratify::{iterative_stratify, Unit};
pub use subset::{stratified_subset, uniform_subset, SubsetSelection};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Default train/val/test proportions; the test share is about 1.5x validation.
pub const DEFAULT_RATIOS: [f64; 3] = [0.7286, 0.1057, 0.1657];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Val, Subset::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            other => Err(Error::invalid(format!("unknown subset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Subset>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitAssignment {
    pub fn docs_in(&self, subset: Subset) -> BTreeSet<&str> {
        self.assignment
            .iter()
            .filter(|(_, &s)| s == subset)
            .map(|(d, _)| d.as_str())
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["doc_id", "subset"])?;
        for (doc, subset) in &self.assignment {
            w.write_record([doc.as_str(), subset.as_str()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, ratios: [f64; 3], seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut assignment = BTreeMap::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let (Some(doc), Some(subset)) = (rec.get(0), rec.get(1)) else {
                return Err(Error::Record {
                    line,
                    message: "expected doc_id,subset".into(),
                });
            };
            let subset = subset.parse().map_err(|e: Error| Error::Record {
                line,
                message: e.to_string(),
            })?;
            if assignment.insert(doc.to_string(), subset).is_some() {
                return Err(Error::DuplicateDocument(doc.to_string()));
            }
        }
        Ok(SplitAssignment {
            assignment,
            ratios,
            seed,
        })
    }
}

pub(crate) fn check_ratios(ratios: &[f64]) -> Result<()> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::invalid(format!("ratios must be positive, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("ratios must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Patients in order of first appearance, each with its document indices.
pub(crate) fn patient_groups(corpus: &Corpus, keep: impl Fn(&str) -> bool) -> Vec<(&str, Vec<usize>)> {
    let mut order: Vec<(&str, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for (i, doc) in corpus.documents.iter().enumerate() {
        if !keep(&doc.doc_id) {
            continue;
        }
        let k = *slot.entry(doc.patient_id.as_str()).or_insert_with(|| {
            order.push((doc.patient_id.as_str(), Vec::new()));
            order.len() - 1
        });
        order[k].1.push(i);
    }
    order
}

pub(crate) fn patient_units(corpus: &Corpus, groups: &[(&str, Vec<usize>)]) -> Vec<Unit> {
    let index = corpus.code_index();
    groups
        .iter()
        .map(|(_, docs)| {
            let labels: BTreeSet<usize> = docs
                .iter()
                .flat_map(|&d| corpus.documents[d].codes.iter())
                .filter_map(|c| index.get(c.as_str()).copied())
                .collect();
            Unit {
                weight: docs.len() as f64,
                labels: labels.into_iter().collect(),
            }
        })
        .collect()
}

/// Iterative stratification over patients; deterministic in `(corpus, ratios, seed)`.
pub fn stratified_split(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    check_ratios(&ratios)?;
    if corpus.is_empty() {
        return Err(Error::invalid("cannot split an empty corpus"));
    }
    let groups = patient_groups(corpus, |_| true);
    let units = patient_units(corpus, &groups);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let placement = iterative_stratify(&units, &ratios, corpus.code_universe.len(), &mut rng);
    let mut assignment = BTreeMap::new();
    for ((_, docs), subset) in groups.iter().zip(&placement.subset_of) {
        for &d in docs {
            assignment.insert(corpus.documents[d].doc_id.clone(), Subset::ALL[*subset]);
        }
    }
    Ok(SplitAssignment {
        assignment,
        ratios,
        seed,
    })
}

/// Baseline: shuffle patients uniformly and cut the sequence at the ratio
/// boundaries (by cumulative document count).
pub fn random_patient_split(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    check_ratios(&ratios)?;
    if corpus.is_empty() {
        return Err(Error::invalid("cannot split an empty corpus"));
    }
    let mut groups = patient_groups(corpus, |_| true);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    let n = corpus.len() as f64;
    let cut_train = ratios[0] * n;
    let cut_val = (ratios[0] + ratios[1]) * n;
    let mut placed = 0usize;
    let mut assignment = BTreeMap::new();
    for (_, docs) in &groups {
        let at = placed as f64;
        let subset = if at < cut_train {
            Subset::Train
        } else if at < cut_val {
            Subset::Val
        } else {
            Subset::Test
        };
        for &d in docs {
            assignment.insert(corpus.documents[d].doc_id.clone(), subset);
        }
        placed += docs.len();
    }
    Ok(SplitAssignment {
        assignment,
        ratios,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetAudit {
    pub subset: Subset,
    pub n_documents: usize,
    pub fraction: f64,
    pub n_patients: usize,
    pub n_missing_codes: usize,
    /// Fraction of the code universe absent from this subset.
    pub missing_codes: f64,
    /// Mean over codes of `|n_s(c) - r_s n(c)| / (r_s N)`, i.e. the absolute
    /// gap between subset and global code frequency.
    pub label_divergence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAudit {
    pub n_documents: usize,
    pub n_codes: usize,
    pub subsets: Vec<SubsetAudit>,
    /// Patients whose documents land in more than one subset.
    pub patient_overlap: usize,
    pub mean_label_divergence: f64,
    pub warnings: Vec<String>,
}

impl SplitAudit {
    pub fn get(&self, subset: Subset) -> &SubsetAudit {
        &self.subsets[subset.index()]
    }
}

/// Recomputes subset statistics from the corpus and the assignment alone.
pub fn audit(corpus: &Corpus, split: &SplitAssignment) -> Result<SplitAudit> {
    let known: HashSet<&str> = corpus.documents.iter().map(|d| d.doc_id.as_str()).collect();
    if let Some(unknown) = split.assignment.keys().find(|d| !known.contains(d.as_str())) {
        return Err(Error::UnknownDocument(unknown.clone()));
    }
    if let Some(missing) = corpus
        .documents
        .iter()
        .find(|d| !split.assignment.contains_key(&d.doc_id))
    {
        return Err(Error::invalid(format!(
            "document {:?} has no subset",
            missing.doc_id
        )));
    }

    let n = corpus.len();
    let n_codes = corpus.code_universe.len();
    let mut docs = [0usize; 3];
    let mut per_code = vec![[0usize; 3]; n_codes];
    let mut global = vec![0usize; n_codes];
    let mut patients: HashMap<&str, BTreeSet<Subset>> = HashMap::new();
    let mut patient_docs: HashMap<&str, usize> = HashMap::new();
    for doc in &corpus.documents {
        let s = split.assignment[&doc.doc_id];
        docs[s.index()] += 1;
        patients.entry(&doc.patient_id).or_default().insert(s);
        *patient_docs.entry(&doc.patient_id).or_default() += 1;
        for code in &doc.codes {
            // universe is sorted
            if let Ok(j) = corpus.code_universe.binary_search(code) {
                per_code[j][s.index()] += 1;
                global[j] += 1;
            }
        }
    }

    let mut subsets = Vec::new();
    for s in Subset::ALL {
        let k = s.index();
        let n_missing = per_code.iter().filter(|c| c[k] == 0).count();
        let ratio = split.ratios[k];
        let divergence = if n_codes == 0 {
            0.0
        } else {
            per_code
                .iter()
                .zip(&global)
                .map(|(c, &g)| (c[k] as f64 - ratio * g as f64).abs() / (ratio * n as f64))
                .sum::<f64>()
                / n_codes as f64
        };
        subsets.push(SubsetAudit {
            subset: s,
            n_documents: docs[k],
            fraction: if n == 0 { 0.0 } else { docs[k] as f64 / n as f64 },
            n_patients: patients.values().filter(|set| set.contains(&s)).count(),
            n_missing_codes: n_missing,
            missing_codes: if n_codes == 0 {
                0.0
            } else {
                n_missing as f64 / n_codes as f64
            },
            label_divergence: divergence,
        });
    }

    let limit = split.ratios.iter().cloned().fold(0.0, f64::max) * n as f64;
    let mut warnings: Vec<String> = patient_docs
        .iter()
        .filter(|(_, &k)| k as f64 > limit)
        .map(|(p, k)| format!("patient {p} owns {k} documents, more than any subset's share; ratios are unattainable"))
        .collect();
    warnings.sort();

    Ok(SplitAudit {
        n_documents: n,
        n_codes,
        mean_label_divergence: subsets.iter().map(|s| s.label_divergence).sum::<f64>() / 3.0,
        subsets,
        patient_overlap: patients.values().filter(|set| set.len() > 1).count(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn corpus(spec: &[(&str, &str, &[&str])]) -> Corpus {
        Corpus::new(
            spec.iter()
                .map(|(d, p, codes)| Document {
                    doc_id: d.to_string(),
                    patient_id: p.to_string(),
                    raw_text: String::new(),
                    tokens: vec![],
                    codes: codes.iter().map(|c| c.to_string()).collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_label_reduces_to_counting() {
        let names: Vec<(String, String)> =
            (0..10).map(|i| (format!("d{i}"), format!("p{i}"))).collect();
        let spec: Vec<(&str, &str, &[&str])> = names
            .iter()
            .map(|(d, p)| (d.as_str(), p.as_str(), &["A"][..]))
            .collect();
        let c = corpus(&spec);
        for seed in 0..5 {
            let split = stratified_split(&c, [0.8, 0.1, 0.1], seed).unwrap();
            let a = audit(&c, &split).unwrap();
            let sizes: Vec<usize> = a.subsets.iter().map(|s| s.n_documents).collect();
            assert_eq!(sizes, vec![8, 1, 1]);
        }
    }

    #[test]
    fn patients_never_straddle_subsets() {
        let c = corpus(&[
            ("a1", "a", &["X"]),
            ("a2", "a", &["Y"]),
            ("b1", "b", &["X"]),
            ("c1", "c", &["Y"]),
            ("c2", "c", &["X", "Y"]),
            ("d1", "d", &["Y"]),
            ("e1", "e", &["X"]),
        ]);
        for seed in 0..10 {
            let split = stratified_split(&c, [0.5, 0.25, 0.25], seed).unwrap();
            assert_eq!(split.assignment["a1"], split.assignment["a2"]);
            assert_eq!(split.assignment["c1"], split.assignment["c2"]);
            assert_eq!(audit(&c, &split).unwrap().patient_overlap, 0);
        }
    }

    #[test]
    fn ratios_are_validated() {
        let c = corpus(&[("a", "p", &["X"])]);
        assert!(stratified_split(&c, [0.5, 0.5, 0.5], 0).is_err());
        assert!(stratified_split(&c, [1.0, 0.0, 0.0], 0).is_err());
        assert!(stratified_split(&corpus(&[]), DEFAULT_RATIOS, 0).is_err());
    }

    #[test]
    fn audit_counts_missing_codes() {
        let c = corpus(&[("a", "p", &["X", "R"]), ("b", "q", &["X"]), ("c", "r", &["X"])]);
        let split = SplitAssignment {
            assignment: [("a", Subset::Train), ("b", Subset::Val), ("c", Subset::Test)]
                .into_iter()
                .map(|(d, s)| (d.to_string(), s))
                .collect(),
            ratios: [0.5, 0.25, 0.25],
            seed: 0,
        };
        let a = audit(&c, &split).unwrap();
        assert_eq!(a.get(Subset::Train).missing_codes, 0.0);
        assert_eq!(a.get(Subset::Val).missing_codes, 0.5);
        assert_eq!(a.get(Subset::Test).n_missing_codes, 1);

        let mut bad = split.clone();
        bad.assignment.insert("zzz".into(), Subset::Val);
        assert!(matches!(audit(&c, &bad), Err(Error::UnknownDocument(d)) if d == "zzz"));
    }

    #[test]
    fn oversized_patient_warns() {
        let c = corpus(&[("a", "p", &["X"]), ("b", "p", &["X"]), ("c", "p", &["X"]), ("d", "q", &["X"])]);
        let split = stratified_split(&c, [0.5, 0.25, 0.25], 3).unwrap();
        let a = audit(&c, &split).unwrap();
        assert_eq!(a.warnings.len(), 1);
        assert_eq!(a.patient_overlap, 0);
    }

    #[test]
    fn csv_round_trip() {
        let c = corpus(&[("a", "p", &["X"]), ("b", "q", &["X"]), ("c", "r", &["X"])]);
        let split = stratified_split(&c, [0.4, 0.3, 0.3], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.csv");
        split.write_csv(&path).unwrap();
        assert_eq!(SplitAssignment::read_csv(&path, split.ratios, 1).unwrap(), split);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("doc_id,subset\n"));
    }
}
