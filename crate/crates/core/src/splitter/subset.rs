use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{iterative_stratify, patient_groups, patient_units};
use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSelection {
    pub doc_ids: BTreeSet<String>,
    /// Patients whose documents had to be divided to hit the exact size.
    pub split_patients: Vec<String>,
}

/// Draws exactly `target_size` documents from `train_docs` by patient-level
/// iterative stratification with ratios `(target/n, 1 - target/n)`.
///
/// Stratification rarely lands on the exact size, so the selection is then
/// trimmed or topped up one document at a time, starting from the most
/// recently placed patients (those placed for the commonest labels).
pub fn stratified_subset(
    corpus: &Corpus,
    train_docs: &BTreeSet<String>,
    target_size: usize,
    seed: u64,
) -> Result<SubsetSelection> {
    if target_size == 0 {
        return Err(Error::invalid("target_size must be positive"));
    }
    let groups = patient_groups(corpus, |d| train_docs.contains(d));
    let n: usize = groups.iter().map(|(_, d)| d.len()).sum();
    if n != train_docs.len() {
        let known: BTreeSet<&str> = corpus.documents.iter().map(|d| d.doc_id.as_str()).collect();
        let missing = train_docs.iter().find(|d| !known.contains(d.as_str())).unwrap();
        return Err(Error::UnknownDocument(missing.clone()));
    }
    if target_size > n {
        return Err(Error::invalid(format!(
            "target_size {target_size} exceeds the {n} available documents"
        )));
    }
    if target_size == n {
        return Ok(SubsetSelection {
            doc_ids: train_docs.clone(),
            split_patients: vec![],
        });
    }

    let units = patient_units(corpus, &groups);
    let share = target_size as f64 / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let placement = iterative_stratify(
        &units,
        &[share, 1.0 - share],
        corpus.code_universe.len(),
        &mut rng,
    );

    let mut chosen: Vec<Vec<usize>> = groups
        .iter()
        .zip(&placement.subset_of)
        .map(|((_, docs), &s)| if s == 0 { docs.clone() } else { vec![] })
        .collect();
    let mut size: usize = chosen.iter().map(Vec::len).sum();
    let mut split_patients = BTreeSet::new();

    for &u in placement.order.iter().rev() {
        if size == target_size {
            break;
        }
        let docs = &groups[u].1;
        if size > target_size && placement.subset_of[u] == 0 {
            while size > target_size && !chosen[u].is_empty() {
                chosen[u].pop();
                size -= 1;
            }
            if !chosen[u].is_empty() {
                split_patients.insert(groups[u].0.to_string());
            }
        } else if size < target_size && placement.subset_of[u] != 0 {
            for &d in docs {
                if size == target_size {
                    split_patients.insert(groups[u].0.to_string());
                    break;
                }
                chosen[u].push(d);
                size += 1;
            }
        }
    }
    debug_assert_eq!(size, target_size);

    Ok(SubsetSelection {
        doc_ids: chosen
            .iter()
            .flatten()
            .map(|&d| corpus.documents[d].doc_id.clone())
            .collect(),
        split_patients: split_patients.into_iter().collect(),
    })
}

/// Uniform random sample of `target_size` documents, ignoring labels and patients.
pub fn uniform_subset(
    train_docs: &BTreeSet<String>,
    target_size: usize,
    seed: u64,
) -> Result<BTreeSet<String>> {
    if target_size == 0 || target_size > train_docs.len() {
        return Err(Error::invalid(format!(
            "target_size must lie in 1..={}",
            train_docs.len()
        )));
    }
    let docs: Vec<&String> = train_docs.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, docs.len(), target_size)
        .into_iter()
        .map(|i| docs[i].clone())
        .collect())
}
