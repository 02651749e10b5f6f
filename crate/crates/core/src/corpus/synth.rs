//! Seeded synthetic corpora with Zipf-distributed code frequencies.
//!
//! Every code owns a handful of trigger tokens that are planted in each
//! document carrying it and never appear elsewhere, so a model that learns
//! token-to-code associations can reach near-perfect scores.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CodeEntry, CodeKind, CodeSystem, Corpus, Document, IcdVersion};
use crate::error::{Error, Result};

const CONSONANTS: &[u8] = b"bdfgklmnprstv";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    /// Inclusive range of documents per patient.
    pub docs_per_patient: (usize, usize),
    pub n_codes: usize,
    pub zipf_exponent: f64,
    /// Fraction of documents carrying the most frequent code.
    #[serde(default = "default_top_code_rate")]
    pub top_code_rate: f64,
    pub trigger_tokens_per_code: usize,
    /// Inclusive range of filler tokens per document.
    pub noise_token_count: (usize, usize),
    /// Inclusive bounds on words per document.
    pub doc_length: (usize, usize),
    #[serde(default = "default_noise_vocab")]
    pub noise_vocab_size: usize,
    #[serde(default = "default_chapters")]
    pub n_chapters: usize,
    pub seed: u64,
}

fn default_top_code_rate() -> f64 {
    0.5
}
fn default_noise_vocab() -> usize {
    500
}
fn default_chapters() -> usize {
    5
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_patients: 400,
            docs_per_patient: (1, 4),
            n_codes: 50,
            zipf_exponent: 1.0,
            top_code_rate: default_top_code_rate(),
            trigger_tokens_per_code: 2,
            noise_token_count: (30, 80),
            doc_length: (20, 200),
            noise_vocab_size: default_noise_vocab(),
            n_chapters: default_chapters(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (usize, usize)| lo <= hi;
        if self.n_patients == 0 {
            return Err(Error::invalid("n_patients must be positive"));
        }
        if !range_ok(self.docs_per_patient) || self.docs_per_patient.0 == 0 {
            return Err(Error::invalid("docs_per_patient must be a nonempty range of positive counts"));
        }
        if self.n_codes < 2 {
            return Err(Error::invalid("n_codes must be at least 2"));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent > 0.0) {
            return Err(Error::invalid("zipf_exponent must be positive"));
        }
        if !(self.top_code_rate > 0.0 && self.top_code_rate <= 1.0) {
            return Err(Error::invalid("top_code_rate must lie in (0, 1]"));
        }
        if self.trigger_tokens_per_code == 0 {
            return Err(Error::invalid("trigger_tokens_per_code must be at least 1"));
        }
        if !range_ok(self.noise_token_count) || !range_ok(self.doc_length) {
            return Err(Error::invalid("empty token-count range"));
        }
        if self.trigger_tokens_per_code > self.doc_length.1 {
            return Err(Error::invalid(format!(
                "doc_length max {} cannot hold the {} trigger tokens of a single code",
                self.doc_length.1, self.trigger_tokens_per_code
            )));
        }
        if self.noise_vocab_size == 0 {
            return Err(Error::invalid("noise_vocab_size must be positive"));
        }
        if self.n_chapters == 0 || self.n_chapters > 26 {
            return Err(Error::invalid("n_chapters must lie in 1..=26"));
        }
        Ok(())
    }

    /// Identifier of the code with 0-based frequency rank `rank`.
    pub fn code_id(&self, rank: usize) -> String {
        format!("{}{:03}", self.chapter_letter(rank), rank)
    }

    fn chapter_letter(&self, rank: usize) -> char {
        (b'A' + (rank % self.n_chapters) as u8) as char
    }

    /// Frequency rank encoded in a code produced by [`SyntheticSpec::code_id`].
    pub fn rank_of(code: &str) -> Option<usize> {
        code.get(1..)?.parse().ok()
    }
}

fn letters(mut n: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (n % 26) as u8);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    out.reverse();
    String::from_utf8(out).unwrap()
}

/// Trigger tokens of the code at frequency rank `rank`. They start with
/// `zq`, which never occurs in filler words.
pub fn trigger_tokens(rank: usize, per_code: usize) -> Vec<String> {
    (0..per_code)
        .map(|j| format!("zq{}x{}", letters(rank), letters(j)))
        .collect()
}

fn noise_word(mut i: usize) -> String {
    let n_syll = CONSONANTS.len() * VOWELS.len();
    let mut word = String::new();
    // at least two syllables
    for _ in 0..2 {
        let s = i % n_syll;
        i /= n_syll;
        word.push(CONSONANTS[s / VOWELS.len()] as char);
        word.push(VOWELS[s % VOWELS.len()] as char);
    }
    while i > 0 {
        let s = i % n_syll;
        i /= n_syll;
        word.push(CONSONANTS[s / VOWELS.len()] as char);
        word.push(VOWELS[s % VOWELS.len()] as char);
    }
    word
}

/// Generates a corpus (with a matching [`CodeSystem`]) that is a pure function of `spec`.
pub fn synthesize(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Patients own contiguous blocks of documents.
    let mut owners = Vec::new();
    for p in 0..spec.n_patients {
        let k = rng.gen_range(spec.docs_per_patient.0..=spec.docs_per_patient.1);
        owners.extend(std::iter::repeat_n(p, k));
    }
    let n_docs = owners.len();
    let capacity = spec.doc_length.1 / spec.trigger_tokens_per_code;

    let mut doc_codes: Vec<Vec<usize>> = vec![Vec::new(); n_docs];
    for rank in 0..spec.n_codes {
        let expected =
            n_docs as f64 * spec.top_code_rate * ((rank + 1) as f64).powf(-spec.zipf_exponent);
        let target = (expected.round() as usize).clamp(1, n_docs);
        let open: Vec<usize> = (0..n_docs)
            .filter(|&d| doc_codes[d].len() < capacity)
            .collect();
        let take = target.min(open.len());
        let mut chosen: Vec<usize> = index::sample(&mut rng, open.len(), take)
            .into_iter()
            .map(|i| open[i])
            .collect();
        chosen.sort_unstable();
        for d in chosen {
            doc_codes[d].push(rank);
        }
    }
    // Zipf-weighted top-up keeps the rank-frequency slope in expectation.
    let weights: Vec<f64> = (0..spec.n_codes)
        .map(|r| ((r + 1) as f64).powf(-spec.zipf_exponent))
        .collect();
    let zipf = WeightedIndex::new(&weights).map_err(|e| Error::Numeric(e.to_string()))?;
    for codes in doc_codes.iter_mut().filter(|c| c.is_empty()) {
        codes.push(zipf.sample(&mut rng));
    }

    let code_ids: Vec<String> = (0..spec.n_codes).map(|r| spec.code_id(r)).collect();
    let triggers: Vec<Vec<String>> = (0..spec.n_codes)
        .map(|r| trigger_tokens(r, spec.trigger_tokens_per_code))
        .collect();

    let mut documents = Vec::with_capacity(n_docs);
    for (d, codes) in doc_codes.iter().enumerate() {
        let mut words: Vec<String> = codes
            .iter()
            .flat_map(|&r| triggers[r].iter().cloned())
            .collect();
        let planted = words.len();
        let drawn = rng.gen_range(spec.noise_token_count.0..=spec.noise_token_count.1);
        let total = (planted + drawn).clamp(spec.doc_length.0.max(planted), spec.doc_length.1);
        for _ in planted..total {
            if rng.gen_bool(0.05) {
                // numeric filler that preprocessing removes
                words.push(format!("{}.{}", rng.gen_range(1..200), rng.gen_range(0..10)));
            } else {
                words.push(noise_word(rng.gen_range(0..spec.noise_vocab_size)));
            }
        }
        words.shuffle(&mut rng);
        for w in words.iter_mut() {
            if rng.gen_bool(0.1) {
                let mut chars = w.chars();
                if let Some(first) = chars.next() {
                    *w = first.to_uppercase().chain(chars).collect();
                }
            }
        }
        documents.push(Document {
            doc_id: format!("d{d:06}"),
            patient_id: format!("p{:05}", owners[d]),
            raw_text: words.join(" "),
            tokens: Vec::new(),
            codes: codes.iter().map(|&r| code_ids[r].clone()).collect::<BTreeSet<_>>(),
        });
    }

    let mut entries = BTreeMap::new();
    for (rank, id) in code_ids.iter().enumerate() {
        let letter = spec.chapter_letter(rank);
        entries.insert(
            id.clone(),
            CodeEntry {
                description: format!("synthetic condition {rank}"),
                chapter_id: format!("{letter}00-{letter}99"),
                chapter_label: format!("Synthetic chapter {letter}"),
                category: id[..3].to_string(),
                kind: if rank % 7 == 6 {
                    CodeKind::Procedure
                } else {
                    CodeKind::Diagnosis
                },
                version: IcdVersion::Icd10,
            },
        );
    }
    Ok(Corpus::new(documents)?.with_code_system(CodeSystem { entries }))
}
