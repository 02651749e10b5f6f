use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{backprop_dense, bce_loss, dropout_mask, forward, forward_masked, scatter_embedding};
use super::optim::{lr_schedule, AdamW};
use super::params::{load_embeddings, Parameters};
use super::{Architecture, ModelConfig};
use crate::corpus::{tokenize, Corpus, Document};
use crate::error::{Error, Result};
use crate::metrics::PredictionSet;
use crate::splitter::{SplitAssignment, Subset};
use crate::tuner::{tune, BoundarySweep, DEFAULT_GRID_STEP};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

const MAGIC: &[u8; 8] = b"MDCPARAM";
const FORMAT_VERSION: u32 = 1;

/// Token-to-index map built from the training documents. Index 0 is
/// padding, index 1 stands for unseen tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a [String]>) -> Self {
        let seen: BTreeSet<&str> = docs.into_iter().flatten().map(String::as_str).collect();
        let tokens = ["<pad>", "<unk>"]
            .into_iter()
            .chain(seen)
            .map(str::to_string)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Maps tokens to indices; an empty document becomes a single unknown
    /// token so every document has at least one position.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        if tokens.is_empty() {
            return vec![UNK];
        }
        tokens.iter().map(|t| self.get(t).unwrap_or(UNK)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_updates: usize,
    pub seed: u64,
    pub max_words: usize,
    pub boundary_tuning: bool,
    pub grid_step: f64,
    pub pretrained_embeddings: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-3,
            dropout: 0.2,
            batch_size: 8,
            epochs: 20,
            warmup_updates: 2000,
            seed: 0,
            max_words: 4000,
            boundary_tuning: true,
            grid_step: DEFAULT_GRID_STEP,
            pretrained_embeddings: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.max_words == 0 {
            return Err(Error::invalid("epochs, batch_size and max_words must be at least 1"));
        }
        Ok(())
    }
}

/// Everything needed to score new documents.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub codes: Vec<String>,
    pub max_words: usize,
    pub boundary: f64,
    pub params: Parameters,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    codes: Vec<String>,
    max_words: usize,
    boundary: f64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl TrainedModel {
    /// Layout: magic, format version (u32 LE), manifest length (u64 LE),
    /// JSON manifest, then every tensor as f64 LE in manifest order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = Manifest {
            version: FORMAT_VERSION,
            config: self.config,
            vocab: self.vocab.tokens.clone(),
            codes: self.codes.clone(),
            max_words: self.max_words,
            boundary: self.boundary,
            tensors: self
                .params
                .shapes()
                .into_iter()
                .map(|(name, shape)| TensorEntry { name, shape })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        out.write_all(MAGIC).map_err(io)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        out.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        out.write_all(&json).map_err(io)?;
        for (_, data) in self.params.tensors() {
            for v in data {
                out.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut input = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::invalid(format!("{} is not a parameter file", path.display())));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word).map_err(io)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported parameter format version {version}")));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len).map_err(io)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        input.read_exact(&mut json).map_err(io)?;
        let manifest: Manifest = serde_json::from_slice(&json)?;

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = Parameters::init(&manifest.config, &mut rng)?;
        let expected = params.shapes();
        if expected.len() != manifest.tensors.len()
            || expected
                .iter()
                .zip(&manifest.tensors)
                .any(|((n, s), e)| *n != e.name || *s != e.shape)
        {
            return Err(Error::ShapeMismatch("tensor manifest does not match the model config".into()));
        }
        let mut buf = [0u8; 8];
        for (_, data) in params.tensors_mut() {
            for v in data.iter_mut() {
                input.read_exact(&mut buf).map_err(io)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        if input.read(&mut buf).map_err(io)? != 0 {
            return Err(Error::invalid("trailing bytes after the last tensor"));
        }
        if !params.is_finite() {
            return Err(Error::Numeric("parameter file holds non-finite values".into()));
        }
        Ok(TrainedModel {
            config: manifest.config,
            vocab: Vocabulary::from_tokens(manifest.vocab),
            codes: manifest.codes,
            max_words: manifest.max_words,
            boundary: manifest.boundary,
            params,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub val: PredictionSet,
    pub test: PredictionSet,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub first_batch_loss: f64,
    pub sweep: Option<BoundarySweep>,
}

fn document_tokens(doc: &Document, max_words: usize) -> Vec<String> {
    if doc.tokens.is_empty() {
        tokenize(&doc.raw_text, max_words)
    } else {
        doc.tokens.iter().take(max_words).cloned().collect()
    }
}

fn target_row(doc: &Document, code_index: &HashMap<&str, usize>, n_codes: usize) -> Vec<bool> {
    let mut row = vec![false; n_codes];
    for code in &doc.codes {
        if let Some(&i) = code_index.get(code.as_str()) {
            row[i] = true;
        }
    }
    row
}

/// Trains on the documents assigned to `Subset::Train` and scores the
/// validation and test documents. Documents missing from the assignment are
/// ignored.
pub fn train(
    corpus: &Corpus,
    split: &SplitAssignment,
    architecture: &Architecture,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.code_universe.is_empty() {
        return Err(Error::EmptyCodeUniverse);
    }
    let subset_docs = |s: Subset| -> Vec<&Document> {
        let ids = split.docs_in(s);
        corpus
            .documents
            .iter()
            .filter(|d| ids.contains(d.doc_id.as_str()))
            .collect()
    };
    let train_docs = subset_docs(Subset::Train);
    if train_docs.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let train_tokens: Vec<Vec<String>> = train_docs
        .iter()
        .map(|d| document_tokens(d, config.max_words))
        .collect();
    let vocab = Vocabulary::build(train_tokens.iter().map(Vec::as_slice));
    let codes = corpus.code_universe.clone();
    let model_config = architecture.resolve(vocab.len(), codes.len())?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Parameters::init(&model_config, &mut rng)?;
    if let Some(path) = &config.pretrained_embeddings {
        let (dim, vectors) = load_embeddings(path)?;
        if dim != model_config.d_e {
            return Err(Error::ShapeMismatch(format!(
                "pretrained vectors have {dim} dimensions, model uses {}",
                model_config.d_e
            )));
        }
        for (i, token) in vocab.tokens().iter().enumerate() {
            if let Some(v) = vectors.get(token) {
                params.embedding.row_mut(i).assign(&ndarray::ArrayView1::from(v.as_slice()));
            }
        }
    }

    let code_index: HashMap<&str, usize> = codes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let sequences: Vec<Vec<usize>> = train_tokens.iter().map(|t| vocab.encode(t)).collect();
    let targets: Vec<Vec<bool>> = train_docs
        .iter()
        .map(|d| target_row(d, &code_index, codes.len()))
        .collect();

    let batches_per_epoch = sequences.len().div_ceil(config.batch_size);
    let total = batches_per_epoch * config.epochs;
    // validate the schedule before spending any work
    lr_schedule(0, total, config.warmup_updates, config.lr)?;

    let d_h = model_config.d_h();
    let mut optimizer = AdamW::new(&params);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut first_batch_loss = None;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let masks: Vec<Option<Array2<f64>>> = batch
                .iter()
                .map(|&i| {
                    (config.dropout > 0.0)
                        .then(|| dropout_mask(&mut rng, d_h, sequences[i].len(), config.dropout))
                })
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let per_doc: Vec<Result<(f64, Parameters, Array2<f64>, super::ForwardTrace)>> = batch
                .par_iter()
                .zip(masks.par_iter())
                .map(|(&i, mask)| {
                    let seq = &sequences[i];
                    let trace = forward_masked(&params, &model_config, seq, &vec![true; seq.len()], mask.as_ref())?;
                    let loss = bce_loss(trace.probabilities.as_slice().unwrap(), &targets[i]);
                    let mut grad = params.zeros_without_embedding();
                    let d_x = backprop_dense(&trace, &params, &model_config, &targets[i], scale, &mut grad)?;
                    Ok((loss, grad, d_x, trace))
                })
                .collect();
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for item in per_doc {
                let (loss, mut grad, d_x, trace) = item?;
                batch_loss += loss;
                grads.add_dense(&mut grad);
                scatter_embedding(&trace, &d_x, &mut grads.embedding);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numeric("training loss is not finite".into()));
            }
            first_batch_loss.get_or_insert(batch_loss * scale);
            epoch_loss += batch_loss;
            let step = optimizer.steps_taken() as usize + 1;
            let lr = lr_schedule(step, total, config.warmup_updates, config.lr)?;
            optimizer.step(&mut params, &grads, lr, config.weight_decay)?;
        }
        epoch_losses.push(epoch_loss / sequences.len() as f64);
    }
    if !params.is_finite() {
        return Err(Error::Numeric("parameters diverged".into()));
    }

    let mut model = TrainedModel {
        config: model_config,
        vocab,
        codes,
        max_words: config.max_words,
        boundary: 0.5,
        params,
    };
    let val = predict(&model, &subset_docs(Subset::Val), config.batch_size)?;
    let test = predict(&model, &subset_docs(Subset::Test), config.batch_size)?;
    let sweep = if config.boundary_tuning {
        let sweep = tune(&val, config.grid_step)?;
        model.boundary = sweep.best_boundary;
        Some(sweep)
    } else {
        None
    };
    Ok(TrainOutcome {
        model,
        val,
        test,
        epoch_losses,
        first_batch_loss: first_batch_loss.unwrap_or(f64::NAN),
        sweep,
    })
}

/// Sigmoid scores for each sequence, one row per sequence. Sequences are
/// scored independently, so `batch_size` only groups the parallel work.
pub fn predict_sequences(
    params: &Parameters,
    config: &ModelConfig,
    sequences: &[Vec<usize>],
    batch_size: usize,
) -> Result<Array2<f64>> {
    let mut scores = Array2::zeros((sequences.len(), config.n_labels));
    for (b, chunk) in sequences.chunks(batch_size.max(1)).enumerate() {
        let rows: Vec<Result<ndarray::Array1<f64>>> = chunk
            .par_iter()
            .map(|seq| forward(params, config, seq).map(|t| t.probabilities))
            .collect();
        for (j, row) in rows.into_iter().enumerate() {
            scores.row_mut(b * batch_size.max(1) + j).assign(&row?);
        }
    }
    Ok(scores)
}

/// Scores documents with a trained model. Targets keep only the codes the
/// model knows.
pub fn predict(model: &TrainedModel, docs: &[&Document], batch_size: usize) -> Result<PredictionSet> {
    let sequences: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| model.vocab.encode(&document_tokens(d, model.max_words)))
        .collect();
    let scores = predict_sequences(&model.params, &model.config, &sequences, batch_size)?;
    let code_index: HashMap<&str, usize> = model
        .codes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut targets = Array2::from_elem((docs.len(), model.codes.len()), false);
    for (r, doc) in docs.iter().enumerate() {
        for (c, t) in target_row(doc, &code_index, model.codes.len()).into_iter().enumerate() {
            targets[[r, c]] = t;
        }
    }
    // sigmoid can round to exactly 0 or 1, both inside the valid range
    PredictionSet::new(
        docs.iter().map(|d| d.doc_id.clone()).collect(),
        model.codes.clone(),
        scores,
        targets,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_reserves_pad_and_unk() {
        let docs = [vec!["fever".to_string(), "cough".to_string()], vec!["fever".to_string()]];
        let vocab = Vocabulary::build(docs.iter().map(Vec::as_slice));
        assert_eq!(vocab.tokens(), ["<pad>", "<unk>", "cough", "fever"]);
        assert_eq!(vocab.encode(&["fever".into(), "rash".into()]), vec![3, UNK]);
        assert_eq!(vocab.encode(&[]), vec![UNK]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
