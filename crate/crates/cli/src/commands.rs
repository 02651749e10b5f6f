use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use medcode::analysis::{
    bin_points, chapter_report, code_frequency_correlation, doc_length_correlation, frequency_points,
    length_points, mcnemar_bonferroni, never_predicted, pair_count, training_size_curve, write_bins_csv,
    write_size_curve_csv,
};
use medcode::corpus::{self, CodeSystem, Corpus};
use medcode::metrics::{evaluate as evaluate_metrics, MacroFormula, MissingClass, PredictionSet};
use medcode::models::train as train_model;
use medcode::splitter::{audit, stratified_split, SplitAssignment, Subset};
use medcode::tuner;
use serde::Serialize;
use serde_json::json;

use crate::config::Loaded;
use crate::CliError;

fn output_dir(loaded: &Loaded) -> Result<&Path, CliError> {
    let dir = loaded.config.paths.output_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| medcode::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(medcode::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| {
        CliError::Core(medcode::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

/// Raw corpus with its code system attached, if one is configured.
fn raw_corpus(loaded: &Loaded) -> Result<Corpus, CliError> {
    let paths = &loaded.config.paths;
    let mut corpus = corpus::ingest(&paths.corpus)?;
    if let Some(path) = &paths.code_system {
        corpus = corpus.with_code_system(CodeSystem::load_csv(path)?);
    }
    Ok(corpus)
}

/// Tokenized corpus with rare codes removed.
fn prepared_corpus(loaded: &Loaded) -> Result<Corpus, CliError> {
    let raw = raw_corpus(loaded)?;
    let tokenized = corpus::preprocess(&raw, loaded.config.preprocessing.max_words)?;
    Ok(corpus::filter_rare_codes(&tokenized, loaded.config.split.min_code_count)?)
}

/// Reads `split.csv` from the output dir, or computes and writes it.
fn load_or_make_split(loaded: &Loaded, corpus: &Corpus) -> Result<SplitAssignment, CliError> {
    let cfg = &loaded.config.split;
    let path = loaded.config.paths.output_dir.join("split.csv");
    if path.exists() {
        Ok(SplitAssignment::read_csv(&path, cfg.ratios, cfg.seed)?)
    } else {
        loaded.require("split.seed")?;
        let split = stratified_split(corpus, cfg.ratios, cfg.seed)?;
        split.write_csv(&path)?;
        Ok(split)
    }
}

/// Boundary from the config, or else the tuned one in `tune.json`.
fn resolve_boundary(loaded: &Loaded) -> Result<f64, CliError> {
    if let Some(b) = loaded.config.evaluation.boundary {
        return Ok(b);
    }
    let path = loaded.config.paths.output_dir.join("tune.json");
    let text = fs::read_to_string(&path).map_err(|_| {
        CliError::Config("no boundary: set evaluation.boundary or run `tune` first".into())
    })?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(medcode::Error::from)?;
    v["best_boundary"]
        .as_f64()
        .ok_or_else(|| CliError::Config(format!("{} lacks best_boundary", path.display())))
}

fn train_counts(corpus: &Corpus, split: &SplitAssignment) -> BTreeMap<String, usize> {
    let train = split.docs_in(Subset::Train);
    let mut counts = BTreeMap::new();
    for doc in corpus.documents.iter().filter(|d| train.contains(d.doc_id.as_str())) {
        for code in &doc.codes {
            *counts.entry(code.clone()).or_insert(0) += 1;
        }
    }
    counts
}

pub fn synth(loaded: &Loaded) -> Result<(), CliError> {
    loaded.require("synth.seed")?;
    let corpus = corpus::synthesize(&loaded.config.synth)?;
    let paths = &loaded.config.paths;
    for path in std::iter::once(&paths.corpus).chain(paths.code_system.as_ref()) {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| medcode::Error::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
    }
    corpus::emit(&corpus, &paths.corpus)?;
    if let (Some(path), Some(system)) = (&paths.code_system, &corpus.code_system) {
        system.write_csv(path)?;
    }
    println!(
        "wrote {} documents with {} codes to {}",
        corpus.len(),
        corpus.code_universe.len(),
        paths.corpus.display()
    );
    Ok(())
}

pub fn stats(loaded: &Loaded) -> Result<(), CliError> {
    let dir = output_dir(loaded)?;
    let raw = raw_corpus(loaded)?;
    let before = corpus::stats(&raw, false)?;
    let after = corpus::stats(&prepared_corpus(loaded)?, true)?;
    let report = json!({ "raw": before, "preprocessed": after });
    write_json(&dir.join("stats.json"), &report)?;
    println!("{:<14}{:>10}{:>10}{:>8}{:>22}{:>26}", "", "documents", "patients", "codes", "codes/doc (q1,med,q3)", "words/doc (q1,med,q3)");
    for (name, s) in [("raw", &before), ("preprocessed", &after)] {
        println!(
            "{:<14}{:>10}{:>10}{:>8}{:>22}{:>26}",
            name,
            s.n_documents,
            s.n_patients,
            s.n_unique_codes,
            format!("{}, {}, {}", s.codes_per_instance.q1, s.codes_per_instance.median, s.codes_per_instance.q3),
            format!("{}, {}, {}", s.words_per_document.q1, s.words_per_document.median, s.words_per_document.q3),
        );
    }
    Ok(())
}

pub fn split(loaded: &Loaded) -> Result<(), CliError> {
    loaded.require("split.seed")?;
    let dir = output_dir(loaded)?;
    let corpus = prepared_corpus(loaded)?;
    let cfg = &loaded.config.split;
    let split = stratified_split(&corpus, cfg.ratios, cfg.seed)?;
    split.write_csv(&dir.join("split.csv"))?;
    let report = audit(&corpus, &split)?;
    write_json(&dir.join("split_audit.json"), &report)?;
    println!("{:<8}{:>10}{:>10}{:>10}{:>16}", "subset", "documents", "fraction", "patients", "missing codes");
    for s in &report.subsets {
        println!(
            "{:<8}{:>10}{:>10.4}{:>10}{:>15.1}%",
            s.subset.as_str(),
            s.n_documents,
            s.fraction,
            s.n_patients,
            100.0 * s.missing_codes
        );
    }
    println!("patient overlap: {}", report.patient_overlap);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

pub fn train(loaded: &Loaded) -> Result<(), CliError> {
    loaded.require("training.seed")?;
    let started = Instant::now();
    let dir = output_dir(loaded)?;
    let corpus = prepared_corpus(loaded)?;
    let split = load_or_make_split(loaded, &corpus)?;
    let outcome = train_model(&corpus, &split, &loaded.config.model, &loaded.config.training)?;
    outcome.model.save(&dir.join("model.bin"))?;
    outcome.val.write(&dir.join("preds_val.json"))?;
    outcome.test.write(&dir.join("preds_test.json"))?;
    if let Some(sweep) = &outcome.sweep {
        sweep.write_csv(&dir.join("sweep.csv"))?;
        write_json(&dir.join("tune.json"), &tune_summary(sweep, loaded.config.training.grid_step))?;
    }
    let manifest = json!({
        "config_hash": loaded.hash(),
        "config": loaded.config,
        "n_train_documents": split.docs_in(Subset::Train).len(),
        "vocab_size": outcome.model.config.vocab_size,
        "n_codes": outcome.model.codes.len(),
        "epoch_losses": outcome.epoch_losses,
        "first_batch_loss": outcome.first_batch_loss,
        "boundary": outcome.model.boundary,
    });
    write_json(&dir.join("train_manifest.json"), &manifest)?;
    let last = outcome.epoch_losses.last().copied().unwrap_or(f64::NAN);
    println!("final training loss {last:.6}, boundary {}", outcome.model.boundary);
    // wall-clock time varies between runs, so it stays out of the output files
    eprintln!("train: {:.2} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn tune_summary(sweep: &tuner::BoundarySweep, grid_step: f64) -> serde_json::Value {
    json!({
        "grid_step": grid_step,
        "n_points": sweep.grid.len(),
        "best_boundary": sweep.best_boundary,
        "best_micro_f1": sweep.best_micro_f1,
    })
}

pub fn tune(loaded: &Loaded, preds: Option<PathBuf>) -> Result<(), CliError> {
    let dir = output_dir(loaded)?;
    let path = preds.unwrap_or_else(|| dir.join("preds_val.json"));
    let val = PredictionSet::read(&path)?;
    let step = loaded.config.training.grid_step;
    let sweep = tuner::tune(&val, step)?;
    sweep.write_csv(&dir.join("sweep.csv"))?;
    write_json(&dir.join("tune.json"), &tune_summary(&sweep, step))?;
    println!(
        "best boundary {} (micro F1 {:.4}) over {} points",
        sweep.best_boundary,
        sweep.best_micro_f1,
        sweep.grid.len()
    );
    Ok(())
}

pub fn apply_policy_flags(
    loaded: &mut Loaded,
    boundary: Option<f64>,
    macro_formula: Option<String>,
    missing_class: Option<String>,
) -> Result<(), CliError> {
    let eval = &mut loaded.config.evaluation;
    if let Some(b) = boundary {
        if !(b > 0.0 && b < 1.0) {
            return Err(CliError::Config(format!("--boundary must lie in (0, 1), got {b}")));
        }
        eval.boundary = Some(b);
    }
    if let Some(m) = macro_formula {
        eval.macro_formula = match m.as_str() {
            "arithmetic" => MacroFormula::Arithmetic,
            "harmonic" | "harmonic_of_means" => MacroFormula::HarmonicOfMeans,
            other => return Err(CliError::Config(format!("unknown macro formula {other:?}"))),
        };
    }
    if let Some(m) = missing_class {
        eval.missing_class = match m.as_str() {
            "ignore" => MissingClass::Ignore,
            "zero_fill" => MissingClass::ZeroFill,
            other => return Err(CliError::Config(format!("unknown missing-class policy {other:?}"))),
        };
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "preds".into())
}

pub fn evaluate(loaded: &Loaded, preds: Option<PathBuf>) -> Result<(), CliError> {
    let dir = output_dir(loaded)?;
    let path = preds.unwrap_or_else(|| dir.join("preds_test.json"));
    let set = PredictionSet::read(&path)?;
    let policy = loaded.policy(resolve_boundary(loaded)?);
    let report = evaluate_metrics(&set, &policy, &loaded.config.evaluation.ks)?;
    let name = stem(&path);
    write_json(&dir.join(format!("report_{name}.json")), &report)?;
    let markdown = report.to_markdown();
    write_text(&dir.join(format!("report_{name}.md")), &markdown)?;
    print!("{markdown}");
    Ok(())
}

/// A sub-analysis that may be impossible on a given corpus (for example
/// too few documents in the length band) without failing the others.
#[derive(Serialize)]
#[serde(untagged)]
enum Partial<T> {
    Done(T),
    Failed { error: String },
}

impl<T> From<medcode::Result<T>> for Partial<T> {
    fn from(r: medcode::Result<T>) -> Self {
        match r {
            Ok(v) => Partial::Done(v),
            Err(e) => Partial::Failed { error: e.to_string() },
        }
    }
}

pub fn analyze_errors(loaded: &Loaded, preds: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = &loaded.config.analysis;
    if cfg.chapters && loaded.config.paths.code_system.is_none() {
        return Err(CliError::Config(
            "the chapter report needs paths.code_system (or set analysis.chapters to false)".into(),
        ));
    }
    let dir = output_dir(loaded)?;
    let path = preds.unwrap_or_else(|| dir.join("preds_test.json"));
    let set = PredictionSet::read(&path)?;
    let boundary = resolve_boundary(loaded)?;
    let policy = loaded.policy(boundary);
    let report = evaluate_metrics(&set, &policy, &loaded.config.evaluation.ks)?;
    let corpus = prepared_corpus(loaded)?;
    let split = load_or_make_split(loaded, &corpus)?;
    let counts = train_counts(&corpus, &split);

    let words: BTreeMap<&str, usize> = corpus
        .documents
        .iter()
        .map(|d| (d.doc_id.as_str(), d.tokens.len()))
        .collect();
    let word_counts = set
        .doc_ids
        .iter()
        .map(|id| {
            words
                .get(id.as_str())
                .copied()
                .ok_or_else(|| medcode::Error::UnknownDocument(id.clone()))
        })
        .collect::<medcode::Result<Vec<usize>>>()?;

    let chapters = if cfg.chapters {
        let system = corpus
            .code_system
            .as_ref()
            .expect("code system is loaded whenever its path is set");
        Some(chapter_report(&report, system, &counts, cfg.min_occurrences)?)
    } else {
        None
    };
    let frequency: Partial<_> = code_frequency_correlation(&report, &counts).into();
    let length: Partial<_> =
        doc_length_correlation(&set, &word_counts, boundary, cfg.min_words, cfg.max_words).into();
    let analysis = json!({
        "boundary": boundary,
        "frequency_correlation": frequency,
        "length_correlation": length,
        "never_predicted": never_predicted(&set, boundary),
        "chapters": chapters,
    });
    let name = stem(&path);
    write_json(&dir.join(format!("analysis_{name}.json")), &analysis)?;

    let (freq_points, _) = frequency_points(&report, &counts);
    let xy: Vec<(f64, f64)> = freq_points.iter().map(|p| (p.1, p.2)).collect();
    write_bins_csv(
        &dir.join(format!("frequency_f1_{name}.csv")),
        &bin_points(&xy, cfg.n_bins)?,
        ["log_freq_lo", "log_freq_hi", "n_codes", "mean_f1", "std_f1"],
    )?;
    let (len_points, _) = length_points(&set, &word_counts, boundary, cfg.min_words, cfg.max_words)?;
    let xy: Vec<(f64, f64)> = len_points.iter().map(|p| (p.0 as f64, p.1)).collect();
    write_bins_csv(
        &dir.join(format!("length_f1_{name}.csv")),
        &bin_points(&xy, cfg.n_bins)?,
        ["words_lo", "words_hi", "n_documents", "mean_f1", "std_f1"],
    )?;
    println!("{}", serde_json::to_string_pretty(&analysis).map_err(medcode::Error::from)?);
    Ok(())
}

pub fn analyze_mcnemar(loaded: &Loaded, preds: &[PathBuf]) -> Result<(), CliError> {
    let dir = output_dir(loaded)?;
    let boundary = resolve_boundary(loaded)?;
    let sets = preds
        .iter()
        .map(|p| PredictionSet::read(p))
        .collect::<medcode::Result<Vec<_>>>()?;
    let n_comparisons = pair_count(sets.len());
    let cfg = &loaded.config.analysis;
    let mut rows = Vec::new();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            let result = mcnemar_bonferroni(&sets[i], &sets[j], boundary, n_comparisons, cfg.mcnemar_unit, cfg.alpha)?;
            println!(
                "{} vs {}: b={} c={} p={:.3e} corrected={:.3e}{}",
                preds[i].display(),
                preds[j].display(),
                result.b,
                result.c,
                result.raw_p,
                result.corrected_p,
                if result.significant { " *" } else { "" }
            );
            rows.push(json!({
                "a": preds[i].display().to_string(),
                "b": preds[j].display().to_string(),
                "result": result,
            }));
        }
    }
    write_json(
        &dir.join("mcnemar.json"),
        &json!({
            "boundary": boundary,
            "unit": cfg.mcnemar_unit,
            "n_comparisons": n_comparisons,
            "pairs": rows,
        }),
    )
}

pub fn analyze_size_curve(loaded: &Loaded) -> Result<(), CliError> {
    loaded.require("training.seed")?;
    let sizes = &loaded.config.analysis.train_sizes;
    if sizes.is_empty() {
        return Err(CliError::Config("analysis.train_sizes is empty".into()));
    }
    let dir = output_dir(loaded)?;
    let corpus = prepared_corpus(loaded)?;
    let split = load_or_make_split(loaded, &corpus)?;
    let points = training_size_curve(&corpus, &split, sizes, &loaded.config.model, &loaded.config.training)?;
    write_size_curve_csv(&dir.join("size_curve.csv"), &points)?;
    write_json(&dir.join("size_curve.json"), &points)?;
    for p in &points {
        println!("{:>8} docs: micro F1 {:.4}, macro F1 {:.4} (boundary {})", p.size, p.micro_f1, p.macro_f1, p.boundary);
    }
    Ok(())
}
