use std::fs;
use std::path::{Path, PathBuf};

use medcode::analysis::{McNemarUnit, DEFAULT_MIN_OCCURRENCES};
use medcode::corpus::SyntheticSpec;
use medcode::metrics::{MacroFormula, MetricPolicy, MissingClass};
use medcode::models::{Architecture, Decoder, Encoder, TrainConfig};
use medcode::splitter::DEFAULT_RATIOS;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    #[serde(default)]
    pub code_system: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocessing {
    pub max_words: usize,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing { max_words: 4000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub min_code_count: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: DEFAULT_RATIOS,
            min_code_count: 1,
            seed: 0,
        }
    }
}

/// Metric policy plus ranking cutoffs. A missing boundary means "use the
/// tuned boundary from `tune.json`".
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub boundary: Option<f64>,
    pub macro_formula: MacroFormula,
    pub missing_class: MissingClass,
    pub ks: Vec<usize>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            boundary: None,
            macro_formula: MacroFormula::Arithmetic,
            missing_class: MissingClass::Ignore,
            ks: vec![5, 8, 15],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub min_words: usize,
    pub max_words: usize,
    pub min_occurrences: usize,
    pub n_bins: usize,
    pub chapters: bool,
    pub mcnemar_unit: McNemarUnit,
    pub alpha: f64,
    pub train_sizes: Vec<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            min_words: 1000,
            max_words: 4000,
            min_occurrences: DEFAULT_MIN_OCCURRENCES,
            n_bins: 10,
            chapters: true,
            mcnemar_unit: McNemarUnit::Cell,
            alpha: 0.001,
            train_sizes: Vec::new(),
        }
    }
}

fn default_architecture() -> Architecture {
    Architecture {
        d_e: 32,
        encoder: Encoder::Conv { window: 3, d_h: 32 },
        decoder: Decoder::LaCaml,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: Paths,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default = "default_architecture")]
    pub model: Architecture,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub synth: SyntheticSpec,
}

/// A resolved configuration together with the JSON it was built from.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub raw: Value,
}

impl Loaded {
    /// SHA-256 of the canonical (key-sorted, compact) JSON of the resolved
    /// configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&serde_json::to_value(&self.config).unwrap()).unwrap();
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Fails unless the config file (after overrides) states `path` itself.
    pub fn require(&self, path: &str) -> Result<(), CliError> {
        let mut node = &self.raw;
        for key in path.split('.') {
            node = node
                .get(key)
                .ok_or_else(|| CliError::Config(format!("{path} must be set explicitly")))?;
        }
        Ok(())
    }

    pub fn policy(&self, boundary: f64) -> MetricPolicy {
        MetricPolicy {
            boundary,
            macro_formula: self.config.evaluation.macro_formula,
            missing_class: self.config.evaluation.missing_class,
        }
    }
}

/// Splits `--a.b=value` arguments from the rest of the command line.
pub fn extract_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let dotted = arg.strip_prefix("--").and_then(|body| {
            let (key, value) = body.split_once('=')?;
            key.contains('.').then(|| (key.to_string(), value.to_string()))
        });
        match dotted {
            Some(kv) => overrides.push(kv),
            None => rest.push(arg),
        }
    }
    (rest, overrides)
}

/// Sets `key` (dotted path) to `value`, parsed as JSON when possible and
/// taken as a string otherwise.
fn apply_override(root: &mut Value, key: &str, value: &str) -> Result<(), CliError> {
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("cannot override {key}: {part} is not inside an object")))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one part")
}

pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Loaded, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut raw: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for (key, value) in overrides {
        apply_override(&mut raw, key, value)?;
    }
    let config: ExperimentConfig =
        serde_json::from_value(raw.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    validate(&config)?;
    Ok(Loaded { config, raw })
}

fn validate(config: &ExperimentConfig) -> Result<(), CliError> {
    let bad = |e: medcode::Error| CliError::Config(e.to_string());
    if config.preprocessing.max_words == 0 {
        return Err(CliError::Config("preprocessing.max_words must be at least 1".into()));
    }
    if config.training.max_words != config.preprocessing.max_words {
        return Err(CliError::Config(
            "training.max_words must equal preprocessing.max_words".into(),
        ));
    }
    if config.split.min_code_count == 0 {
        return Err(CliError::Config("split.min_code_count must be at least 1".into()));
    }
    config.training.validate().map_err(bad)?;
    config.synth.validate().map_err(bad)?;
    if let Some(b) = config.evaluation.boundary {
        MetricPolicy {
            boundary: b,
            ..Default::default()
        }
        .validate()
        .map_err(bad)?;
    }
    if config.evaluation.ks.contains(&0) {
        return Err(CliError::Config("evaluation.ks entries must be at least 1".into()));
    }
    if config.analysis.min_words > config.analysis.max_words {
        return Err(CliError::Config("analysis.min_words exceeds analysis.max_words".into()));
    }
    Ok(())
}
