//! Experiment configuration: one JSON file per run, with dotted-key
//! command-line overrides applied on top of documented defaults.

use crate::error::{CliError, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};
use vsr_core::corpus::CorpusConfig;
use vsr_model::pretext::PretextPlan;
use vsr_model::sentence::SentencePlan;
use vsr_model::word::{Regime, WordPlan};
use vsr_model::ModelConfig;

pub const DEFAULT_TAPS: [&str; 4] = ["res-b3", "res-b4", "ce-b1", "ce-b2"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub corpus: CorpusConfig,
    /// Model preset name: "desk" or "mini".
    pub preset: String,
    /// Directory holding (or receiving) the generated corpus.
    pub corpus_dir: PathBuf,
    /// Root under which each run writes its artifact directory.
    pub out_dir: PathBuf,
    pub run_id: String,
    /// Pretext checkpoint consumed by frozen/fine-tuned runs, the tap
    /// study, and `evaluate`.
    pub checkpoint: Option<PathBuf>,
    /// Task evaluated by the `evaluate` subcommand: "word" or "sentence".
    pub task: String,
    pub pretext: PretextPlan,
    pub word: WordPlan,
    pub sentence: SentencePlan,
    /// Label fractions for the sweep; in (0, 1], ascending.
    pub fractions: Vec<f64>,
    pub taps: Vec<String>,
    pub seeds: Vec<u64>,
}

impl HarnessConfig {
    /// Baseline configuration every config file is merged onto, so
    /// files and overrides may be partial.
    pub fn template() -> Self {
        HarnessConfig {
            corpus: CorpusConfig::desk_default(),
            preset: "desk".into(),
            corpus_dir: "corpus".into(),
            out_dir: "runs".into(),
            run_id: "run".into(),
            checkpoint: None,
            task: "word".into(),
            pretext: PretextPlan::desk(0),
            word: WordPlan::desk(Regime::Supervised, 0, "run"),
            sentence: SentencePlan::desk(0, "run"),
            fractions: vec![0.05, 0.2, 1.0],
            taps: DEFAULT_TAPS.iter().map(|s| s.to_string()).collect(),
            seeds: vec![0, 1, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.preset != "desk" && self.preset != "mini" {
            return Err(CliError::config(format!("unknown preset {:?}", self.preset)));
        }
        if self.task != "word" && self.task != "sentence" {
            return Err(CliError::config(format!("unknown task {:?}", self.task)));
        }
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds must be non-empty"));
        }
        if self.fractions.is_empty() {
            return Err(CliError::config("fractions must be non-empty"));
        }
        for w in self.fractions.windows(2) {
            if w[0] >= w[1] {
                return Err(CliError::config(format!(
                    "fractions must be strictly ascending, got {:?}",
                    self.fractions
                )));
            }
        }
        if self
            .fractions
            .iter()
            .any(|&f| !(f > 0.0 && f <= 1.0))
        {
            return Err(CliError::config(format!(
                "fractions must lie in (0, 1], got {:?}",
                self.fractions
            )));
        }
        Ok(())
    }

    /// Model configuration implied by the preset, with vocabulary sizes
    /// taken from the corpus so the two can never disagree.
    pub fn model(&self) -> Result<ModelConfig> {
        let mut m = match self.preset.as_str() {
            "desk" => ModelConfig::desk(),
            "mini" => ModelConfig::mini(),
            other => return Err(CliError::config(format!("unknown preset {other:?}"))),
        };
        m.word_classes = self.corpus.word_classes;
        m.token_vocab = self.corpus.token_vocab;
        Ok(m)
    }
}

/// Merge `src` (from a config file or override) onto `dst` (the
/// template). Objects merge key-by-key and reject keys the template
/// does not have; everything else replaces the destination wholesale.
fn merge(dst: &mut Value, src: &Value, path: &str) -> Result<()> {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match d.get_mut(k) {
                    Some(slot) => merge(slot, v, &sub)?,
                    None => return Err(CliError::config(format!("unknown key: {sub}"))),
                }
            }
            Ok(())
        }
        (dst, src) => {
            *dst = src.clone();
            Ok(())
        }
    }
}

/// Apply one `dotted.key=value` override. The key path must exist in
/// the template; the value is parsed as JSON when possible and treated
/// as a bare string otherwise.
fn apply_override(root: &mut Value, token: &str) -> Result<()> {
    let (key, raw) = token
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("bad override (expected key=value): {token}")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = root;
    let segments: Vec<&str> = key.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| CliError::config(format!("unknown key: {key}")))?;
        match obj.get_mut(*seg) {
            Some(next) if i + 1 == segments.len() => {
                merge(next, &value, key)?;
                return Ok(());
            }
            Some(next) => slot = next,
            None => return Err(CliError::config(format!("unknown key: {key}"))),
        }
    }
    Err(CliError::config(format!("unknown key: {key}")))
}

/// Load a config file, merge it onto the template, apply overrides, and
/// validate the result.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<HarnessConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let file: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("config {} is not valid JSON: {e}", path.display())))?;
    let mut root = serde_json::to_value(HarnessConfig::template())
        .map_err(|e| CliError::runtime(e.to_string()))?;
    merge(&mut root, &file, "")?;
    for token in overrides {
        apply_override(&mut root, token)?;
    }
    let cfg: HarnessConfig = serde_json::from_value(root)
        .map_err(|e| CliError::config(format!("invalid config value: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
