//! Manifest-driven data loading shared by the training loops.

use crate::config::ModelConfig;
use crate::conformer::{encode, tap_names};
use crate::error::{ModelError, Result};
use indexmap::IndexMap;
use vsr_core::corpus::{load_utterance, ManifestEntry, Utterance};
use vsr_core::grad::Session;
use vsr_core::store::ParameterStore;
use vsr_core::tensor::Tensor;
use vsr_core::vision::center_crop;

/// Rendered utterances carry a 36x36 margin; clips enter the vision
/// pipeline as 32x32 center crops and are augmented down to 28x28.
pub const LOAD_SIZE: usize = 32;

#[derive(Debug, Clone)]
pub struct LoadedClip {
    pub id: String,
    /// [T, 32, 32]
    pub clip: Tensor<f32>,
    pub word_label: Option<usize>,
    pub transcript: Option<Vec<usize>>,
    pub utterance: Utterance,
}

pub fn load_clip(entry: &ManifestEntry) -> Result<LoadedClip> {
    let u = load_utterance(entry)?;
    let clip = center_crop(&u.frames, (LOAD_SIZE, LOAD_SIZE))?;
    Ok(LoadedClip {
        id: u.id.clone(),
        clip,
        word_label: u.word_label,
        transcript: u.transcript.clone(),
        utterance: u,
    })
}

pub fn load_clips<'a>(entries: impl Iterator<Item = &'a ManifestEntry>) -> Result<Vec<LoadedClip>> {
    entries.map(load_clip).collect()
}

/// Feature width of a tap for a given config.
pub fn tap_dim(cfg: &ModelConfig, tap: &str) -> Result<usize> {
    let valid = tap_names(cfg);
    if !valid.iter().any(|t| t == tap) {
        return Err(ModelError::UnknownTap(tap.to_string(), valid.join(", ")));
    }
    match tap {
        "res-b3" => {
            let idx = cfg.res_stages.len().saturating_sub(2);
            Ok(cfg.res_stages[idx].0)
        }
        _ => Ok(cfg.d_model),
    }
}

/// Deterministic (dropout-off) encoder evaluation returning the final
/// features and every tap.
pub fn eval_encode(
    params: &ParameterStore,
    cfg: &ModelConfig,
    clip: &Tensor<f32>,
) -> Result<(Tensor<f32>, IndexMap<String, Tensor<f32>>)> {
    let s: Session<f32> = Session::new(params, false, None);
    let x = s.input(clip.clone());
    let mut taps = IndexMap::new();
    let out = encode(&s, cfg, x, &mut taps)?;
    let tap_values = taps.into_iter().map(|(k, v)| (k, s.tape.value(v))).collect();
    Ok((s.tape.value(out), tap_values))
}

/// Intermediate activations at one named tap, dropout disabled.
pub fn tap_features(
    params: &ParameterStore,
    cfg: &ModelConfig,
    tap: &str,
    clip: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    tap_dim(cfg, tap)?; // validates the name
    let (_, taps) = eval_encode(params, cfg, clip)?;
    taps.get(tap)
        .cloned()
        .ok_or_else(|| ModelError::UnknownTap(tap.to_string(), tap_names(cfg).join(", ")))
}

/// Copy every `encoder/` entry of `source` into `dest` (overwriting).
pub fn load_encoder_from(dest: &mut ParameterStore, source: &ParameterStore) -> Result<usize> {
    let names: Vec<String> = source
        .names()
        .filter(|n| n.starts_with("encoder/"))
        .map(|s| s.to_string())
        .collect();
    if names.is_empty() {
        return Err(ModelError::invalid("load_encoder", "checkpoint has no encoder/ entries"));
    }
    let mut n = 0;
    for name in names {
        let t: Tensor<f32> = source.get_tensor(&name)?;
        if dest.contains(&name) {
            dest.set(&name, vsr_core::TensorData::from_tensor(t))?;
        } else {
            dest.insert_tensor(name, t)?;
        }
        n += 1;
    }
    Ok(n)
}

/// SHA-256 over the serialized encoder/ subtree (frozen-regime proof).
pub fn encoder_hash(params: &ParameterStore) -> Result<String> {
    Ok(params.subtree("encoder/").content_hash())
}
