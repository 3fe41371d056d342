//! Word-level downstream training under three regimes: supervised from
//! scratch, frozen pre-trained encoder with a trained head, and full
//! fine-tuning.

use crate::config::{init_params, ModelConfig, Parts};
use crate::conformer::encode;
use crate::data::{encoder_hash, load_clips, load_encoder_from, tap_dim, tap_features, LoadedClip};
use crate::error::{ModelError, Result};
use crate::heads::mstcn_classify;
use crate::losses::soft_ce;
use crate::metrics::{top1_accuracy, MetricRecord};
use crate::optim::Optimizer;
use vsr_core::corpus::{Manifest, Split};
use vsr_core::forward_backward;
use vsr_core::rng::RngStream;
use vsr_core::store::ParameterStore;
use vsr_core::tensor::Tensor;
use vsr_core::vision::{augment_test, augment_train, mixup, ClipBatch, Labels, MixupWeight};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Supervised,
    Frozen,
    FineTuned,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Supervised => "supervised",
            Regime::Frozen => "frozen",
            Regime::FineTuned => "finetuned",
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct WordPlan {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mixup: Option<MixupWeight>,
    /// Feature tap for the frozen regime.
    pub tap: String,
    pub seed: u64,
    pub run_id: String,
    /// Label fraction, recorded in metrics only.
    pub fraction: f64,
}

impl WordPlan {
    pub fn desk(regime: Regime, seed: u64, run_id: impl Into<String>) -> Self {
        WordPlan {
            regime,
            epochs: 4,
            batch_size: 8,
            lr: 0.0003,
            mixup: Some(MixupWeight::Beta(0.4)),
            tap: "res-b4".into(),
            seed,
            run_id: run_id.into(),
            fraction: 1.0,
        }
    }
}

#[derive(Debug)]
pub struct WordOutcome {
    pub params: ParameterStore,
    pub test_accuracy: f64,
    pub records: Vec<MetricRecord>,
    /// (before, after) encoder subtree hashes; equal in the frozen
    /// regime by construction.
    pub encoder_hashes: Option<(String, String)>,
}

fn soft_labels(labels: &Labels, n_classes: usize) -> Result<Tensor<f32>> {
    match labels {
        Labels::Soft(q) => Ok(q.clone()),
        Labels::Word(ids) => {
            let mut q = Tensor::zeros(vec![ids.len(), n_classes]);
            for (i, &l) in ids.iter().enumerate() {
                q.data_mut()[i * n_classes + l] = 1.0;
            }
            Ok(q)
        }
        Labels::Tokens(_) => Err(ModelError::invalid("word", "token labels in a word batch")),
    }
}

/// End-to-end (supervised / fine-tuned) training epoch machinery and
/// frozen-feature head training share this entry point.
pub fn run_word_downstream(
    cfg: &ModelConfig,
    manifest: &Manifest,
    plan: &WordPlan,
    checkpoint: Option<&ParameterStore>,
) -> Result<WordOutcome> {
    match plan.regime {
        Regime::Supervised => {
            if checkpoint.is_some() {
                return Err(ModelError::invalid("word", "supervised regime takes no checkpoint"));
            }
        }
        Regime::Frozen | Regime::FineTuned => {
            if checkpoint.is_none() {
                return Err(ModelError::invalid(
                    "word",
                    format!("{} regime requires a source checkpoint", plan.regime.name()),
                ));
            }
        }
    }
    let train: Vec<LoadedClip> = load_clips(manifest.split(Split::Train))?;
    let test: Vec<LoadedClip> = load_clips(manifest.split(Split::Test))?;
    if train.is_empty() || test.is_empty() {
        return Err(ModelError::invalid("word", "empty train or test split"));
    }
    match plan.regime {
        Regime::Frozen => run_frozen(cfg, plan, checkpoint.unwrap(), &train, &test),
        _ => run_end_to_end(cfg, plan, checkpoint, &train, &test),
    }
}

fn record(plan: &WordPlan, epoch: usize, metric: &str, value: f64) -> MetricRecord {
    MetricRecord {
        run_id: plan.run_id.clone(),
        task: "word".into(),
        regime: plan.regime.name().into(),
        fraction: plan.fraction,
        seed: plan.seed,
        epoch,
        metric: metric.into(),
        value,
    }
}

fn run_end_to_end(
    cfg: &ModelConfig,
    plan: &WordPlan,
    checkpoint: Option<&ParameterStore>,
    train: &[LoadedClip],
    test: &[LoadedClip],
) -> Result<WordOutcome> {
    let mut params = init_params(cfg, Parts::word(), cfg.d_model, plan.seed)?;
    if let Some(source) = checkpoint {
        load_encoder_from(&mut params, source)?;
    }
    let before = encoder_hash(&params)?;
    let mut opt = Optimizer::adamw_word();
    let mut records = Vec::new();
    let crop = (cfg.input_hw, cfg.input_hw);

    for epoch in 0..plan.epochs {
        let mut order_rng = RngStream::new(plan.seed).substream(0x30 + epoch as u64);
        let order = order_rng.permutation(train.len())?;
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(plan.batch_size).enumerate() {
            let mut aug_rng = RngStream::new(plan.seed)
                .substream(0x40 + epoch as u64)
                .substream(step as u64);
            let mut clips = Vec::new();
            let mut labels = Vec::new();
            for &i in chunk {
                clips.push(augment_train(&train[i].clip, crop, 0.5, &mut aug_rng)?);
                labels.push(train[i].word_label.ok_or_else(|| {
                    ModelError::invalid("word", format!("unlabeled clip {}", train[i].id))
                })?);
            }
            let mut batch = ClipBatch { clips, labels: Labels::Word(labels) };
            if let Some(weight) = plan.mixup {
                batch = mixup(&batch, weight, cfg.word_classes, &mut aug_rng)?;
            }
            let q = soft_labels(&batch.labels, cfg.word_classes)?;
            let drop_rng = RngStream::new(plan.seed)
                .substream(0x50 + epoch as u64)
                .substream(step as u64);
            let fb = forward_backward::<f32, _, ModelError>(&params, true, Some(drop_rng), |s| {
                let mut rows = Vec::new();
                for clip in &batch.clips {
                    let x = s.input(clip.clone());
                    let mut taps = indexmap::IndexMap::new();
                    let enc = encode(s, cfg, x, &mut taps)?;
                    rows.push(mstcn_classify(s, cfg, enc)?);
                }
                let logits = s.tape.concat_rows(&rows)?;
                soft_ce(s, logits, q.clone())
            })?;
            epoch_loss += fb.loss.item() as f64;
            batches += 1;
            opt.step(&mut params, &fb.grads, plan.lr, |_| true)?;
        }
        records.push(record(plan, epoch, "ce_loss", epoch_loss / batches.max(1) as f64));
    }
    let after = encoder_hash(&params)?;

    let test_accuracy = evaluate_word_end_to_end(cfg, &params, test)?;
    records.push(record(plan, plan.epochs, "accuracy", test_accuracy));
    Ok(WordOutcome { params, test_accuracy, records, encoder_hashes: Some((before, after)) })
}

/// Test accuracy of an end-to-end word model (deterministic center-crop
/// evaluation).
pub fn evaluate_word_end_to_end(cfg: &ModelConfig, params: &ParameterStore, test: &[LoadedClip]) -> Result<f64> {
    let crop = (cfg.input_hw, cfg.input_hw);
    let mut logits = Vec::new();
    let mut labels = Vec::new();
    for c in test {
        let clip = augment_test(&c.clip, crop)?;
        let s: vsr_core::grad::Session<f32> = vsr_core::grad::Session::new(params, false, None);
        let x = s.input(clip);
        let mut taps = indexmap::IndexMap::new();
        let enc = encode(&s, cfg, x, &mut taps)?;
        let l = mstcn_classify(&s, cfg, enc)?;
        logits.push(s.tape.value(l));
        labels.push(c.word_label.ok_or_else(|| ModelError::invalid("word", "unlabeled test clip"))?);
    }
    let n = logits.len();
    let c = logits[0].shape()[1];
    let mut all = Tensor::zeros(vec![n, c]);
    for (i, row) in logits.iter().enumerate() {
        all.data_mut()[i * c..(i + 1) * c].copy_from_slice(row.data());
    }
    top1_accuracy(&all, &labels)
}

/// Per-clip tap features under the deterministic evaluation
/// augmentation, paired with word labels. The encoder never updates in
/// the frozen regime, so features are extracted once up front.
pub fn extract_tap_features(
    cfg: &ModelConfig,
    encoder: &ParameterStore,
    tap: &str,
    clips: &[LoadedClip],
) -> Result<Vec<(Tensor<f32>, usize)>> {
    let crop = (cfg.input_hw, cfg.input_hw);
    clips
        .iter()
        .map(|c| {
            let clip = augment_test(&c.clip, crop)?;
            let f = tap_features(encoder, cfg, tap, &clip)?;
            let label = c
                .word_label
                .ok_or_else(|| ModelError::invalid("word", format!("unlabeled clip {}", c.id)))?;
            Ok((f, label))
        })
        .collect()
}

fn run_frozen(
    cfg: &ModelConfig,
    plan: &WordPlan,
    checkpoint: &ParameterStore,
    train: &[LoadedClip],
    test: &[LoadedClip],
) -> Result<WordOutcome> {
    let feature_dim = tap_dim(cfg, &plan.tap)?;
    let encoder = checkpoint.subtree("encoder/");
    if encoder.is_empty() {
        return Err(ModelError::invalid("word", "checkpoint has no encoder/ entries"));
    }
    let before = encoder_hash(&encoder)?;
    let train_feats = extract_tap_features(cfg, &encoder, &plan.tap, train)?;
    let test_feats = extract_tap_features(cfg, &encoder, &plan.tap, test)?;

    let (head, test_accuracy, records) =
        train_head_on_features(cfg, plan, feature_dim, &train_feats, &test_feats)?;
    let after = encoder_hash(&encoder)?;

    // Assemble a combined store so frozen checkpoints round-trip whole.
    let mut params = encoder;
    for name in head.names().map(|s| s.to_string()).collect::<Vec<_>>() {
        let t: Tensor<f32> = head.get_tensor(&name)?;
        params.insert_tensor(name, t)?;
    }
    Ok(WordOutcome { params, test_accuracy, records, encoder_hashes: Some((before, after)) })
}

/// Train an MS-TCN word head on precomputed frame-level features and
/// report its test accuracy. Shared by the frozen regime and any
/// fixed-feature baseline trained in the same sweep.
pub fn train_head_on_features(
    cfg: &ModelConfig,
    plan: &WordPlan,
    feature_dim: usize,
    train_feats: &[(Tensor<f32>, usize)],
    test_feats: &[(Tensor<f32>, usize)],
) -> Result<(ParameterStore, f64, Vec<MetricRecord>)> {
    if train_feats.is_empty() || test_feats.is_empty() {
        return Err(ModelError::invalid("word", "empty feature set"));
    }
    let mut head = init_params(cfg, Parts { mstcn: true, ..Default::default() }, feature_dim, plan.seed)?;
    let mut opt = Optimizer::adamw_word();
    let mut records = Vec::new();

    for epoch in 0..plan.epochs {
        let mut order_rng = RngStream::new(plan.seed).substream(0x60 + epoch as u64);
        let order = order_rng.permutation(train_feats.len())?;
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(plan.batch_size) {
            let mut q = Tensor::zeros(vec![chunk.len(), cfg.word_classes]);
            for (bi, &i) in chunk.iter().enumerate() {
                q.data_mut()[bi * cfg.word_classes + train_feats[i].1] = 1.0;
            }
            let fb = forward_backward::<f32, _, ModelError>(&head, true, None, |s| {
                let mut rows = Vec::new();
                for &i in chunk {
                    let x = s.input(train_feats[i].0.clone());
                    rows.push(mstcn_classify(s, cfg, x)?);
                }
                let logits = s.tape.concat_rows(&rows)?;
                soft_ce(s, logits, q.clone())
            })?;
            epoch_loss += fb.loss.item() as f64;
            batches += 1;
            opt.step(&mut head, &fb.grads, plan.lr, |_| true)?;
        }
        records.push(record(plan, epoch, "ce_loss", epoch_loss / batches.max(1) as f64));
    }

    let test_accuracy = evaluate_head_on_features(cfg, &head, test_feats)?;
    records.push(record(plan, plan.epochs, "accuracy", test_accuracy));
    Ok((head, test_accuracy, records))
}

/// Test accuracy of a trained head on precomputed features.
pub fn evaluate_head_on_features(
    cfg: &ModelConfig,
    head: &ParameterStore,
    test_feats: &[(Tensor<f32>, usize)],
) -> Result<f64> {
    let mut logits = Tensor::zeros(vec![test_feats.len(), cfg.word_classes]);
    let mut labels = Vec::new();
    for (i, (f, label)) in test_feats.iter().enumerate() {
        let s: vsr_core::grad::Session<f32> = vsr_core::grad::Session::new(head, false, None);
        let x = s.input(f.clone());
        let l = mstcn_classify(&s, cfg, x)?;
        let v = s.tape.value(l);
        logits.data_mut()[i * cfg.word_classes..(i + 1) * cfg.word_classes]
            .copy_from_slice(v.data());
        labels.push(*label);
    }
    top1_accuracy(&logits, &labels)
}
