//! Sentence-level downstream training: hybrid CTC/attention objective,
//! Noam-scheduled Adam, optional two-stage length curriculum, and beam
//! search evaluation.

use crate::config::{init_params, ModelConfig, Parts};
use crate::conformer::encode;
use crate::data::{load_clips, load_encoder_from, LoadedClip};
use crate::decode::beam_search_decode;
use crate::error::{ModelError, Result};
use crate::losses::joint_loss;
use crate::metrics::{word_error_rate, MetricRecord};
use crate::optim::Optimizer;
use crate::schedule::noam_lr;
use vsr_core::corpus::{Manifest, Split};
use vsr_core::forward_backward;
use vsr_core::grad::Session;
use vsr_core::rng::RngStream;
use vsr_core::store::ParameterStore;
use vsr_core::tensor::Tensor;
use vsr_core::vision::{augment_test, augment_train};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SentencePlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup: u64,
    pub lr_scale: f64,
    pub lambda_ctc_train: f64,
    pub lambda_ctc_decode: f64,
    pub label_smoothing: f64,
    /// Two-stage curriculum: stage 1 trains only on utterances shorter
    /// than this length quantile of the training set.
    pub curriculum_quantile: Option<f64>,
    /// Utterances longer than this never enter any batch.
    pub max_frames: usize,
    pub beam: usize,
    pub seed: u64,
    pub run_id: String,
}

impl SentencePlan {
    pub fn desk(seed: u64, run_id: impl Into<String>) -> Self {
        SentencePlan {
            epochs: 4,
            batch_size: 4,
            warmup: 40,
            lr_scale: 1.0,
            lambda_ctc_train: 0.3,
            lambda_ctc_decode: 0.1,
            label_smoothing: 0.1,
            curriculum_quantile: Some(0.6),
            max_frames: 600,
            beam: 4,
            seed,
            run_id: run_id.into(),
        }
    }
}

#[derive(Debug)]
pub struct SentenceOutcome {
    pub params: ParameterStore,
    pub test_wer: f64,
    pub records: Vec<MetricRecord>,
}

/// Length quantile q of the training set (`q in (0,1]`), in frames.
pub fn length_quantile(lengths: &[usize], q: f64) -> Result<usize> {
    if lengths.is_empty() || !(q > 0.0 && q <= 1.0) {
        return Err(ModelError::invalid("curriculum", format!("quantile {q} of {} lengths", lengths.len())));
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    Ok(sorted[idx])
}

fn transcript_of(c: &LoadedClip) -> Result<&Vec<usize>> {
    c.transcript
        .as_ref()
        .ok_or_else(|| ModelError::invalid("sentence", format!("clip {} has no transcript", c.id)))
}

pub fn run_sentence_downstream(
    cfg: &ModelConfig,
    manifest: &Manifest,
    plan: &SentencePlan,
    checkpoint: Option<&ParameterStore>,
) -> Result<SentenceOutcome> {
    let train_all: Vec<LoadedClip> = load_clips(
        manifest
            .split(Split::Train)
            .filter(|e| e.t_v <= plan.max_frames),
    )?;
    let test: Vec<LoadedClip> = load_clips(manifest.split(Split::Test))?;
    if train_all.is_empty() || test.is_empty() {
        return Err(ModelError::invalid("sentence", "empty train or test split after filtering"));
    }

    let mut params = init_params(cfg, Parts::sentence(), cfg.d_model, plan.seed)?;
    if let Some(source) = checkpoint {
        load_encoder_from(&mut params, source)?;
    }
    let mut opt = Optimizer::adam_seq();
    let mut records = Vec::new();
    let crop = (cfg.input_hw, cfg.input_hw);

    // Stage boundaries: with a curriculum the first half of the epochs
    // sees only short utterances; stage 2 continues on everything.
    let stage1_epochs = if plan.curriculum_quantile.is_some() {
        plan.epochs / 2
    } else {
        0
    };
    let threshold = match plan.curriculum_quantile {
        Some(q) => {
            let lengths: Vec<usize> = train_all.iter().map(|c| c.clip.shape()[0]).collect();
            let thr = length_quantile(&lengths, q)?;
            if !train_all.iter().any(|c| c.clip.shape()[0] < thr) {
                return Err(ModelError::invalid(
                    "sentence",
                    format!("curriculum threshold {thr} excludes every training utterance"),
                ));
            }
            Some(thr)
        }
        None => None,
    };

    for epoch in 0..plan.epochs {
        let pool: Vec<&LoadedClip> = match threshold {
            Some(thr) if epoch < stage1_epochs => {
                train_all.iter().filter(|c| c.clip.shape()[0] < thr).collect()
            }
            _ => train_all.iter().collect(),
        };
        let mut order_rng = RngStream::new(plan.seed).substream(0x70 + epoch as u64);
        let order = order_rng.permutation(pool.len())?;
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(plan.batch_size).enumerate() {
            let mut aug_rng = RngStream::new(plan.seed)
                .substream(0x80 + epoch as u64)
                .substream(step as u64);
            let mut batch: Vec<(Tensor<f32>, Vec<usize>)> = Vec::new();
            for &i in chunk {
                let clip = augment_train(&pool[i].clip, crop, 0.5, &mut aug_rng)?;
                batch.push((clip, transcript_of(pool[i])?.clone()));
            }
            let drop_rng = RngStream::new(plan.seed)
                .substream(0x90 + epoch as u64)
                .substream(step as u64);
            let fb = forward_backward::<f32, _, ModelError>(&params, true, Some(drop_rng), |s| {
                let mut total = None;
                for (clip, transcript) in &batch {
                    let x = s.input(clip.clone());
                    let mut taps = indexmap::IndexMap::new();
                    let enc = encode(s, cfg, x, &mut taps)?;
                    let loss = joint_loss(
                        s,
                        cfg,
                        enc,
                        transcript,
                        plan.lambda_ctc_train,
                        plan.label_smoothing,
                    )?;
                    total = Some(match total {
                        None => loss,
                        Some(acc) => s.tape.add(acc, loss)?,
                    });
                }
                let total = total.ok_or_else(|| ModelError::invalid("sentence", "empty batch"))?;
                Ok(s.tape.scale(total, 1.0 / batch.len() as f32)?)
            })?;
            epoch_loss += fb.loss.item() as f64;
            batches += 1;
            let lr = noam_lr(opt.step_count() + 1, plan.warmup, cfg.d_model, plan.lr_scale)?;
            opt.step(&mut params, &fb.grads, lr, |_| true)?;
        }
        records.push(MetricRecord {
            run_id: plan.run_id.clone(),
            task: "sentence".into(),
            regime: if checkpoint.is_some() { "finetuned" } else { "supervised" }.into(),
            fraction: 1.0,
            seed: plan.seed,
            epoch,
            metric: "ce_loss".into(),
            value: epoch_loss / batches.max(1) as f64,
        });
    }

    let test_wer = evaluate_wer(cfg, &params, &test, plan)?;
    records.push(MetricRecord {
        run_id: plan.run_id.clone(),
        task: "sentence".into(),
        regime: if checkpoint.is_some() { "finetuned" } else { "supervised" }.into(),
        fraction: 1.0,
        seed: plan.seed,
        epoch: plan.epochs,
        metric: "wer".into(),
        value: test_wer,
    });
    Ok(SentenceOutcome { params, test_wer, records })
}

/// Mean per-utterance WER of beam-search transcriptions on a test set.
pub fn evaluate_wer(
    cfg: &ModelConfig,
    params: &ParameterStore,
    test: &[LoadedClip],
    plan: &SentencePlan,
) -> Result<f64> {
    let crop = (cfg.input_hw, cfg.input_hw);
    let mut total = 0.0;
    for c in test {
        let clip = augment_test(&c.clip, crop)?;
        let s: Session<f32> = Session::new(params, false, None);
        let x = s.input(clip);
        let mut taps = indexmap::IndexMap::new();
        let enc_var = encode(&s, cfg, x, &mut taps)?;
        let enc = s.tape.value(enc_var);
        let reference = transcript_of(c)?;
        let hyp = beam_search_decode(
            params,
            cfg,
            &enc,
            plan.beam,
            plan.lambda_ctc_decode,
            None,
            Some(reference.len() + 4),
        )?;
        total += word_error_rate(&hyp, reference)?;
    }
    Ok(total / test.len() as f64)
}
