//! Self-supervised pretext training: predict pooled acoustic features
//! from silent 1-second video windows under an L1 loss.

use crate::config::{init_params, ModelConfig, Parts};
use crate::conformer::encode;
use crate::data::{load_clips, LoadedClip};
use crate::error::{ModelError, Result};
use crate::heads::project_head;
use crate::losses::l1_pretext_loss;
use crate::optim::Optimizer;
use crate::schedule::noam_lr;
use vsr_core::corpus::{Manifest, Split, VIDEO_FPS};
use vsr_core::dsp::{mfcc_features, pool_to_video_rate, MelConfig};
use vsr_core::forward_backward;
use vsr_core::grad::Session;
use vsr_core::rng::RngStream;
use vsr_core::store::ParameterStore;
use vsr_core::tensor::Tensor;
use vsr_core::vision::{augment_test, augment_train};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PretextPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup: u64,
    pub lr_scale: f64,
    /// Standardize target features per dimension using training-set
    /// statistics.
    pub standardize_targets: bool,
    /// Baseline mode: update only `head/` parameters, leaving the
    /// randomly initialized encoder untouched.
    pub head_only: bool,
    pub val_fraction: f64,
    pub seed: u64,
}

impl PretextPlan {
    pub fn desk(seed: u64) -> Self {
        PretextPlan {
            epochs: 12,
            batch_size: 2,
            warmup: 60,
            lr_scale: 0.15,
            standardize_targets: true,
            head_only: false,
            val_fraction: 0.1,
            seed,
        }
    }
}

#[derive(Debug)]
pub struct PretextOutcome {
    /// Best-on-validation parameters.
    pub params: ParameterStore,
    pub best_val: f64,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
}

struct Sample {
    clip: LoadedClip,
    /// Pooled acoustic features, already standardized if requested.
    target: Tensor<f32>,
}

fn pooled_targets(cfg: &ModelConfig, clips: Vec<LoadedClip>) -> Result<Vec<Sample>> {
    let mel = MelConfig::default_16k();
    clips
        .into_iter()
        .map(|c| {
            let feats = pool_to_video_rate(&mfcc_features(&c.utterance.wave, &mel)?)?;
            if feats.dim() != cfg.target_dim {
                return Err(ModelError::Config(format!(
                    "target_dim {} does not match acoustic feature dim {}",
                    cfg.target_dim,
                    feats.dim()
                )));
            }
            Ok(Sample { clip: c, target: feats.values })
        })
        .collect()
}

fn standardize(samples: &mut [Sample], train_idx: &[usize], dim: usize) {
    let mut mean = vec![0.0f64; dim];
    let mut count = 0usize;
    for &i in train_idx {
        let t = &samples[i].target;
        let rows = t.shape()[0];
        for r in 0..rows {
            for d in 0..dim {
                mean[d] += t.data()[r * dim + d] as f64;
            }
        }
        count += rows;
    }
    for m in &mut mean {
        *m /= count.max(1) as f64;
    }
    let mut var = vec![0.0f64; dim];
    for &i in train_idx {
        let t = &samples[i].target;
        for r in 0..t.shape()[0] {
            for d in 0..dim {
                let x = t.data()[r * dim + d] as f64 - mean[d];
                var[d] += x * x;
            }
        }
    }
    for v in &mut var {
        *v = (*v / count.max(1) as f64).max(1e-12);
    }
    for s in samples.iter_mut() {
        let rows = s.target.shape()[0];
        for r in 0..rows {
            for d in 0..dim {
                let slot = &mut s.target.data_mut()[r * dim + d];
                *slot = (((*slot as f64) - mean[d]) / var[d].sqrt()) as f32;
            }
        }
    }
}

/// Window of `frames` frames starting at `s` from a [T, H, W] clip.
fn frame_window(clip: &Tensor<f32>, s: usize, frames: usize) -> Tensor<f32> {
    let (h, w) = (clip.shape()[1], clip.shape()[2]);
    let px = h * w;
    Tensor::new(
        vec![frames, h, w],
        clip.data()[s * px..(s + frames) * px].to_vec(),
    )
    .unwrap()
}

fn batch_loss(
    params: &ParameterStore,
    cfg: &ModelConfig,
    batch: &[(Tensor<f32>, Tensor<f32>)],
    train: bool,
    rng: Option<RngStream>,
) -> Result<vsr_core::grad::ForwardBackward<f32>> {
    Ok(forward_backward::<f32, _, ModelError>(params, train, rng, |s| {
        let mut total = None;
        for (clip, target) in batch {
            let x = s.input(clip.clone());
            let mut taps = indexmap::IndexMap::new();
            let enc = encode(s, cfg, x, &mut taps)?;
            let pred = project_head(s, cfg, enc)?;
            let l = target.shape()[0];
            let pred = s.tape.slice_rows(pred, 0, l)?;
            let tv = s.constant(target.clone());
            let loss = l1_pretext_loss(s, pred, tv)?;
            total = Some(match total {
                None => loss,
                Some(acc) => s.tape.add(acc, loss)?,
            });
        }
        let total = total.ok_or_else(|| ModelError::invalid("pretext", "empty batch"))?;
        Ok(s.tape.scale(total, 1.0 / batch.len() as f32)?)
    })?)
}

fn val_loss(params: &ParameterStore, cfg: &ModelConfig, vals: &[&Sample]) -> Result<f64> {
    let mut total = 0.0;
    for sample in vals {
        let t_v = sample.clip.clip.shape()[0];
        let s0 = (t_v - VIDEO_FPS) / 2;
        let window = frame_window(&sample.clip.clip, s0, VIDEO_FPS);
        let aug = augment_test(&window, (cfg.input_hw, cfg.input_hw))?;
        let t_p = sample.target.shape()[0];
        let l = VIDEO_FPS.min(t_p - s0);
        let d = sample.target.shape()[1];
        let target = Tensor::new(
            vec![l, d],
            sample.target.data()[s0 * d..(s0 + l) * d].to_vec(),
        )?;
        let sess: Session<f32> = Session::new(params, false, None);
        let x = sess.input(aug);
        let mut taps = indexmap::IndexMap::new();
        let enc = encode(&sess, cfg, x, &mut taps)?;
        let pred = project_head(&sess, cfg, enc)?;
        let pred = sess.tape.slice_rows(pred, 0, l)?;
        let tv = sess.constant(target);
        let loss = l1_pretext_loss(&sess, pred, tv)?;
        total += sess.tape.value(loss).item() as f64;
    }
    Ok(total / vals.len() as f64)
}

/// Train the pretext model; returns the best-on-validation checkpoint
/// and both loss curves.
pub fn run_pretext(cfg: &ModelConfig, manifest: &Manifest, plan: &PretextPlan) -> Result<PretextOutcome> {
    // The pretext task sees every window/augmentation combination at
    // most once, so dropout only slows convergence here; downstream
    // tasks keep the configured rate.
    let cfg = &ModelConfig { dropout: 0.0, ..cfg.clone() };
    let entries: Vec<_> = manifest
        .split(Split::Pretrain)
        .filter(|e| e.t_v >= VIDEO_FPS)
        .collect();
    if entries.is_empty() {
        return Err(ModelError::invalid(
            "run_pretext",
            "no pretext utterance is at least one second long",
        ));
    }
    let clips = load_clips(entries.into_iter())?;
    let mut samples = pooled_targets(cfg, clips)?;

    let n = samples.len();
    let mut split_rng = RngStream::new(plan.seed).substream(0xda7a);
    let perm = split_rng.permutation(n)?;
    let n_val = ((n as f64 * plan.val_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let val_idx: Vec<usize> = perm[..n_val].to_vec();
    let train_idx: Vec<usize> = perm[n_val..].to_vec();
    if train_idx.is_empty() {
        return Err(ModelError::invalid("run_pretext", "nothing left to train on"));
    }
    if plan.standardize_targets {
        standardize(&mut samples, &train_idx, cfg.target_dim);
    }

    let mut params = init_params(cfg, Parts::pretext(), cfg.d_model, plan.seed)?;
    let mut opt = Optimizer::adam_seq();
    let trainable = |name: &str| !plan.head_only || name.starts_with("head/");

    let vals: Vec<&Sample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let mut best_val = val_loss(&params, cfg, &vals)?;
    let mut best_params = params.clone();
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();

    for epoch in 0..plan.epochs {
        let mut order_rng = RngStream::new(plan.seed).substream(0xe0 + epoch as u64);
        let order = order_rng.permutation(train_idx.len())?;
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(plan.batch_size).enumerate() {
            let mut aug_rng = RngStream::new(plan.seed)
                .substream(0xa0 + epoch as u64)
                .substream(step as u64);
            let mut batch = Vec::new();
            for &oi in chunk {
                let sample = &samples[train_idx[oi]];
                let t_v = sample.clip.clip.shape()[0];
                let s0 = if t_v == VIDEO_FPS {
                    0
                } else {
                    aug_rng.uniform_usize(t_v - VIDEO_FPS + 1)
                };
                let window = frame_window(&sample.clip.clip, s0, VIDEO_FPS);
                let aug = augment_train(&window, (cfg.input_hw, cfg.input_hw), 0.5, &mut aug_rng)?;
                let t_p = sample.target.shape()[0];
                let l = VIDEO_FPS.min(t_p - s0);
                let d = sample.target.shape()[1];
                let target = Tensor::new(
                    vec![l, d],
                    sample.target.data()[s0 * d..(s0 + l) * d].to_vec(),
                )?;
                batch.push((aug, target));
            }
            let drop_rng = RngStream::new(plan.seed)
                .substream(0xd0 + epoch as u64)
                .substream(step as u64);
            let fb = batch_loss(&params, cfg, &batch, true, Some(drop_rng))?;
            epoch_loss += fb.loss.item() as f64;
            batches += 1;
            let lr = noam_lr(opt.step_count() + 1, plan.warmup, cfg.d_model, plan.lr_scale)?;
            opt.step(&mut params, &fb.grads, lr, trainable)?;
        }
        train_curve.push(epoch_loss / batches.max(1) as f64);
        let v = val_loss(&params, cfg, &vals)?;
        val_curve.push(v);
        if v < best_val {
            best_val = v;
            best_params = params.clone();
        }
    }

    Ok(PretextOutcome { params: best_params, best_val, train_curve, val_curve })
}
