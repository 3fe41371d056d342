//! Visual augmentation chain: whole-clip horizontal flip, random and
//! center cropping, batch mixup, and per-clip normalization.
//!
//! Train chain: flip(p=0.5) -> random crop -> normalize (+ mixup for
//! word batches). Test chain: center crop -> normalize, no randomness.

use crate::error::{CoreError, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// A clip is a [T, H, W] grayscale tensor.
pub type Clip = Tensor<f32>;

fn clip_dims(op: &'static str, clip: &Clip) -> Result<(usize, usize, usize)> {
    if clip.shape().len() != 3 {
        return Err(CoreError::shape(op, format!("expected [T,H,W], got {:?}", clip.shape())));
    }
    Ok((clip.shape()[0], clip.shape()[1], clip.shape()[2]))
}

#[derive(Debug, Clone)]
pub enum Labels {
    /// One class id per clip.
    Word(Vec<usize>),
    /// B x V soft-label matrix (rows sum to 1), produced by mixup.
    Soft(Tensor<f32>),
    /// One token sequence per clip.
    Tokens(Vec<Vec<usize>>),
}

/// A batch of clips plus labels. Word-level batches share T, H, W;
/// sentence-level clips keep their own lengths (the Vec representation
/// carries the length vector implicitly, no zero padding needed).
#[derive(Debug, Clone)]
pub struct ClipBatch {
    pub clips: Vec<Clip>,
    pub labels: Labels,
}

/// With probability p, mirror every frame of the clip left-right.
/// One decision per clip, not per frame.
pub fn horizontal_flip(clip: &Clip, p: f64, rng: &mut RngStream) -> Result<Clip> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CoreError::invalid("horizontal_flip", format!("p={p} outside [0,1]")));
    }
    if p == 0.0 || !rng.bernoulli(p)? {
        return Ok(clip.clone());
    }
    Ok(flip_always(clip))
}

fn flip_always(clip: &Clip) -> Clip {
    let (t, h, w) = clip_dims("horizontal_flip", clip).unwrap();
    let mut out = Tensor::zeros(vec![t, h, w]);
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                out.data_mut()[(ti * h + y) * w + x] = clip.data()[(ti * h + y) * w + (w - 1 - x)];
            }
        }
    }
    out
}

fn crop_at(clip: &Clip, top: usize, left: usize, oh: usize, ow: usize) -> Clip {
    let (t, h, w) = clip_dims("crop", clip).unwrap();
    debug_assert!(top + oh <= h && left + ow <= w);
    let mut out = Tensor::zeros(vec![t, oh, ow]);
    for ti in 0..t {
        for y in 0..oh {
            let src = (ti * h + top + y) * w + left;
            let dst = (ti * oh + y) * ow;
            out.data_mut()[dst..dst + ow].copy_from_slice(&clip.data()[src..src + ow]);
        }
    }
    out
}

fn check_crop(op: &'static str, clip: &Clip, oh: usize, ow: usize) -> Result<(usize, usize)> {
    let (_, h, w) = clip_dims(op, clip)?;
    if oh > h || ow > w || oh == 0 || ow == 0 {
        return Err(CoreError::invalid(
            op,
            format!("output {oh}x{ow} does not fit input {h}x{w}"),
        ));
    }
    Ok((h, w))
}

/// Uniformly random top-left offset, shared by all frames of the clip.
pub fn random_crop(clip: &Clip, out: (usize, usize), rng: &mut RngStream) -> Result<Clip> {
    let (oh, ow) = out;
    let (h, w) = check_crop("random_crop", clip, oh, ow)?;
    let top = if h == oh { 0 } else { rng.uniform_usize(h - oh + 1) };
    let left = if w == ow { 0 } else { rng.uniform_usize(w - ow + 1) };
    Ok(crop_at(clip, top, left, oh, ow))
}

/// Deterministic center crop: offset (floor((H-h)/2), floor((W-w)/2)).
pub fn center_crop(clip: &Clip, out: (usize, usize)) -> Result<Clip> {
    let (oh, ow) = out;
    let (h, w) = check_crop("center_crop", clip, oh, ow)?;
    Ok(crop_at(clip, (h - oh) / 2, (w - ow) / 2, oh, ow))
}

/// How the mixup interpolation weight is drawn.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub enum MixupWeight {
    /// Beta(alpha, alpha), one draw per batch.
    Beta(f64),
    /// A fixed lambda.
    Fixed(f64),
}

/// Batch mixup for word-level batches: clips and one-hot labels are
/// convexly combined with a permuted partner. Produces soft labels.
pub fn mixup(
    batch: &ClipBatch,
    weight: MixupWeight,
    n_classes: usize,
    rng: &mut RngStream,
) -> Result<ClipBatch> {
    let labels = match &batch.labels {
        Labels::Word(l) => l,
        _ => {
            return Err(CoreError::invalid(
                "mixup",
                "only word-level batches with one-hot labels can be mixed",
            ))
        }
    };
    if labels.len() != batch.clips.len() {
        return Err(CoreError::shape("mixup", "label/clip count mismatch".to_string()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(CoreError::invalid("mixup", format!("label {bad} >= {n_classes}")));
    }
    let lambda = match weight {
        MixupWeight::Beta(alpha) => {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(CoreError::invalid("mixup", format!("alpha {alpha}")));
            }
            rng.beta_symmetric(alpha)
        }
        MixupWeight::Fixed(l) => {
            if !(0.0..=1.0).contains(&l) {
                return Err(CoreError::invalid("mixup", format!("lambda {l}")));
            }
            l
        }
    };
    let b = batch.clips.len();
    let perm = rng.permutation(b)?;
    let lam = lambda as f32;
    let mut clips = Vec::with_capacity(b);
    let mut soft = Tensor::zeros(vec![b, n_classes]);
    for i in 0..b {
        let partner = perm[i];
        if batch.clips[i].shape() != batch.clips[partner].shape() {
            return Err(CoreError::shape("mixup", "clips in a word batch must share T,H,W".to_string()));
        }
        clips.push(
            batch.clips[i]
                .zip(&batch.clips[partner], |a, bb| lam * a + (1.0 - lam) * bb),
        );
        soft.data_mut()[i * n_classes + labels[i]] += lam;
        soft.data_mut()[i * n_classes + labels[partner]] += 1.0 - lam;
    }
    Ok(ClipBatch { clips, labels: Labels::Soft(soft) })
}

/// Variance floor: synthetic silence clips can be near-constant.
pub const NORMALIZE_VAR_FLOOR: f64 = 1e-8;

/// Per-clip standardization to zero mean, unit variance. Constant
/// clips map to all zeros.
pub fn normalize_clip(clip: &Clip) -> Clip {
    let n = clip.numel() as f64;
    let mean = clip.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = clip
        .data()
        .iter()
        .map(|&v| (v as f64 - mean) * (v as f64 - mean))
        .sum::<f64>()
        / n;
    if var < NORMALIZE_VAR_FLOOR {
        return Tensor::zeros(clip.shape().to_vec());
    }
    let inv = 1.0 / var.sqrt();
    clip.map(|v| ((v as f64 - mean) * inv) as f32)
}

/// Train-time chain: flip(p) -> random crop -> normalize.
pub fn augment_train(
    clip: &Clip,
    crop: (usize, usize),
    flip_p: f64,
    rng: &mut RngStream,
) -> Result<Clip> {
    let flipped = horizontal_flip(clip, flip_p, rng)?;
    let cropped = random_crop(&flipped, crop, rng)?;
    Ok(normalize_clip(&cropped))
}

/// Test-time chain: center crop -> normalize; no randomness.
pub fn augment_test(clip: &Clip, crop: (usize, usize)) -> Result<Clip> {
    Ok(normalize_clip(&center_crop(clip, crop)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_clip(t: usize, h: usize, w: usize) -> Clip {
        let mut c = Tensor::zeros(vec![t, h, w]);
        for (i, v) in c.data_mut().iter_mut().enumerate() {
            *v = (i % 251) as f32 / 251.0;
        }
        c
    }

    #[test]
    fn flip_with_p1_is_an_involution() {
        let clip = ramp_clip(3, 5, 7);
        let mut rng = RngStream::new(1);
        let once = horizontal_flip(&clip, 1.0, &mut rng).unwrap();
        let twice = horizontal_flip(&once, 1.0, &mut rng).unwrap();
        assert_eq!(clip, twice);
    }

    #[test]
    fn flip_p0_is_identity() {
        let clip = ramp_clip(2, 4, 4);
        let mut rng = RngStream::new(1);
        assert_eq!(horizontal_flip(&clip, 0.0, &mut rng).unwrap(), clip);
    }

    #[test]
    fn flip_moves_a_bright_pixel() {
        let mut clip: Clip = Tensor::zeros(vec![1, 4, 32]);
        clip.data_mut()[3] = 1.0; // row 0, column 3
        let mut rng = RngStream::new(1);
        let flipped = horizontal_flip(&clip, 1.0, &mut rng).unwrap();
        assert_eq!(flipped.data()[28], 1.0);
        assert_eq!(flipped.data()[3], 0.0);
    }

    #[test]
    fn full_size_crops_are_identity() {
        let clip = ramp_clip(2, 6, 6);
        let mut rng = RngStream::new(2);
        assert_eq!(random_crop(&clip, (6, 6), &mut rng).unwrap(), clip);
        assert_eq!(center_crop(&clip, (6, 6)).unwrap(), clip);
    }

    #[test]
    fn center_crop_offset_is_floored() {
        // 32 -> 28 gives offset (2, 2)
        let clip = ramp_clip(1, 32, 32);
        let cropped = center_crop(&clip, (28, 28)).unwrap();
        assert_eq!(cropped.data()[0], clip.data()[2 * 32 + 2]);
    }

    #[test]
    fn oversize_crop_rejected() {
        let clip = ramp_clip(1, 4, 4);
        let mut rng = RngStream::new(3);
        assert!(random_crop(&clip, (5, 4), &mut rng).is_err());
        assert!(center_crop(&clip, (4, 5)).is_err());
    }

    #[test]
    fn random_crop_is_a_contiguous_window() {
        // brute-force window search oracle
        let clip = ramp_clip(2, 8, 9);
        let mut rng = RngStream::new(4);
        for _ in 0..20 {
            let out = random_crop(&clip, (5, 4), &mut rng).unwrap();
            let mut found = false;
            'search: for top in 0..=3 {
                for left in 0..=5 {
                    if crop_at(&clip, top, left, 5, 4) == out {
                        found = true;
                        break 'search;
                    }
                }
            }
            assert!(found, "crop is not any contiguous sub-window");
        }
    }

    fn word_batch(b: usize, n_classes: usize) -> ClipBatch {
        let clips = (0..b).map(|i| {
            let mut c = ramp_clip(2, 4, 4);
            c.data_mut()[0] = i as f32;
            c
        });
        ClipBatch {
            clips: clips.collect(),
            labels: Labels::Word((0..b).map(|i| i % n_classes).collect()),
        }
    }

    #[test]
    fn mixup_with_lambda_one_is_identity() {
        let batch = word_batch(4, 3);
        let mut rng = RngStream::new(5);
        let mixed = mixup(&batch, MixupWeight::Fixed(1.0), 3, &mut rng).unwrap();
        for (a, b) in mixed.clips.iter().zip(&batch.clips) {
            assert_eq!(a, b);
        }
        let Labels::Soft(soft) = &mixed.labels else { panic!() };
        for i in 0..4 {
            assert_eq!(soft.at2(i, i % 3), 1.0);
        }
    }

    #[test]
    fn mixup_identical_pair_members_change_nothing() {
        // every clip identical and same label: any lambda is a no-op
        let clip = ramp_clip(2, 4, 4);
        let batch = ClipBatch {
            clips: vec![clip.clone(), clip.clone()],
            labels: Labels::Word(vec![1, 1]),
        };
        let mut rng = RngStream::new(6);
        let mixed = mixup(&batch, MixupWeight::Fixed(0.5), 3, &mut rng).unwrap();
        for c in &mixed.clips {
            assert_eq!(c, &clip);
        }
        let Labels::Soft(soft) = &mixed.labels else { panic!() };
        assert!((soft.at2(0, 1) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mixup_soft_rows_sum_to_one_and_mass_is_preserved() {
        let batch = word_batch(6, 4);
        let mut rng = RngStream::new(7);
        let mixed = mixup(&batch, MixupWeight::Beta(0.4), 4, &mut rng).unwrap();
        let Labels::Soft(soft) = &mixed.labels else { panic!() };
        for i in 0..6 {
            let row: f32 = (0..4).map(|j| soft.at2(i, j)).sum();
            assert!((row - 1.0).abs() < 1e-6);
        }
        // column sums equal lambda*hist(y) + (1-lambda)*hist(y∘perm);
        // both histograms are the same multiset here, so column sums
        // must equal the label histogram exactly.
        let hist = [2.0f32, 2.0, 1.0, 1.0];
        for j in 0..4 {
            let col: f32 = (0..6).map(|i| soft.at2(i, j)).sum();
            assert!((col - hist[j]).abs() < 1e-5, "col {j}: {col}");
        }
    }

    #[test]
    fn mixup_rejects_sentence_batches() {
        let batch = ClipBatch {
            clips: vec![ramp_clip(2, 4, 4)],
            labels: Labels::Tokens(vec![vec![0, 1]]),
        };
        let mut rng = RngStream::new(8);
        assert!(mixup(&batch, MixupWeight::Beta(0.4), 3, &mut rng).is_err());
    }

    #[test]
    fn normalize_constant_clip_is_zero() {
        let clip = Tensor::full(vec![2, 3, 3], 0.7f32);
        let out = normalize_clip(&clip);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_standardizes_and_ignores_affine_input_changes() {
        let clip = ramp_clip(3, 8, 8);
        let out = normalize_clip(&clip);
        let n = out.numel() as f64;
        let mean: f64 = out.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = out.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6);
        assert!((var.sqrt() - 1.0).abs() < 1e-4);

        let affine = clip.map(|v| 2.5 * v + 0.3);
        let out2 = normalize_clip(&affine);
        for (a, b) in out.data().iter().zip(out2.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn test_chain_is_deterministic() {
        let clip = ramp_clip(3, 32, 32);
        let a = augment_test(&clip, (28, 28)).unwrap();
        let b = augment_test(&clip, (28, 28)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_chain_is_deterministic_under_seed() {
        let clip = ramp_clip(3, 32, 32);
        let mut r1 = RngStream::new(9);
        let mut r2 = RngStream::new(9);
        let a = augment_train(&clip, (28, 28), 0.5, &mut r1).unwrap();
        let b = augment_train(&clip, (28, 28), 0.5, &mut r2).unwrap();
        assert_eq!(a, b);
    }
}
