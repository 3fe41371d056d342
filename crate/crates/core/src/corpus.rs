//! Synthetic paired audio-visual corpus.
//!
//! Video and audio are generated from one shared latent phone sequence:
//! each phone fixes a mouth shape (rendered as an anti-aliased ellipse)
//! and a pair of formant frequencies (rendered as two sinusoids), so
//! acoustic features are predictable from the video by construction.

use crate::dsp::Waveform;
use crate::error::{CoreError, Result};
use crate::rng::RngStream;
use crate::store::ParameterStore;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

pub const VIDEO_FPS: usize = 25;
pub const SAMPLE_RATE: u32 = 16000;
pub const SAMPLES_PER_FRAME: usize = SAMPLE_RATE as usize / VIDEO_FPS;
/// Rendered frame geometry; the vision pipeline consumes 32x32 center
/// crops of these and augments down to 28x28.
pub const RENDER_SIZE: usize = 36;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhoneSpec {
    pub id: usize,
    pub formants: (f64, f64),
    pub aperture: f64,
    pub width: f64,
    pub voiced: bool,
}

/// Phone inventory: id 0 is silence; voiced phones get unique
/// (aperture, width) pairs so phone identity is visually decodable.
pub fn default_phone_table(n_phones: usize) -> Vec<PhoneSpec> {
    assert!(n_phones >= 2 && n_phones <= 17, "supported phone counts: 2..=17");
    let apertures = [0.3, 0.55, 0.8, 1.0];
    let widths = [0.45, 0.65, 0.85, 1.0];
    let mut table = vec![PhoneSpec {
        id: 0,
        formants: (300.0, 900.0),
        aperture: 0.0,
        width: 0.5,
        voiced: false,
    }];
    for i in 0..n_phones - 1 {
        let f1 = 280.0 + 140.0 * i as f64;
        let f2 = f1 + 600.0 + 130.0 * i as f64;
        table.push(PhoneSpec {
            id: i + 1,
            formants: (f1, f2),
            aperture: apertures[i % 4],
            width: widths[(i / 4) % 4],
            voiced: true,
        });
    }
    table
}

#[derive(Debug, Clone, Copy)]
pub struct StyleParams {
    pub scale: f64,
    pub brightness: f64,
    pub formant_shift: f64,
}

/// Rendering parameters derived deterministically from a style id.
pub fn style_params(style: usize) -> StyleParams {
    let mut rng = RngStream::new(0x57_1e).substream(style as u64);
    StyleParams {
        scale: 0.8 + 0.35 * rng.uniform01(),
        brightness: 0.55 + 0.45 * rng.uniform01(),
        formant_shift: 0.9 + 0.2 * rng.uniform01(),
    }
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    /// [T, RENDER_SIZE, RENDER_SIZE] grayscale in [0, 1] at 25 fps.
    pub frames: Tensor<f32>,
    pub wave: Waveform,
    pub word_label: Option<usize>,
    pub transcript: Option<Vec<usize>>,
    pub speaker_style: usize,
}

impl Utterance {
    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }
}

/// Per-frame (aperture, width) track with 2-frame linear interpolation
/// at phone boundaries.
fn mouth_track(table: &[PhoneSpec], segments: &[(usize, usize)]) -> Vec<(f64, f64)> {
    let mut track = Vec::new();
    for &(phone, frames) in segments {
        let p = &table[phone];
        for _ in 0..frames {
            track.push((p.aperture, p.width));
        }
    }
    // Smooth each boundary across the last frame of the outgoing phone
    // and the first frame of the incoming phone.
    let mut boundary = 0;
    for &(_, frames) in &segments[..segments.len().saturating_sub(1)] {
        boundary += frames;
        if boundary >= 1 && boundary < track.len() {
            let prev = track[boundary - 1];
            let next = track[boundary];
            track[boundary - 1] = (
                prev.0 * 2.0 / 3.0 + next.0 / 3.0,
                prev.1 * 2.0 / 3.0 + next.1 / 3.0,
            );
            track[boundary] = (
                prev.0 / 3.0 + next.0 * 2.0 / 3.0,
                prev.1 / 3.0 + next.1 * 2.0 / 3.0,
            );
        }
    }
    track
}

fn render_frame(aperture: f64, width: f64, style: &StyleParams, rng: &mut RngStream) -> Vec<f32> {
    let n = RENDER_SIZE;
    let center = (n as f64 - 1.0) / 2.0;
    let rx = (width * 12.0 * style.scale).max(1e-6);
    let ry = aperture * 8.0 * style.scale;
    let mut px = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut v = 0.0f64;
            if ry > 1e-6 {
                let dx = (x as f64 - center) / rx;
                let dy = (y as f64 - center) / ry;
                let d = dx * dx + dy * dy;
                // soft edge over ~one normalized radius step
                v = ((1.0 - d) * 1.5 + 0.5).clamp(0.0, 1.0) * style.brightness;
            }
            v += 0.02 * rng.normal01();
            px[y * n + x] = v.clamp(0.0, 1.0) as f32;
        }
    }
    px
}

fn synth_audio(
    table: &[PhoneSpec],
    segments: &[(usize, usize)],
    style: &StyleParams,
    rng: &mut RngStream,
) -> Vec<f32> {
    let total_frames: usize = segments.iter().map(|s| s.1).sum();
    let mut samples = Vec::with_capacity(total_frames * SAMPLES_PER_FRAME);
    let mut t_global = 0usize;
    for &(phone, frames) in segments {
        let p = &table[phone];
        let n = frames * SAMPLES_PER_FRAME;
        for _ in 0..n {
            let t = t_global as f64 / SAMPLE_RATE as f64;
            let mut v = 0.01 * rng.normal01();
            if p.voiced {
                let f1 = p.formants.0 * style.formant_shift;
                let f2 = p.formants.1 * style.formant_shift;
                v += 0.6 * (std::f64::consts::TAU * f1 * t).sin()
                    + 0.3 * (std::f64::consts::TAU * f2 * t).sin();
            }
            samples.push(v as f32);
            t_global += 1;
        }
    }
    // Normalize down to a 0.95 peak; quiet signals are left untouched
    // so silence stays near-silent.
    let peak = samples.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    if peak > 0.95 {
        let s = 0.95 / peak;
        for v in &mut samples {
            *v *= s;
        }
    }
    samples
}

/// Generate one utterance from explicit per-phone frame counts.
pub fn synth_from_segments(
    table: &[PhoneSpec],
    segments: &[(usize, usize)],
    style: usize,
    seed: u64,
    id: impl Into<String>,
) -> Result<Utterance> {
    if segments.is_empty() {
        return Err(CoreError::invalid("synth_utterance", "need at least one phone"));
    }
    for &(phone, frames) in segments {
        if phone >= table.len() {
            return Err(CoreError::invalid("synth_utterance", format!("phone {phone} out of range")));
        }
        if frames == 0 {
            return Err(CoreError::invalid("synth_utterance", "zero-length phone segment"));
        }
    }
    let sp = style_params(style);
    let track = mouth_track(table, segments);
    let t_v = track.len();
    let mut video_rng = RngStream::new(seed).substream(1);
    let mut audio_rng = RngStream::new(seed).substream(2);
    let mut frames = Tensor::zeros(vec![t_v, RENDER_SIZE, RENDER_SIZE]);
    for (t, &(ap, wd)) in track.iter().enumerate() {
        let px = render_frame(ap, wd, &sp, &mut video_rng);
        let base = t * RENDER_SIZE * RENDER_SIZE;
        frames.data_mut()[base..base + px.len()].copy_from_slice(&px);
    }
    let samples = synth_audio(table, segments, &sp, &mut audio_rng);
    Ok(Utterance {
        id: id.into(),
        frames,
        wave: Waveform::new(samples, SAMPLE_RATE)?,
        word_label: None,
        transcript: None,
        speaker_style: style,
    })
}

/// Generate one utterance with a uniform duration per phone.
/// `dur_per_phone * 25` must be integral.
pub fn synth_utterance(
    table: &[PhoneSpec],
    phones: &[usize],
    dur_per_phone: f64,
    style: usize,
    seed: u64,
    id: impl Into<String>,
) -> Result<Utterance> {
    let frames_f = dur_per_phone * VIDEO_FPS as f64;
    let frames = frames_f.round() as usize;
    if (frames_f - frames as f64).abs() > 1e-9 || frames == 0 {
        return Err(CoreError::invalid(
            "synth_utterance",
            format!("dur_per_phone {dur_per_phone} does not give an integral frame count"),
        ));
    }
    let segments: Vec<(usize, usize)> = phones.iter().map(|&p| (p, frames)).collect();
    synth_from_segments(table, &segments, style, seed, id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Pretrain,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub path: String,
    pub t_v: usize,
    pub word_label: Option<usize>,
    pub transcript: Option<Vec<usize>>,
    pub speaker_style: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lineage {
    pub parent: String,
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub id: String,
    pub lineage: Option<Lineage>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            if !ids.insert(&e.id) {
                return Err(CoreError::invalid("manifest", format!("duplicate id {}", e.id)));
            }
        }
        let train_styles: BTreeSet<usize> = self
            .entries
            .iter()
            .filter(|e| matches!(e.split, Split::Pretrain | Split::Train))
            .map(|e| e.speaker_style)
            .collect();
        let test_styles: BTreeSet<usize> = self
            .split(Split::Test)
            .map(|e| e.speaker_style)
            .collect();
        if train_styles.intersection(&test_styles).next().is_some() {
            return Err(CoreError::invalid("manifest", "train and test speaker styles overlap"));
        }
        Ok(())
    }

    /// JSON-lines: one header line, then one entry per line. Utterance
    /// paths under the manifest's directory are stored relative to it,
    /// so corpus directories are byte-identical regardless of location.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let mut f = std::fs::File::create(path)?;
        let header = serde_json::json!({ "id": self.id, "lineage": self.lineage });
        writeln!(f, "{}", serde_json::to_string(&header)?)?;
        for e in &self.entries {
            let mut e = e.clone();
            if let Ok(rel) = Path::new(&e.path).strip_prefix(base) {
                e.path = rel.display().to_string();
            }
            writeln!(f, "{}", serde_json::to_string(&e)?)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(f).lines();
        let header: serde_json::Value = serde_json::from_str(
            &lines
                .next()
                .ok_or_else(|| CoreError::Other("empty manifest".into()))??,
        )?;
        let id = header["id"].as_str().unwrap_or_default().to_string();
        let lineage = serde_json::from_value(header["lineage"].clone())?;
        let base = path.parent().unwrap_or_else(|| Path::new("")).to_path_buf();
        let mut entries: Vec<ManifestEntry> = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut e: ManifestEntry = serde_json::from_str(&line)?;
            if Path::new(&e.path).is_relative() {
                e.path = base.join(&e.path).display().to_string();
            }
            entries.push(e);
        }
        Ok(Manifest { id, lineage, entries })
    }
}

pub fn save_utterance(dir: impl AsRef<Path>, u: &Utterance) -> Result<PathBuf> {
    let path = dir.as_ref().join(format!("{}.bin", u.id));
    let mut store = ParameterStore::new();
    store.insert_tensor("frames", u.frames.clone())?;
    store.insert_tensor(
        "wave",
        Tensor::new(vec![u.wave.samples.len()], u.wave.samples.clone())?,
    )?;
    store.save(&path)?;
    Ok(path)
}

pub fn load_utterance(entry: &ManifestEntry) -> Result<Utterance> {
    let store = ParameterStore::load(&entry.path)?;
    let frames: Tensor<f32> = store.get_tensor("frames")?;
    let wave: Tensor<f32> = store.get_tensor("wave")?;
    Ok(Utterance {
        id: entry.id.clone(),
        frames,
        wave: Waveform::new(wave.into_data(), SAMPLE_RATE)?,
        word_label: entry.word_label,
        transcript: entry.transcript.clone(),
        speaker_style: entry.speaker_style,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub pretrain: usize,
    pub word_classes: usize,
    pub word_train_per_class: usize,
    pub word_val_per_class: usize,
    pub word_test_per_class: usize,
    pub sent_train: usize,
    pub sent_val: usize,
    pub sent_test: usize,
    pub token_vocab: usize,
    pub n_phones: usize,
    pub n_styles: usize,
    pub seed: u64,
}

impl CorpusConfig {
    pub fn desk_default() -> Self {
        CorpusConfig {
            pretrain: 500,
            word_classes: 10,
            word_train_per_class: 24,
            word_val_per_class: 4,
            word_test_per_class: 6,
            sent_train: 160,
            sent_val: 24,
            sent_test: 32,
            token_vocab: 8,
            n_phones: 9,
            n_styles: 8,
            seed: 0,
        }
    }
}

/// Fixed phone triplet for a word or token id, drawn without
/// replacement from the non-silence phones.
fn phone_triplet(vocab_seed: u64, id: usize, n_phones: usize) -> Vec<usize> {
    let mut rng = RngStream::new(vocab_seed).substream(id as u64);
    let perm = rng.permutation(n_phones - 1).unwrap();
    perm[..3].iter().map(|&p| p + 1).collect()
}

pub fn word_phones(cfg: &CorpusConfig, class: usize) -> Vec<usize> {
    phone_triplet(cfg.seed ^ 0x77_0d, class, cfg.n_phones)
}

pub fn token_phones(cfg: &CorpusConfig, token: usize) -> Vec<usize> {
    phone_triplet(cfg.seed ^ 0x70_6b, token, cfg.n_phones)
}

/// Word clips are 29 frames (1.16 s): phone segments of 10/10/9 frames.
const WORD_SEGMENT_FRAMES: [usize; 3] = [10, 10, 9];

pub struct Corpus {
    pub pretext: Manifest,
    pub word: Manifest,
    pub sentence: Manifest,
}

/// Generate all three corpora under `out_dir` (utterance files in
/// `out_dir/utts/`, manifests alongside) and return the manifests.
pub fn build_corpus(cfg: &CorpusConfig, out_dir: impl AsRef<Path>) -> Result<Corpus> {
    if cfg.n_styles < 4 {
        return Err(CoreError::invalid("build_corpus", "n_styles must be >= 4"));
    }
    if cfg.word_classes == 0 || cfg.token_vocab == 0 {
        return Err(CoreError::invalid("build_corpus", "empty vocabulary"));
    }
    let out_dir = out_dir.as_ref();
    let utt_dir = out_dir.join("utts");
    std::fs::create_dir_all(&utt_dir)?;
    let table = default_phone_table(cfg.n_phones);
    // Last quarter (at least one) of the styles is test-only.
    let n_test_styles = (cfg.n_styles / 4).max(1);
    let train_styles: Vec<usize> = (0..cfg.n_styles - n_test_styles).collect();
    let test_styles: Vec<usize> = (cfg.n_styles - n_test_styles..cfg.n_styles).collect();
    let root = RngStream::new(cfg.seed);

    let make_entry = |u: &Utterance, split: Split| -> Result<ManifestEntry> {
        let path = save_utterance(&utt_dir, u)?;
        Ok(ManifestEntry {
            id: u.id.clone(),
            split,
            path: path.to_string_lossy().into_owned(),
            t_v: u.n_frames(),
            word_label: u.word_label,
            transcript: u.transcript.clone(),
            speaker_style: u.speaker_style,
        })
    };

    // Pretext: unlabeled, variable 1-4 s durations, train styles only.
    let mut pretext_entries = Vec::new();
    {
        let mut rng = root.substream(10);
        for i in 0..cfg.pretrain {
            let n_segments = 5 + rng.uniform_usize(16); // 5..=20 segments x 5 frames
            let phones: Vec<usize> = (0..n_segments)
                .map(|_| rng.uniform_usize(cfg.n_phones))
                .collect();
            let segments: Vec<(usize, usize)> = phones.iter().map(|&p| (p, 5)).collect();
            let style = train_styles[rng.uniform_usize(train_styles.len())];
            let u = synth_from_segments(&table, &segments, style, rng.next_u64(), format!("pre{i:05}"))?;
            pretext_entries.push(make_entry(&u, Split::Pretrain)?);
        }
    }

    // Word-level: one word per 29-frame clip, balanced classes.
    let mut word_entries = Vec::new();
    {
        let mut rng = root.substream(20);
        let emit = |class: usize,
                        count: usize,
                        split: Split,
                        styles: &[usize],
                        rng: &mut RngStream,
                        entries: &mut Vec<ManifestEntry>|
         -> Result<()> {
            for j in 0..count {
                let phones = word_phones(cfg, class);
                let segments: Vec<(usize, usize)> = phones
                    .iter()
                    .zip(WORD_SEGMENT_FRAMES)
                    .map(|(&p, f)| (p, f))
                    .collect();
                let style = styles[rng.uniform_usize(styles.len())];
                let split_tag = match split {
                    Split::Train => "tr",
                    Split::Val => "va",
                    Split::Test => "te",
                    Split::Pretrain => "pr",
                };
                let mut u = synth_from_segments(
                    &table,
                    &segments,
                    style,
                    rng.next_u64(),
                    format!("word_{split_tag}_{class:03}_{j:04}"),
                )?;
                u.word_label = Some(class);
                entries.push(make_entry(&u, split)?);
            }
            Ok(())
        };
        for class in 0..cfg.word_classes {
            emit(class, cfg.word_train_per_class, Split::Train, &train_styles, &mut rng, &mut word_entries)?;
            emit(class, cfg.word_val_per_class, Split::Val, &train_styles, &mut rng, &mut word_entries)?;
            emit(class, cfg.word_test_per_class, Split::Test, &test_styles, &mut rng, &mut word_entries)?;
        }
    }

    // Sentence-level: token transcripts of length 2-12, 9 frames per token.
    let mut sent_entries = Vec::new();
    {
        let mut rng = root.substream(30);
        let emit = |count: usize,
                        split: Split,
                        styles: &[usize],
                        rng: &mut RngStream,
                        entries: &mut Vec<ManifestEntry>|
         -> Result<()> {
            for j in 0..count {
                let len = 2 + rng.uniform_usize(11); // 2..=12 tokens
                let transcript: Vec<usize> =
                    (0..len).map(|_| rng.uniform_usize(cfg.token_vocab)).collect();
                let mut segments = Vec::new();
                for &tok in &transcript {
                    for &p in &token_phones(cfg, tok) {
                        segments.push((p, 3));
                    }
                }
                let style = styles[rng.uniform_usize(styles.len())];
                let split_tag = match split {
                    Split::Train => "tr",
                    Split::Val => "va",
                    Split::Test => "te",
                    Split::Pretrain => "pr",
                };
                let mut u = synth_from_segments(
                    &table,
                    &segments,
                    style,
                    rng.next_u64(),
                    format!("sent_{split_tag}_{j:04}"),
                )?;
                u.transcript = Some(transcript);
                entries.push(make_entry(&u, split)?);
            }
            Ok(())
        };
        emit(cfg.sent_train, Split::Train, &train_styles, &mut rng, &mut sent_entries)?;
        emit(cfg.sent_val, Split::Val, &train_styles, &mut rng, &mut sent_entries)?;
        emit(cfg.sent_test, Split::Test, &test_styles, &mut rng, &mut sent_entries)?;
    }

    let pretext = Manifest { id: "pretext".into(), lineage: None, entries: pretext_entries };
    let word = Manifest { id: "word".into(), lineage: None, entries: word_entries };
    let sentence = Manifest { id: "sentence".into(), lineage: None, entries: sent_entries };
    pretext.validate()?;
    word.validate()?;
    sentence.validate()?;
    pretext.save(out_dir.join("pretext.jsonl"))?;
    word.save(out_dir.join("word.jsonl"))?;
    sentence.save(out_dir.join("sentence.jsonl"))?;
    Ok(Corpus { pretext, word, sentence })
}

/// Retain ceil(fraction * |train|) train entries chosen by a seeded
/// permutation; subsets are nested across fractions for a fixed seed.
pub fn label_fraction_subset(m: &Manifest, fraction: f64, seed: u64) -> Result<Manifest> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CoreError::invalid("label_fraction_subset", format!("fraction {fraction}")));
    }
    let train: Vec<&ManifestEntry> = m.split(Split::Train).collect();
    let keep = (fraction * train.len() as f64).ceil() as usize;
    if keep == 0 {
        return Err(CoreError::invalid("label_fraction_subset", "empty subset"));
    }
    let mut rng = RngStream::new(seed).substream(0x5_0b5e7);
    let perm = rng.permutation(train.len())?;
    let kept_ids: BTreeSet<&str> = perm[..keep].iter().map(|&i| train[i].id.as_str()).collect();
    let entries = m
        .entries
        .iter()
        .filter(|e| e.split != Split::Train || kept_ids.contains(e.id.as_str()))
        .cloned()
        .collect();
    Ok(Manifest {
        id: format!("{}@{fraction}", m.id),
        lineage: Some(Lineage { parent: m.id.clone(), fraction, seed }),
        entries,
    })
}

/// Aligned 1-second A/V window: video start s uniform in [0, T_v - 25],
/// audio starting at sample 640 * s.
pub fn random_one_second_window(u: &Utterance, rng: &mut RngStream) -> Result<(Tensor<f32>, Vec<f32>)> {
    let t_v = u.n_frames();
    if t_v < VIDEO_FPS {
        return Err(CoreError::TooShort { got: t_v, need: VIDEO_FPS });
    }
    let s = if t_v == VIDEO_FPS { 0 } else { rng.uniform_usize(t_v - VIDEO_FPS + 1) };
    let px = RENDER_SIZE * RENDER_SIZE;
    let frames = Tensor::new(
        vec![VIDEO_FPS, RENDER_SIZE, RENDER_SIZE],
        u.frames.data()[s * px..(s + VIDEO_FPS) * px].to_vec(),
    )?;
    let a0 = s * SAMPLES_PER_FRAME;
    let samples = u.wave.samples[a0..a0 + SAMPLE_RATE as usize].to_vec();
    Ok((frames, samples))
}
