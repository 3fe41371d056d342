//! Subcommand implementations: corpus generation, the three training
//! loops, the tap study, the label-fraction sweep, and evaluation.

use crate::config::HarnessConfig;
use crate::error::{CliError, Result};
use crate::runs::RunDir;
use std::path::PathBuf;
use vsr_core::corpus::{build_corpus, label_fraction_subset, Manifest, Split};
use vsr_core::rng::RngStream;
use vsr_core::store::ParameterStore;
use vsr_core::tensor::Tensor;
use vsr_core::vision::augment_test;
use vsr_model::data::{load_clips, tap_dim, LoadedClip};
use vsr_model::metrics::{write_metrics_csv, MetricRecord};
use vsr_model::pretext::run_pretext;
use vsr_model::sentence::{evaluate_wer, run_sentence_downstream};
use vsr_model::word::{
    evaluate_head_on_features, evaluate_word_end_to_end, extract_tap_features,
    run_word_downstream, train_head_on_features, Regime,
};
use vsr_model::ModelConfig;

fn manifest_path(cfg: &HarnessConfig, name: &str) -> PathBuf {
    cfg.corpus_dir.join(format!("{name}.jsonl"))
}

fn load_manifest(cfg: &HarnessConfig, name: &str) -> Result<Manifest> {
    let path = manifest_path(cfg, name);
    Manifest::load(&path)
        .map_err(|e| CliError::config(format!("cannot load manifest {}: {e}", path.display())))
}

/// The pretext checkpoint named by the config; its absence is a config
/// error that names the missing key.
fn required_checkpoint(cfg: &HarnessConfig, why: &str) -> Result<(ParameterStore, PathBuf)> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::config(format!("missing key: checkpoint ({why})")))?;
    let store = ParameterStore::load(path)
        .map_err(|e| CliError::config(format!("cannot load checkpoint {}: {e}", path.display())))?;
    Ok((store, path.clone()))
}

pub fn gen_corpus(cfg: &HarnessConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.corpus_dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", cfg.corpus_dir.display())))?;
    build_corpus(&cfg.corpus, &cfg.corpus_dir)?;
    let snapshot = serde_json::to_string_pretty(&cfg.corpus)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    std::fs::write(cfg.corpus_dir.join("corpus_config.json"), snapshot)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    println!("corpus written to {}", cfg.corpus_dir.display());
    Ok(())
}

pub fn pretrain(cfg: &HarnessConfig) -> Result<PathBuf> {
    let model = cfg.model()?;
    let manifest = load_manifest(cfg, "pretext")?;
    let mut run = RunDir::create(cfg, &cfg.run_id)?;
    run.track_input("pretext_manifest", &manifest_path(cfg, "pretext"))?;

    let out = run_pretext(&model, &manifest, &cfg.pretext)?;
    let mut records = Vec::new();
    for (epoch, (&tr, &va)) in out.train_curve.iter().zip(&out.val_curve).enumerate() {
        for (metric, value) in [("train_l1", tr), ("val_l1", va)] {
            records.push(MetricRecord {
                run_id: cfg.run_id.clone(),
                task: "pretext".into(),
                regime: "pretext".into(),
                fraction: 1.0,
                seed: cfg.pretext.seed,
                epoch,
                metric: metric.into(),
                value,
            });
        }
    }
    records.push(MetricRecord {
        run_id: cfg.run_id.clone(),
        task: "pretext".into(),
        regime: "pretext".into(),
        fraction: 1.0,
        seed: cfg.pretext.seed,
        epoch: cfg.pretext.epochs,
        metric: "best_val_l1".into(),
        value: out.best_val,
    });
    write_metrics_csv(run.metrics_path(), &records)?;
    let ckpt = run.checkpoint_path();
    out.params.save(&ckpt)?;
    run.write_input_manifest()?;
    println!("best_val_l1 {}", out.best_val);
    Ok(ckpt)
}

pub fn train_word(cfg: &HarnessConfig) -> Result<f64> {
    let model = cfg.model()?;
    let mut plan = cfg.word.clone();
    plan.run_id = cfg.run_id.clone();
    let checkpoint = match plan.regime {
        Regime::Supervised => {
            if cfg.checkpoint.is_some() {
                return Err(CliError::config(
                    "checkpoint is set but regime=supervised trains from scratch",
                ));
            }
            None
        }
        Regime::Frozen | Regime::FineTuned => Some(required_checkpoint(
            cfg,
            &format!("required for regime {}", plan.regime.name()),
        )?),
    };
    let mut manifest = load_manifest(cfg, "word")?;
    if plan.fraction < 1.0 {
        manifest = label_fraction_subset(&manifest, plan.fraction, plan.seed)?;
    }
    let mut run = RunDir::create(cfg, &cfg.run_id)?;
    run.track_input("word_manifest", &manifest_path(cfg, "word"))?;
    if let Some((_, path)) = &checkpoint {
        run.track_input("checkpoint", path)?;
    }

    let out = run_word_downstream(&model, &manifest, &plan, checkpoint.as_ref().map(|(s, _)| s))?;
    write_metrics_csv(run.metrics_path(), &out.records)?;
    out.params.save(run.checkpoint_path())?;
    run.write_input_manifest()?;
    println!("test_accuracy {}", out.test_accuracy);
    Ok(out.test_accuracy)
}

pub fn train_sentence(cfg: &HarnessConfig) -> Result<f64> {
    let model = cfg.model()?;
    let mut plan = cfg.sentence.clone();
    plan.run_id = cfg.run_id.clone();
    let checkpoint = match &cfg.checkpoint {
        Some(_) => Some(required_checkpoint(cfg, "named but unreadable")?),
        None => None,
    };
    let manifest = load_manifest(cfg, "sentence")?;
    let mut run = RunDir::create(cfg, &cfg.run_id)?;
    run.track_input("sentence_manifest", &manifest_path(cfg, "sentence"))?;
    if let Some((_, path)) = &checkpoint {
        run.track_input("checkpoint", path)?;
    }

    let out = run_sentence_downstream(&model, &manifest, &plan, checkpoint.as_ref().map(|(s, _)| s))?;
    write_metrics_csv(run.metrics_path(), &out.records)?;
    out.params.save(run.checkpoint_path())?;
    run.write_input_manifest()?;
    println!("test_wer {}", out.test_wer);
    Ok(out.test_wer)
}

/// Random-projection features of the same dimension as a tap: each
/// center-cropped frame is flattened and multiplied by a fixed Gaussian
/// matrix, giving an untrained baseline the taps must beat.
fn random_projection_features(
    model: &ModelConfig,
    dim: usize,
    projection_seed: u64,
    clips: &[LoadedClip],
) -> Result<Vec<(Tensor<f32>, usize)>> {
    let hw = model.input_hw;
    let n_in = hw * hw;
    let mut rng = RngStream::new(0xba5e).substream(projection_seed);
    let scale = 1.0 / (n_in as f64).sqrt();
    let g: Vec<f32> = (0..n_in * dim).map(|_| (rng.normal01() * scale) as f32).collect();
    clips
        .iter()
        .map(|c| {
            let clip = augment_test(&c.clip, (hw, hw))?;
            let t = clip.shape()[0];
            let mut f = Tensor::zeros(vec![t, dim]);
            for fr in 0..t {
                let frame = &clip.data()[fr * n_in..(fr + 1) * n_in];
                for d in 0..dim {
                    let mut acc = 0.0f32;
                    for (i, &px) in frame.iter().enumerate() {
                        acc += px * g[i * dim + d];
                    }
                    f.data_mut()[fr * dim + d] = acc;
                }
            }
            let label = c
                .word_label
                .ok_or_else(|| CliError::runtime(format!("unlabeled clip {}", c.id)))?;
            Ok((f, label))
        })
        .collect()
}

/// Frozen-regime word accuracy for every configured tap and seed, plus
/// an equal-dimension random-projection baseline per tap. Rows carry
/// the tap name in run_id; regime is "frozen" or "baseline".
pub fn tap_study(cfg: &HarnessConfig) -> Result<Vec<MetricRecord>> {
    let model = cfg.model()?;
    let (store, ckpt_path) = required_checkpoint(cfg, "required for the tap study")?;
    let encoder = store.subtree("encoder/");
    if encoder.is_empty() {
        return Err(CliError::config("checkpoint has no encoder/ entries"));
    }
    let manifest = load_manifest(cfg, "word")?;
    let train: Vec<LoadedClip> = load_clips(manifest.split(Split::Train))?;
    let test: Vec<LoadedClip> = load_clips(manifest.split(Split::Test))?;

    let mut run = RunDir::create(cfg, &cfg.run_id)?;
    run.track_input("word_manifest", &manifest_path(cfg, "word"))?;
    run.track_input("checkpoint", &ckpt_path)?;

    let mut records = Vec::new();
    for (ti, tap) in cfg.taps.iter().enumerate() {
        let dim = tap_dim(&model, tap).map_err(|e| CliError::config(e.to_string()))?;
        let train_feats = extract_tap_features(&model, &encoder, tap, &train)?;
        let test_feats = extract_tap_features(&model, &encoder, tap, &test)?;
        let base_train = random_projection_features(&model, dim, ti as u64, &train)?;
        let base_test = random_projection_features(&model, dim, ti as u64, &test)?;
        for &seed in &cfg.seeds {
            let mut plan = cfg.word.clone();
            plan.regime = Regime::Frozen;
            plan.tap = tap.clone();
            plan.seed = seed;
            plan.run_id = tap.clone();
            let (_, acc, _) = train_head_on_features(&model, &plan, dim, &train_feats, &test_feats)?;
            let (_, base_acc, _) =
                train_head_on_features(&model, &plan, dim, &base_train, &base_test)?;
            for (regime, value) in [("frozen", acc), ("baseline", base_acc)] {
                records.push(MetricRecord {
                    run_id: tap.clone(),
                    task: "tap-study".into(),
                    regime: regime.into(),
                    fraction: 1.0,
                    seed,
                    epoch: plan.epochs,
                    metric: "accuracy".into(),
                    value,
                });
            }
        }
    }
    write_metrics_csv(run.metrics_path(), &records)?;
    run.write_input_manifest()?;
    Ok(records)
}

pub const SWEEP_REGIMES: [Regime; 3] = [Regime::Supervised, Regime::Frozen, Regime::FineTuned];

/// Word-level accuracy for every (regime, fraction, seed) cell, with
/// nested label subsets per seed.
pub fn fraction_sweep(cfg: &HarnessConfig) -> Result<Vec<MetricRecord>> {
    let model = cfg.model()?;
    let (store, ckpt_path) =
        required_checkpoint(cfg, "required for frozen/finetuned sweep cells")?;
    let manifest = load_manifest(cfg, "word")?;

    let mut run = RunDir::create(cfg, &cfg.run_id)?;
    run.track_input("word_manifest", &manifest_path(cfg, "word"))?;
    run.track_input("checkpoint", &ckpt_path)?;

    let mut records = Vec::new();
    for regime in SWEEP_REGIMES {
        for &fraction in &cfg.fractions {
            for &seed in &cfg.seeds {
                let mut plan = cfg.word.clone();
                plan.regime = regime;
                plan.fraction = fraction;
                plan.seed = seed;
                plan.run_id = format!("{}-f{}-s{}", regime.name(), fraction, seed);
                let cell = if fraction < 1.0 {
                    label_fraction_subset(&manifest, fraction, seed)?
                } else {
                    manifest.clone()
                };
                let checkpoint = match regime {
                    Regime::Supervised => None,
                    _ => Some(&store),
                };
                let out = run_word_downstream(&model, &cell, &plan, checkpoint)?;
                records.push(MetricRecord {
                    run_id: plan.run_id.clone(),
                    task: "word".into(),
                    regime: regime.name().into(),
                    fraction,
                    seed,
                    epoch: plan.epochs,
                    metric: "accuracy".into(),
                    value: out.test_accuracy,
                });
            }
        }
    }
    write_metrics_csv(run.metrics_path(), &records)?;
    run.write_input_manifest()?;
    Ok(records)
}

/// Recompute the test metric of a saved checkpoint; deterministic, so
/// it reproduces the metric recorded at training time exactly.
pub fn evaluate(cfg: &HarnessConfig) -> Result<f64> {
    let model = cfg.model()?;
    let (store, _) = required_checkpoint(cfg, "required for evaluate")?;
    let value = match cfg.task.as_str() {
        "word" => {
            let manifest = load_manifest(cfg, "word")?;
            let test: Vec<LoadedClip> = load_clips(manifest.split(Split::Test))?;
            match cfg.word.regime {
                Regime::Frozen => {
                    let encoder = store.subtree("encoder/");
                    if encoder.is_empty() {
                        return Err(CliError::config("checkpoint has no encoder/ entries"));
                    }
                    let feats = extract_tap_features(&model, &encoder, &cfg.word.tap, &test)?;
                    evaluate_head_on_features(&model, &store, &feats)?
                }
                _ => evaluate_word_end_to_end(&model, &store, &test)?,
            }
        }
        "sentence" => {
            let manifest = load_manifest(cfg, "sentence")?;
            let test: Vec<LoadedClip> = load_clips(manifest.split(Split::Test))?;
            evaluate_wer(&model, &store, &test, &cfg.sentence)?
        }
        other => return Err(CliError::config(format!("unknown task {other:?}"))),
    };
    println!("{} {}", if cfg.task == "word" { "test_accuracy" } else { "test_wer" }, value);
    Ok(value)
}
