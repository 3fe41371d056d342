//! Finite-difference gradient checks of the assembled model pieces at
//! miniature sizes (dropout off so the programs are deterministic).

use indexmap::IndexMap;
use vsr_core::grad::{grad_check, grad_check_with_floor};
use vsr_core::rng::RngStream;
use vsr_core::store::ParameterStore;
use vsr_core::tensor::Tensor;
use vsr_model::conformer::{conformer_encode, encode};
use vsr_model::heads::{mstcn_classify, project_head};
use vsr_model::losses::{ctc_loss, joint_loss, l1_pretext_loss, label_smoothed_ce};
use vsr_model::spatial::spatial_encode;
use vsr_model::{init_params, ModelConfig, ModelError, Parts};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn mini_no_dropout() -> ModelConfig {
    let mut cfg = ModelConfig::mini();
    cfg.dropout = 0.0;
    cfg
}

fn random_clip(t: usize, hw: usize, seed: u64) -> Tensor<f64> {
    let mut rng = RngStream::new(seed);
    let data: Vec<f64> = (0..t * hw * hw).map(|_| rng.uniform01()).collect();
    Tensor::new(vec![t, hw, hw], data).unwrap()
}

fn random_matrix(r: usize, c: usize, seed: u64) -> Tensor<f64> {
    let mut rng = RngStream::new(seed);
    let data: Vec<f64> = (0..r * c).map(|_| rng.normal01() * 0.5).collect();
    Tensor::new(vec![r, c], data).unwrap()
}

#[test]
fn spatial_encoder_gradients() {
    let cfg = mini_no_dropout();
    let mut params = init_params(&cfg, Parts::pretext(), cfg.d_model, 5).unwrap();
    // Keep the sweep to the spatial stage only.
    for name in params.names().map(|s| s.to_string()).collect::<Vec<_>>() {
        if name.starts_with("encoder/conf/") || name.starts_with("head/") {
            params.remove(&name).unwrap();
        }
    }
    let clip = random_clip(2, cfg.input_hw, 7);
    let rel = grad_check::<_, ModelError>(&params, EPS, |s| {
        let x = s.input(clip.clone());
        let mut taps = IndexMap::new();
        let out = spatial_encode(s, &cfg, x, &mut taps)?;
        // Asymmetric head so no gradient direction cancels out.
        let sw = s.tape.swish(out)?;
        Ok(s.tape.mean_all(sw)?)
    })
    .unwrap();
    assert!(rel < TOL, "spatial rel err {rel}");
}

#[test]
fn conformer_gradients() {
    let cfg = mini_no_dropout();
    let mut params = init_params(&cfg, Parts::pretext(), cfg.d_model, 6).unwrap();
    for name in params.names().map(|s| s.to_string()).collect::<Vec<_>>() {
        if !name.starts_with("encoder/conf/") {
            params.remove(&name).unwrap();
        }
    }
    let x = random_matrix(5, cfg.d_model, 8);
    // Floor at 1e-6: the deep composition has elements with true
    // gradient ~1e-9 where the central difference is all roundoff.
    let rel = grad_check_with_floor::<_, ModelError>(&params, EPS, 1e-6, |s| {
        let xv = s.input(x.clone());
        let mut taps = IndexMap::new();
        let out = conformer_encode(s, &cfg, xv, &mut taps)?;
        let sw = s.tape.swish(out)?;
        Ok(s.tape.mean_all(sw)?)
    })
    .unwrap();
    assert!(rel < TOL, "conformer rel err {rel}");
}

#[test]
fn pretext_head_and_loss_gradients() {
    let cfg = mini_no_dropout();
    let mut params = init_params(&cfg, Parts::pretext(), cfg.d_model, 9).unwrap();
    for name in params.names().map(|s| s.to_string()).collect::<Vec<_>>() {
        if !name.starts_with("head/proj/") {
            params.remove(&name).unwrap();
        }
    }
    let x = random_matrix(4, cfg.d_model, 10);
    let target = random_matrix(4, cfg.target_dim, 11);
    let rel = grad_check::<_, ModelError>(&params, EPS, |s| {
        let xv = s.input(x.clone());
        let pred = project_head(s, &cfg, xv)?;
        let tv = s.constant(target.clone());
        l1_pretext_loss(s, pred, tv)
    })
    .unwrap();
    assert!(rel < TOL, "pretext head rel err {rel}");
}

#[test]
fn mstcn_gradients() {
    let cfg = mini_no_dropout();
    let feature_dim = 3;
    let params = init_params(
        &cfg,
        Parts { mstcn: true, ..Default::default() },
        feature_dim,
        12,
    )
    .unwrap();
    let x = random_matrix(8, feature_dim, 13);
    let rel = grad_check::<_, ModelError>(&params, EPS, |s| {
        let xv = s.input(x.clone());
        let logits = mstcn_classify(s, &cfg, xv)?;
        label_smoothed_ce(s, logits, &[1], 0.0)
    })
    .unwrap();
    assert!(rel < TOL, "mstcn rel err {rel}");
}

#[test]
fn decoder_and_joint_loss_gradients() {
    let cfg = mini_no_dropout();
    let params = init_params(
        &cfg,
        Parts { ctc: true, decoder: true, ..Default::default() },
        cfg.d_model,
        14,
    )
    .unwrap();
    let enc = random_matrix(4, cfg.d_model, 15);
    let transcript = vec![0usize, 1];
    let rel = grad_check::<_, ModelError>(&params, EPS, |s| {
        let e = s.input(enc.clone());
        joint_loss(s, &cfg, e, &transcript, 0.3, 0.1)
    })
    .unwrap();
    assert!(rel < TOL, "joint rel err {rel}");
}

#[test]
fn full_sentence_model_gradients() {
    let cfg = mini_no_dropout();
    let mut params = init_params(&cfg, Parts::sentence(), cfg.d_model, 16).unwrap();
    // Jitter every entry away from the zero-bias init: at miniature
    // sizes exact zeros leave dead relu channels feeding layer norms,
    // where the loss is nearly non-differentiable.
    let mut jitter = RngStream::new(99);
    for name in params.names().map(|s| s.to_string()).collect::<Vec<_>>() {
        let mut t: Tensor<f64> = params.get_tensor(&name).unwrap();
        for v in t.data_mut() {
            *v += jitter.normal01() * 0.05;
        }
        params
            .set(&name, vsr_core::store::TensorData::from_tensor(t))
            .unwrap();
    }
    let clip = random_clip(3, cfg.input_hw, 17);
    let transcript = vec![1usize];
    let rel = grad_check_with_floor::<_, ModelError>(&params, EPS, 1e-6, |s| {
        let x = s.input(clip.clone());
        let mut taps = IndexMap::new();
        let e = encode(s, &cfg, x, &mut taps)?;
        joint_loss(s, &cfg, e, &transcript, 0.5, 0.1)
    })
    .unwrap();
    assert!(rel < TOL, "full model rel err {rel}");
}

#[test]
fn ctc_gradient_through_log_softmax() {
    let mut params = ParameterStore::new();
    params
        .insert_tensor("logits".to_string(), random_matrix(5, 4, 18))
        .unwrap();
    let target = vec![1usize, 2, 1];
    let rel = grad_check::<_, ModelError>(&params, EPS, |s| {
        let l = s.param("logits")?;
        let lp = s.tape.log_softmax_rows(l)?;
        ctc_loss(s, lp, &target)
    })
    .unwrap();
    assert!(rel < 1e-6, "ctc rel err {rel}");
}

#[test]
fn dropout_enabled_model_is_rejected_by_grad_check() {
    let cfg = ModelConfig::mini(); // dropout 0.1
    let params = init_params(&cfg, Parts::pretext(), cfg.d_model, 19).unwrap();
    let clip = random_clip(2, cfg.input_hw, 20);
    let err = grad_check::<_, ModelError>(&params, EPS, |s| {
        let x = s.input(clip.clone());
        let mut taps = IndexMap::new();
        let out = encode(s, &cfg, x, &mut taps)?;
        Ok(s.tape.mean_all(out)?)
    })
    .unwrap_err();
    assert!(matches!(err, ModelError::Core(vsr_core::CoreError::NonDeterministic)));
}
