//! Model configuration, parameter layout, initialization, and the
//! per-module parameter-count report.

use crate::error::{ModelError, Result};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use vsr_core::rng::RngStream;
use vsr_core::store::ParameterStore;
use vsr_core::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Post-augmentation square input resolution fed to the 3D front-end.
    pub input_hw: usize,
    pub frontend_channels: usize,
    /// 2D residual stages as (channels, spatial stride).
    pub res_stages: Vec<(usize, usize)>,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_head: usize,
    pub d_k: usize,
    pub d_v: usize,
    /// Depthwise kernel of the conformer convolution module; odd.
    pub conv_kernel: usize,
    pub n_blocks: usize,
    pub dropout: f64,
    pub proj_hidden: usize,
    /// Output dimension of the pretext projection head (acoustic D).
    pub target_dim: usize,
    pub mstcn_kernels: Vec<usize>,
    pub mstcn_channels: usize,
    pub word_classes: usize,
    pub token_vocab: usize,
    pub decoder_blocks: usize,
}

impl ModelConfig {
    /// Desk-scale default: gradient-checkable sizes, full architecture.
    pub fn desk() -> Self {
        ModelConfig {
            input_hw: 28,
            frontend_channels: 8,
            res_stages: vec![(8, 1), (16, 2)],
            d_model: 32,
            d_ff: 64,
            n_head: 2,
            d_k: 16,
            d_v: 16,
            conv_kernel: 7,
            n_blocks: 2,
            dropout: 0.1,
            proj_hidden: 64,
            target_dim: 20,
            mstcn_kernels: vec![3, 5, 7],
            mstcn_channels: 8,
            word_classes: 10,
            token_vocab: 8,
            decoder_blocks: 2,
        }
    }

    /// Miniature config for finite-difference gradient checks
    /// (every extent small enough to sweep exhaustively).
    pub fn mini() -> Self {
        ModelConfig {
            input_hw: 12,
            frontend_channels: 2,
            res_stages: vec![(2, 1), (4, 2)],
            d_model: 8,
            d_ff: 8,
            n_head: 2,
            d_k: 4,
            d_v: 4,
            conv_kernel: 3,
            n_blocks: 1,
            dropout: 0.1,
            proj_hidden: 4,
            target_dim: 3,
            mstcn_kernels: vec![3, 5, 7],
            mstcn_channels: 2,
            word_classes: 4,
            token_vocab: 3,
            decoder_blocks: 1,
        }
    }

    /// Full-scale reference configuration (12 temporal blocks,
    /// d_ff=2048, 4 heads, 500-way word classifier). Used for the
    /// parameter-count report and shape reasoning only; never trained
    /// here.
    pub fn paper_scale() -> Self {
        ModelConfig {
            input_hw: 88,
            frontend_channels: 64,
            res_stages: vec![(64, 1), (128, 2), (256, 2), (512, 2)],
            d_model: 256,
            d_ff: 2048,
            n_head: 4,
            d_k: 64,
            d_v: 64,
            conv_kernel: 31,
            n_blocks: 12,
            dropout: 0.1,
            proj_hidden: 256,
            target_dim: 256,
            mstcn_kernels: vec![3, 5, 7],
            mstcn_channels: 256,
            word_classes: 500,
            token_vocab: 40,
            decoder_blocks: 12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_kernel % 2 == 0 {
            return Err(ModelError::Config(format!(
                "conv_kernel must be odd, got {}",
                self.conv_kernel
            )));
        }
        if self.res_stages.is_empty() {
            return Err(ModelError::Config("need at least one residual stage".into()));
        }
        if self.n_head == 0 || self.n_blocks == 0 || self.d_model == 0 {
            return Err(ModelError::Config("zero-sized temporal encoder".into()));
        }
        if self.mstcn_kernels.iter().any(|k| k % 2 == 0) {
            return Err(ModelError::Config("MS-TCN kernels must be odd".into()));
        }
        self.spatial_geometry()?;
        Ok(())
    }

    // --- token id conventions for the sentence decoder ---
    pub fn sos(&self) -> usize {
        self.token_vocab
    }
    pub fn eos(&self) -> usize {
        self.token_vocab + 1
    }
    pub fn pad(&self) -> usize {
        self.token_vocab + 2
    }
    /// Embedding rows: tokens + sos + eos + pad.
    pub fn embed_vocab(&self) -> usize {
        self.token_vocab + 3
    }
    /// Decoder output classes: tokens + sos + eos (sos never targeted).
    pub fn dec_out(&self) -> usize {
        self.token_vocab + 2
    }
    /// CTC classes: blank (0) + tokens 1..=V.
    pub fn ctc_out(&self) -> usize {
        self.token_vocab + 1
    }

    /// Spatial extents after the front-end, the pool, and each residual
    /// stage. Errors if any stage would collapse below 1 pixel.
    pub fn spatial_geometry(&self) -> Result<SpatialGeometry> {
        let h0 = self.input_hw;
        if h0 + 6 < 7 {
            return Err(ModelError::Config("input too small".into()));
        }
        let front = (h0 + 2 * 3 - 7) / 2 + 1;
        if front < 2 {
            return Err(ModelError::SpatialTooSmall { got: h0, need: 9 });
        }
        let pooled = front / 2;
        if pooled < 1 {
            return Err(ModelError::SpatialTooSmall { got: h0, need: 9 });
        }
        let mut stages = Vec::new();
        let mut h = pooled;
        for &(_, stride) in &self.res_stages {
            if h + 2 < 3 || (h + 2 - 3) / stride + 1 < 1 {
                return Err(ModelError::SpatialTooSmall { got: h0, need: 9 });
            }
            h = (h + 2 - 3) / stride + 1;
            stages.push(h);
        }
        Ok(SpatialGeometry { front, pooled, stages })
    }
}

#[derive(Debug, Clone)]
pub struct SpatialGeometry {
    pub front: usize,
    pub pooled: usize,
    pub stages: Vec<usize>,
}

/// Which parameter groups to materialize for a given task.
#[derive(Debug, Clone, Copy, Default)]
pub struct Parts {
    pub encoder: bool,
    pub proj: bool,
    pub mstcn: bool,
    pub ctc: bool,
    pub decoder: bool,
}

impl Parts {
    pub fn pretext() -> Self {
        Parts { encoder: true, proj: true, ..Default::default() }
    }
    pub fn word() -> Self {
        Parts { encoder: true, mstcn: true, ..Default::default() }
    }
    /// Word heads only (frozen-feature training on tapped features).
    pub fn word_head(feature_dim: usize) -> (Self, usize) {
        (Parts { mstcn: true, ..Default::default() }, feature_dim)
    }
    pub fn sentence() -> Self {
        Parts { encoder: true, ctc: true, decoder: true, ..Default::default() }
    }
}

enum Init {
    /// Normal with std 1/sqrt(fan_in).
    FanIn(usize),
    Zero,
    One,
}

type ParamSpec = (String, Vec<usize>, Init);

fn encoder_specs(cfg: &ModelConfig, out: &mut Vec<ParamSpec>) {
    let p = |s: &str| format!("encoder/{s}");
    let c0 = cfg.frontend_channels;
    out.push((p("front/w"), vec![c0, 1, 5, 7, 7], Init::FanIn(5 * 7 * 7)));
    out.push((p("front/b"), vec![c0], Init::Zero));
    let geom = cfg.spatial_geometry().expect("validated config");
    let mut cin = c0;
    for (i, (&(c, _stride), &h)) in cfg.res_stages.iter().zip(&geom.stages).enumerate() {
        let pre = format!("encoder/res{}", i + 1);
        out.push((format!("{pre}/c1w"), vec![c, cin, 3, 3], Init::FanIn(cin * 9)));
        out.push((format!("{pre}/c1b"), vec![c], Init::Zero));
        out.push((format!("{pre}/c2w"), vec![c, c, 3, 3], Init::FanIn(c * 9)));
        out.push((format!("{pre}/c2b"), vec![c], Init::Zero));
        out.push((format!("{pre}/skw"), vec![c, cin, 1, 1], Init::FanIn(cin)));
        out.push((format!("{pre}/skb"), vec![c], Init::Zero));
        out.push((format!("{pre}/ln_g"), vec![c * h * h], Init::One));
        out.push((format!("{pre}/ln_b"), vec![c * h * h], Init::Zero));
        cin = c;
    }
    out.push((p("out/w"), vec![cin, cfg.d_model], Init::FanIn(cin)));
    out.push((p("out/b"), vec![cfg.d_model], Init::Zero));

    let d = cfg.d_model;
    out.push((p("conf/emb/w"), vec![d, d], Init::FanIn(d)));
    out.push((p("conf/emb/b"), vec![d], Init::Zero));
    out.push((p("conf/emb/ln_g"), vec![d], Init::One));
    out.push((p("conf/emb/ln_b"), vec![d], Init::Zero));
    let hk = cfg.n_head * cfg.d_k;
    let hv = cfg.n_head * cfg.d_v;
    for i in 1..=cfg.n_blocks {
        let pre = format!("encoder/conf/b{i}");
        for ffn in ["ffn1", "ffn2"] {
            out.push((format!("{pre}/{ffn}/ln_g"), vec![d], Init::One));
            out.push((format!("{pre}/{ffn}/ln_b"), vec![d], Init::Zero));
            out.push((format!("{pre}/{ffn}/w1"), vec![d, cfg.d_ff], Init::FanIn(d)));
            out.push((format!("{pre}/{ffn}/b1"), vec![cfg.d_ff], Init::Zero));
            out.push((format!("{pre}/{ffn}/w2"), vec![cfg.d_ff, d], Init::FanIn(cfg.d_ff)));
            out.push((format!("{pre}/{ffn}/b2"), vec![d], Init::Zero));
        }
        out.push((format!("{pre}/attn/ln_g"), vec![d], Init::One));
        out.push((format!("{pre}/attn/ln_b"), vec![d], Init::Zero));
        out.push((format!("{pre}/attn/wq"), vec![d, hk], Init::FanIn(d)));
        out.push((format!("{pre}/attn/wk"), vec![d, hk], Init::FanIn(d)));
        out.push((format!("{pre}/attn/wv"), vec![d, hv], Init::FanIn(d)));
        out.push((format!("{pre}/attn/wr"), vec![d, hk], Init::FanIn(d)));
        out.push((format!("{pre}/attn/u"), vec![hk], Init::Zero));
        out.push((format!("{pre}/attn/v"), vec![hk], Init::Zero));
        out.push((format!("{pre}/attn/wo"), vec![hv, d], Init::FanIn(hv)));
        out.push((format!("{pre}/attn/ob"), vec![d], Init::Zero));
        out.push((format!("{pre}/conv/ln_g"), vec![d], Init::One));
        out.push((format!("{pre}/conv/ln_b"), vec![d], Init::Zero));
        out.push((format!("{pre}/conv/pw1_w"), vec![d, 2 * d], Init::FanIn(d)));
        out.push((format!("{pre}/conv/pw1_b"), vec![2 * d], Init::Zero));
        out.push((format!("{pre}/conv/dw_w"), vec![d, cfg.conv_kernel], Init::FanIn(cfg.conv_kernel)));
        out.push((format!("{pre}/conv/dw_b"), vec![d], Init::Zero));
        out.push((format!("{pre}/conv/ln2_g"), vec![d], Init::One));
        out.push((format!("{pre}/conv/ln2_b"), vec![d], Init::Zero));
        out.push((format!("{pre}/conv/pw2_w"), vec![d, d], Init::FanIn(d)));
        out.push((format!("{pre}/conv/pw2_b"), vec![d], Init::Zero));
        out.push((format!("{pre}/final_ln_g"), vec![d], Init::One));
        out.push((format!("{pre}/final_ln_b"), vec![d], Init::Zero));
    }
}

fn proj_specs(cfg: &ModelConfig, out: &mut Vec<ParamSpec>) {
    let d = cfg.d_model;
    out.push(("head/proj/w1".into(), vec![d, cfg.proj_hidden], Init::FanIn(d)));
    out.push(("head/proj/b1".into(), vec![cfg.proj_hidden], Init::Zero));
    out.push(("head/proj/w2".into(), vec![cfg.proj_hidden, cfg.target_dim], Init::FanIn(cfg.proj_hidden)));
    out.push(("head/proj/b2".into(), vec![cfg.target_dim], Init::Zero));
}

fn mstcn_specs(cfg: &ModelConfig, feature_dim: usize, out: &mut Vec<ParamSpec>) {
    let cb = cfg.mstcn_channels;
    for &k in &cfg.mstcn_kernels {
        out.push((format!("head/mstcn/br{k}/w"), vec![cb, feature_dim, k], Init::FanIn(feature_dim * k)));
        out.push((format!("head/mstcn/br{k}/b"), vec![cb], Init::Zero));
    }
    let cat = cb * cfg.mstcn_kernels.len();
    out.push(("head/mstcn/cls/w".into(), vec![cat, cfg.word_classes], Init::FanIn(cat)));
    out.push(("head/mstcn/cls/b".into(), vec![cfg.word_classes], Init::Zero));
}

fn ctc_specs(cfg: &ModelConfig, out: &mut Vec<ParamSpec>) {
    let d = cfg.d_model;
    out.push(("head/ctc/w".into(), vec![d, cfg.ctc_out()], Init::FanIn(d)));
    out.push(("head/ctc/b".into(), vec![cfg.ctc_out()], Init::Zero));
}

fn decoder_specs(cfg: &ModelConfig, out: &mut Vec<ParamSpec>) {
    let d = cfg.d_model;
    let hk = cfg.n_head * cfg.d_k;
    let hv = cfg.n_head * cfg.d_v;
    out.push(("decoder/embed".into(), vec![cfg.embed_vocab(), d], Init::FanIn(d)));
    for i in 1..=cfg.decoder_blocks {
        for att in ["self", "cross"] {
            let pre = format!("decoder/b{i}/{att}");
            out.push((format!("{pre}/ln_g"), vec![d], Init::One));
            out.push((format!("{pre}/ln_b"), vec![d], Init::Zero));
            out.push((format!("{pre}/wq"), vec![d, hk], Init::FanIn(d)));
            out.push((format!("{pre}/wk"), vec![d, hk], Init::FanIn(d)));
            out.push((format!("{pre}/wv"), vec![d, hv], Init::FanIn(d)));
            out.push((format!("{pre}/wo"), vec![hv, d], Init::FanIn(hv)));
            out.push((format!("{pre}/ob"), vec![d], Init::Zero));
        }
        let pre = format!("decoder/b{i}/ffn");
        out.push((format!("{pre}/ln_g"), vec![d], Init::One));
        out.push((format!("{pre}/ln_b"), vec![d], Init::Zero));
        out.push((format!("{pre}/w1"), vec![d, cfg.d_ff], Init::FanIn(d)));
        out.push((format!("{pre}/b1"), vec![cfg.d_ff], Init::Zero));
        out.push((format!("{pre}/w2"), vec![cfg.d_ff, d], Init::FanIn(cfg.d_ff)));
        out.push((format!("{pre}/b2"), vec![d], Init::Zero));
    }
    out.push(("decoder/final_ln_g".into(), vec![d], Init::One));
    out.push(("decoder/final_ln_b".into(), vec![d], Init::Zero));
    out.push(("decoder/out/w".into(), vec![d, cfg.dec_out()], Init::FanIn(d)));
    out.push(("decoder/out/b".into(), vec![cfg.dec_out()], Init::Zero));
}

fn param_specs(cfg: &ModelConfig, parts: Parts, mstcn_feature_dim: usize) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    if parts.encoder {
        encoder_specs(cfg, &mut out);
    }
    if parts.proj {
        proj_specs(cfg, &mut out);
    }
    if parts.mstcn {
        mstcn_specs(cfg, mstcn_feature_dim, &mut out);
    }
    if parts.ctc {
        ctc_specs(cfg, &mut out);
    }
    if parts.decoder {
        decoder_specs(cfg, &mut out);
    }
    out
}

/// Materialize freshly initialized parameters for the requested parts.
/// `mstcn_feature_dim` is the per-frame feature width feeding the word
/// head (d_model for end-to-end models, the tap width for frozen runs).
pub fn init_params(
    cfg: &ModelConfig,
    parts: Parts,
    mstcn_feature_dim: usize,
    seed: u64,
) -> Result<ParameterStore> {
    cfg.validate()?;
    let mut store = ParameterStore::new();
    let mut rng = RngStream::new(seed).substream(0x1417);
    for (name, shape, init) in param_specs(cfg, parts, mstcn_feature_dim) {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            Init::Zero => vec![0.0; n],
            Init::One => vec![1.0; n],
            Init::FanIn(fan) => {
                let std = 1.0 / (fan as f64).sqrt();
                (0..n).map(|_| (std * rng.normal01()) as f32).collect()
            }
        };
        store.insert_tensor(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

/// Deterministic per-module parameter counts (top-two name components).
pub fn param_count_report(cfg: &ModelConfig, parts: Parts, mstcn_feature_dim: usize) -> IndexMap<String, usize> {
    let mut report = IndexMap::new();
    let mut total = 0usize;
    for (name, shape, _) in param_specs(cfg, parts, mstcn_feature_dim) {
        let n: usize = shape.iter().product();
        let module = name.splitn(3, '/').take(2).collect::<Vec<_>>().join("/");
        *report.entry(module).or_insert(0) += n;
        total += n;
    }
    report.insert("total".into(), total);
    report
}
