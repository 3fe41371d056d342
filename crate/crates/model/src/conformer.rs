//! Conformer temporal encoder with shift-based relative positional
//! attention: FFN(half) -> MHSA(rel) -> Conv -> FFN(half) -> LayerNorm
//! per block, pre-norm residuals throughout.

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::nn;
use indexmap::IndexMap;
use vsr_core::grad::Session;
use vsr_core::tensor::Scalar;
use vsr_core::Var;

fn ffn_half<T: Scalar>(s: &Session<T>, cfg: &ModelConfig, pre: &str, x: Var) -> Result<Var> {
    let xn = nn::layer_norm(s, x, &format!("{pre}/ln_g"), &format!("{pre}/ln_b"))?;
    let h = nn::linear(s, xn, &format!("{pre}/w1"), &format!("{pre}/b1"))?;
    let h = s.tape.swish(h)?;
    let h = s.dropout(h, cfg.dropout)?;
    let h = nn::linear(s, h, &format!("{pre}/w2"), &format!("{pre}/b2"))?;
    let h = s.dropout(h, cfg.dropout)?;
    let h = s.tape.scale(h, T::from_f64(0.5))?;
    Ok(s.tape.add(x, h)?)
}

/// Per-head pre-softmax relative attention scores for a normalized
/// input `xn`: score[i][j] = ((q_i+u)·k_j + (q_i+v)·r_{i-j}) / sqrt(d_k).
/// Shifting a sequence inside constant padding leaves the payload
/// submatrix unchanged, which the tests assert directly.
pub fn rel_attention_scores<T: Scalar>(
    s: &Session<T>,
    cfg: &ModelConfig,
    pre: &str,
    xn: Var,
) -> Result<Vec<Var>> {
    let t = s.tape.shape(xn)[0];
    let q = s.tape.matmul(xn, false, s.param(&format!("{pre}/wq"))?, false)?;
    let k = s.tape.matmul(xn, false, s.param(&format!("{pre}/wk"))?, false)?;
    let r = s.constant(nn::sinusoid_table(2 * t - 1, cfg.d_model, |c| {
        c as f64 - (t as f64 - 1.0)
    }));
    let p = s.tape.matmul(r, false, s.param(&format!("{pre}/wr"))?, false)?;
    let u = s.param(&format!("{pre}/u"))?;
    let v = s.param(&format!("{pre}/v"))?;
    let inv_sqrt = T::from_f64(1.0 / (cfg.d_k as f64).sqrt());
    let mut scores = Vec::new();
    for h in 0..cfg.n_head {
        let (lo, hi) = (h * cfg.d_k, (h + 1) * cfg.d_k);
        let qh = s.tape.slice_cols(q, lo, hi)?;
        let kh = s.tape.slice_cols(k, lo, hi)?;
        let ph = s.tape.slice_cols(p, lo, hi)?;
        let uh = nn::vec_slice(s, u, lo, hi)?;
        let vh = nn::vec_slice(s, v, lo, hi)?;
        let qu = s.tape.add_bias(qh, uh)?;
        let content = s.tape.matmul(qu, false, kh, true)?;
        let qv = s.tape.add_bias(qh, vh)?;
        let pos = s.tape.rel_gather(s.tape.matmul(qv, false, ph, true)?)?;
        let sc = s.tape.add(content, pos)?;
        scores.push(s.tape.scale(sc, inv_sqrt)?);
    }
    Ok(scores)
}

fn mhsa_rel<T: Scalar>(s: &Session<T>, cfg: &ModelConfig, pre: &str, x: Var) -> Result<Var> {
    let xn = nn::layer_norm(s, x, &format!("{pre}/ln_g"), &format!("{pre}/ln_b"))?;
    let v = s.tape.matmul(xn, false, s.param(&format!("{pre}/wv"))?, false)?;
    let scores = rel_attention_scores(s, cfg, pre, xn)?;
    let mut heads = Vec::new();
    for (h, sc) in scores.into_iter().enumerate() {
        let attn = s.tape.softmax_rows(sc)?;
        let vh = s.tape.slice_cols(v, h * cfg.d_v, (h + 1) * cfg.d_v)?;
        heads.push(s.tape.matmul(attn, false, vh, false)?);
    }
    let cat = s.tape.concat_cols(&heads)?;
    let out = s.tape.matmul(cat, false, s.param(&format!("{pre}/wo"))?, false)?;
    let out = s.tape.add_bias(out, s.param(&format!("{pre}/ob"))?)?;
    let out = s.dropout(out, cfg.dropout)?;
    Ok(s.tape.add(x, out)?)
}

fn conv_module<T: Scalar>(s: &Session<T>, cfg: &ModelConfig, pre: &str, x: Var) -> Result<Var> {
    let xn = nn::layer_norm(s, x, &format!("{pre}/ln_g"), &format!("{pre}/ln_b"))?;
    let h = nn::linear(s, xn, &format!("{pre}/pw1_w"), &format!("{pre}/pw1_b"))?;
    let h = s.tape.glu(h)?;
    let dw = s.param(&format!("{pre}/dw_w"))?;
    let db = s.param(&format!("{pre}/dw_b"))?;
    let h = s.tape.depthwise_conv1d(h, dw, db, (cfg.conv_kernel - 1) / 2)?;
    let h = nn::layer_norm(s, h, &format!("{pre}/ln2_g"), &format!("{pre}/ln2_b"))?;
    let h = s.tape.swish(h)?;
    let h = nn::linear(s, h, &format!("{pre}/pw2_w"), &format!("{pre}/pw2_b"))?;
    let h = s.dropout(h, cfg.dropout)?;
    Ok(s.tape.add(x, h)?)
}

/// Encode `[T, d_model] -> [T, d_model]`, recording taps "ce-b1".."ce-bN".
pub fn conformer_encode<T: Scalar>(
    s: &Session<T>,
    cfg: &ModelConfig,
    x: Var,
    taps: &mut IndexMap<String, Var>,
) -> Result<Var> {
    let shape = s.tape.shape(x);
    if shape.len() != 2 || shape[1] != cfg.d_model {
        return Err(ModelError::invalid(
            "conformer_encode",
            format!("expected [T, {}], got {shape:?}", cfg.d_model),
        ));
    }
    // embedding module: linear + layer norm + dropout
    let mut x = nn::linear(s, x, "encoder/conf/emb/w", "encoder/conf/emb/b")?;
    x = nn::layer_norm(s, x, "encoder/conf/emb/ln_g", "encoder/conf/emb/ln_b")?;
    x = s.dropout(x, cfg.dropout)?;
    for i in 1..=cfg.n_blocks {
        let pre = format!("encoder/conf/b{i}");
        x = ffn_half(s, cfg, &format!("{pre}/ffn1"), x)?;
        x = mhsa_rel(s, cfg, &format!("{pre}/attn"), x)?;
        x = conv_module(s, cfg, &format!("{pre}/conv"), x)?;
        x = ffn_half(s, cfg, &format!("{pre}/ffn2"), x)?;
        x = nn::layer_norm(s, x, &format!("{pre}/final_ln_g"), &format!("{pre}/final_ln_b"))?;
        taps.insert(format!("ce-b{i}"), x);
    }
    Ok(x)
}

/// Full video encoder: spatial stage then temporal stage, all taps
/// recorded.
pub fn encode<T: Scalar>(
    s: &Session<T>,
    cfg: &ModelConfig,
    clip: Var,
    taps: &mut IndexMap<String, Var>,
) -> Result<Var> {
    let spatial = crate::spatial::spatial_encode(s, cfg, clip, taps)?;
    conformer_encode(s, cfg, spatial, taps)
}

/// Valid tap names for a config.
pub fn tap_names(cfg: &ModelConfig) -> Vec<String> {
    let mut names = vec!["res-b3".to_string(), "res-b4".to_string()];
    for i in 1..=cfg.n_blocks {
        names.push(format!("ce-b{i}"));
    }
    names
}
