//! Autoregressive transformer decoder over the token vocabulary plus
//! sos/eos/pad, with exact causal masking.

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::nn;
use vsr_core::grad::Session;
use vsr_core::tensor::{Scalar, Tensor};
use vsr_core::Var;

/// Mask value: large enough that exp(masked - rowmax) underflows to an
/// exact 0, making causality hold bit-level.
const MASK: f64 = -1e30;

fn attention<T: Scalar>(
    s: &Session<T>,
    cfg: &ModelConfig,
    pre: &str,
    x: Var,
    kv: Var,
    causal: bool,
) -> Result<Var> {
    let xn = nn::layer_norm(s, x, &format!("{pre}/ln_g"), &format!("{pre}/ln_b"))?;
    let q = s.tape.matmul(xn, false, s.param(&format!("{pre}/wq"))?, false)?;
    let k = s.tape.matmul(kv, false, s.param(&format!("{pre}/wk"))?, false)?;
    let v = s.tape.matmul(kv, false, s.param(&format!("{pre}/wv"))?, false)?;
    let (lq, lk) = (s.tape.shape(q)[0], s.tape.shape(k)[0]);
    let inv_sqrt = T::from_f64(1.0 / (cfg.d_k as f64).sqrt());
    let mask = causal.then(|| {
        let mut m = Tensor::<T>::zeros(vec![lq, lk]);
        for i in 0..lq {
            for j in i + 1..lk {
                m.data_mut()[i * lk + j] = T::from_f64(MASK);
            }
        }
        s.constant(m)
    });
    let mut heads = Vec::new();
    for h in 0..cfg.n_head {
        let qh = s.tape.slice_cols(q, h * cfg.d_k, (h + 1) * cfg.d_k)?;
        let kh = s.tape.slice_cols(k, h * cfg.d_k, (h + 1) * cfg.d_k)?;
        let vh = s.tape.slice_cols(v, h * cfg.d_v, (h + 1) * cfg.d_v)?;
        let mut sc = s.tape.scale(s.tape.matmul(qh, false, kh, true)?, inv_sqrt)?;
        if let Some(m) = mask {
            sc = s.tape.add(sc, m)?;
        }
        let attn = s.tape.softmax_rows(sc)?;
        heads.push(s.tape.matmul(attn, false, vh, false)?);
    }
    let cat = s.tape.concat_cols(&heads)?;
    let out = s.tape.matmul(cat, false, s.param(&format!("{pre}/wo"))?, false)?;
    let out = s.tape.add_bias(out, s.param(&format!("{pre}/ob"))?)?;
    let out = s.dropout(out, cfg.dropout)?;
    Ok(s.tape.add(x, out)?)
}

/// Next-token logits for every prefix position: `[len(prefix), dec_out]`.
/// The prefix must start with sos; logits at position i depend only on
/// prefix[0..=i] and the full encoder output.
pub fn decode_logits<T: Scalar>(
    s: &Session<T>,
    cfg: &ModelConfig,
    enc: Var,
    prefix: &[usize],
) -> Result<Var> {
    let enc_shape = s.tape.shape(enc);
    if enc_shape.len() != 2 || enc_shape[1] != cfg.d_model {
        return Err(ModelError::invalid(
            "decode_logits",
            format!("encoder output {enc_shape:?}, want [T, {}]", cfg.d_model),
        ));
    }
    if prefix.first() != Some(&cfg.sos()) {
        return Err(ModelError::invalid("decode_logits", "prefix must start with sos"));
    }
    if let Some(&bad) = prefix.iter().find(|&&t| t >= cfg.embed_vocab()) {
        return Err(ModelError::UnknownToken(bad, cfg.embed_vocab()));
    }
    let table = s.param("decoder/embed")?;
    let mut x = s.tape.embedding(table, prefix)?;
    let pos = s.constant(nn::sinusoid_table(prefix.len(), cfg.d_model, |i| i as f64));
    x = s.tape.add(x, pos)?;
    x = s.dropout(x, cfg.dropout)?;
    for i in 1..=cfg.decoder_blocks {
        x = attention(s, cfg, &format!("decoder/b{i}/self"), x, x, true)?;
        // cross-attention keys/values come straight from the encoder
        let xn_kv = enc;
        x = attention(s, cfg, &format!("decoder/b{i}/cross"), x, xn_kv, false)?;
        let pre = format!("decoder/b{i}/ffn");
        let xn = nn::layer_norm(s, x, &format!("{pre}/ln_g"), &format!("{pre}/ln_b"))?;
        let h = nn::linear(s, xn, &format!("{pre}/w1"), &format!("{pre}/b1"))?;
        let h = s.tape.relu(h)?;
        let h = s.dropout(h, cfg.dropout)?;
        let h = nn::linear(s, h, &format!("{pre}/w2"), &format!("{pre}/b2"))?;
        let h = s.dropout(h, cfg.dropout)?;
        x = s.tape.add(x, h)?;
    }
    let x = nn::layer_norm(s, x, "decoder/final_ln_g", "decoder/final_ln_b")?;
    Ok(nn::linear(s, x, "decoder/out/w", "decoder/out/b")?)
}

/// Log-probabilities of the next token per prefix position.
pub fn decode_log_probs<T: Scalar>(
    s: &Session<T>,
    cfg: &ModelConfig,
    enc: Var,
    prefix: &[usize],
) -> Result<Var> {
    let logits = decode_logits(s, cfg, enc, prefix)?;
    Ok(s.tape.log_softmax_rows(logits)?)
}
