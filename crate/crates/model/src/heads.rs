//! Task heads: pretext projection MLP, MS-TCN word classifier, and the
//! CTC output layer.

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::nn;
use vsr_core::grad::Session;
use vsr_core::tensor::Scalar;
use vsr_core::Var;

/// Two-layer MLP applied row-wise: `[T, d_model] -> [T, target_dim]`.
pub fn project_head<T: Scalar>(s: &Session<T>, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let h = nn::linear(s, x, "head/proj/w1", "head/proj/b1")?;
    let h = s.tape.relu(h)?;
    let h = s.dropout(h, cfg.dropout)?;
    Ok(nn::linear(s, h, "head/proj/w2", "head/proj/b2")?)
}

/// Multi-scale temporal convolution branches, concatenated on channels,
/// temporal mean, then a linear classifier: `[T, F] -> [1, V_w]` logits.
pub fn mstcn_classify<T: Scalar>(s: &Session<T>, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let shape = s.tape.shape(x);
    if shape.len() != 2 {
        return Err(ModelError::invalid("mstcn_classify", format!("shape {shape:?}")));
    }
    let t = shape[0];
    let need = cfg.mstcn_kernels.iter().copied().max().unwrap_or(1);
    if t < need {
        return Err(ModelError::SequenceTooShort { got: t, need });
    }
    let mut branches = Vec::new();
    for &k in &cfg.mstcn_kernels {
        let w = s.param(&format!("head/mstcn/br{k}/w"))?;
        let b = s.param(&format!("head/mstcn/br{k}/b"))?;
        branches.push(s.tape.conv1d(x, w, b, (k - 1) / 2)?);
    }
    let cat = s.tape.concat_cols(&branches)?;
    let cat = s.tape.relu(cat)?;
    let pooled = s.tape.mean_axis0(cat)?;
    let n = s.tape.numel(pooled);
    let row = s.tape.reshape(pooled, vec![1, n])?;
    Ok(nn::linear(s, row, "head/mstcn/cls/w", "head/mstcn/cls/b")?)
}

/// Per-frame log-probabilities over blank + tokens: `[T, V+1]`,
/// row-normalized.
pub fn ctc_head<T: Scalar>(s: &Session<T>, _cfg: &ModelConfig, enc: Var) -> Result<Var> {
    let logits = nn::linear(s, enc, "head/ctc/w", "head/ctc/b")?;
    Ok(s.tape.log_softmax_rows(logits)?)
}
