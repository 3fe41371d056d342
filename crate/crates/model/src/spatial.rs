//! Spatial encoder: 3D front-end over the whole clip, then 2D residual
//! stages applied frame-wise, ending in global average pooling to one
//! vector per frame.

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::nn;
use indexmap::IndexMap;
use vsr_core::grad::Session;
use vsr_core::tensor::Scalar;
use vsr_core::Var;

/// Encode a clip `[T, H, W]` to `[T, d_model]`. Records the "res-b3"
/// (second-to-last stage, spatially pooled) and "res-b4" (output) taps.
pub fn spatial_encode<T: Scalar>(
    s: &Session<T>,
    cfg: &ModelConfig,
    clip: Var,
    taps: &mut IndexMap<String, Var>,
) -> Result<Var> {
    let shape = s.tape.shape(clip);
    if shape.len() != 3 {
        return Err(ModelError::invalid("spatial_encode", format!("clip shape {shape:?}")));
    }
    let (t, h, w) = (shape[0], shape[1], shape[2]);
    if h != cfg.input_hw || w != cfg.input_hw {
        return Err(ModelError::SpatialTooSmall { got: h.min(w), need: cfg.input_hw });
    }
    cfg.spatial_geometry()?; // rejects collapsing extents up front

    // 3D front-end: stride 1 and symmetric padding on time, stride 2 on
    // space, so the temporal extent survives unchanged.
    let x = s.tape.reshape(clip, vec![1, t, h, w])?;
    let fw = s.param("encoder/front/w")?;
    let fb = s.param("encoder/front/b")?;
    let x = s.tape.conv3d(x, fw, fb, (1, 2, 2), (2, 3, 3))?;
    let x = s.tape.relu(x)?;
    let x = s.tape.swap01_4d(x)?; // [T, C0, f, f]
    let mut x = s.tape.maxpool2d_seq(x, 2, 2)?;

    let n_stages = cfg.res_stages.len();
    for (i, &(_c, stride)) in cfg.res_stages.iter().enumerate() {
        let pre = format!("encoder/res{}", i + 1);
        let skw = s.param(&format!("{pre}/skw"))?;
        let skb = s.param(&format!("{pre}/skb"))?;
        let skip = s.tape.conv2d_seq(x, skw, skb, stride, 0)?;
        let c1w = s.param(&format!("{pre}/c1w"))?;
        let c1b = s.param(&format!("{pre}/c1b"))?;
        let y = s.tape.conv2d_seq(x, c1w, c1b, stride, 1)?;
        let y = s.tape.relu(y)?;
        let c2w = s.param(&format!("{pre}/c2w"))?;
        let c2b = s.param(&format!("{pre}/c2b"))?;
        let y = s.tape.conv2d_seq(y, c2w, c2b, 1, 1)?;
        let y = s.tape.add(skip, y)?;
        let y = s.tape.relu(y)?;
        // layer norm per stage over the flattened per-frame activation
        let ys = s.tape.shape(y);
        let flat = s.tape.reshape(y, vec![ys[0], ys[1] * ys[2] * ys[3]])?;
        let normed = nn::layer_norm(s, flat, &format!("{pre}/ln_g"), &format!("{pre}/ln_b"))?;
        x = s.tape.reshape(normed, ys.clone())?;
        if i + 2 == n_stages || (n_stages == 1 && i == 0) {
            let pooled = s.tape.mean_spatial_seq(x)?;
            taps.insert("res-b3".into(), pooled);
        }
    }

    let pooled = s.tape.mean_spatial_seq(x)?; // [T, C_last]
    let out = nn::linear(s, pooled, "encoder/out/w", "encoder/out/b")?;
    taps.insert("res-b4".into(), out);
    Ok(out)
}
