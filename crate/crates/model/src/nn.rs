//! Small shared building blocks over the differentiation substrate.

use crate::error::Result;
use vsr_core::grad::Session;
use vsr_core::tensor::{Scalar, Tensor};
use vsr_core::Var;

pub const LN_EPS: f64 = 1e-5;

/// y = x W + b with parameters looked up by name.
pub fn linear<T: Scalar>(s: &Session<T>, x: Var, w: &str, b: &str) -> Result<Var> {
    let w = s.param(w)?;
    let b = s.param(b)?;
    let y = s.tape.matmul(x, false, w, false)?;
    Ok(s.tape.add_bias(y, b)?)
}

pub fn layer_norm<T: Scalar>(s: &Session<T>, x: Var, g: &str, b: &str) -> Result<Var> {
    let g = s.param(g)?;
    let b = s.param(b)?;
    Ok(s.tape.layer_norm(x, g, b, LN_EPS)?)
}

/// Slice `[lo, hi)` out of a rank-1 parameter (head-splitting helper).
pub fn vec_slice<T: Scalar>(s: &Session<T>, v: Var, lo: usize, hi: usize) -> Result<Var> {
    let n = s.tape.numel(v);
    let row = s.tape.reshape(v, vec![1, n])?;
    let sl = s.tape.slice_cols(row, lo, hi)?;
    Ok(s.tape.reshape(sl, vec![hi - lo])?)
}

/// Sinusoidal position table: row i encodes `offset(i)` with
/// interleaved sin/cos at geometrically spaced frequencies.
pub fn sinusoid_table<T: Scalar>(rows: usize, d: usize, offset: impl Fn(usize) -> f64) -> Tensor<T> {
    let mut t = Tensor::zeros(vec![rows, d]);
    for r in 0..rows {
        let o = offset(r);
        for i in 0..d {
            let freq = 10000f64.powf(-(2.0 * (i / 2) as f64) / d as f64);
            let angle = o * freq;
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            t.data_mut()[r * d + i] = T::from_f64(v);
        }
    }
    t
}
