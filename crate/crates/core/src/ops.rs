//! Differentiable primitives recorded on the tape.
//!
//! Every constructor validates shapes up front and names itself in the
//! error, so a mis-wired model fails with the offending primitive.

use crate::error::{CoreError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{matmul_plain, Scalar, Tensor};

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CoreError::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn rank2<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(CoreError::shape(op, format!("expected rank 2, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<T: Scalar> Tape<T> {
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", &va, &vb)?;
        let out = va.zip(&vb, |x, y| x + y);
        Ok(self.push(
            out,
            Some(Box::new(move |g| vec![(a.id, g.clone()), (b.id, g.clone())])),
        ))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", &va, &vb)?;
        let out = va.zip(&vb, |x, y| x - y);
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                vec![(a.id, g.clone()), (b.id, g.map(|v| -v))]
            })),
        ))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", &va, &vb)?;
        let out = va.zip(&vb, |x, y| x * y);
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                vec![(a.id, g.zip(&vb, |gv, y| gv * y)), (b.id, g.zip(&va, |gv, x| gv * x))]
            })),
        ))
    }

    pub fn scale(&self, a: Var, c: T) -> Result<Var> {
        let va = self.value(a);
        let out = va.map(|x| x * c);
        Ok(self.push(out, Some(Box::new(move |g| vec![(a.id, g.map(|v| v * c))]))))
    }

    pub fn add_scalar(&self, a: Var, c: T) -> Result<Var> {
        let va = self.value(a);
        let out = va.map(|x| x + c);
        Ok(self.push(out, Some(Box::new(move |g| vec![(a.id, g.clone())]))))
    }

    /// x: [R, C] plus row-broadcast bias b: [C].
    pub fn add_bias(&self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        let (r, c) = rank2("add_bias", &vx)?;
        if vb.shape() != [c] {
            return Err(CoreError::shape(
                "add_bias",
                format!("bias {:?} vs row width {c}", vb.shape()),
            ));
        }
        let mut out = vx.clone();
        for i in 0..r {
            for j in 0..c {
                out.data_mut()[i * c + j] += vb.data()[j];
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut db = Tensor::zeros(vec![c]);
                for i in 0..r {
                    for j in 0..c {
                        db.data_mut()[j] += g.data()[i * c + j];
                    }
                }
                vec![(x.id, g.clone()), (b.id, db)]
            })),
        ))
    }

    /// op(a) * op(b) with transpose flags; both rank 2.
    pub fn matmul(&self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        rank2("matmul", &va)?;
        rank2("matmul", &vb)?;
        let ka = if ta { va.shape()[0] } else { va.shape()[1] };
        let kb = if tb { vb.shape()[1] } else { vb.shape()[0] };
        if ka != kb {
            return Err(CoreError::shape(
                "matmul",
                format!("inner dims {:?}{} x {:?}{}", va.shape(), if ta { "ᵀ" } else { "" }, vb.shape(), if tb { "ᵀ" } else { "" }),
            ));
        }
        let out = matmul_plain(&va, ta, &vb, tb);
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let da = if ta {
                    matmul_plain(&vb, tb, g, true)
                } else {
                    matmul_plain(g, false, &vb, !tb)
                };
                let db = if tb {
                    matmul_plain(g, true, &va, ta)
                } else {
                    matmul_plain(&va, !ta, g, false)
                };
                vec![(a.id, da), (b.id, db)]
            })),
        ))
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let out = va.map(|x| if x > T::zero() { x } else { T::zero() });
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                vec![(a.id, g.zip(&va, |gv, x| if x > T::zero() { gv } else { T::zero() }))]
            })),
        ))
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let out = va.map(sigmoid_scalar);
        let y = out.clone();
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                vec![(a.id, g.zip(&y, |gv, yv| gv * yv * (T::one() - yv)))]
            })),
        ))
    }

    /// x * sigmoid(x).
    pub fn swish(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let out = va.map(|x| x * sigmoid_scalar(x));
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                vec![(
                    a.id,
                    g.zip(&va, |gv, x| {
                        let s = sigmoid_scalar(x);
                        gv * (s + x * s * (T::one() - s))
                    }),
                )]
            })),
        ))
    }

    pub fn abs(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let out = va.map(|x| x.abs());
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                vec![(
                    a.id,
                    g.zip(&va, |gv, x| {
                        if x > T::zero() {
                            gv
                        } else if x < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    }),
                )]
            })),
        ))
    }

    /// Gated linear unit over the last axis: x: [R, 2C] -> a ∘ σ(b).
    pub fn glu(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (r, c2) = rank2("glu", &vx)?;
        if c2 % 2 != 0 {
            return Err(CoreError::shape("glu", format!("last extent {c2} must be even")));
        }
        let c = c2 / 2;
        let mut out = Tensor::zeros(vec![r, c]);
        for i in 0..r {
            for j in 0..c {
                let a = vx.data()[i * c2 + j];
                let b = vx.data()[i * c2 + c + j];
                out.data_mut()[i * c + j] = a * sigmoid_scalar(b);
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![r, c2]);
                for i in 0..r {
                    for j in 0..c {
                        let a = vx.data()[i * c2 + j];
                        let b = vx.data()[i * c2 + c + j];
                        let s = sigmoid_scalar(b);
                        let gv = g.data()[i * c + j];
                        dx.data_mut()[i * c2 + j] = gv * s;
                        dx.data_mut()[i * c2 + c + j] = gv * a * s * (T::one() - s);
                    }
                }
                vec![(x.id, dx)]
            })),
        ))
    }

    pub fn softmax_rows(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (r, c) = rank2("softmax", &vx)?;
        let mut out = Tensor::zeros(vec![r, c]);
        for i in 0..r {
            let row = &vx.data()[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for j in 0..c {
                let e = (row[j] - m).exp();
                out.data_mut()[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                out.data_mut()[i * c + j] = out.data()[i * c + j] / z;
            }
        }
        let y = out.clone();
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![r, c]);
                for i in 0..r {
                    let mut dot = T::zero();
                    for j in 0..c {
                        dot += g.data()[i * c + j] * y.data()[i * c + j];
                    }
                    for j in 0..c {
                        dx.data_mut()[i * c + j] = y.data()[i * c + j] * (g.data()[i * c + j] - dot);
                    }
                }
                vec![(x.id, dx)]
            })),
        ))
    }

    pub fn log_softmax_rows(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (r, c) = rank2("log_softmax", &vx)?;
        let mut out = Tensor::zeros(vec![r, c]);
        for i in 0..r {
            let row = &vx.data()[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for &v in row {
                z += (v - m).exp();
            }
            let lse = m + z.ln();
            for j in 0..c {
                out.data_mut()[i * c + j] = row[j] - lse;
            }
        }
        let y = out.clone();
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![r, c]);
                for i in 0..r {
                    let mut gsum = T::zero();
                    for j in 0..c {
                        gsum += g.data()[i * c + j];
                    }
                    for j in 0..c {
                        dx.data_mut()[i * c + j] =
                            g.data()[i * c + j] - y.data()[i * c + j].exp() * gsum;
                    }
                }
                vec![(x.id, dx)]
            })),
        ))
    }

    /// Row-wise layer normalization with learned gain and bias of
    /// width C: x: [R, C].
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let vx = self.value(x);
        let (r, c) = rank2("layer_norm", &vx)?;
        let vg = self.value(gain);
        let vb = self.value(bias);
        if vg.shape() != [c] || vb.shape() != [c] {
            return Err(CoreError::shape(
                "layer_norm",
                format!("gain {:?} / bias {:?} vs width {c}", vg.shape(), vb.shape()),
            ));
        }
        let eps = T::from_f64(eps);
        let cn = T::from_f64(c as f64);
        let mut xhat = Tensor::zeros(vec![r, c]);
        let mut inv_std = vec![T::zero(); r];
        let mut out = Tensor::zeros(vec![r, c]);
        for i in 0..r {
            let row = &vx.data()[i * c..(i + 1) * c];
            let mu = row.iter().cloned().sum::<T>() / cn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / cn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let xh = (row[j] - mu) * is;
                xhat.data_mut()[i * c + j] = xh;
                out.data_mut()[i * c + j] = vg.data()[j] * xh + vb.data()[j];
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![r, c]);
                let mut dgain = Tensor::zeros(vec![c]);
                let mut dbias = Tensor::zeros(vec![c]);
                for i in 0..r {
                    let mut mean_dxhat = T::zero();
                    let mut mean_dxhat_xhat = T::zero();
                    for j in 0..c {
                        let gv = g.data()[i * c + j];
                        let xh = xhat.data()[i * c + j];
                        dgain.data_mut()[j] += gv * xh;
                        dbias.data_mut()[j] += gv;
                        let dxh = gv * vg.data()[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xh;
                    }
                    mean_dxhat = mean_dxhat / cn;
                    mean_dxhat_xhat = mean_dxhat_xhat / cn;
                    for j in 0..c {
                        let dxh = g.data()[i * c + j] * vg.data()[j];
                        let xh = xhat.data()[i * c + j];
                        dx.data_mut()[i * c + j] =
                            inv_std[i] * (dxh - mean_dxhat - xh * mean_dxhat_xhat);
                    }
                }
                vec![(x.id, dx), (gain.id, dgain), (bias.id, dbias)]
            })),
        ))
    }

    pub fn sum_all(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let s: T = vx.data().iter().cloned().sum();
        let shape = vx.shape().to_vec();
        Ok(self.push(
            Tensor::scalar(s),
            Some(Box::new(move |g| {
                vec![(x.id, Tensor::full(shape.clone(), g.item()))]
            })),
        ))
    }

    pub fn mean_all(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let n = T::from_f64(vx.numel() as f64);
        let s: T = vx.data().iter().cloned().sum();
        let shape = vx.shape().to_vec();
        Ok(self.push(
            Tensor::scalar(s / n),
            Some(Box::new(move |g| {
                vec![(x.id, Tensor::full(shape.clone(), g.item() / n))]
            })),
        ))
    }

    /// Column means of a [R, C] matrix -> [C].
    pub fn mean_axis0(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (r, c) = rank2("mean_axis0", &vx)?;
        let rn = T::from_f64(r as f64);
        let mut out = Tensor::zeros(vec![c]);
        for i in 0..r {
            for j in 0..c {
                out.data_mut()[j] += vx.data()[i * c + j];
            }
        }
        for j in 0..c {
            out.data_mut()[j] = out.data()[j] / rn;
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![r, c]);
                for i in 0..r {
                    for j in 0..c {
                        dx.data_mut()[i * c + j] = g.data()[j] / rn;
                    }
                }
                vec![(x.id, dx)]
            })),
        ))
    }

    /// Rows [r0, r1) of a [R, C] matrix.
    pub fn slice_rows(&self, x: Var, r0: usize, r1: usize) -> Result<Var> {
        let vx = self.value(x);
        let (r, c) = rank2("slice_rows", &vx)?;
        if r0 >= r1 || r1 > r {
            return Err(CoreError::invalid(
                "slice_rows",
                format!("range {r0}..{r1} of {r} rows"),
            ));
        }
        let out = Tensor::new(
            vec![r1 - r0, c],
            vx.data()[r0 * c..r1 * c].to_vec(),
        )?;
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![r, c]);
                dx.data_mut()[r0 * c..r1 * c].copy_from_slice(g.data());
                vec![(x.id, dx)]
            })),
        ))
    }

    /// Columns [c0, c1) of a [R, C] matrix.
    pub fn slice_cols(&self, x: Var, c0: usize, c1: usize) -> Result<Var> {
        let vx = self.value(x);
        let (r, c) = rank2("slice_cols", &vx)?;
        if c0 >= c1 || c1 > c {
            return Err(CoreError::invalid(
                "slice_cols",
                format!("range {c0}..{c1} of {c} cols"),
            ));
        }
        let w = c1 - c0;
        let mut out = Tensor::zeros(vec![r, w]);
        for i in 0..r {
            out.data_mut()[i * w..(i + 1) * w].copy_from_slice(&vx.data()[i * c + c0..i * c + c1]);
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![r, c]);
                for i in 0..r {
                    dx.data_mut()[i * c + c0..i * c + c1].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                vec![(x.id, dx)]
            })),
        ))
    }

    /// Stack matrices with equal column counts along the row axis.
    pub fn concat_rows(&self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(CoreError::invalid("concat_rows", "empty input list"));
        }
        let vals: Vec<Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let c = rank2("concat_rows", &vals[0])?.1;
        let mut rows = Vec::with_capacity(vals.len());
        for v in &vals {
            let (ri, ci) = rank2("concat_rows", v)?;
            if ci != c {
                return Err(CoreError::shape("concat_rows", format!("widths {ci} vs {c}")));
            }
            rows.push(ri);
        }
        let total: usize = rows.iter().sum();
        let mut data = Vec::with_capacity(total * c);
        for v in &vals {
            data.extend_from_slice(v.data());
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.id).collect();
        Ok(self.push(
            Tensor::new(vec![total, c], data)?,
            Some(Box::new(move |g| {
                let mut out = Vec::with_capacity(ids.len());
                let mut off = 0;
                for (&id, &ri) in ids.iter().zip(&rows) {
                    let slice = g.data()[off * c..(off + ri) * c].to_vec();
                    out.push((id, Tensor::new(vec![ri, c], slice).unwrap()));
                    off += ri;
                }
                out
            })),
        ))
    }

    /// Stack matrices with equal row counts along the column axis.
    pub fn concat_cols(&self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(CoreError::invalid("concat_cols", "empty input list"));
        }
        let vals: Vec<Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let r = rank2("concat_cols", &vals[0])?.0;
        let mut widths = Vec::with_capacity(vals.len());
        for v in &vals {
            let (ri, ci) = rank2("concat_cols", v)?;
            if ri != r {
                return Err(CoreError::shape("concat_cols", format!("rows {ri} vs {r}")));
            }
            widths.push(ci);
        }
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(vec![r, total]);
        let mut off = 0;
        for (v, &w) in vals.iter().zip(&widths) {
            for i in 0..r {
                out.data_mut()[i * total + off..i * total + off + w]
                    .copy_from_slice(&v.data()[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.id).collect();
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut result = Vec::with_capacity(ids.len());
                let mut off = 0;
                for (&id, &w) in ids.iter().zip(&widths) {
                    let mut dx = Tensor::zeros(vec![r, w]);
                    for i in 0..r {
                        dx.data_mut()[i * w..(i + 1) * w]
                            .copy_from_slice(&g.data()[i * total + off..i * total + off + w]);
                    }
                    result.push((id, dx));
                    off += w;
                }
                result
            })),
        ))
    }

    /// y[r] = x[r, ids[r]] for x: [R, C].
    pub fn pick(&self, x: Var, ids: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let (r, c) = rank2("pick", &vx)?;
        if ids.len() != r {
            return Err(CoreError::shape("pick", format!("{} ids for {r} rows", ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= c) {
            return Err(CoreError::invalid("pick", format!("index {bad} >= {c}")));
        }
        let ids = ids.to_vec();
        let mut out = Tensor::zeros(vec![r]);
        for i in 0..r {
            out.data_mut()[i] = vx.data()[i * c + ids[i]];
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![r, c]);
                for i in 0..r {
                    dx.data_mut()[i * c + ids[i]] = g.data()[i];
                }
                vec![(x.id, dx)]
            })),
        ))
    }

    /// Row lookup: table: [V, D], ids -> [L, D].
    pub fn embedding(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (v, d) = rank2("embedding", &vt)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(CoreError::invalid("embedding", format!("token id {bad} >= vocab {v}")));
        }
        if ids.is_empty() {
            return Err(CoreError::invalid("embedding", "empty id list"));
        }
        let l = ids.len();
        let ids = ids.to_vec();
        let mut out = Tensor::zeros(vec![l, d]);
        for (i, &id) in ids.iter().enumerate() {
            out.data_mut()[i * d..(i + 1) * d].copy_from_slice(&vt.data()[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dt = Tensor::zeros(vec![v, d]);
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt.data_mut()[id * d + j] += g.data()[i * d + j];
                    }
                }
                vec![(table.id, dt)]
            })),
        ))
    }

    pub fn reshape(&self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let vx = self.value(x);
        let old = vx.shape().to_vec();
        let out = vx.reshaped(shape)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                vec![(x.id, g.clone().reshaped(old.clone()).unwrap())]
            })),
        ))
    }

    /// Relative-score gather: p: [L, 2L-1] -> s: [L, L] with
    /// s[i][j] = p[i][i - j + L - 1]. Column c of p encodes the signed
    /// query-minus-key offset c - (L - 1).
    pub fn rel_gather(&self, p: Var) -> Result<Var> {
        let vp = self.value(p);
        let (l, w) = rank2("rel_gather", &vp)?;
        if w != 2 * l - 1 {
            return Err(CoreError::shape(
                "rel_gather",
                format!("expected [L, 2L-1], got [{l}, {w}]"),
            ));
        }
        let mut out = Tensor::zeros(vec![l, l]);
        for i in 0..l {
            for j in 0..l {
                out.data_mut()[i * l + j] = vp.data()[i * w + (i + l - 1 - j)];
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dp = Tensor::zeros(vec![l, w]);
                for i in 0..l {
                    for j in 0..l {
                        dp.data_mut()[i * w + (i + l - 1 - j)] += g.data()[i * l + j];
                    }
                }
                vec![(p.id, dp)]
            })),
        ))
    }

    /// Swap the first two axes of a rank-4 tensor.
    pub fn swap01_4d(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.shape().len() != 4 {
            return Err(CoreError::shape("swap01_4d", format!("got {:?}", vx.shape())));
        }
        let (a, b, c, d) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let out = swap01(&vx, a, b, c * d);
        Ok(self.push(
            out.reshaped(vec![b, a, c, d])?,
            Some(Box::new(move |g| {
                let dg = swap01(g, b, a, c * d);
                vec![(x.id, dg.reshaped(vec![a, b, c, d]).unwrap())]
            })),
        ))
    }
}

fn swap01<T: Scalar>(x: &Tensor<T>, a: usize, b: usize, inner: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(vec![b, a, inner]);
    for i in 0..a {
        for j in 0..b {
            let src = (i * b + j) * inner;
            let dst = (j * a + i) * inner;
            out.data_mut()[dst..dst + inner].copy_from_slice(&x.data()[src..src + inner]);
        }
    }
    out
}

fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
