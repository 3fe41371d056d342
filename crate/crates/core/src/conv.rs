//! Convolution and pooling primitives (direct loops, stride/padding).

use crate::error::{CoreError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

fn out_extent(input: usize, kernel: usize, pad: usize, stride: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(CoreError::shape(
            "conv",
            format!("input {input} + 2*{pad} pad smaller than kernel {kernel}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Valid kernel-index range [lo, hi) for one output coordinate, given
/// the signed input origin `o*stride - pad` and the input extent.
#[inline]
fn kernel_range(origin: isize, kernel: usize, input: usize) -> (usize, usize) {
    let lo = (-origin).max(0) as usize;
    let hi = (input as isize - origin).clamp(0, kernel as isize) as usize;
    (lo, hi.max(lo))
}

impl<T: Scalar> Tape<T> {
    /// 1D convolution over time: x: [T, Cin], w: [Cout, Cin, K],
    /// b: [Cout], stride 1.
    pub fn conv1d(&self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let vx = self.value(x);
        let vw = self.value(w);
        let vb = self.value(b);
        if vx.shape().len() != 2 || vw.shape().len() != 3 {
            return Err(CoreError::shape(
                "conv1d",
                format!("x {:?}, w {:?}", vx.shape(), vw.shape()),
            ));
        }
        let (t_in, cin) = (vx.shape()[0], vx.shape()[1]);
        let (cout, wcin, k) = (vw.shape()[0], vw.shape()[1], vw.shape()[2]);
        if wcin != cin || vb.shape() != [cout] {
            return Err(CoreError::shape(
                "conv1d",
                format!("x {:?}, w {:?}, b {:?}", vx.shape(), vw.shape(), vb.shape()),
            ));
        }
        let t_out = out_extent(t_in, k, pad, 1)?;
        let mut out = Tensor::zeros(vec![t_out, cout]);
        for t in 0..t_out {
            for co in 0..cout {
                let mut acc = vb.data()[co];
                for kk in 0..k {
                    let ti = t + kk;
                    if ti < pad || ti - pad >= t_in {
                        continue;
                    }
                    let ti = ti - pad;
                    for ci in 0..cin {
                        acc += vx.data()[ti * cin + ci] * vw.data()[(co * cin + ci) * k + kk];
                    }
                }
                out.data_mut()[t * cout + co] = acc;
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![t_in, cin]);
                let mut dw = Tensor::zeros(vec![cout, cin, k]);
                let mut db = Tensor::zeros(vec![cout]);
                for t in 0..t_out {
                    for co in 0..cout {
                        let gv = g.data()[t * cout + co];
                        db.data_mut()[co] += gv;
                        for kk in 0..k {
                            let ti = t + kk;
                            if ti < pad || ti - pad >= t_in {
                                continue;
                            }
                            let ti = ti - pad;
                            for ci in 0..cin {
                                dx.data_mut()[ti * cin + ci] += gv * vw.data()[(co * cin + ci) * k + kk];
                                dw.data_mut()[(co * cin + ci) * k + kk] += gv * vx.data()[ti * cin + ci];
                            }
                        }
                    }
                }
                vec![(x.id, dx), (w.id, dw), (b.id, db)]
            })),
        ))
    }

    /// Depthwise 1D convolution: x: [T, C], w: [C, K], b: [C], stride 1.
    pub fn depthwise_conv1d(&self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let vx = self.value(x);
        let vw = self.value(w);
        let vb = self.value(b);
        if vx.shape().len() != 2 || vw.shape().len() != 2 {
            return Err(CoreError::shape(
                "depthwise_conv1d",
                format!("x {:?}, w {:?}", vx.shape(), vw.shape()),
            ));
        }
        let (t_in, c) = (vx.shape()[0], vx.shape()[1]);
        let (wc, k) = (vw.shape()[0], vw.shape()[1]);
        if wc != c || vb.shape() != [c] {
            return Err(CoreError::shape(
                "depthwise_conv1d",
                format!("x {:?}, w {:?}, b {:?}", vx.shape(), vw.shape(), vb.shape()),
            ));
        }
        let t_out = out_extent(t_in, k, pad, 1)?;
        let mut out = Tensor::zeros(vec![t_out, c]);
        for t in 0..t_out {
            for ch in 0..c {
                let mut acc = vb.data()[ch];
                for kk in 0..k {
                    let ti = t + kk;
                    if ti < pad || ti - pad >= t_in {
                        continue;
                    }
                    acc += vx.data()[(ti - pad) * c + ch] * vw.data()[ch * k + kk];
                }
                out.data_mut()[t * c + ch] = acc;
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![t_in, c]);
                let mut dw = Tensor::zeros(vec![c, k]);
                let mut db = Tensor::zeros(vec![c]);
                for t in 0..t_out {
                    for ch in 0..c {
                        let gv = g.data()[t * c + ch];
                        db.data_mut()[ch] += gv;
                        for kk in 0..k {
                            let ti = t + kk;
                            if ti < pad || ti - pad >= t_in {
                                continue;
                            }
                            let ti = ti - pad;
                            dx.data_mut()[ti * c + ch] += gv * vw.data()[ch * k + kk];
                            dw.data_mut()[ch * k + kk] += gv * vx.data()[ti * c + ch];
                        }
                    }
                }
                vec![(x.id, dx), (w.id, dw), (b.id, db)]
            })),
        ))
    }

    /// Per-frame 2D convolution: x: [T, Cin, H, W], w: [Cout, Cin, KH, KW],
    /// b: [Cout]. The same filter is applied at every time step.
    pub fn conv2d_seq(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let vx = self.value(x);
        let vw = self.value(w);
        let vb = self.value(b);
        if vx.shape().len() != 4 || vw.shape().len() != 4 {
            return Err(CoreError::shape(
                "conv2d",
                format!("x {:?}, w {:?}", vx.shape(), vw.shape()),
            ));
        }
        let (t_len, cin, h, wd) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let (cout, wcin, kh, kw) = (vw.shape()[0], vw.shape()[1], vw.shape()[2], vw.shape()[3]);
        if wcin != cin || vb.shape() != [cout] {
            return Err(CoreError::shape(
                "conv2d",
                format!("x {:?}, w {:?}, b {:?}", vx.shape(), vw.shape(), vb.shape()),
            ));
        }
        let ho = out_extent(h, kh, pad, stride)?;
        let wo = out_extent(wd, kw, pad, stride)?;
        let mut out = Tensor::zeros(vec![t_len, cout, ho, wo]);
        let x_frame = cin * h * wd;
        let o_frame = cout * ho * wo;
        let xd = vx.data();
        let wd_ = vw.data();
        for t in 0..t_len {
            for co in 0..cout {
                for oy in 0..ho {
                    let iy0 = (oy * stride) as isize - pad as isize;
                    let (ky_lo, ky_hi) = kernel_range(iy0, kh, h);
                    for ox in 0..wo {
                        let ix0 = (ox * stride) as isize - pad as isize;
                        let (kx_lo, kx_hi) = kernel_range(ix0, kw, wd);
                        let mut acc = vb.data()[co];
                        for ci in 0..cin {
                            for ky in ky_lo..ky_hi {
                                let iy = (iy0 + ky as isize) as usize;
                                let xb = t * x_frame
                                    + (ci * h + iy) * wd
                                    + (ix0 + kx_lo as isize) as usize;
                                let wb = ((co * cin + ci) * kh + ky) * kw + kx_lo;
                                let n = kx_hi - kx_lo;
                                for (xv, wv) in xd[xb..xb + n].iter().zip(&wd_[wb..wb + n]) {
                                    acc += *xv * *wv;
                                }
                            }
                        }
                        out.data_mut()[t * o_frame + (co * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![t_len, cin, h, wd]);
                let mut dw = Tensor::zeros(vec![cout, cin, kh, kw]);
                let mut db = Tensor::zeros(vec![cout]);
                for t in 0..t_len {
                    for co in 0..cout {
                        for oy in 0..ho {
                            let iy0 = (oy * stride) as isize - pad as isize;
                            let (ky_lo, ky_hi) = kernel_range(iy0, kh, h);
                            for ox in 0..wo {
                                let ix0 = (ox * stride) as isize - pad as isize;
                                let (kx_lo, kx_hi) = kernel_range(ix0, kw, wd);
                                let gv = g.data()[t * o_frame + (co * ho + oy) * wo + ox];
                                db.data_mut()[co] += gv;
                                for ci in 0..cin {
                                    for ky in ky_lo..ky_hi {
                                        let iy = (iy0 + ky as isize) as usize;
                                        let xb = t * x_frame
                                            + (ci * h + iy) * wd
                                            + (ix0 + kx_lo as isize) as usize;
                                        let wb = ((co * cin + ci) * kh + ky) * kw + kx_lo;
                                        let n = kx_hi - kx_lo;
                                        for (dxv, wv) in dx.data_mut()[xb..xb + n]
                                            .iter_mut()
                                            .zip(&vw.data()[wb..wb + n])
                                        {
                                            *dxv += gv * *wv;
                                        }
                                        for (dwv, xv) in dw.data_mut()[wb..wb + n]
                                            .iter_mut()
                                            .zip(&vx.data()[xb..xb + n])
                                        {
                                            *dwv += gv * *xv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                vec![(x.id, dx), (w.id, dw), (b.id, db)]
            })),
        ))
    }

    /// 3D convolution: x: [Cin, T, H, W], w: [Cout, Cin, KT, KH, KW],
    /// b: [Cout], strides/pads per axis.
    #[allow(clippy::too_many_arguments)]
    pub fn conv3d(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> Result<Var> {
        let vx = self.value(x);
        let vw = self.value(w);
        let vb = self.value(b);
        if vx.shape().len() != 4 || vw.shape().len() != 5 {
            return Err(CoreError::shape(
                "conv3d",
                format!("x {:?}, w {:?}", vx.shape(), vw.shape()),
            ));
        }
        let (cin, t_in, h, wd) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let (cout, wcin, kt, kh, kw) = (
            vw.shape()[0],
            vw.shape()[1],
            vw.shape()[2],
            vw.shape()[3],
            vw.shape()[4],
        );
        if wcin != cin || vb.shape() != [cout] {
            return Err(CoreError::shape(
                "conv3d",
                format!("x {:?}, w {:?}, b {:?}", vx.shape(), vw.shape(), vb.shape()),
            ));
        }
        let (st, sh, sw) = stride;
        let (pt, ph, pw) = pad;
        let to = out_extent(t_in, kt, pt, st)?;
        let ho = out_extent(h, kh, ph, sh)?;
        let wo = out_extent(wd, kw, pw, sw)?;
        let mut out = Tensor::zeros(vec![cout, to, ho, wo]);
        let xd = vx.data();
        let wd_ = vw.data();
        for co in 0..cout {
            for ot in 0..to {
                let it0 = (ot * st) as isize - pt as isize;
                let (kt_lo, kt_hi) = kernel_range(it0, kt, t_in);
                for oy in 0..ho {
                    let iy0 = (oy * sh) as isize - ph as isize;
                    let (ky_lo, ky_hi) = kernel_range(iy0, kh, h);
                    for ox in 0..wo {
                        let ix0 = (ox * sw) as isize - pw as isize;
                        let (kx_lo, kx_hi) = kernel_range(ix0, kw, wd);
                        let mut acc = vb.data()[co];
                        for ci in 0..cin {
                            for ktt in kt_lo..kt_hi {
                                let it = (it0 + ktt as isize) as usize;
                                for ky in ky_lo..ky_hi {
                                    let iy = (iy0 + ky as isize) as usize;
                                    let xb = ((ci * t_in + it) * h + iy) * wd
                                        + (ix0 + kx_lo as isize) as usize;
                                    let wb =
                                        (((co * cin + ci) * kt + ktt) * kh + ky) * kw + kx_lo;
                                    let n = kx_hi - kx_lo;
                                    for (xv, wv) in
                                        xd[xb..xb + n].iter().zip(&wd_[wb..wb + n])
                                    {
                                        acc += *xv * *wv;
                                    }
                                }
                            }
                        }
                        out.data_mut()[((co * to + ot) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![cin, t_in, h, wd]);
                let mut dw = Tensor::zeros(vec![cout, cin, kt, kh, kw]);
                let mut db = Tensor::zeros(vec![cout]);
                for co in 0..cout {
                    for ot in 0..to {
                        let it0 = (ot * st) as isize - pt as isize;
                        let (kt_lo, kt_hi) = kernel_range(it0, kt, t_in);
                        for oy in 0..ho {
                            let iy0 = (oy * sh) as isize - ph as isize;
                            let (ky_lo, ky_hi) = kernel_range(iy0, kh, h);
                            for ox in 0..wo {
                                let ix0 = (ox * sw) as isize - pw as isize;
                                let (kx_lo, kx_hi) = kernel_range(ix0, kw, wd);
                                let gv = g.data()[((co * to + ot) * ho + oy) * wo + ox];
                                db.data_mut()[co] += gv;
                                for ci in 0..cin {
                                    for ktt in kt_lo..kt_hi {
                                        let it = (it0 + ktt as isize) as usize;
                                        for ky in ky_lo..ky_hi {
                                            let iy = (iy0 + ky as isize) as usize;
                                            let xb = ((ci * t_in + it) * h + iy) * wd
                                                + (ix0 + kx_lo as isize) as usize;
                                            let wb = (((co * cin + ci) * kt + ktt) * kh + ky)
                                                * kw
                                                + kx_lo;
                                            let n = kx_hi - kx_lo;
                                            for (dxv, wv) in dx.data_mut()[xb..xb + n]
                                                .iter_mut()
                                                .zip(&vw.data()[wb..wb + n])
                                            {
                                                *dxv += gv * *wv;
                                            }
                                            for (dwv, xv) in dw.data_mut()[wb..wb + n]
                                                .iter_mut()
                                                .zip(&vx.data()[xb..xb + n])
                                            {
                                                *dwv += gv * *xv;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                vec![(x.id, dx), (w.id, dw), (b.id, db)]
            })),
        ))
    }

    /// Spatial max pooling per frame and channel: x: [T, C, H, W].
    pub fn maxpool2d_seq(&self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let vx = self.value(x);
        if vx.shape().len() != 4 {
            return Err(CoreError::shape("maxpool2d", format!("x {:?}", vx.shape())));
        }
        let (t_len, c, h, wd) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let ho = out_extent(h, k, 0, stride)?;
        let wo = out_extent(wd, k, 0, stride)?;
        let mut out = Tensor::zeros(vec![t_len, c, ho, wo]);
        let mut argmax = vec![0usize; t_len * c * ho * wo];
        let x_frame = c * h * wd;
        let o_frame = c * ho * wo;
        for t in 0..t_len {
            for ch in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = T::neg_infinity();
                        let mut best_idx = 0;
                        for ky in 0..k {
                            for kx in 0..k {
                                let idx = t * x_frame + (ch * h + oy * stride + ky) * wd
                                    + ox * stride
                                    + kx;
                                if vx.data()[idx] > best {
                                    best = vx.data()[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let oidx = t * o_frame + (ch * ho + oy) * wo + ox;
                        out.data_mut()[oidx] = best;
                        argmax[oidx] = best_idx;
                    }
                }
            }
        }
        let in_shape = vec![t_len, c, h, wd];
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(in_shape.clone());
                for (oidx, &iidx) in argmax.iter().enumerate() {
                    dx.data_mut()[iidx] += g.data()[oidx];
                }
                vec![(x.id, dx)]
            })),
        ))
    }

    /// Average over a g x g spatial grid per frame and channel:
    /// [T, C, H, W] -> [T, C*g*g], cells ordered (c, gy, gx). Cell
    /// boundaries split each axis as evenly as integer division allows.
    pub fn mean_spatial_grid_seq(&self, x: Var, g: usize) -> Result<Var> {
        let vx = self.value(x);
        if vx.shape().len() != 4 {
            return Err(CoreError::shape("mean_spatial_grid", format!("x {:?}", vx.shape())));
        }
        let (t_len, c, h, wd) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        if g == 0 || g > h || g > wd {
            return Err(CoreError::invalid(
                "mean_spatial_grid",
                format!("grid {g} does not fit {h}x{wd}"),
            ));
        }
        let edge = |extent: usize, i: usize| i * extent / g;
        let mut out = Tensor::zeros(vec![t_len, c * g * g]);
        for t in 0..t_len {
            for ch in 0..c {
                for gy in 0..g {
                    let (y0, y1) = (edge(h, gy), edge(h, gy + 1));
                    for gx in 0..g {
                        let (x0, x1) = (edge(wd, gx), edge(wd, gx + 1));
                        let mut s = T::zero();
                        for y in y0..y1 {
                            let base = ((t * c + ch) * h + y) * wd;
                            for xx in x0..x1 {
                                s = s + vx.data()[base + xx];
                            }
                        }
                        let n = T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                        out.data_mut()[t * c * g * g + (ch * g + gy) * g + gx] = s / n;
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |grad| {
                let mut dx = Tensor::zeros(vec![t_len, c, h, wd]);
                for t in 0..t_len {
                    for ch in 0..c {
                        for gy in 0..g {
                            let (y0, y1) = (edge(h, gy), edge(h, gy + 1));
                            for gx in 0..g {
                                let (x0, x1) = (edge(wd, gx), edge(wd, gx + 1));
                                let n = T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                                let gv =
                                    grad.data()[t * c * g * g + (ch * g + gy) * g + gx] / n;
                                for y in y0..y1 {
                                    let base = ((t * c + ch) * h + y) * wd;
                                    for xx in x0..x1 {
                                        dx.data_mut()[base + xx] += gv;
                                    }
                                }
                            }
                        }
                    }
                }
                vec![(x.id, dx)]
            })),
        ))
    }

    /// Global spatial average per frame and channel: [T, C, H, W] -> [T, C].
    pub fn mean_spatial_seq(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.shape().len() != 4 {
            return Err(CoreError::shape("mean_spatial", format!("x {:?}", vx.shape())));
        }
        let (t_len, c, h, wd) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let n = T::from_f64((h * wd) as f64);
        let mut out = Tensor::zeros(vec![t_len, c]);
        for t in 0..t_len {
            for ch in 0..c {
                let base = t * c * h * wd + ch * h * wd;
                let s: T = vx.data()[base..base + h * wd].iter().cloned().sum();
                out.data_mut()[t * c + ch] = s / n;
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![t_len, c, h, wd]);
                for t in 0..t_len {
                    for ch in 0..c {
                        let gv = g.data()[t * c + ch] / n;
                        let base = t * c * h * wd + ch * h * wd;
                        for i in 0..h * wd {
                            dx.data_mut()[base + i] = gv;
                        }
                    }
                }
                vec![(x.id, dx)]
            })),
        ))
    }
}
