//! 2-D convolution family via im2col + GEMM.
//!
//! The three operators here are closed under differentiation: the VJP of
//! each is expressed with the other two, so second derivatives (needed for
//! gradient penalties) come for free.

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn square(k: usize, stride: usize, pad: usize) -> Self {
        ConvGeom { kh: k, kw: k, stride, pad }
    }

    pub fn out_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.pad, w + 2 * self.pad);
        if hp < self.kh || wp < self.kw || self.stride == 0 {
            return None;
        }
        Some(((hp - self.kh) / self.stride + 1, (wp - self.kw) / self.stride + 1))
    }
}

fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, g: ConvGeom, oh: usize, ow: usize, cols: &mut [T]) {
    let plane = oh * ow;
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, g: ConvGeom, oh: usize, ow: usize, x: &mut [T]) {
    let plane = oh * ow;
    for ci in 0..c {
        let xc = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &mut xc[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            xrow[ix as usize] = xrow[ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn dims4(op: &'static str, t: &Tensor<impl Real>) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => shape_err(op, format!("expected 4-D (N, C, H, W), got {s:?}")),
    }
}

/// `x: (N, Ci, H, W)`, `w: (Co, Ci, kh, kw)` -> `(N, Co, Ho, Wo)`.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let [n, ci, h, wd] = dims4("conv2d", x)?;
    let [co, wci, kh, kw] = dims4("conv2d", w)?;
    if ci != wci {
        return shape_err("conv2d", format!("input channels {ci} vs weight in-channels {wci}"));
    }
    let g = ConvGeom { kh, kw, stride, pad };
    let Some((oh, ow)) = g.out_size(h, wd) else {
        return shape_err("conv2d", format!("kernel {kh}x{kw} does not fit input {h}x{wd} with pad {pad}"));
    };
    let k = ci * kh * kw;
    let plane = oh * ow;
    let mut cols = vec![T::zero(); k * plane];
    let mut out = vec![T::zero(); n * co * plane];
    for s in 0..n {
        im2col(&x.data()[s * ci * h * wd..(s + 1) * ci * h * wd], ci, h, wd, g, oh, ow, &mut cols);
        T::gemm(co, k, plane, T::one(), w.data(), false, &cols, false, T::zero(), &mut out[s * co * plane..(s + 1) * co * plane]);
    }
    Ok(Tensor::new_result(
        out,
        vec![n, co, oh, ow],
        "conv2d",
        &[x, w],
        Box::new(move |c| {
            let (x, w) = (&c.inputs[0], &c.inputs[1]);
            let gx = if c.needs[0] { Some(conv_transpose2d_sized(c.grad, w, stride, pad, (h, wd))?) } else { None };
            let gw = if c.needs[1] { Some(conv2d_weight(x, c.grad, kh, kw, stride, pad)?) } else { None };
            Ok(vec![gx, gw])
        }),
    ))
}

/// Transposed convolution with the default output size
/// `(Ho - 1) * stride - 2 * pad + k`. `w: (Cin, Cout, kh, kw)`.
pub fn conv_transpose2d<T: Real>(y: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let [_, _, oh, ow] = dims4("conv_transpose2d", y)?;
    let [_, _, kh, kw] = dims4("conv_transpose2d", w)?;
    let h = ((oh - 1) * stride + kh).checked_sub(2 * pad);
    let wd = ((ow - 1) * stride + kw).checked_sub(2 * pad);
    match (h, wd) {
        (Some(h), Some(wd)) if h > 0 && wd > 0 => conv_transpose2d_sized(y, w, stride, pad, (h, wd)),
        _ => shape_err("conv_transpose2d", format!("padding {pad} too large for kernel {kh}x{kw}")),
    }
}

/// Adjoint of [`conv2d`] w.r.t. its input, producing spatial size `hw`.
pub fn conv_transpose2d_sized<T: Real>(
    y: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    hw: (usize, usize),
) -> Result<Tensor<T>> {
    let [n, co, oh, ow] = dims4("conv_transpose2d", y)?;
    let [wco, ci, kh, kw] = dims4("conv_transpose2d", w)?;
    if co != wco {
        return shape_err("conv_transpose2d", format!("input channels {co} vs weight dim0 {wco}"));
    }
    let (h, wd) = hw;
    let g = ConvGeom { kh, kw, stride, pad };
    if g.out_size(h, wd) != Some((oh, ow)) {
        return shape_err("conv_transpose2d", format!("output {h}x{wd} inconsistent with input {oh}x{ow}"));
    }
    let k = ci * kh * kw;
    let plane = oh * ow;
    let mut cols = vec![T::zero(); k * plane];
    let mut out = vec![T::zero(); n * ci * h * wd];
    for s in 0..n {
        T::gemm(
            k,
            co,
            plane,
            T::one(),
            w.data(),
            true,
            &y.data()[s * co * plane..(s + 1) * co * plane],
            false,
            T::zero(),
            &mut cols,
        );
        col2im(&cols, ci, h, wd, g, oh, ow, &mut out[s * ci * h * wd..(s + 1) * ci * h * wd]);
    }
    Ok(Tensor::new_result(
        out,
        vec![n, ci, h, wd],
        "conv_transpose2d",
        &[y, w],
        Box::new(move |c| {
            let (y, w) = (&c.inputs[0], &c.inputs[1]);
            let gy = if c.needs[0] { Some(conv2d(c.grad, w, stride, pad)?) } else { None };
            let gw = if c.needs[1] { Some(conv2d_weight(c.grad, y, kh, kw, stride, pad)?) } else { None };
            Ok(vec![gy, gw])
        }),
    ))
}

/// Gradient of [`conv2d`] w.r.t. its weight: `(Co, Ci, kh, kw)` from input
/// `x: (N, Ci, H, W)` and output gradient `g: (N, Co, Ho, Wo)`.
pub fn conv2d_weight<T: Real>(
    x: &Tensor<T>,
    g: &Tensor<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let [n, ci, h, wd] = dims4("conv2d_weight", x)?;
    let [gn, co, oh, ow] = dims4("conv2d_weight", g)?;
    let geom = ConvGeom { kh, kw, stride, pad };
    if gn != n || geom.out_size(h, wd) != Some((oh, ow)) {
        return shape_err("conv2d_weight", format!("input {:?} vs output grad {:?}", x.shape(), g.shape()));
    }
    let k = ci * kh * kw;
    let plane = oh * ow;
    let mut cols = vec![T::zero(); k * plane];
    let mut out = vec![T::zero(); co * k];
    for s in 0..n {
        im2col(&x.data()[s * ci * h * wd..(s + 1) * ci * h * wd], ci, h, wd, geom, oh, ow, &mut cols);
        T::gemm(co, plane, k, T::one(), &g.data()[s * co * plane..(s + 1) * co * plane], false, &cols, true, T::one(), &mut out);
    }
    Ok(Tensor::new_result(
        out,
        vec![co, ci, kh, kw],
        "conv2d_weight",
        &[x, g],
        Box::new(move |c| {
            let (x, g) = (&c.inputs[0], &c.inputs[1]);
            let gx = if c.needs[0] { Some(conv_transpose2d_sized(g, c.grad, stride, pad, (h, wd))?) } else { None };
            let gg = if c.needs[1] { Some(conv2d(x, c.grad, stride, pad)?) } else { None };
            Ok(vec![gx, gg])
        }),
    ))
}
