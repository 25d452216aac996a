//! Row gathers/scatters and bilinear texture sampling.

use std::rc::Rc;

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

fn batch_rows(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [v, c] => Ok((1, v, c)),
        [b, v, c] => Ok((b, v, c)),
        _ => shape_err(op, format!("expected (V, C) or (B, V, C), got {shape:?}")),
    }
}

fn with_rows(shape: &[usize], rows: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let n = s.len();
    s[n - 2] = rows;
    s
}

impl<T: Real> Tensor<T> {
    /// Selects rows along the second-to-last axis: `(.., V, C) -> (.., M, C)`.
    pub fn gather_rows(&self, idx: &Rc<Vec<usize>>) -> Result<Tensor<T>> {
        let (b, v, c) = batch_rows("gather_rows", self.shape())?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
            return shape_err("gather_rows", format!("row index {bad} out of range {v}"));
        }
        let m = idx.len();
        let d = self.data();
        let mut out = Vec::with_capacity(b * m * c);
        for s in 0..b {
            let base = s * v * c;
            for &i in idx.iter() {
                out.extend_from_slice(&d[base + i * c..base + (i + 1) * c]);
            }
        }
        let idx = idx.clone();
        Ok(Tensor::new_result(
            out,
            with_rows(self.shape(), m),
            "gather_rows",
            &[self],
            Box::new(move |cx| Ok(vec![Some(cx.grad.scatter_rows(&idx, v)?)])),
        ))
    }

    /// Adds rows into a zero tensor with `rows` rows: adjoint of
    /// [`Tensor::gather_rows`].
    pub fn scatter_rows(&self, idx: &Rc<Vec<usize>>, rows: usize) -> Result<Tensor<T>> {
        let (b, m, c) = batch_rows("scatter_rows", self.shape())?;
        if m != idx.len() {
            return shape_err("scatter_rows", format!("{m} rows vs {} indices", idx.len()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return shape_err("scatter_rows", format!("row index {bad} out of range {rows}"));
        }
        let d = self.data();
        let mut out = vec![T::zero(); b * rows * c];
        for s in 0..b {
            for (j, &i) in idx.iter().enumerate() {
                let src = &d[(s * m + j) * c..(s * m + j + 1) * c];
                let dst = &mut out[(s * rows + i) * c..(s * rows + i + 1) * c];
                for (o, &g) in dst.iter_mut().zip(src) {
                    *o = *o + g;
                }
            }
        }
        let idx = idx.clone();
        Ok(Tensor::new_result(
            out,
            with_rows(self.shape(), rows),
            "scatter_rows",
            &[self],
            Box::new(move |cx| Ok(vec![Some(cx.grad.gather_rows(&idx)?)])),
        ))
    }
}

struct Tap<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
    // derivative of the clamped coordinate w.r.t. the raw one (0 or 1)
    dx: T,
    dy: T,
}

fn tap<T: Real>(x: T, y: T, w: usize, h: usize) -> Tap<T> {
    fn axis<T: Real>(v: T, n: usize) -> (usize, usize, T, T) {
        let hi = T::of((n - 1) as f64);
        let inside = v >= T::zero() && v <= hi;
        let c = v.max(T::zero()).min(hi);
        if n == 1 {
            return (0, 0, T::zero(), T::zero());
        }
        let i0 = (c.floor().to_usize().unwrap_or(0)).min(n - 2);
        let f = c - T::of(i0 as f64);
        (i0, i0 + 1, f, if inside { T::one() } else { T::zero() })
    }
    let (x0, x1, fx, dx) = axis(x, w);
    let (y0, y1, fy, dy) = axis(y, h);
    Tap { x0, x1, y0, y1, fx, fy, dx, dy }
}

/// Bilinear lookup of `tex: (B, C, H, W)` at `coords: (B, P, 2)` holding
/// `(x, y)` in texel index units (texel centres at integers). Coordinates
/// outside the grid are clamped to the border.
///
/// First-order only: the gradients this op returns are not themselves
/// recorded, so it must not sit on a path that needs second derivatives.
pub fn bilinear_sample<T: Real>(tex: &Tensor<T>, coords: &Tensor<T>) -> Result<Tensor<T>> {
    let &[b, c, h, w] = tex.shape() else {
        return shape_err("bilinear_sample", format!("texture must be (B, C, H, W), got {:?}", tex.shape()));
    };
    let &[cb, p, two] = coords.shape() else {
        return shape_err("bilinear_sample", format!("coords must be (B, P, 2), got {:?}", coords.shape()));
    };
    if cb != b || two != 2 {
        return shape_err("bilinear_sample", format!("coords {:?} vs texture {:?}", coords.shape(), tex.shape()));
    }
    let td = tex.data();
    let cd = coords.data();
    let mut out = vec![T::zero(); b * p * c];
    for s in 0..b {
        for i in 0..p {
            let k = (s * p + i) * 2;
            let t = tap(cd[k], cd[k + 1], w, h);
            let (w00, w01, w10, w11) =
                ((T::one() - t.fx) * (T::one() - t.fy), t.fx * (T::one() - t.fy), (T::one() - t.fx) * t.fy, t.fx * t.fy);
            for ch in 0..c {
                let plane = &td[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                out[(s * p + i) * c + ch] = w00 * plane[t.y0 * w + t.x0]
                    + w01 * plane[t.y0 * w + t.x1]
                    + w10 * plane[t.y1 * w + t.x0]
                    + w11 * plane[t.y1 * w + t.x1];
            }
        }
    }
    Ok(Tensor::new_result(
        out,
        vec![b, p, c],
        "bilinear_sample",
        &[tex, coords],
        Box::new(move |cx| {
            let td = cx.inputs[0].data();
            let cd = cx.inputs[1].data();
            let g = cx.grad.data();
            let mut gt = if cx.needs[0] { vec![T::zero(); b * c * h * w] } else { Vec::new() };
            let mut gc = if cx.needs[1] { vec![T::zero(); b * p * 2] } else { Vec::new() };
            for s in 0..b {
                for i in 0..p {
                    let k = (s * p + i) * 2;
                    let t = tap(cd[k], cd[k + 1], w, h);
                    let (ofx, ofy) = (T::one() - t.fx, T::one() - t.fy);
                    let (mut sx, mut sy) = (T::zero(), T::zero());
                    for ch in 0..c {
                        let gv = g[(s * p + i) * c + ch];
                        let base = (s * c + ch) * h * w;
                        let (i00, i01, i10, i11) =
                            (base + t.y0 * w + t.x0, base + t.y0 * w + t.x1, base + t.y1 * w + t.x0, base + t.y1 * w + t.x1);
                        if cx.needs[0] {
                            gt[i00] = gt[i00] + gv * ofx * ofy;
                            gt[i01] = gt[i01] + gv * t.fx * ofy;
                            gt[i10] = gt[i10] + gv * ofx * t.fy;
                            gt[i11] = gt[i11] + gv * t.fx * t.fy;
                        }
                        if cx.needs[1] {
                            let (v00, v01, v10, v11) = (td[i00], td[i01], td[i10], td[i11]);
                            sx = sx + gv * (ofy * (v01 - v00) + t.fy * (v11 - v10));
                            sy = sy + gv * (ofx * (v10 - v00) + t.fx * (v11 - v01));
                        }
                    }
                    if cx.needs[1] {
                        gc[k] = sx * t.dx;
                        gc[k + 1] = sy * t.dy;
                    }
                }
            }
            Ok(vec![
                cx.needs[0].then(|| Tensor::constant(gt, vec![b, c, h, w])),
                cx.needs[1].then(|| Tensor::constant(gc, vec![b, p, 2])),
            ])
        }),
    ))
}
