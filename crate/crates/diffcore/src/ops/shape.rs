//! Reductions and layout operations.

use crate::error::{invalid, shape_err, Result};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<T: Real> Tensor<T> {
    pub fn sum_all(&self) -> Result<Tensor<T>> {
        let s: T = self.data().iter().copied().sum();
        let shape = self.shape().to_vec();
        Ok(Tensor::new_result(
            vec![s],
            vec![],
            "sum_all",
            &[self],
            Box::new(move |c| Ok(vec![Some(c.grad.broadcast_to(&shape)?)])),
        ))
    }

    pub fn mean_all(&self) -> Result<Tensor<T>> {
        let n = self.numel().max(1) as f64;
        self.sum_all()?.mul_scalar(1.0 / n)
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_keepdim(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let mut target = self.shape().to_vec();
        for &a in axes {
            if a >= target.len() {
                return invalid("sum_keepdim", format!("axis {a} out of range for {:?}", self.shape()));
            }
            target[a] = 1;
        }
        self.sum_to(&target)
    }

    pub fn mean_keepdim(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let count: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_keepdim(axes)?.mul_scalar(1.0 / count.max(1) as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return shape_err("reshape", format!("{:?} has {} elements, target {:?}", self.shape(), self.numel(), shape));
        }
        if shape == self.shape() {
            return Ok(self.clone());
        }
        let src = self.shape().to_vec();
        Ok(Tensor::new_result_shared(
            self.data_rc().clone(),
            shape.to_vec(),
            "reshape",
            &[self],
            Box::new(move |c| Ok(vec![Some(c.grad.reshape(&src)?)])),
        ))
    }

    pub fn flatten_from(&self, axis: usize) -> Result<Tensor<T>> {
        let mut shape = self.shape()[..axis].to_vec();
        shape.push(self.shape()[axis..].iter().product());
        self.reshape(&shape)
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let n = self.dims();
        let mut seen = vec![false; n];
        if axes.len() != n || axes.iter().any(|&a| a >= n || std::mem::replace(&mut seen[a], true)) {
            return invalid("permute", format!("axes {axes:?} for shape {:?}", self.shape()));
        }
        let src_shape = self.shape();
        let src_strides = row_major_strides(src_shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| src_shape[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let zeros = vec![0; n];
        let d = self.data();
        let mut v = vec![T::zero(); self.numel()];
        crate::ops::broadcast::for_each_offset2(&out_shape, &strides, &zeros, |o, i, _| v[o] = d[i]);
        let mut inverse = vec![0; n];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(Tensor::new_result(v, out_shape, "permute", &[self], Box::new(move |c| Ok(vec![Some(c.grad.permute(&inverse)?)]))))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor<T>> {
        let n = self.dims();
        if n < 2 {
            return invalid("transpose_last", format!("needs >= 2 dims, got {:?}", self.shape()));
        }
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(n - 1, n - 2);
        self.permute(&axes)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return shape_err("narrow", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len));
        }
        if start == 0 && len == shape[axis] {
            return Ok(self.clone());
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let d = self.data();
        let mut v = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            v.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let total = shape[axis];
        Ok(Tensor::new_result(
            v,
            out_shape,
            "narrow",
            &[self],
            Box::new(move |c| Ok(vec![Some(c.grad.pad_axis(axis, start, total)?)])),
        ))
    }

    /// Embeds this tensor at offset `before` inside a zero tensor whose
    /// `axis` has size `total`. Adjoint of [`Tensor::narrow`].
    pub fn pad_axis(&self, axis: usize, before: usize, total: usize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        let len = shape[axis];
        if before + len > total {
            return shape_err("pad_axis", format!("{len} at {before} exceeds {total}"));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = total;
        let mut v = vec![T::zero(); numel(&out_shape)];
        let d = self.data();
        for o in 0..outer {
            let dst = (o * total + before) * inner;
            let src = o * len * inner;
            v[dst..dst + len * inner].copy_from_slice(&d[src..src + len * inner]);
        }
        Ok(Tensor::new_result(
            v,
            out_shape,
            "pad_axis",
            &[self],
            Box::new(move |c| Ok(vec![Some(c.grad.narrow(axis, before, len)?)])),
        ))
    }

    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let Some(first) = parts.first() else {
            return invalid("concat", "no inputs");
        };
        let base = first.shape().to_vec();
        if axis >= base.len() {
            return invalid("concat", format!("axis {axis} for shape {base:?}"));
        }
        for p in parts {
            let s = p.shape();
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return shape_err("concat", format!("{:?} vs {:?} along axis {axis}", s, base));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut v = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&sizes) {
                let src = o * len * inner;
                v.extend_from_slice(&p.data()[src..src + len * inner]);
            }
        }
        Ok(Tensor::new_result(
            v,
            out_shape,
            "concat",
            parts,
            Box::new(move |c| {
                let mut off = 0;
                let mut grads = Vec::with_capacity(sizes.len());
                for (i, &len) in sizes.iter().enumerate() {
                    grads.push(if c.needs[i] { Some(c.grad.narrow(axis, off, len)?) } else { None });
                    off += len;
                }
                Ok(grads)
            }),
        ))
    }

    /// Reverses the order along `axis`.
    pub fn flip(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return invalid("flip", format!("axis {axis} for shape {shape:?}"));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let d = self.data();
        let mut v = vec![T::zero(); d.len()];
        for o in 0..outer {
            for i in 0..n {
                let src = (o * n + i) * inner;
                let dst = (o * n + (n - 1 - i)) * inner;
                v[dst..dst + inner].copy_from_slice(&d[src..src + inner]);
            }
        }
        Ok(Tensor::new_result(v, shape, "flip", &[self], Box::new(move |c| Ok(vec![Some(c.grad.flip(axis)?)]))))
    }

    /// Horizontal flip of an NCHW tensor (last axis).
    pub fn flip_width(&self) -> Result<Tensor<T>> {
        self.flip(self.dims() - 1)
    }

    /// Nearest-neighbour upsampling of the last two axes by integer factors.
    pub fn upsample_nearest(&self, sh: usize, sw: usize) -> Result<Tensor<T>> {
        let s = self.shape().to_vec();
        if s.len() < 2 || sh == 0 || sw == 0 {
            return invalid("upsample_nearest", format!("shape {s:?}, factors ({sh}, {sw})"));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes: usize = s[..s.len() - 2].iter().product();
        let (oh, ow) = (h * sh, w * sw);
        let d = self.data();
        let mut v = vec![T::zero(); planes * oh * ow];
        for p in 0..planes {
            for y in 0..oh {
                let src_row = &d[(p * h + y / sh) * w..(p * h + y / sh + 1) * w];
                let dst = &mut v[(p * oh + y) * ow..(p * oh + y + 1) * ow];
                for (x, o) in dst.iter_mut().enumerate() {
                    *o = src_row[x / sw];
                }
            }
        }
        let mut out_shape = s.clone();
        let n = out_shape.len();
        out_shape[n - 2] = oh;
        out_shape[n - 1] = ow;
        Ok(Tensor::new_result(
            v,
            out_shape,
            "upsample_nearest",
            &[self],
            Box::new(move |c| Ok(vec![Some(c.grad.sum_pool(sh, sw)?)])),
        ))
    }

    /// Sums non-overlapping `sh x sw` blocks of the last two axes. Adjoint of
    /// [`Tensor::upsample_nearest`].
    pub fn sum_pool(&self, sh: usize, sw: usize) -> Result<Tensor<T>> {
        let s = self.shape().to_vec();
        let n = s.len();
        if n < 2 || !s[n - 2].is_multiple_of(sh) || !s[n - 1].is_multiple_of(sw) {
            return shape_err("sum_pool", format!("{s:?} not divisible by ({sh}, {sw})"));
        }
        let (h, w) = (s[n - 2], s[n - 1]);
        let (oh, ow) = (h / sh, w / sw);
        let planes: usize = s[..n - 2].iter().product();
        let d = self.data();
        let mut v = vec![T::zero(); planes * oh * ow];
        for p in 0..planes {
            for y in 0..h {
                for x in 0..w {
                    let o = (p * oh + y / sh) * ow + x / sw;
                    v[o] = v[o] + d[(p * h + y) * w + x];
                }
            }
        }
        let mut out_shape = s.clone();
        out_shape[n - 2] = oh;
        out_shape[n - 1] = ow;
        Ok(Tensor::new_result(
            v,
            out_shape,
            "sum_pool",
            &[self],
            Box::new(move |c| Ok(vec![Some(c.grad.upsample_nearest(sh, sw)?)])),
        ))
    }

    /// Average pooling with a square window and equal stride (no padding).
    pub fn avg_pool(&self, k: usize) -> Result<Tensor<T>> {
        self.sum_pool(k, k)?.mul_scalar(1.0 / (k * k) as f64)
    }

    /// Mean over the two spatial axes of an NCHW tensor, giving (N, C).
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        if self.dims() != 4 {
            return shape_err("global_avg_pool", format!("expected NCHW, got {:?}", self.shape()));
        }
        let (n, c) = (self.dim(0), self.dim(1));
        self.mean_keepdim(&[2, 3])?.reshape(&[n, c])
    }
}
