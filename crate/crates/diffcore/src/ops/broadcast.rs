//! Numpy-style broadcasting and its adjoint (sum back to a shape).

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return shape_err(op, format!("cannot broadcast {a:?} with {b:?}")),
        };
    }
    Ok(out)
}

/// Strides of `src` laid out in the index space of `out` (0 on broadcast axes).
pub(crate) fn strides_in(src: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    let off = n - src.len();
    let mut strides = vec![0; n];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i + off] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    strides
}

/// Visits every multi-index of `shape` in row-major order, reporting the
/// matching linear offsets of two strided operands.
pub(crate) fn for_each_offset2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total = numel(shape);
    if total == 0 {
        return;
    }
    let n = shape.len();
    if n == 0 {
        f(0, 0, 0);
        return;
    }
    let mut idx = vec![0usize; n];
    let (mut oa, mut ob) = (0usize, 0usize);
    let last = n - 1;
    let inner = shape[last];
    let (ia, ib) = (sa[last], sb[last]);
    let mut lin = 0;
    loop {
        for j in 0..inner {
            f(lin + j, oa + j * ia, ob + j * ib);
        }
        lin += inner;
        if lin >= total {
            break;
        }
        // Carry into the outer axes.
        let mut ax = last;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            oa -= sa[ax] * shape[ax];
            ob -= sb[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn broadcast_data<T: Real>(x: &[T], src: &[usize], out: &[usize]) -> Vec<T> {
    if src == out {
        return x.to_vec();
    }
    let sa = strides_in(src, out);
    let zeros = vec![0; out.len()];
    let mut v = vec![T::zero(); numel(out)];
    for_each_offset2(out, &sa, &zeros, |o, a, _| v[o] = x[a]);
    v
}

pub(crate) fn sum_to_data<T: Real>(g: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    if from == to {
        return g.to_vec();
    }
    let st = strides_in(to, from);
    let zeros = vec![0; from.len()];
    let mut v = vec![T::zero(); numel(to)];
    for_each_offset2(from, &st, &zeros, |o, t, _| v[t] = v[t] + g[o]);
    v
}

fn can_broadcast_to(src: &[usize], dst: &[usize]) -> bool {
    if src.len() > dst.len() {
        return false;
    }
    let off = dst.len() - src.len();
    src.iter().enumerate().all(|(i, &d)| d == 1 || d == dst[i + off])
}

impl<T: Real> Tensor<T> {
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        if !can_broadcast_to(self.shape(), shape) {
            return shape_err("broadcast_to", format!("{:?} -> {:?}", self.shape(), shape));
        }
        let data = broadcast_data(self.data(), self.shape(), shape);
        let src = self.shape().to_vec();
        Ok(Tensor::new_result(
            data,
            shape.to_vec(),
            "broadcast_to",
            &[self],
            Box::new(move |c| Ok(vec![Some(c.grad.sum_to(&src)?)])),
        ))
    }

    /// Sums broadcast axes away so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        if !can_broadcast_to(shape, self.shape()) {
            return shape_err("sum_to", format!("{:?} -> {:?}", self.shape(), shape));
        }
        let data = sum_to_data(self.data(), self.shape(), shape);
        let src = self.shape().to_vec();
        Ok(Tensor::new_result(
            data,
            shape.to_vec(),
            "sum_to",
            &[self],
            Box::new(move |c| Ok(vec![Some(c.grad.broadcast_to(&src)?)])),
        ))
    }
}
