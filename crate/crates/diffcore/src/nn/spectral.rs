use std::cell::Cell;
use std::rc::Rc;

use crate::error::Result;
use crate::nn::param::{Param, Path};
use crate::real::Real;
use crate::tensor::{no_grad, Tensor};

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1e-12 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Divides `w` (viewed as a matrix with `w.dim(0)` rows) by an estimate of
/// its largest singular value. `u` is the persistent left singular vector
/// estimate; it is refined by `power_iters` steps of power iteration before
/// the estimate is formed. The estimate is floored at `eps`.
///
/// Returns the normalized weight and the estimate. Gradients flow through
/// both `w` and the estimate, with `u` and `v` held constant.
pub fn spectral_normalize<T: Real>(w: &Tensor<T>, u: &mut [f64], power_iters: usize, eps: f64) -> Result<(Tensor<T>, f64)> {
    let rows = w.dim(0);
    let cols = w.numel() / rows;
    let wd: Vec<f64> = w.to_f64_vec();
    let mut v = vec![0.0; cols];
    let compute_v = |u: &[f64], v: &mut [f64]| {
        v.fill(0.0);
        for r in 0..rows {
            let ur = u[r];
            for (vc, &x) in v.iter_mut().zip(&wd[r * cols..(r + 1) * cols]) {
                *vc += ur * x;
            }
        }
        normalize(v);
    };
    for _ in 0..power_iters {
        compute_v(u, &mut v);
        for r in 0..rows {
            u[r] = wd[r * cols..(r + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        normalize(u);
    }
    compute_v(u, &mut v);
    let mut uv = Vec::with_capacity(rows * cols);
    for &ur in u.iter() {
        uv.extend(v.iter().map(|&vc| T::of(ur * vc)));
    }
    let uv = Tensor::from_vec(uv, w.shape())?;
    let sigma = w.mul(&uv)?.sum_all()?.clamp_min(eps)?;
    let est = sigma.item().f64();
    Ok((w.div(&sigma)?, est))
}

/// Spectral normalization state attached to a weight: one power iteration
/// per forward pass while training, none in evaluation mode.
pub struct SpectralNorm<T: Real> {
    u: Param<T>,
    training: Rc<Cell<bool>>,
    pub eps: f64,
}

impl<T: Real> SpectralNorm<T> {
    pub fn new(path: &Path<T>, rows: usize) -> Self {
        SpectralNorm { u: path.unit_buffer("sn_u", rows), training: path.store().training_flag(), eps: 1e-8 }
    }

    pub fn apply(&self, w: &Tensor<T>) -> Result<Tensor<T>> {
        let mut u = self.u.get().to_f64_vec();
        let iters = usize::from(self.training.get());
        let (wn, _) = spectral_normalize(w, &mut u, iters, self.eps)?;
        if iters > 0 {
            no_grad(|| self.u.set_f64(&u))?;
        }
        Ok(wn)
    }
}
