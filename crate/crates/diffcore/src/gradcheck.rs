//! Finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DiffError, Result};
use crate::tensor::{grad, Tensor};

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Check at most this many coordinates per input (sampled with `seed`).
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Relative disagreement of the one-sided slopes above which a
    /// coordinate is treated as sitting on a kink and skipped.
    pub kink_tol: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { tol: 1e-4, floor: 1e-6, max_coords: None, seed: 0, kink_tol: 1e-2 }
    }
}

#[derive(Debug, Clone)]
pub struct CoordError {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because the function is not differentiable there.
    pub kinks: Vec<(usize, usize)>,
    pub failures: Vec<CoordError>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn eval<F>(f: &F, xs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let y = f(xs)?;
    let v = y.data().iter().sum::<f64>();
    if !v.is_finite() {
        return Err(DiffError::NonFinite(v));
    }
    Ok(v)
}

/// Compares reverse-mode gradients of `sum(f(inputs))` against central
/// differences with step `1e-5 * max(1, |x|)`. `skip(input, index)` excludes
/// coordinates known to be non-differentiable.
pub fn gradcheck<F>(
    f: F,
    inputs: &[Tensor<f64>],
    skip: &dyn Fn(usize, usize) -> bool,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().requires_grad_(true)).collect();
    let y = f(&leaves)?.sum_all()?;
    let refs: Vec<&Tensor<f64>> = leaves.iter().collect();
    let analytic = grad(&y, &refs, false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradcheckReport { max_rel_err: 0.0, checked: 0, kinks: Vec::new(), failures: Vec::new() };
    let base: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach()).collect();
    let f0 = eval(&f, &base)?;
    for (i, inp) in inputs.iter().enumerate() {
        let n = inp.numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < n => {
                let mut v = sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let ga = analytic[i].data();
        for j in coords {
            if skip(i, j) {
                continue;
            }
            let x = inp.data()[j];
            let h = 1e-5 * x.abs().max(1.0);
            let shifted = |d: f64| -> Result<f64> {
                let mut xs = base.clone();
                let mut v = inp.to_vec();
                v[j] = x + d;
                xs[i] = Tensor::from_vec(v, inp.shape())?;
                eval(&f, &xs)
            };
            let fp = shifted(h)?;
            let fm = shifted(-h)?;
            let (dp, dm) = ((fp - f0) / h, (f0 - fm) / h);
            if (dp - dm).abs() > opts.kink_tol * dp.abs().max(dm.abs()).max(1.0) {
                report.kinks.push((i, j));
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = ga[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel);
            if rel > opts.tol {
                report.failures.push(CoordError { input: i, index: j, analytic: a, numeric, rel_err: rel });
            }
        }
    }
    Ok(report)
}
