#![allow(dead_code)]

use diffcore::gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
use diffcore::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape).unwrap()
}

pub fn rand_pos(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    Tensor::from_vec(v, shape).unwrap()
}

/// Gradchecks `sum(f(inputs) * weights)` so that every output element
/// contributes with a distinct coefficient.
pub fn check<F>(inputs: &[Tensor<f64>], f: F) -> GradcheckReport
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut r = rng(99);
    let probe = f(inputs).unwrap();
    let w = rand_t(&mut r, probe.shape());
    let report =
        gradcheck(|xs| f(xs)?.mul(&w), inputs, &|_, _| false, &GradcheckOptions { tol: 1e-4, ..Default::default() }).unwrap();
    assert!(report.passed(), "gradcheck failures: {:?}", &report.failures[..report.failures.len().min(5)]);
    assert!(report.checked > 0);
    report
}
