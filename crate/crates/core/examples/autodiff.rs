//! Reverse-mode gradients through a small expression, checked against
//! central differences.

use diffcore::gradcheck::{gradcheck, GradcheckOptions};
use diffcore::Tensor;

fn main() -> diffcore::Result<()> {
    let x = Tensor::<f64>::from_f64(&[0.3, -1.2, 2.0], &[3])?.requires_grad_(true);
    let y = x.tanh()?.mul(&x)?.sum_all()?;
    let grads = y.backward()?;
    println!("f(x) = sum(x tanh x) = {:.6}", y.item());
    println!("df/dx = {:?}", grads.get(&x).expect("gradient").to_vec());

    let report = gradcheck(
        |t: &[Tensor<f64>]| t[0].tanh()?.mul(&t[0])?.sum_all(),
        std::slice::from_ref(&x),
        &|_, _| false,
        &GradcheckOptions::default(),
    )?;
    println!(
        "finite-difference check: max rel err {:.2e} over {} coordinates, passed {}",
        report.max_rel_err,
        report.checked,
        report.passed()
    );
    Ok(())
}
