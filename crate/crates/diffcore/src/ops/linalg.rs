use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

fn matmul_raw<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(Vec<T>, Vec<usize>)> {
    match (a.shape(), b.shape()) {
        (&[m, k], &[k2, n]) if k == k2 => {
            let mut c = vec![T::zero(); m * n];
            T::gemm(m, k, n, T::one(), a.data(), false, b.data(), false, T::zero(), &mut c);
            Ok((c, vec![m, n]))
        }
        (&[bs, m, k], &[bs2, k2, n]) if k == k2 && bs == bs2 => {
            let mut c = vec![T::zero(); bs * m * n];
            for i in 0..bs {
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    &a.data()[i * m * k..(i + 1) * m * k],
                    false,
                    &b.data()[i * k * n..(i + 1) * k * n],
                    false,
                    T::zero(),
                    &mut c[i * m * n..(i + 1) * m * n],
                );
            }
            Ok((c, vec![bs, m, n]))
        }
        (sa, sb) => shape_err("matmul", format!("lhs {sa:?} (.., m, k) vs rhs {sb:?} (.., k, n)")),
    }
}

impl<T: Real> Tensor<T> {
    /// Matrix product of 2-D tensors, or batched product of 3-D tensors with
    /// equal batch size.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (data, shape) = matmul_raw(self, other)?;
        Ok(Tensor::new_result(
            data,
            shape,
            "matmul",
            &[self, other],
            Box::new(|c| {
                let (a, b) = (&c.inputs[0], &c.inputs[1]);
                let ga = if c.needs[0] { Some(c.grad.matmul(&b.transpose_last()?)?) } else { None };
                let gb = if c.needs[1] { Some(a.transpose_last()?.matmul(c.grad)?) } else { None };
                Ok(vec![ga, gb])
            }),
        ))
    }

    /// `x W^T + b` for `x: (N, in)`, `W: (out, in)`, `b: (out)`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let y = self.matmul(&weight.transpose_last()?)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}
