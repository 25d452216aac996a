use crate::error::Result;
use crate::ops::broadcast::{broadcast_shape, for_each_offset2, strides_in};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    #[inline]
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }
}

fn binary<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: BinOp) -> Result<Tensor<T>> {
    let shape = broadcast_shape(op.name(), a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<T> = if a.shape() == b.shape() {
        ad.iter().zip(bd).map(|(&x, &y)| op.apply(x, y)).collect()
    } else if b.numel() == 1 && shape == a.shape() {
        let y = bd[0];
        ad.iter().map(|&x| op.apply(x, y)).collect()
    } else {
        let sa = strides_in(a.shape(), &shape);
        let sb = strides_in(b.shape(), &shape);
        let mut v = vec![T::zero(); shape.iter().product()];
        for_each_offset2(&shape, &sa, &sb, |o, i, j| v[o] = op.apply(ad[i], bd[j]));
        v
    };
    let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
    Ok(Tensor::new_result(
        data,
        shape,
        op.name(),
        &[a, b],
        Box::new(move |c| {
            let g = c.grad;
            let (x, y) = (&c.inputs[0], &c.inputs[1]);
            let (ga, gb) = match op {
                BinOp::Add => (c.needs[0].then(|| g.sum_to(&sa)).transpose()?, c.needs[1].then(|| g.sum_to(&sb)).transpose()?),
                BinOp::Sub => {
                    (c.needs[0].then(|| g.sum_to(&sa)).transpose()?, c.needs[1].then(|| g.neg()?.sum_to(&sb)).transpose()?)
                }
                BinOp::Mul => (
                    c.needs[0].then(|| g.mul(y)?.sum_to(&sa)).transpose()?,
                    c.needs[1].then(|| g.mul(x)?.sum_to(&sb)).transpose()?,
                ),
                BinOp::Div => (
                    c.needs[0].then(|| g.div(y)?.sum_to(&sa)).transpose()?,
                    c.needs[1].then(|| g.mul(c.out)?.div(y)?.neg()?.sum_to(&sb)).transpose()?,
                ),
            };
            Ok(vec![ga, gb])
        }),
    ))
}

/// Elementwise map producing a constant (non-differentiable) tensor.
pub(crate) fn map_const<T: Real>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::constant(x.data().iter().map(|&v| f(v)).collect(), x.shape().to_vec())
}

impl<T: Real> Tensor<T> {
    pub fn add(&self, o: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, o, BinOp::Add)
    }

    pub fn sub(&self, o: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, o, BinOp::Sub)
    }

    pub fn mul(&self, o: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, o, BinOp::Mul)
    }

    pub fn div(&self, o: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, o, BinOp::Div)
    }

    pub fn add_scalar(&self, s: f64) -> Result<Tensor<T>> {
        let s = T::of(s);
        Ok(Tensor::new_result(
            self.data().iter().map(|&v| v + s).collect(),
            self.shape().to_vec(),
            "add_scalar",
            &[self],
            Box::new(|c| Ok(vec![Some(c.grad.clone())])),
        ))
    }

    pub fn mul_scalar(&self, s: f64) -> Result<Tensor<T>> {
        let st = T::of(s);
        Ok(Tensor::new_result(
            self.data().iter().map(|&v| v * st).collect(),
            self.shape().to_vec(),
            "mul_scalar",
            &[self],
            Box::new(move |c| Ok(vec![Some(c.grad.mul_scalar(s)?)])),
        ))
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.mul_scalar(-1.0)
    }

    /// `1 - x`
    pub fn one_minus(&self) -> Result<Tensor<T>> {
        self.neg()?.add_scalar(1.0)
    }

    pub fn square(&self) -> Result<Tensor<T>> {
        Ok(Tensor::new_result(
            self.data().iter().map(|&v| v * v).collect(),
            self.shape().to_vec(),
            "square",
            &[self],
            Box::new(|c| Ok(vec![Some(c.grad.mul(&c.inputs[0])?.mul_scalar(2.0)?)])),
        ))
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        Ok(Tensor::new_result(
            self.data().iter().map(|v| v.exp()).collect(),
            self.shape().to_vec(),
            "exp",
            &[self],
            Box::new(|c| Ok(vec![Some(c.grad.mul(c.out)?)])),
        ))
    }

    pub fn ln(&self) -> Result<Tensor<T>> {
        Ok(Tensor::new_result(
            self.data().iter().map(|v| v.ln()).collect(),
            self.shape().to_vec(),
            "ln",
            &[self],
            Box::new(|c| Ok(vec![Some(c.grad.div(&c.inputs[0])?)])),
        ))
    }

    pub fn sqrt(&self) -> Result<Tensor<T>> {
        Ok(Tensor::new_result(
            self.data().iter().map(|v| v.sqrt()).collect(),
            self.shape().to_vec(),
            "sqrt",
            &[self],
            Box::new(|c| Ok(vec![Some(c.grad.div(c.out)?.mul_scalar(0.5)?)])),
        ))
    }

    /// `x^p`, intended for positive `x`.
    pub fn powf(&self, p: f64) -> Result<Tensor<T>> {
        let pt = T::of(p);
        Ok(Tensor::new_result(
            self.data().iter().map(|v| v.powf(pt)).collect(),
            self.shape().to_vec(),
            "powf",
            &[self],
            Box::new(move |c| {
                let d = c.inputs[0].powf(p - 1.0)?.mul_scalar(p)?;
                Ok(vec![Some(c.grad.mul(&d)?)])
            }),
        ))
    }

    pub fn sin(&self) -> Result<Tensor<T>> {
        Ok(Tensor::new_result(
            self.data().iter().map(|v| v.sin()).collect(),
            self.shape().to_vec(),
            "sin",
            &[self],
            Box::new(|c| Ok(vec![Some(c.grad.mul(&c.inputs[0].cos()?)?)])),
        ))
    }

    pub fn cos(&self) -> Result<Tensor<T>> {
        Ok(Tensor::new_result(
            self.data().iter().map(|v| v.cos()).collect(),
            self.shape().to_vec(),
            "cos",
            &[self],
            Box::new(|c| Ok(vec![Some(c.grad.mul(&c.inputs[0].sin()?)?.neg()?)])),
        ))
    }

    pub fn tanh(&self) -> Result<Tensor<T>> {
        Ok(Tensor::new_result(
            self.data().iter().map(|v| v.tanh()).collect(),
            self.shape().to_vec(),
            "tanh",
            &[self],
            Box::new(|c| {
                let d = c.out.square()?.one_minus()?;
                Ok(vec![Some(c.grad.mul(&d)?)])
            }),
        ))
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        Ok(Tensor::new_result(
            self.data().iter().map(|&v| sigmoid(v)).collect(),
            self.shape().to_vec(),
            "sigmoid",
            &[self],
            Box::new(|c| {
                let d = c.out.mul(&c.out.one_minus()?)?;
                Ok(vec![Some(c.grad.mul(&d)?)])
            }),
        ))
    }

    pub fn softplus(&self) -> Result<Tensor<T>> {
        Ok(Tensor::new_result(
            self.data()
                .iter()
                .map(|&v| {
                    // log(1 + e^v) without overflow
                    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
                })
                .collect(),
            self.shape().to_vec(),
            "softplus",
            &[self],
            Box::new(|c| Ok(vec![Some(c.grad.mul(&c.inputs[0].sigmoid()?)?)])),
        ))
    }

    /// ELU with alpha = 1.
    pub fn elu(&self) -> Result<Tensor<T>> {
        Ok(Tensor::new_result(
            self.data().iter().map(|&v| if v > T::zero() { v } else { v.exp_m1() }).collect(),
            self.shape().to_vec(),
            "elu",
            &[self],
            Box::new(|c| {
                let pos = map_const(&c.inputs[0], |v| if v > T::zero() { T::one() } else { T::zero() });
                // d = pos + (1 - pos) * (out + 1)
                let d = pos.add(&pos.one_minus()?.mul(&c.out.add_scalar(1.0)?)?)?;
                Ok(vec![Some(c.grad.mul(&d)?)])
            }),
        ))
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor<T>> {
        let s = T::of(slope);
        Ok(Tensor::new_result(
            self.data().iter().map(|&v| if v > T::zero() { v } else { v * s }).collect(),
            self.shape().to_vec(),
            "leaky_relu",
            &[self],
            Box::new(move |c| {
                let d = map_const(&c.inputs[0], |v| if v > T::zero() { T::one() } else { s });
                Ok(vec![Some(c.grad.mul(&d)?)])
            }),
        ))
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        self.leaky_relu(0.0)
    }

    pub fn abs(&self) -> Result<Tensor<T>> {
        Ok(Tensor::new_result(
            self.data().iter().map(|v| v.abs()).collect(),
            self.shape().to_vec(),
            "abs",
            &[self],
            Box::new(|c| {
                let d = map_const(&c.inputs[0], |v| {
                    if v > T::zero() {
                        T::one()
                    } else if v < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                });
                Ok(vec![Some(c.grad.mul(&d)?)])
            }),
        ))
    }

    /// Clamps into `[lo, hi]`; gradient passes where `lo <= x <= hi`.
    pub fn clip(&self, lo: f64, hi: f64) -> Result<Tensor<T>> {
        let (l, h) = (T::of(lo), T::of(hi));
        Ok(Tensor::new_result(
            self.data().iter().map(|&v| v.max(l).min(h)).collect(),
            self.shape().to_vec(),
            "clip",
            &[self],
            Box::new(move |c| {
                let d = map_const(&c.inputs[0], |v| if v >= l && v <= h { T::one() } else { T::zero() });
                Ok(vec![Some(c.grad.mul(&d)?)])
            }),
        ))
    }

    pub fn clamp_min(&self, lo: f64) -> Result<Tensor<T>> {
        self.clip(lo, f64::INFINITY)
    }

    /// Constant 0/1 tensor: 1 where the predicate holds.
    pub fn mask_where(&self, pred: impl Fn(T) -> bool) -> Tensor<T> {
        map_const(self, |v| if pred(v) { T::one() } else { T::zero() })
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
