use crate::error::{shape_err, Result};
use crate::nn::param::{Param, Path};
use crate::nn::spectral::SpectralNorm;
use crate::ops::{conv2d, conv_transpose2d};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct ConvOpts {
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
    pub spectral: bool,
}

impl ConvOpts {
    pub fn new(stride: usize, pad: usize) -> Self {
        ConvOpts { stride, pad, bias: true, spectral: false }
    }

    pub fn spectral(mut self, on: bool) -> Self {
        self.spectral = on;
        self
    }

    pub fn bias(mut self, on: bool) -> Self {
        self.bias = on;
        self
    }
}

pub struct Conv2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub opts: ConvOpts,
    sn: Option<SpectralNorm<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(path: &Path<T>, cin: usize, cout: usize, k: usize, opts: ConvOpts) -> Self {
        let weight = path.kaiming("weight", &[cout, cin, k, k], cin * k * k);
        let bias = opts.bias.then(|| path.zeros("bias", &[cout]));
        let sn = opts.spectral.then(|| SpectralNorm::new(path, cout));
        Conv2d { weight, bias, opts, sn }
    }

    /// The weight actually applied (spectrally normalized if enabled).
    pub fn effective_weight(&self) -> Result<Tensor<T>> {
        let w = self.weight.get();
        match &self.sn {
            Some(sn) => sn.apply(&w),
            None => Ok(w),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = conv2d(x, &self.effective_weight()?, self.opts.stride, self.opts.pad)?;
        add_channel_bias(y, self.bias.as_ref())
    }
}

fn add_channel_bias<T: Real>(y: Tensor<T>, bias: Option<&Param<T>>) -> Result<Tensor<T>> {
    match bias {
        Some(b) => {
            let b = b.get();
            let c = b.numel();
            y.add(&b.reshape(&[1, c, 1, 1])?)
        }
        None => Ok(y),
    }
}

/// Transposed convolution with weight layout `(Cin, Cout, k, k)`.
pub struct ConvTranspose2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub opts: ConvOpts,
    sn: Option<SpectralNorm<T>>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(path: &Path<T>, cin: usize, cout: usize, k: usize, opts: ConvOpts) -> Self {
        let weight = path.kaiming("weight", &[cin, cout, k, k], cin * k * k / (opts.stride * opts.stride).max(1));
        let bias = opts.bias.then(|| path.zeros("bias", &[cout]));
        let sn = opts.spectral.then(|| SpectralNorm::new(path, cin));
        ConvTranspose2d { weight, bias, opts, sn }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = self.weight.get();
        let w = match &self.sn {
            Some(sn) => sn.apply(&w)?,
            None => w,
        };
        let y = conv_transpose2d(x, &w, self.opts.stride, self.opts.pad)?;
        add_channel_bias(y, self.bias.as_ref())
    }
}

/// Fully connected layer, weight `(out, in)`.
pub struct Linear<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(path: &Path<T>, din: usize, dout: usize) -> Self {
        Linear { weight: path.kaiming("weight", &[dout, din], din), bias: path.zeros("bias", &[dout]) }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.linear(&self.weight.get(), Some(&self.bias.get()))
    }
}

/// Group count used throughout: groups of four channels where possible.
pub fn gn_groups(c: usize) -> usize {
    if c >= 8 && c.is_multiple_of(4) {
        c / 4
    } else {
        1
    }
}

/// Group normalization of `x: (N, C, H, W)` with per-channel affine
/// `gamma`, `beta` of length `C`.
pub fn group_norm<T: Real>(x: &Tensor<T>, groups: usize, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let &[n, c, h, w] = x.shape() else {
        return shape_err("group_norm", format!("expected (N, C, H, W), got {:?}", x.shape()));
    };
    if groups == 0 || c % groups != 0 {
        return shape_err("group_norm", format!("{c} channels not divisible into {groups} groups"));
    }
    let g = x.reshape(&[n, groups, c / groups * h * w])?;
    let mu = g.mean_keepdim(&[2])?;
    let centered = g.sub(&mu)?;
    let var = centered.square()?.mean_keepdim(&[2])?;
    let xhat = centered.div(&var.add_scalar(eps)?.sqrt()?)?.reshape(&[n, c, h, w])?;
    xhat.mul(&gamma.reshape(&[1, c, 1, 1])?)?.add(&beta.reshape(&[1, c, 1, 1])?)
}

pub struct GroupNorm<T: Real> {
    pub groups: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
}

impl<T: Real> GroupNorm<T> {
    pub fn new(path: &Path<T>, c: usize) -> Self {
        GroupNorm { groups: gn_groups(c), gamma: path.ones("gamma", &[c]), beta: path.zeros("beta", &[c]), eps: 1e-5 }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        group_norm(x, self.groups, &self.gamma.get(), &self.beta.get(), self.eps)
    }
}

/// Residual unit: `ELU(GN(conv(ELU(GN(conv(x))))) + skip(x))`, where the
/// skip is the identity, or a strided 1x1 convolution when the shape
/// changes.
pub struct ResUnit<T: Real> {
    conv1: Conv2d<T>,
    gn1: GroupNorm<T>,
    conv2: Conv2d<T>,
    gn2: GroupNorm<T>,
    skip: Option<Conv2d<T>>,
}

impl<T: Real> ResUnit<T> {
    pub fn new(path: &Path<T>, cin: usize, cout: usize, k: usize, stride: usize, spectral: bool) -> Self {
        let pad = k / 2;
        let o1 = ConvOpts::new(stride, pad).spectral(spectral).bias(false);
        let o2 = ConvOpts::new(1, pad).spectral(spectral).bias(false);
        let skip = (cin != cout || stride != 1)
            .then(|| Conv2d::new(&path.sub("skip"), cin, cout, 1, ConvOpts::new(stride, 0).spectral(spectral)));
        ResUnit {
            conv1: Conv2d::new(&path.sub("conv1"), cin, cout, k, o1),
            gn1: GroupNorm::new(&path.sub("gn1"), cout),
            conv2: Conv2d::new(&path.sub("conv2"), cout, cout, k, o2),
            gn2: GroupNorm::new(&path.sub("gn2"), cout),
            skip,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.gn1.forward(&self.conv1.forward(x)?)?.elu()?;
        let h = self.gn2.forward(&self.conv2.forward(&h)?)?;
        let s = match &self.skip {
            Some(c) => c.forward(x)?,
            None => x.clone(),
        };
        h.add(&s)?.elu()
    }
}

/// Gate branch of a gated block: a convolution or a transposed convolution
/// followed by group normalization and a sigmoid.
pub enum Gate<T: Real> {
    Conv(Conv2d<T>),
    Deconv(ConvTranspose2d<T>),
}

/// Gated block: `ResUnit(x_f) * sigmoid(GN(gate(x_g)))`. The group-norm
/// shift `beta` of the gate acts as its bias.
pub struct GatedConv<T: Real> {
    pub feature: ResUnit<T>,
    pub gate: Gate<T>,
    pub gate_norm: GroupNorm<T>,
}

impl<T: Real> GatedConv<T> {
    /// Same-resolution gated block whose gate sees the same input as the
    /// feature path.
    pub fn new(path: &Path<T>, cin: usize, cout: usize, k: usize, stride: usize, spectral: bool) -> Self {
        GatedConv {
            feature: ResUnit::new(&path.sub("feat"), cin, cout, k, stride, spectral),
            gate: Gate::Conv(Conv2d::new(
                &path.sub("gate"),
                cin,
                cout,
                k,
                ConvOpts::new(stride, k / 2).bias(false).spectral(spectral),
            )),
            gate_norm: GroupNorm::new(&path.sub("gate_gn"), cout),
        }
    }

    /// Upsampling gated block: the gate is a stride-2 transposed
    /// convolution of the coarse map `gate_cin` channels wide, while the
    /// feature path consumes an already upsampled input.
    pub fn new_up(path: &Path<T>, feat_cin: usize, gate_cin: usize, cout: usize, spectral: bool) -> Self {
        GatedConv {
            feature: ResUnit::new(&path.sub("feat"), feat_cin, cout, 3, 1, spectral),
            gate: Gate::Deconv(ConvTranspose2d::new(
                &path.sub("gate"),
                gate_cin,
                cout,
                4,
                ConvOpts::new(2, 1).bias(false).spectral(spectral),
            )),
            gate_norm: GroupNorm::new(&path.sub("gate_gn"), cout),
        }
    }

    pub fn gate_values(&self, gate_x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = match &self.gate {
            Gate::Conv(c) => c.forward(gate_x)?,
            Gate::Deconv(d) => d.forward(gate_x)?,
        };
        self.gate_norm.forward(&g)?.sigmoid()
    }

    pub fn forward_split(&self, feat_x: &Tensor<T>, gate_x: &Tensor<T>) -> Result<Tensor<T>> {
        let f = self.feature.forward(feat_x)?;
        let g = self.gate_values(gate_x)?;
        if f.shape() != g.shape() {
            return shape_err("gated_conv", format!("feature {:?} vs gate {:?}", f.shape(), g.shape()));
        }
        f.mul(&g)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_split(x, x)
    }
}
