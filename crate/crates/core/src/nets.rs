//! Encoder, albedo decoder, symmetric gated U-Net inpainter and pyramid
//! patch discriminator.
//!
//! Channel widths are the reference widths divided by `width_div` (4 at
//! desk scale); the stride and skip topology is unchanged.

use diffcore::nn::{Conv2d, ConvOpts, GatedConv, GroupNorm, Linear, Path, VarStore};
use diffcore::{Real, Tensor};

use crate::error::{FaceError, Result};

pub const IMAGE_SIZE: usize = 112;
pub const SIGMA_CLAMP: f64 = 10.0;

/// Convolution width after dividing by `div`, kept at least one and, when
/// above four, a multiple of four so group normalization groups evenly.
fn width(c: usize, div: usize) -> usize {
    let w = (c / div).max(1);
    if w > 4 {
        w / 4 * 4
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Act {
    Elu,
    LeakyRelu,
}

/// Spectrally normalized convolution followed by group norm and an
/// activation.
struct ConvBlock<T: Real> {
    conv: Conv2d<T>,
    gn: GroupNorm<T>,
    act: Act,
}

impl<T: Real> ConvBlock<T> {
    fn new(path: &Path<T>, cin: usize, cout: usize, k: usize, stride: usize, act: Act) -> Self {
        ConvBlock {
            conv: Conv2d::new(&path.sub("conv"), cin, cout, k, ConvOpts::new(stride, (k - 1) / 2).spectral(true)),
            gn: GroupNorm::new(&path.sub("gn"), cout),
            act,
        }
    }

    fn down(path: &Path<T>, cin: usize, cout: usize, act: Act) -> Self {
        let conv = Conv2d::new(&path.sub("conv"), cin, cout, 4, ConvOpts::new(2, 1).spectral(true));
        ConvBlock { conv, gn: GroupNorm::new(&path.sub("gn"), cout), act }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.gn.forward(&self.conv.forward(x)?)?;
        Ok(match self.act {
            Act::Elu => y.elu()?,
            Act::LeakyRelu => y.leaky_relu(0.2)?,
        })
    }
}

fn run<T: Real>(blocks: &[ConvBlock<T>], x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut h = x.clone();
    for b in blocks {
        h = b.forward(&h)?;
    }
    Ok(h)
}

fn check_input<T: Real>(x: &Tensor<T>, channels: usize, what: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, c, h, w] if c == channels => Ok((b, h, w)),
        _ => Err(FaceError::Dimension(format!("{what}: expected (B, {channels}, H, W), got {:?}", x.shape()))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub input_size: usize,
    pub width_div: usize,
    /// Number of shape plus expression coefficients.
    pub coeffs: usize,
}

impl EncoderConfig {
    pub fn desk(coeffs: usize) -> Self {
        EncoderConfig { input_size: IMAGE_SIZE, width_div: 4, coeffs }
    }

    pub fn albedo_feats(&self) -> usize {
        width(512, self.width_div)
    }
}

pub struct EncoderOutput<T: Real> {
    /// `(B, 6)`, tanh-squashed.
    pub pose_raw: Tensor<T>,
    /// `(B, 27)`, channel-major spherical-harmonic coefficients.
    pub illum: Tensor<T>,
    /// `(B, coeffs)`.
    pub shape_coeffs: Tensor<T>,
    /// `(B, albedo_feats)`.
    pub albedo_feats: Tensor<T>,
}

/// Image encoder: a shared strided trunk and four heads.
pub struct Encoder<T: Real> {
    pub cfg: EncoderConfig,
    trunk: Vec<ConvBlock<T>>,
    pose_conv: ConvBlock<T>,
    pose_lin: Linear<T>,
    light_conv: ConvBlock<T>,
    light_lin: Linear<T>,
    shape_convs: Vec<ConvBlock<T>>,
    shape_lin: Linear<T>,
    albedo_conv: ConvBlock<T>,
}

impl<T: Real> Encoder<T> {
    pub fn new(path: &Path<T>, cfg: EncoderConfig) -> Self {
        let d = cfg.width_div;
        let plan: [(usize, usize, usize, usize); 13] = [
            (3, 32, 7, 2),
            (32, 64, 3, 1),
            (64, 64, 3, 2),
            (64, 96, 3, 1),
            (96, 128, 3, 1),
            (128, 128, 3, 2),
            (128, 196, 3, 1),
            (196, 256, 3, 1),
            (256, 256, 3, 2),
            (256, 256, 3, 1),
            (256, 256, 3, 1),
            (256, 512, 3, 2),
            (512, 512, 3, 1),
        ];
        let trunk = plan
            .iter()
            .enumerate()
            .map(|(i, &(ci, co, k, s))| {
                let ci = if i == 0 { 3 } else { width(ci, d) };
                ConvBlock::new(&path.sub(&format!("trunk{i}")), ci, width(co, d), k, s, Act::Elu)
            })
            .collect();
        let (f, h) = (width(512, d), width(160, d));
        Encoder {
            cfg,
            trunk,
            pose_conv: ConvBlock::new(&path.sub("pose_conv"), f, h, 3, 1, Act::Elu),
            pose_lin: Linear::new(&path.sub("pose_lin"), h, 6),
            light_conv: ConvBlock::new(&path.sub("light_conv"), f, h, 3, 1, Act::Elu),
            light_lin: Linear::new(&path.sub("light_lin"), h, 27),
            shape_convs: vec![
                ConvBlock::new(&path.sub("shape_conv0"), f, f, 3, 1, Act::Elu),
                ConvBlock::new(&path.sub("shape_conv1"), f, f, 3, 1, Act::Elu),
            ],
            shape_lin: Linear::new(&path.sub("shape_lin"), f, cfg.coeffs),
            albedo_conv: ConvBlock::new(&path.sub("albedo_conv"), f, f, 3, 1, Act::Elu),
        }
    }

    /// `image: (B, 3, S, S)` with `S = cfg.input_size`.
    pub fn forward(&self, image: &Tensor<T>) -> Result<EncoderOutput<T>> {
        let (b, h, w) = check_input(image, 3, "encoder")?;
        if h != self.cfg.input_size || w != self.cfg.input_size {
            return Err(FaceError::Dimension(format!("encoder expects {0}x{0} images, got {h}x{w}", self.cfg.input_size)));
        }
        let feats = run(&self.trunk, image)?;
        let pool = |t: Tensor<T>| -> Result<Tensor<T>> {
            let c = t.dim(1);
            Ok(t.global_avg_pool()?.reshape(&[b, c])?)
        };
        let pose_raw = self.pose_lin.forward(&pool(self.pose_conv.forward(&feats)?)?)?.tanh()?;
        let illum = self.light_lin.forward(&pool(self.light_conv.forward(&feats)?)?)?;
        let shape_coeffs = self.shape_lin.forward(&pool(run(&self.shape_convs, &feats)?)?)?;
        let albedo_feats = pool(self.albedo_conv.forward(&feats)?)?;
        Ok(EncoderOutput { pose_raw, illum, shape_coeffs, albedo_feats })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub uv_height: usize,
    pub uv_width: usize,
    pub width_div: usize,
}

impl DecoderConfig {
    pub fn desk() -> Self {
        DecoderConfig { uv_height: 48, uv_width: 64, width_div: 4 }
    }
}

/// Albedo decoder: nearest upsampling from a `3 x 4` seed to the UV size,
/// with two convolutional stages per scale and a final tanh projection.
pub struct AlbedoDecoder<T: Real> {
    pub cfg: DecoderConfig,
    feats: usize,
    stages: Vec<Vec<ConvBlock<T>>>,
    out: Conv2d<T>,
}

impl<T: Real> AlbedoDecoder<T> {
    /// `cfg.uv_height / 3` and `cfg.uv_width / 4` must be the same power of
    /// two.
    pub fn new(path: &Path<T>, feats: usize, cfg: DecoderConfig) -> Result<Self> {
        let ups = cfg.uv_height / 3;
        if !cfg.uv_height.is_multiple_of(3)
            || !cfg.uv_width.is_multiple_of(4)
            || cfg.uv_width / 4 != ups
            || !ups.is_power_of_two()
        {
            return Err(FaceError::Invalid(format!(
                "UV size {}x{} is not 3x4 times a power of two",
                cfg.uv_height, cfg.uv_width
            )));
        }
        let levels = ups.trailing_zeros() as usize;
        let d = cfg.width_div;
        let reference: [&[(usize, usize)]; 7] = [
            &[(512, 512), (512, 256)],
            &[(256, 256), (256, 128), (128, 128)],
            &[(128, 160), (160, 96), (96, 128)],
            &[(128, 128), (128, 64), (64, 96)],
            &[(96, 96), (96, 64), (64, 64)],
            &[(64, 64), (64, 32), (32, 32)],
            &[(32, 32), (32, 16), (16, 16)],
        ];
        // the seed stage, the coarsest `levels - 1` stages and the finest stage
        let mut chosen: Vec<&[(usize, usize)]> = reference[..levels.min(6)].to_vec();
        chosen.push(reference[6]);
        let mut stages = Vec::new();
        let mut cin = feats;
        for (s, plan) in chosen.iter().enumerate() {
            let mut blocks = Vec::new();
            for (j, &(_, co)) in plan.iter().enumerate() {
                let co = width(co, d);
                blocks.push(ConvBlock::new(&path.sub(&format!("s{s}_{j}")), cin, co, 3, 1, Act::Elu));
                cin = co;
            }
            stages.push(blocks);
        }
        let out = Conv2d::new(&path.sub("out"), cin, 3, 1, ConvOpts::new(1, 0));
        Ok(AlbedoDecoder { cfg, feats, stages, out })
    }

    /// `feats: (B, F)` -> albedo `(B, 3, H_uv, W_uv)` in `(-1, 1)`.
    pub fn forward(&self, feats: &Tensor<T>) -> Result<Tensor<T>> {
        let &[b, f] = feats.shape() else {
            return Err(FaceError::Dimension(format!("decoder expects (B, F), got {:?}", feats.shape())));
        };
        if f != self.feats {
            return Err(FaceError::Dimension(format!("decoder expects {} features, got {f}", self.feats)));
        }
        let mut h = feats.reshape(&[b, f, 1, 1])?.upsample_nearest(3, 4)?;
        for (s, blocks) in self.stages.iter().enumerate() {
            if s > 0 {
                h = h.upsample_nearest(2, 2)?;
            }
            h = run(blocks, &h)?;
        }
        Ok(self.out.forward(&h)?.tanh()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    pub width_div: usize,
    /// Separate first-layer branch on the mirrored input.
    pub symmetric: bool,
}

impl UNetConfig {
    pub fn desk() -> Self {
        UNetConfig { width_div: 4, symmetric: true }
    }

    pub fn no_sym() -> Self {
        UNetConfig { width_div: 4, symmetric: false }
    }
}

pub struct InpainterOutput<T: Real> {
    /// `(B, 3, H, W)` clipped to `[-1, 1]`.
    pub albedo: Tensor<T>,
    /// `(B, 1, H, W)` log-variance clamped to `[-10, 10]`.
    pub log_sigma: Tensor<T>,
}

/// First-layer activations of the inpainter.
pub struct FirstStage<T: Real> {
    pub f1: Tensor<T>,
    pub g1: Tensor<T>,
    pub f1_mirror: Option<Tensor<T>>,
    pub g1_mirror: Option<Tensor<T>>,
}

/// Gated U-Net over `X = (A_m, M)`. With `symmetric`, the first layer has a
/// second, independently weighted branch that reads the mirrored input.
pub struct SymUNet<T: Real> {
    pub cfg: UNetConfig,
    pub first: GatedConv<T>,
    pub first_mirror: Option<GatedConv<T>>,
    down: Vec<GatedConv<T>>,
    bottleneck: GatedConv<T>,
    up: Vec<GatedConv<T>>,
    out: Conv2d<T>,
}

impl<T: Real> SymUNet<T> {
    pub fn new(path: &Path<T>, cfg: UNetConfig) -> Self {
        let w = |c| width(c, cfg.width_div);
        let (first, first_mirror, c1) = if cfg.symmetric {
            (
                GatedConv::new(&path.sub("first"), 4, w(32), 3, 2, false),
                Some(GatedConv::new(&path.sub("first_mirror"), 4, w(32), 3, 2, false)),
                2 * w(32),
            )
        } else {
            (GatedConv::new(&path.sub("first"), 4, 2 * w(32), 3, 2, false), None, 2 * w(32))
        };
        let down = vec![
            GatedConv::new(&path.sub("down2"), c1, w(64), 3, 2, false),
            GatedConv::new(&path.sub("down3"), w(64), w(128), 3, 2, false),
            GatedConv::new(&path.sub("down4"), w(128), w(256), 3, 2, false),
            GatedConv::new(&path.sub("down5"), w(256), w(512), 3, 2, false),
        ];
        let bottleneck = GatedConv::new(&path.sub("bottleneck"), w(512), w(256), 3, 1, false);
        // (coarse input channels, skip channels, output channels)
        let plan =
            [(w(256), w(256), w(128)), (w(128), w(128), w(64)), (w(64), w(64), w(64)), (w(64), c1, w(64)), (w(64), 0, w(32))];
        let up = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, skip, cout))| GatedConv::new_up(&path.sub(&format!("up{i}")), cin + skip, cin, cout, false))
            .collect();
        let out = Conv2d::new(&path.sub("out"), w(32), 4, 1, ConvOpts::new(1, 0));
        SymUNet { cfg, first, first_mirror, down, bottleneck, up, out }
    }

    /// Runs the first layer on `x` and, for the symmetric model, the mirror
    /// branch on `x_mirror`.
    pub fn first_stage(&self, x: &Tensor<T>, x_mirror: &Tensor<T>) -> Result<FirstStage<T>> {
        let f1 = self.first.feature.forward(x)?;
        let g1 = self.first.gate_values(x)?;
        let (f1_mirror, g1_mirror) = match &self.first_mirror {
            Some(m) => (Some(m.feature.forward(x_mirror)?), Some(m.gate_values(x_mirror)?)),
            None => (None, None),
        };
        Ok(FirstStage { f1, g1, f1_mirror, g1_mirror })
    }

    /// `a_m: (B, 3, H, W)` masked albedo, `mask: (B, 1, H, W)`.
    pub fn forward(&self, a_m: &Tensor<T>, mask: &Tensor<T>) -> Result<InpainterOutput<T>> {
        let x = Tensor::concat(&[a_m, mask], 1)?;
        let (_, h, w) = check_input(&x, 4, "inpainter")?;
        if w % 2 != 0 {
            return Err(FaceError::Dimension(format!("inpainter needs an even UV width, got {w}")));
        }
        if h < 2 || w < 2 {
            return Err(FaceError::Dimension(format!("inpainter input {h}x{w} too small")));
        }
        let xm = x.flip_width()?;
        self.forward_split(&x, &xm)
    }

    /// Forward pass with the mirror branch reading `x_mirror` instead of
    /// `hflip(x)`.
    pub fn forward_split(&self, x: &Tensor<T>, x_mirror: &Tensor<T>) -> Result<InpainterOutput<T>> {
        let fs = self.first_stage(x, x_mirror)?;
        let mut h = fs.f1.mul(&fs.g1)?;
        if let (Some(f), Some(g)) = (&fs.f1_mirror, &fs.g1_mirror) {
            h = Tensor::concat(&[&h, &f.mul(g)?], 1)?;
        }
        let mut skips = vec![h.clone()];
        for (i, layer) in self.down.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.down.len() {
                skips.push(h.clone());
            }
        }
        h = self.bottleneck.forward(&h)?;
        for layer in &self.up {
            let skip = skips.pop();
            let (th, tw) = match &skip {
                Some(s) => (s.dim(2), s.dim(3)),
                None => (x.dim(2), x.dim(3)),
            };
            let coarse = h.clone();
            let up = crop(&coarse.upsample_nearest(2, 2)?, th, tw)?;
            let feat_in = match &skip {
                Some(s) => Tensor::concat(&[&up, s], 1)?,
                None => up,
            };
            let f = layer.feature.forward(&feat_in)?;
            let g = crop(&layer.gate_values(&coarse)?, th, tw)?;
            h = f.mul(&g)?;
        }
        let y = self.out.forward(&h)?;
        Ok(InpainterOutput {
            albedo: y.narrow(1, 0, 3)?.clip(-1.0, 1.0)?,
            log_sigma: y.narrow(1, 3, 1)?.clip(-SIGMA_CLAMP, SIGMA_CLAMP)?,
        })
    }
}

/// Keeps the top-left `h x w` window (upsampling an odd-sized map
/// overshoots by one row or column).
fn crop<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    if x.dim(2) < h || x.dim(3) < w {
        return Err(FaceError::Dimension(format!("cannot crop {:?} to {h}x{w}", x.shape())));
    }
    let mut y = x.clone();
    if x.dim(2) != h {
        y = y.narrow(2, 0, h)?;
    }
    if x.dim(3) != w {
        y = y.narrow(3, 0, w)?;
    }
    Ok(y)
}

/// Patch discriminator with a one-channel score head after each of its four
/// deeper stages.
pub struct PyramidGan<T: Real> {
    trunk: Vec<ConvBlock<T>>,
    heads: Vec<Conv2d<T>>,
}

impl<T: Real> PyramidGan<T> {
    pub fn new(path: &Path<T>, width_div: usize) -> Self {
        let w = |c| width(c, width_div);
        let chans = [3, w(32), w(64), w(128), w(256), w(512)];
        let trunk =
            (0..5).map(|i| ConvBlock::down(&path.sub(&format!("down{i}")), chans[i], chans[i + 1], Act::LeakyRelu)).collect();
        let heads = (1..5)
            .map(|i| Conv2d::new(&path.sub(&format!("head{i}")), chans[i + 1], 1, 1, ConvOpts::new(1, 0).spectral(true)))
            .collect();
        PyramidGan { trunk, heads }
    }

    /// `image: (B, 3, H, W)` -> four score maps `(B, 1, H/4, W/4)` .. `(B, 1,
    /// H/32, W/32)`.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        check_input(image, 3, "discriminator")?;
        let mut h = self.trunk[0].forward(image)?;
        let mut outs = Vec::with_capacity(4);
        for (block, head) in self.trunk[1..].iter().zip(&self.heads) {
            h = block.forward(&h)?;
            outs.push(head.forward(&h)?);
        }
        Ok(outs)
    }
}

/// Trainable parameter count of a store.
pub fn param_count<T: Real>(vs: &VarStore<T>) -> usize {
    vs.num_trainable()
}

/// Builds a network in its own store.
pub fn build<T: Real, N>(seed: u64, f: impl FnOnce(&Path<T>) -> N) -> (VarStore<T>, N) {
    let vs = VarStore::new(seed);
    let net = f(&vs.root());
    (vs, net)
}
