//! Registered fp64 gradient checks over the tensor primitives, network
//! layers, losses and the differentiable renderer.

use std::rc::Rc;

use diffcore::gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
use diffcore::nn::{group_norm, spectral_normalize, GatedConv, Linear, ResUnit, VarStore};
use diffcore::ops::{bilinear_sample, conv2d, conv2d_weight, conv_transpose2d, conv_transpose2d_sized};
use diffcore::{DiffError, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FaceError, Result};
use crate::facemodel::{FaceModel, Pose, PoseT};
use crate::illumination::{shade_uv_t, Lighting, TexelTables};
use crate::losses::{
    albedo_symmetry, aleatoric, constancy, l1_aleatoric, landmark_loss, pose_loss, pyramid_gan_losses, symmetry_loss, wgan_gp,
    LossWeights,
};
use crate::nets::{build, AlbedoDecoder, DecoderConfig, Encoder, EncoderConfig, PyramidGan, SymUNet, UNetConfig};
use crate::renderer::PixelSampler;
use crate::uvops::{deshade_t, sample_vertex_texture_t, UvImage, UvKind};

/// Relative-error tolerance for primitives and the renderer.
pub const PRIMITIVE_TOL: f64 = 1e-4;
/// Tolerance for end-to-end losses and whole networks.
pub const LOSS_TOL: f64 = 1e-3;

type Inputs = Vec<Tensor<f64>>;
type Func<'a> = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'a>;

pub struct Check {
    pub name: &'static str,
    pub group: &'static str,
    pub tol: f64,
    /// Coordinates sampled per input, all when `None`.
    pub max_coords: Option<usize>,
    build: for<'a> fn(&'a FaceModel, &mut ChaCha8Rng) -> Result<(Inputs, Func<'a>)>,
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub group: &'static str,
    pub tol: f64,
    pub report: std::result::Result<GradcheckReport, String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        matches!(&self.report, Ok(r) if r.passed() && r.checked > 0)
    }
}

fn rand_t(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| r.gen_range(lo..hi)).collect(), shape).expect("shape matches data")
}

fn binary(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect(), shape).expect("shape matches data")
}

fn unary(
    r: &mut ChaCha8Rng,
    lo: f64,
    hi: f64,
    f: fn(&Tensor<f64>) -> diffcore::Result<Tensor<f64>>,
) -> Result<(Inputs, Func<'static>)> {
    Ok((vec![rand_t(r, &[2, 3, 4], lo, hi)], Box::new(move |v| Ok(f(&v[0])?))))
}

fn smooth_albedo(model: &FaceModel, r: &mut ChaCha8Rng) -> UvImage {
    let mut a = UvImage::for_model(UvKind::Albedo, 3, model);
    let ph: Vec<f64> = (0..6).map(|_| r.gen_range(0.0..std::f64::consts::TAU)).collect();
    for row in 0..a.height {
        for col in 0..a.width {
            let (x, y) = (col as f64 / a.width as f64, row as f64 / a.height as f64);
            for c in 0..3 {
                a.set(c, row, col, 0.55 + 0.12 * (4.0 * x + ph[c]).sin() + 0.1 * (3.0 * y + ph[3 + c]).cos());
            }
        }
    }
    a
}

fn frontal_lighting(r: &mut ChaCha8Rng) -> Lighting {
    let mut l = Lighting::ambient(0.0);
    for c in 0..3 {
        let k = c * 9;
        l.coeffs[k] = r.gen_range(0.5..0.65);
        l.coeffs[k + 3] = r.gen_range(-0.3..-0.15);
        l.coeffs[k + 1] = r.gen_range(-0.08..0.08);
        l.coeffs[k + 2] = r.gen_range(-0.08..0.08);
    }
    l
}

macro_rules! check {
    ($name:expr, $group:expr, $tol:expr, $coords:expr, $build:expr) => {
        Check { name: $name, group: $group, tol: $tol, max_coords: $coords, build: $build }
    };
}

/// Every registered check, in a fixed order.
pub fn registry() -> Vec<Check> {
    let p = PRIMITIVE_TOL;
    let l = LOSS_TOL;
    vec![
        check!("add_broadcast", "primitive", p, None, |_, r| {
            Ok((vec![rand_t(r, &[2, 3, 4], -1.0, 1.0), rand_t(r, &[1, 1, 4], -1.0, 1.0)], Box::new(|v| Ok(v[0].add(&v[1])?))))
        }),
        check!("mul", "primitive", p, None, |_, r| {
            Ok((vec![rand_t(r, &[2, 3, 4], -1.0, 1.0), rand_t(r, &[2, 3, 4], -1.0, 1.0)], Box::new(|v| Ok(v[0].mul(&v[1])?))))
        }),
        check!("div", "primitive", p, None, |_, r| {
            Ok((vec![rand_t(r, &[2, 3, 4], -1.0, 1.0), rand_t(r, &[2, 3, 4], 0.5, 2.0)], Box::new(|v| Ok(v[0].div(&v[1])?))))
        }),
        check!("exp", "primitive", p, None, |_, r| unary(r, -1.0, 1.0, |t| t.exp())),
        check!("ln", "primitive", p, None, |_, r| unary(r, 0.2, 2.0, |t| t.ln())),
        check!("sqrt", "primitive", p, None, |_, r| unary(r, 0.2, 2.0, |t| t.sqrt())),
        check!("powf", "primitive", p, None, |_, r| unary(r, 0.2, 2.0, |t| t.powf(0.4))),
        check!("sin_cos", "primitive", p, None, |_, r| unary(r, -2.0, 2.0, |t| t.sin()?.mul(&t.cos()?))),
        check!("tanh", "primitive", p, None, |_, r| unary(r, -2.0, 2.0, |t| t.tanh())),
        check!("sigmoid", "primitive", p, None, |_, r| unary(r, -2.0, 2.0, |t| t.sigmoid())),
        check!("softplus", "primitive", p, None, |_, r| unary(r, -2.0, 2.0, |t| t.softplus())),
        check!("elu", "primitive", p, None, |_, r| unary(r, -2.0, 2.0, |t| t.elu())),
        check!("leaky_relu", "primitive", p, None, |_, r| unary(r, -2.0, 2.0, |t| t.leaky_relu(0.2))),
        check!("abs", "primitive", p, None, |_, r| unary(r, -2.0, 2.0, |t| t.abs())),
        check!("clip", "primitive", p, None, |_, r| unary(r, -2.0, 2.0, |t| t.clip(-1.0, 1.0))),
        check!("reductions", "primitive", p, None, |_, r| {
            Ok((vec![rand_t(r, &[2, 3, 4, 5], -1.0, 1.0)], Box::new(|v| Ok(v[0].mean_keepdim(&[1, 3])?.add(&v[0].sum_all()?)?))))
        }),
        check!("layout", "primitive", p, None, |_, r| {
            Ok((
                vec![rand_t(r, &[2, 3, 4, 6], -1.0, 1.0)],
                Box::new(|v| {
                    let x = v[0].permute(&[0, 2, 3, 1])?.reshape(&[2, 4, 6, 3])?.permute(&[0, 3, 1, 2])?;
                    Ok(x.narrow(3, 1, 4)?.pad_axis(2, 1, 6)?.flip_width()?)
                }),
            ))
        }),
        check!("pooling", "primitive", p, None, |_, r| {
            Ok((
                vec![rand_t(r, &[2, 3, 4, 6], -1.0, 1.0)],
                Box::new(|v| {
                    Ok(v[0].avg_pool(2)?.upsample_nearest(2, 2)?.add(&v[0].global_avg_pool()?.reshape(&[2, 3, 1, 1])?)?)
                }),
            ))
        }),
        check!("concat", "primitive", p, None, |_, r| {
            Ok((
                vec![rand_t(r, &[2, 3, 4, 6], -1.0, 1.0), rand_t(r, &[2, 2, 4, 6], -1.0, 1.0)],
                Box::new(|v| Ok(Tensor::concat(&[&v[0], &v[1]], 1)?)),
            ))
        }),
        check!("matmul_linear", "primitive", p, None, |_, r| {
            Ok((
                vec![rand_t(r, &[3, 4], -1.0, 1.0), rand_t(r, &[5, 4], -1.0, 1.0), rand_t(r, &[5], -1.0, 1.0)],
                Box::new(|v| Ok(v[0].linear(&v[1], Some(&v[2]))?.matmul(&v[1])?)),
            ))
        }),
        check!("gather_scatter", "primitive", p, None, |_, r| {
            Ok((
                vec![rand_t(r, &[5, 3], -1.0, 1.0)],
                Box::new(|v| {
                    let (g, s) = (Rc::new(vec![4, 0, 2, 2]), Rc::new(vec![1, 1, 3, 0]));
                    Ok(v[0].gather_rows(&g)?.scatter_rows(&s, 4)?)
                }),
            ))
        }),
        check!("conv2d_strided", "primitive", p, None, |_, r| {
            Ok((
                vec![rand_t(r, &[2, 3, 6, 5], -1.0, 1.0), rand_t(r, &[4, 3, 3, 3], -1.0, 1.0)],
                Box::new(|v| Ok(conv2d(&v[0], &v[1], 2, 1)?)),
            ))
        }),
        check!("conv2d", "primitive", p, None, |_, r| {
            Ok((
                vec![rand_t(r, &[2, 3, 6, 5], -1.0, 1.0), rand_t(r, &[4, 3, 3, 3], -1.0, 1.0)],
                Box::new(|v| Ok(conv2d(&v[0], &v[1], 1, 1)?)),
            ))
        }),
        check!("conv_transpose2d", "primitive", p, None, |_, r| {
            Ok((
                vec![rand_t(r, &[2, 4, 3, 2], -1.0, 1.0), rand_t(r, &[4, 3, 3, 3], -1.0, 1.0)],
                Box::new(|v| Ok(conv_transpose2d_sized(&v[0], &v[1], 2, 1, (5, 4))?)),
            ))
        }),
        check!("conv_transpose2d_default", "primitive", p, None, |_, r| {
            Ok((
                vec![rand_t(r, &[1, 2, 3, 3], -1.0, 1.0), rand_t(r, &[2, 3, 4, 4], -1.0, 1.0)],
                Box::new(|v| Ok(conv_transpose2d(&v[0], &v[1], 2, 1)?)),
            ))
        }),
        check!("conv2d_weight", "primitive", p, None, |_, r| {
            Ok((
                vec![rand_t(r, &[2, 3, 6, 5], -1.0, 1.0), rand_t(r, &[2, 4, 3, 3], -1.0, 1.0)],
                Box::new(|v| Ok(conv2d_weight(&v[0], &v[1], 3, 3, 2, 1)?)),
            ))
        }),
        check!("bilinear_sample", "primitive", p, None, |_, r| {
            Ok((
                vec![rand_t(r, &[2, 3, 5, 6], 0.0, 1.0), rand_t(r, &[2, 7, 2], 0.6, 4.3)],
                Box::new(|v| Ok(bilinear_sample(&v[0], &v[1])?)),
            ))
        }),
        check!("group_norm", "layer", p, None, |_, r| {
            Ok((
                vec![rand_t(r, &[2, 4, 3, 3], -1.0, 1.0), rand_t(r, &[4], 0.5, 1.5), rand_t(r, &[4], -0.5, 0.5)],
                Box::new(|v| Ok(group_norm(&v[0], 2, &v[1], &v[2], 1e-5)?)),
            ))
        }),
        check!("spectral_normalize", "layer", p, None, |_, r| {
            Ok((
                vec![rand_t(r, &[3, 2, 2, 2], -1.0, 1.0)],
                Box::new(|v| {
                    let mut u = vec![0.3, -0.5, 0.8];
                    Ok(spectral_normalize(&v[0], &mut u, 300, 1e-8)?.0)
                }),
            ))
        }),
        check!("residual_gated_linear", "layer", p, None, |_, r| {
            let vs = VarStore::<f64>::new(r.gen());
            let root = vs.root();
            let res = ResUnit::new(&root.sub("res"), 2, 4, 3, 2, true);
            let gate = GatedConv::new_up(&root.sub("up"), 4, 4, 4, false);
            let lin = Linear::new(&root.sub("lin"), 16, 3);
            vs.set_training(false);
            Ok((
                vec![rand_t(r, &[2, 2, 6, 6], -1.0, 1.0)],
                Box::new(move |v| {
                    let h = res.forward(&v[0])?;
                    let g = gate.forward_split(&h.upsample_nearest(2, 2)?, &h)?.avg_pool(3)?;
                    Ok(lin.forward(&g.reshape(&[2, 16])?)?.tanh()?)
                }),
            ))
        }),
        check!("encoder", "network", l, Some(24), |_, r| {
            let (vs, enc) =
                build::<f64, _>(r.gen(), |p| Encoder::new(p, EncoderConfig { input_size: 32, width_div: 16, coeffs: 5 }));
            vs.set_training(false);
            Ok((
                vec![rand_t(r, &[1, 3, 32, 32], 0.0, 1.0)],
                Box::new(move |v| {
                    let o = enc.forward(&v[0])?;
                    Ok(Tensor::concat(&[&o.pose_raw, &o.illum, &o.shape_coeffs, &o.albedo_feats], 1)?)
                }),
            ))
        }),
        check!("albedo_decoder", "network", l, None, |_, r| {
            let (vs, dec) = build::<f64, _>(r.gen(), |p| {
                AlbedoDecoder::new(p, 8, DecoderConfig { uv_height: 6, uv_width: 8, width_div: 16 })
            });
            let dec = dec?;
            vs.set_training(false);
            Ok((vec![rand_t(r, &[2, 8], -1.0, 1.0)], Box::new(move |v| dec.forward(&v[0]))))
        }),
        check!("sym_unet", "network", l, Some(24), |_, r| unet_check(r, true)),
        check!("plain_unet", "network", l, Some(24), |_, r| unet_check(r, false)),
        check!("pyramid_discriminator", "network", l, Some(24), |_, r| {
            let (vs, d) = build::<f64, _>(r.gen(), |p| PyramidGan::new(p, 16));
            vs.set_training(false);
            Ok((
                vec![rand_t(r, &[1, 3, 32, 32], 0.0, 1.0)],
                Box::new(move |v| {
                    let maps = d.forward(&v[0])?;
                    let flat = maps.iter().map(|t| t.reshape(&[1, t.numel()])).collect::<diffcore::Result<Vec<_>>>()?;
                    Ok(Tensor::concat(&flat.iter().collect::<Vec<_>>(), 1)?)
                }),
            ))
        }),
        check!("aleatoric", "loss", l, None, |_, r| {
            let m = binary(r, &[1, 1, 4, 6]);
            Ok((
                vec![rand_t(r, &[1, 3, 4, 6], 0.1, 2.0), rand_t(r, &[1, 1, 4, 6], -1.0, 1.0)],
                Box::new(move |v| aleatoric(&v[0], &v[1], Some(&m))),
            ))
        }),
        check!("l1_aleatoric", "loss", l, None, |_, r| {
            let t = rand_t(r, &[1, 3, 4, 6], 0.1, 2.0);
            Ok((
                vec![rand_t(r, &[1, 3, 4, 6], 0.1, 2.0), rand_t(r, &[1, 1, 4, 6], -1.0, 1.0)],
                Box::new(move |v| l1_aleatoric(&v[0], &t, &v[1], None)),
            ))
        }),
        check!("symmetry_loss", "loss", l, None, |_, r| {
            let m = binary(r, &[1, 1, 4, 6]);
            Ok((
                vec![rand_t(r, &[1, 3, 4, 6], -1.0, 1.0), rand_t(r, &[1, 1, 4, 6], -1.0, 1.0)],
                Box::new(move |v| symmetry_loss(&v[0], &m, &v[1], None)),
            ))
        }),
        check!("hinge_gan", "loss", l, None, |_, r| {
            let inputs: Vec<Tensor<f64>> =
                [4, 3, 2, 1, 4, 3, 2, 1].iter().map(|&n| rand_t(r, &[2, 1, n, n], -2.0, 2.0)).collect();
            Ok((
                inputs,
                Box::new(|v| {
                    let (g, d) = pyramid_gan_losses(&v[..4], &v[4..])?;
                    Ok(g.add(&d)?)
                }),
            ))
        }),
        check!("gradient_penalty", "loss", l, None, |_, r| {
            let real = rand_t(r, &[2, 2, 4, 4], 0.0, 1.0);
            let fake = rand_t(r, &[2, 2, 4, 4], 0.0, 1.0);
            Ok((
                vec![rand_t(r, &[2, 2, 3, 3], -0.5, 0.5)],
                Box::new(move |v| {
                    let k = v[0].clone();
                    let critic = move |x: &Tensor<f64>| -> Result<Tensor<f64>> {
                        let b = x.dim(0);
                        let y = conv2d(x, &k, 1, 1)?.tanh()?;
                        Ok(y.reshape(&[b, y.numel() / b])?.sum_keepdim(&[1])?.reshape(&[b])?)
                    };
                    wgan_gp(critic, &real, &fake, &[0.3, 0.8])
                }),
            ))
        }),
        check!("pose_loss", "loss", l, None, |_, r| {
            let gt = PoseT::decode(&rand_t(r, &[2, 6], -0.5, 0.5), 30.0, 112)?;
            let w = LossWeights::default();
            Ok((
                vec![rand_t(r, &[2, 6], -0.5, 0.5)],
                Box::new(move |v| pose_loss(&PoseT::decode(&v[0], 30.0, 112)?, &gt, 30.0, 112, &w)),
            ))
        }),
        check!("landmark_loss", "loss", l, None, |_, r| {
            let t = rand_t(r, &[2, 5, 2], 0.0, 112.0);
            Ok((vec![rand_t(r, &[2, 5, 2], 0.0, 112.0)], Box::new(move |v| landmark_loss(&v[0], &t, 112))))
        }),
        check!("albedo_symmetry", "loss", l, None, |_, r| {
            Ok((vec![rand_t(r, &[1, 3, 4, 6], 0.0, 1.0)], Box::new(|v| albedo_symmetry(&v[0], None))))
        }),
        check!("constancy", "loss", l, None, |_, r| {
            let refr = rand_t(r, &[1, 3, 4, 6], 0.1, 2.0);
            Ok((vec![rand_t(r, &[1, 3, 4, 6], 0.0, 1.0)], Box::new(move |v| constancy(&v[0], &refr, None, 15.0, 0.8))))
        }),
        check!("vertex_sampling", "renderer", p, None, |_, r| {
            let proj = rand_t(r, &[2, 9, 2], 0.7, 5.3);
            Ok((vec![rand_t(r, &[2, 3, 6, 7], 0.0, 1.0)], Box::new(move |v| sample_vertex_texture_t(&v[0], &proj))))
        }),
        check!("deshade", "renderer", p, None, |_, r| {
            Ok((
                vec![rand_t(r, &[1, 3, 4, 4], 0.05, 0.6), rand_t(r, &[1, 3, 4, 4], 0.7, 1.5)],
                Box::new(|v| deshade_t(&v[0], &v[1])),
            ))
        }),
        check!("projection", "renderer", p, None, |m, r| {
            let idx = m.landmark_index();
            Ok((
                vec![rand_t(r, &[1, m.num_coeffs()], -1.0, 1.0), rand_t(r, &[1, 6], -0.3, 0.3)],
                Box::new(move |v| {
                    let verts = m.assemble_shape_t(&v[0])?;
                    let pose = PoseT::decode(&v[1], m.s_ref(112), 112)?;
                    Ok(pose.project(&verts)?.gather_rows(&idx)?.mul_scalar(0.01)?)
                }),
            ))
        }),
        check!("sh_shading", "renderer", p, Some(40), |m, r| {
            let tables = TexelTables::new(m)?;
            let rot = PoseT::<f64>::from_poses(&[Pose { yaw: 0.2, ..Pose::identity() }])?.r;
            Ok((
                vec![Lighting::to_tensor::<f64>(&[frontal_lighting(r)])?, rand_t(r, &[1, m.num_coeffs()], -0.5, 0.5)],
                Box::new(move |v| shade_uv_t(m, &tables, &m.assemble_shape_t(&v[1])?, &rot, &v[0])),
            ))
        }),
        check!("render_albedo_lighting", "renderer", p, Some(300), |m, r| {
            let size = 24;
            let tables = TexelTables::new(m)?;
            let pose = Pose { yaw: 0.13, roll: 0.07, pitch: -0.05, ..Pose::canonical(m, size) };
            let pt = PoseT::<f64>::from_poses(&[pose])?;
            let verts = m.mean_tensor::<f64>();
            let sampler = PixelSampler::new(m, &verts, &pt, size)?;
            Ok((
                vec![UvImage::to_tensor::<f64>(&[&smooth_albedo(m, r)])?, Lighting::to_tensor::<f64>(&[frontal_lighting(r)])?],
                Box::new(move |v| sampler.render(&v[0], &shade_uv_t(m, &tables, &verts, &pt.r, &v[1])?)),
            ))
        }),
    ]
}

fn unet_check(r: &mut ChaCha8Rng, symmetric: bool) -> Result<(Inputs, Func<'static>)> {
    let (vs, g) = build::<f64, _>(r.gen(), |p| SymUNet::new(p, UNetConfig { width_div: 8, symmetric }));
    vs.set_training(false);
    let a = rand_t(r, &[2, 3, 16, 16], -0.5, 0.5);
    let m = binary(r, &[2, 1, 16, 16]);
    Ok((
        vec![a, m],
        Box::new(move |v| {
            let o = g.forward(&v[0], &v[1])?;
            Ok(Tensor::concat(&[&o.albedo, &o.log_sigma], 1)?)
        }),
    ))
}

/// Runs one check: the gradient of `sum(f(x) * w)` for fixed random `w`
/// against central differences.
pub fn run_check(model: &FaceModel, check: &Check, seed: u64) -> CheckOutcome {
    let run = || -> Result<GradcheckReport> {
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ fxhash(check.name));
        let (inputs, f) = (check.build)(model, &mut r)?;
        let probe = f(&inputs)?;
        let w = rand_t(&mut r, probe.shape(), -1.0, 1.0);
        let opts = GradcheckOptions { tol: check.tol, max_coords: check.max_coords, seed, ..Default::default() };
        let wrapped = |xs: &[Tensor<f64>]| -> diffcore::Result<Tensor<f64>> {
            f(xs)
                .map_err(|e| match e {
                    FaceError::Diff(d) => d,
                    other => DiffError::Invalid { op: "check", detail: other.to_string() },
                })?
                .mul(&w)
        };
        Ok(gradcheck(wrapped, &inputs, &|_, _| false, &opts)?)
    };
    CheckOutcome { name: check.name, group: check.group, tol: check.tol, report: run().map_err(|e| e.to_string()) }
}

/// Runs every registered check whose name contains `filter`.
pub fn run_all(model: &FaceModel, seed: u64, filter: Option<&str>) -> Vec<CheckOutcome> {
    registry().iter().filter(|c| filter.is_none_or(|f| c.name.contains(f))).map(|c| run_check(model, c, seed)).collect()
}

fn fxhash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}
