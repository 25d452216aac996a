//! Completion and 3DMM training losses, loss-weight bookkeeping and image
//! quality metrics.

use std::collections::BTreeMap;

use diffcore::{grad, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{FaceError, Result};
use crate::facemodel::PoseT;
use crate::store::Image;

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Smoothing inside the constancy norm, which is not differentiable at zero.
const CONST_EPS: f64 = 1e-6;

/// `mean(x e^-s / 2 + s / 2)` for a residual map `x >= 0` and a log-variance
/// map `s` broadcastable to it. With `weight`, the mean runs over the
/// weighted elements only (`sum(w term) / sum(w)`, zero when the weights
/// vanish).
pub fn aleatoric<T: Real>(x: &Tensor<T>, log_sigma: &Tensor<T>, weight: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let s = log_sigma.broadcast_to(x.shape())?;
    let term = x.mul(&s.neg()?.exp()?)?.add(&s)?.mul_scalar(0.5)?;
    weighted_mean(&term, weight)
}

/// `sum(w t) / sum(w)` with `w` broadcast to `t`, or the plain mean.
pub fn weighted_mean<T: Real>(t: &Tensor<T>, weight: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    match weight {
        None => Ok(t.mean_all()?),
        Some(w) => {
            let w = w.broadcast_to(t.shape())?;
            let total: f64 = w.data().iter().map(|v| v.f64()).sum();
            if total <= 0.0 {
                return Ok(t.mul_scalar(0.0)?.sum_all()?);
            }
            Ok(t.mul(&w)?.sum_all()?.mul_scalar(1.0 / total)?)
        }
    }
}

/// Aleatoric loss on the elementwise L1 residual, used for both the UV
/// albedo term and the image term.
pub fn l1_aleatoric<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    log_sigma: &Tensor<T>,
    weight: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(FaceError::Dimension(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    aleatoric(&pred.sub(target)?.abs()?, log_sigma, weight)
}

/// Texels that are masked while their mirror texel is visible:
/// `M (1 - hflip(M))`, optionally restricted to texels whose mirror is also
/// valid.
pub fn symmetry_weight<T: Real>(mask: &Tensor<T>, valid: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let mut w = mask.mul(&mask.flip_width()?.one_minus()?)?;
    if let Some(v) = valid {
        w = w.mul(&v.mul(&v.flip_width()?)?)?;
    }
    Ok(w.detach())
}

/// Aleatoric loss on `|A - hflip(A)|` over masked texels with visible
/// mirrors. `albedo: (B, 3, H, W)`, `mask`, `log_sigma`: `(B, 1, H, W)`.
pub fn symmetry_loss<T: Real>(
    albedo: &Tensor<T>,
    mask: &Tensor<T>,
    log_sigma: &Tensor<T>,
    valid: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if !albedo.dim(3).is_multiple_of(2) {
        return Err(FaceError::Dimension(format!("symmetry loss needs an even width, got {}", albedo.dim(3))));
    }
    let w = symmetry_weight(mask, valid)?;
    let r = albedo.sub(&albedo.flip_width()?)?.abs()?;
    aleatoric(&r, log_sigma, Some(&w))
}

/// Mean over scales of the mean patch hinge `[1 - D(real)]+` plus the same
/// for `[1 + D(fake)]+`.
pub fn hinge_d<T: Real>(real: &[Tensor<T>], fake: &[Tensor<T>]) -> Result<Tensor<T>> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(FaceError::Dimension(format!("{} real vs {} fake score maps", real.len(), fake.len())));
    }
    let n = real.len() as f64;
    let mut acc: Option<Tensor<T>> = None;
    for (r, f) in real.iter().zip(fake) {
        let term = r.neg()?.add_scalar(1.0)?.relu()?.mean_all()?.add(&f.add_scalar(1.0)?.relu()?.mean_all()?)?;
        acc = Some(match acc {
            Some(a) => a.add(&term)?,
            None => term,
        });
    }
    Ok(acc.unwrap().mul_scalar(1.0 / n)?)
}

/// `-mean over scales of mean D(fake)`.
pub fn hinge_g<T: Real>(fake: &[Tensor<T>]) -> Result<Tensor<T>> {
    if fake.is_empty() {
        return Err(FaceError::Dimension("no score maps".into()));
    }
    let means: Vec<Tensor<T>> = fake.iter().map(|f| f.mean_all()).collect::<diffcore::Result<_>>()?;
    let mut acc = means[0].clone();
    for m in &means[1..] {
        acc = acc.add(m)?;
    }
    Ok(acc.mul_scalar(-1.0 / fake.len() as f64)?)
}

/// `(L_G, L_D)` for one set of real and fake score pyramids.
pub fn pyramid_gan_losses<T: Real>(real: &[Tensor<T>], fake: &[Tensor<T>]) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((hinge_g(fake)?, hinge_d(real, fake)?))
}

/// Per-sample score `(B,)`: mean over scales of the mean patch score.
pub fn mean_score<T: Real>(maps: &[Tensor<T>]) -> Result<Tensor<T>> {
    let b = maps.first().ok_or_else(|| FaceError::Dimension("no score maps".into()))?.dim(0);
    let mut acc: Option<Tensor<T>> = None;
    for m in maps {
        let per = m.reshape(&[b, m.numel() / b])?.mean_keepdim(&[1])?;
        acc = Some(match acc {
            Some(a) => a.add(&per)?,
            None => per,
        });
    }
    Ok(acc.unwrap().mul_scalar(1.0 / maps.len() as f64)?.reshape(&[b])?)
}

/// Gradient penalty `mean_b (||d score / d x_hat_b|| - 1)^2` at
/// `x_hat = u real + (1 - u) fake`, one `u` per sample. `score` maps a batch
/// to per-sample scores `(B,)`. The result is differentiable with respect
/// to the critic's parameters.
pub fn wgan_gp<T: Real>(
    score: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    u: &[f64],
) -> Result<Tensor<T>> {
    if real.shape() != fake.shape() {
        return Err(FaceError::Dimension(format!("real {:?} vs fake {:?}", real.shape(), fake.shape())));
    }
    let b = real.dim(0);
    if u.len() != b {
        return Err(FaceError::Dimension(format!("{} interpolation weights for a batch of {b}", u.len())));
    }
    let mut ushape = vec![1; real.dims()];
    ushape[0] = b;
    let ut = Tensor::from_f64(u, &ushape)?;
    let x = real.detach().mul(&ut)?.add(&fake.detach().mul(&ut.one_minus()?)?)?.detach().requires_grad_(true);
    let s = score(&x)?.sum_all()?;
    let g = grad(&s, &[&x], true)?.remove(0);
    let norm = g.square()?.reshape(&[b, g.numel() / b])?.sum_keepdim(&[1])?.add_scalar(1e-12)?.sqrt()?;
    Ok(norm.add_scalar(-1.0)?.square()?.mean_all()?)
}

/// `mean_b ||a_b - b_b||^2` over rows of `(B, K)` tensors.
pub fn sq_dist<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(FaceError::Dimension(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let n = a.dim(0) as f64;
    Ok(a.sub(b)?.square()?.sum_all()?.mul_scalar(1.0 / n)?)
}

/// Pose term: scale and translation errors in units of `s_ref` and the
/// image size, plus the squared distance of canonical quaternions.
pub fn pose_loss<T: Real>(pred: &PoseT<T>, gt: &PoseT<T>, s_ref: f64, image_size: usize, w: &LossWeights) -> Result<Tensor<T>> {
    let ls = sq_dist(&pred.s.mul_scalar(1.0 / s_ref)?, &gt.s.mul_scalar(1.0 / s_ref)?)?;
    let n = 1.0 / image_size as f64;
    let lt = sq_dist(&pred.t.mul_scalar(n)?, &gt.t.mul_scalar(n)?)?;
    let lr = sq_dist(&pred.quaternion()?, &gt.quaternion()?.detach())?;
    Ok(ls.mul_scalar(w.scale)?.add(&lt.mul_scalar(w.trans)?)?.add(&lr.mul_scalar(w.rot)?)?)
}

/// Mean squared landmark distance in units of the image size; `pred` and
/// `target` are `(B, L, 2)` pixel positions.
pub fn landmark_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, image_size: usize) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(FaceError::Dimension(format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let n = (pred.dim(0) * pred.dim(1)) as f64 * (image_size * image_size) as f64;
    Ok(pred.sub(target)?.square()?.sum_all()?.mul_scalar(1.0 / n)?)
}

/// Masked mean absolute difference.
pub fn l1<T: Real>(a: &Tensor<T>, b: &Tensor<T>, weight: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(FaceError::Dimension(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    weighted_mean(&a.sub(b)?.abs()?, weight)
}

/// `mean_b ||hflip(A) - A||_1` over valid texels with valid mirrors.
pub fn albedo_symmetry<T: Real>(albedo: &Tensor<T>, valid: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let w = match valid {
        Some(v) => Some(v.mul(&v.flip_width()?)?.detach()),
        None => None,
    };
    l1(albedo, &albedo.flip_width()?, w.as_ref())
}

/// Chromaticity `x / sum_c x` of a `(B, 3, H, W)` map (constant).
fn chromaticity<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let x = x.detach();
    Ok(x.div(&x.sum_keepdim(&[1])?.clamp_min(1e-12)?)?)
}

/// Constancy weights `exp(-alpha ||c_i - c_j||)` between each texel and its
/// right (`axis = 3`) or lower (`axis = 2`) neighbour.
pub fn constancy_weights<T: Real>(reference: &Tensor<T>, axis: usize, alpha: f64) -> Result<Tensor<T>> {
    let c = chromaticity(reference)?;
    let n = c.dim(axis);
    let d = c.narrow(axis, 1, n - 1)?.sub(&c.narrow(axis, 0, n - 1)?)?;
    Ok(d.square()?.sum_keepdim(&[1])?.sqrt()?.mul_scalar(-alpha)?.exp()?.detach())
}

/// Albedo constancy over 4-neighbourhoods: `sum w_ij ||A_i - A_j||^p`
/// averaged over valid neighbour pairs, with weights from the chromaticity
/// of `reference` (usually the observed texture).
pub fn constancy<T: Real>(
    albedo: &Tensor<T>,
    reference: &Tensor<T>,
    valid: Option<&Tensor<T>>,
    alpha: f64,
    p: f64,
) -> Result<Tensor<T>> {
    let mut total: Option<Tensor<T>> = None;
    let mut pairs = 0.0;
    for axis in [2, 3] {
        let n = albedo.dim(axis);
        if n < 2 {
            continue;
        }
        let w = constancy_weights(reference, axis, alpha)?;
        let w = match valid {
            Some(v) => {
                let v = v.broadcast_to(&[albedo.dim(0), 1, albedo.dim(2), albedo.dim(3)])?;
                w.mul(&v.narrow(axis, 1, n - 1)?.mul(&v.narrow(axis, 0, n - 1)?)?)?
            }
            None => w,
        };
        let d = albedo.narrow(axis, 1, n - 1)?.sub(&albedo.narrow(axis, 0, n - 1)?)?;
        let mag = d.square()?.sum_keepdim(&[1])?.add_scalar(CONST_EPS)?.powf(p / 2.0)?.add_scalar(-CONST_EPS.powf(p / 2.0))?;
        let mask_count: f64 = match valid {
            Some(v) => {
                let v = v.broadcast_to(&[albedo.dim(0), 1, albedo.dim(2), albedo.dim(3)])?;
                let m = v.narrow(axis, 1, n - 1)?.mul(&v.narrow(axis, 0, n - 1)?)?;
                m.data().iter().map(|x| x.f64()).sum()
            }
            None => mag.numel() as f64,
        };
        pairs += mask_count;
        let term = mag.mul(&w)?.sum_all()?;
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    let total = total.ok_or_else(|| FaceError::Dimension("albedo map has no neighbour pairs".into()))?;
    Ok(total.mul_scalar(1.0 / pairs.max(1.0))?)
}

/// Fixed weights of every training term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Completion: UV albedo, image, symmetry, adversarial, gradient penalty.
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub l5: f64,
    pub sup: f64,
    pub rec: f64,
    pub reg: f64,
    pub shape: f64,
    pub pose: f64,
    pub texture: f64,
    pub lmark: f64,
    pub scale: f64,
    pub trans: f64,
    pub rot: f64,
    pub sym3d: f64,
    pub constancy: f64,
    pub alpha: f64,
    pub p_const: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            l2: 1.0,
            l3: 1.0,
            l4: 0.1,
            l5: 1.0,
            sup: 1.0,
            rec: 1.0,
            reg: 0.1,
            shape: 1.0,
            pose: 1.0,
            texture: 1.0,
            lmark: 1.0,
            scale: 1.0,
            trans: 1.0,
            rot: 1.0,
            sym3d: 1.0,
            constancy: 1.0,
            alpha: 15.0,
            p_const: 0.8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let v = [
            self.l1,
            self.l2,
            self.l3,
            self.l4,
            self.l5,
            self.sup,
            self.rec,
            self.reg,
            self.shape,
            self.pose,
            self.texture,
            self.lmark,
            self.scale,
            self.trans,
            self.rot,
            self.sym3d,
            self.constancy,
            self.alpha,
            self.p_const,
        ];
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(FaceError::Invalid(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Per-term scales fixed from the first observed magnitudes, so that each
/// term starts near one. Magnitudes below `floor` are treated as `floor`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub floor: f64,
    pub scales: BTreeMap<String, f64>,
}

impl Normalizer {
    pub fn new(floor: f64) -> Self {
        Normalizer { floor, scales: BTreeMap::new() }
    }

    pub fn is_fitted(&self) -> bool {
        !self.scales.is_empty()
    }

    /// Records scales for terms not seen before.
    pub fn fit(&mut self, terms: &[(&str, f64)]) {
        for &(name, v) in terms {
            let floor = self.floor;
            self.scales.entry(name.to_string()).or_insert_with(|| 1.0 / v.abs().max(floor));
        }
    }

    pub fn scale(&self, name: &str) -> f64 {
        self.scales.get(name).copied().unwrap_or(1.0)
    }

    /// `sum lambda_k scale_k L_k` over `(name, lambda, term)` triples.
    pub fn combine<T: Real>(&self, terms: &[(&str, f64, &Tensor<T>)]) -> Result<Tensor<T>> {
        let mut acc: Option<Tensor<T>> = None;
        for &(name, lambda, t) in terms {
            let s = t.mul_scalar(lambda * self.scale(name))?;
            acc = Some(match acc {
                Some(a) => a.add(&s)?,
                None => s,
            });
        }
        acc.ok_or_else(|| FaceError::Invalid("no loss terms".into()))
    }
}

/// `10 log10(peak^2 / mse)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(FaceError::Dimension(format!("psnr of {} and {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(psnr_from_mse(mse, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

pub fn psnr_images(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_size(b) {
        return Err(FaceError::Dimension("psnr of images with different sizes".into()));
    }
    let av: Vec<f64> = a.data.iter().map(|&v| v as f64).collect();
    let bv: Vec<f64> = b.data.iter().map(|&v| v as f64).collect();
    psnr(&av, &bv, 1.0)
}

/// PSNR over the pixels where the single-channel `mask` is nonzero.
pub fn psnr_masked(a: &Image, b: &Image, mask: &Image) -> Result<f64> {
    if !a.same_size(b) || mask.height != a.height || mask.width != a.width || mask.channels != 1 {
        return Err(FaceError::Dimension("psnr_masked size mismatch".into()));
    }
    let n = a.height * a.width;
    let (mut se, mut cnt) = (0.0, 0usize);
    for c in 0..a.channels {
        for i in (0..n).filter(|&i| mask.data[i] != 0.0) {
            let d = a.data[c * n + i] as f64 - b.data[c * n + i] as f64;
            se += d * d;
            cnt += 1;
        }
    }
    if cnt == 0 {
        return Err(FaceError::Invalid("psnr over an empty mask".into()));
    }
    Ok(psnr_from_mse(se / cnt as f64, 1.0))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..k).map(|i| g[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean SSIM over valid 11x11 Gaussian windows and channels, for values in
/// `[0, 1]`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_size(b) {
        return Err(FaceError::Dimension("ssim of images with different sizes".into()));
    }
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(FaceError::Dimension(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")));
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let g = gaussian_window();
    let (h, w) = (a.height, a.width);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels {
        let x: Vec<f64> = a.plane(c).iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = b.plane(c).iter().map(|&v| v as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
        let mx = filter(&x, h, w, &g);
        let my = filter(&y, h, w, &g);
        let sxx = filter(&prod(&x, &x), h, w, &g);
        let syy = filter(&prod(&y, &y), h, w, &g);
        let sxy = filter(&prod(&x, &y), h, w, &g);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
