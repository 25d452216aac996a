//! End-to-end completion: factorize a masked face into geometry, lighting
//! and partial UV albedo, inpaint the albedo, re-render, blend and repeat.

pub mod data;
pub mod models;
pub mod train;

use diffcore::{no_grad, Tensor};

use crate::error::{FaceError, Result};
use crate::facemodel::{FaceModel, Pose};
use crate::illumination::shade_uv;
use crate::losses::psnr_images;
use crate::renderer::{rasterize, render, RasterResult};
use crate::store::Image;
use crate::uvops::{blend, deshade, texel_visibility, unwarp_image, unwarp_mask, UvImage};

pub use data::{DataConfig, FaceFactors, SyntheticFace};
pub use models::{Trained3dmm, TrainedInpainter};

/// Source of shape, pose and lighting for an image.
pub trait Analyzer {
    /// `mask` is single-channel with 1 marking missing pixels.
    fn analyze(&self, model: &FaceModel, image: &Image, mask: &Image) -> Result<FaceFactors>;
}

/// Returns fixed factors regardless of the image.
#[derive(Debug, Clone)]
pub struct OracleAnalyzer(pub FaceFactors);

impl Analyzer for OracleAnalyzer {
    fn analyze(&self, _: &FaceModel, _: &Image, _: &Image) -> Result<FaceFactors> {
        Ok(self.0.clone())
    }
}

/// Completes a partial UV albedo.
pub trait Inpainter {
    /// `partial`: albedo in `[0, 1]`, zero where `mask` is 1. Returns the
    /// completed albedo in `[0, 1]`.
    fn inpaint(&self, partial: &UvImage, mask: &UvImage) -> Result<UvImage>;
}

/// Copies visible texels and leaves masked ones at zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityInpainter;

impl Inpainter for IdentityInpainter {
    fn inpaint(&self, partial: &UvImage, mask: &UvImage) -> Result<UvImage> {
        check_uv_pair(partial, mask)?;
        let mut out = partial.clone();
        let n = out.texels();
        for c in 0..out.channels {
            for i in 0..n {
                if mask.data[i] >= 0.5 {
                    out.data[c * n + i] = 0.0;
                }
            }
        }
        Ok(out)
    }
}

/// Fills masked texels with the per-channel mean of the visible ones.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanFillInpainter;

impl Inpainter for MeanFillInpainter {
    fn inpaint(&self, partial: &UvImage, mask: &UvImage) -> Result<UvImage> {
        check_uv_pair(partial, mask)?;
        let mut out = partial.clone();
        let n = out.texels();
        let seen: Vec<usize> = (0..n).filter(|&i| mask.data[i] < 0.5 && partial.valid[i]).collect();
        for c in 0..out.channels {
            let mean = if seen.is_empty() {
                0.5
            } else {
                seen.iter().map(|&i| partial.data[c * n + i]).sum::<f64>() / seen.len() as f64
            };
            for i in 0..n {
                if mask.data[i] >= 0.5 {
                    out.data[c * n + i] = mean;
                }
            }
        }
        Ok(out)
    }
}

fn check_uv_pair(partial: &UvImage, mask: &UvImage) -> Result<()> {
    if mask.channels != 1 || (partial.height, partial.width) != (mask.height, mask.width) {
        return Err(FaceError::Dimension(format!(
            "albedo {}x{} with mask {}x{}x{}",
            partial.height, partial.width, mask.channels, mask.height, mask.width
        )));
    }
    Ok(())
}

/// Output of the analysis stage for one image.
#[derive(Debug, Clone)]
pub struct FactorizedFace {
    pub factors: FaceFactors,
    pub shape: Vec<[f64; 3]>,
    pub raster: RasterResult,
    /// Shade `C^uv`.
    pub shade: UvImage,
    /// De-shaded albedo sampled from the unmasked face pixels, before
    /// masking in UV space.
    pub albedo: UvImage,
    /// `A^uv_m`: albedo zeroed where the UV mask is set.
    pub partial_albedo: UvImage,
    /// `M^uv`, 1 for missing or unseen texels.
    pub uv_mask: UvImage,
    pub visible: Vec<bool>,
}

pub(crate) fn check_image_mask(image: &Image, mask: &Image) -> Result<()> {
    if image.channels != 3 || image.height != image.width {
        return Err(FaceError::Dimension(format!(
            "expected a square RGB image, got {}x{}x{}",
            image.channels, image.height, image.width
        )));
    }
    if mask.channels != 1 || mask.height != image.height || mask.width != image.width {
        return Err(FaceError::Dimension(format!(
            "mask {}x{}x{} for a {}x{} image",
            mask.channels, mask.height, mask.width, image.height, image.width
        )));
    }
    Ok(())
}

/// `image (1 - mask)` with a single-channel mask.
pub fn apply_mask(image: &Image, mask: &Image) -> Image {
    let mut out = image.clone();
    let n = image.height * image.width;
    for c in 0..image.channels {
        for i in 0..n {
            if mask.data[i] != 0.0 {
                out.data[c * n + i] *= 1.0 - mask.data[i];
            }
        }
    }
    out
}

/// Runs `analyzer` on the masked image, then unwarps and de-shades the
/// unmasked face pixels.
pub fn factorize(model: &FaceModel, image: &Image, mask: &Image, analyzer: &dyn Analyzer) -> Result<FactorizedFace> {
    check_image_mask(image, mask)?;
    let masked = apply_mask(image, mask);
    let factors = analyzer.analyze(model, &masked, mask)?;
    factorize_with(model, &masked, mask, factors)
}

/// Factorization with given factors. The texture is sampled from the
/// unmasked face pixels at every texel's projection.
pub fn factorize_with(model: &FaceModel, image: &Image, mask: &Image, factors: FaceFactors) -> Result<FactorizedFace> {
    check_image_mask(image, mask)?;
    let size = image.width;
    let shape = model.assemble_shape(&factors.coeffs)?;
    let pose = factors.pose;
    let raster = rasterize(model, &shape, &pose, size, size);
    let shade = shade_uv(model, &shape, &factors.lighting, &pose.rotation())?;
    let usable: Vec<bool> = raster.tri_id.iter().zip(&mask.data).map(|(t, &m)| t.is_some() && m < 0.5).collect();
    let texture = unwarp_image(image, Some(&usable), model, &shape, &pose);
    let albedo = deshade(&texture, &shade)?;
    let visible = texel_visibility(model, &shape, &pose, &raster);
    let uv_mask = unwarp_mask(mask, model, &shape, &pose, &visible);
    let partial_albedo = mask_uv(&albedo, &uv_mask);
    Ok(FactorizedFace { factors, shape, raster, shade, albedo, partial_albedo, uv_mask, visible })
}

/// `albedo (1 - M^uv)`, also zeroing texels without a triangle.
pub fn mask_uv(albedo: &UvImage, uv_mask: &UvImage) -> UvImage {
    let mut out = albedo.clone();
    let n = out.texels();
    for c in 0..out.channels {
        for i in 0..n {
            if uv_mask.data[i] >= 0.5 || !albedo.valid[i] {
                out.data[c * n + i] = 0.0;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompletionOptions {
    pub iters: usize,
    /// Re-unwarp the image mask under each iteration's geometry instead of
    /// reusing the first iteration's UV mask.
    pub reunwarp_mask: bool,
}

impl Default for CompletionOptions {
    fn default() -> Self {
        CompletionOptions { iters: 2, reunwarp_mask: false }
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub albedo: UvImage,
    pub rendered: Image,
    pub blended: Image,
    pub pose: Pose,
    /// PSNR of the blended output against the ground truth.
    pub psnr: Option<f64>,
    /// PSNR of the raw rendering against the ground truth.
    pub psnr_rendered: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CompletionResult {
    pub iterations: Vec<IterationRecord>,
}

impl CompletionResult {
    pub fn output(&self) -> &Image {
        &self.iterations.last().expect("at least one iteration").blended
    }
}

/// Iterative completion. Iteration 1 analyses the masked image; each later
/// iteration analyses the previous blended output and inpaints with the
/// first UV mask. Every output keeps the unmasked input pixels unchanged.
pub fn complete(
    model: &FaceModel,
    image: &Image,
    mask: &Image,
    analyzer: &dyn Analyzer,
    inpainter: &dyn Inpainter,
    opts: &CompletionOptions,
    truth: Option<&Image>,
) -> Result<CompletionResult> {
    if opts.iters == 0 {
        return Err(FaceError::Invalid("completion needs at least one iteration".into()));
    }
    check_image_mask(image, mask)?;
    if let Some(t) = truth {
        if !t.same_size(image) {
            return Err(FaceError::Dimension("ground truth and input differ in size".into()));
        }
    }
    let size = image.width;
    let zero = Image::new(1, size, size);
    let mut iterations: Vec<IterationRecord> = Vec::with_capacity(opts.iters);
    let mut first_mask: Option<UvImage> = None;
    for k in 0..opts.iters {
        let fz = match iterations.last() {
            None => factorize(model, image, mask, analyzer)?,
            Some(prev) => {
                let factors = analyzer.analyze(model, &prev.blended, &zero)?;
                let mut fz = factorize_with(model, &prev.blended, &zero, factors)?;
                fz.uv_mask = if opts.reunwarp_mask {
                    unwarp_mask(mask, model, &fz.shape, &fz.factors.pose, &fz.visible)
                } else {
                    first_mask.clone().expect("first iteration mask")
                };
                fz.partial_albedo = mask_uv(&fz.albedo, &fz.uv_mask);
                fz
            }
        };
        if k == 0 {
            first_mask = Some(fz.uv_mask.clone());
        }
        let albedo = inpainter.inpaint(&fz.partial_albedo, &fz.uv_mask)?;
        let rendered = render(model, &fz.shape, &albedo, &fz.factors.pose, &fz.factors.lighting, size)?.image;
        let blended = blend(image, &rendered, mask)?;
        let (psnr, psnr_rendered) = match truth {
            Some(t) => (Some(psnr_images(&blended, t)?), Some(psnr_images(&rendered, t)?)),
            None => (None, None),
        };
        iterations.push(IterationRecord { albedo, rendered, blended, pose: fz.factors.pose, psnr, psnr_rendered });
    }
    Ok(CompletionResult { iterations })
}

/// Network-domain inpainter input: `(2 A - 1)(1 - M)` and `M` as tensors.
pub(crate) fn net_input(partial: &[&UvImage], masks: &[&UvImage]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let a = UvImage::to_tensor::<f32>(partial)?;
    let m = UvImage::to_tensor::<f32>(masks)?;
    let a = no_grad(|| -> Result<Tensor<f32>> { Ok(a.mul_scalar(2.0)?.add_scalar(-1.0)?.mul(&m.one_minus()?)?) })?;
    Ok((a, m))
}
