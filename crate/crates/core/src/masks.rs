//! Occlusion masks constrained to the face region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FaceError, Result};
use crate::facemodel::FaceModel;
use crate::renderer::RasterResult;
use crate::store::Image;

/// Largest mask-to-face ratio a bin may ask for.
pub const MAX_RATIO: f64 = 0.9;
pub const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskKind {
    Rect,
    HalfFace,
}

/// Mask request: kind, half-open ratio bin `[lo, hi)` of masked face
/// pixels and a seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub bin: (f64, f64),
    pub seed: u64,
}

impl MaskSpec {
    pub fn rect(lo: f64, hi: f64, seed: u64) -> Self {
        MaskSpec { kind: MaskKind::Rect, bin: (lo, hi), seed }
    }

    pub fn half_face(seed: u64) -> Self {
        MaskSpec { kind: MaskKind::HalfFace, bin: (0.0, MAX_RATIO), seed }
    }
}

/// The bins `[0, 0.1), [0.1, 0.2), .., [0.8, 0.9)`.
pub fn standard_bins() -> Vec<(f64, f64)> {
    (0..9).map(|i| (i as f64 / 10.0, (i + 1) as f64 / 10.0)).collect()
}

/// Face pixels of an image and, for half-face masks, the model-space x of
/// the surface point seen at each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceRegion {
    pub height: usize,
    pub width: usize,
    pub covered: Vec<bool>,
    pub model_x: Option<Vec<f64>>,
}

impl FaceRegion {
    pub fn from_coverage(covered: Vec<bool>, height: usize, width: usize) -> Result<Self> {
        if covered.len() != height * width {
            return Err(FaceError::Dimension(format!("{} coverage flags for {height}x{width}", covered.len())));
        }
        Ok(FaceRegion { height, width, covered, model_x: None })
    }

    pub fn from_raster(model: &FaceModel, shape: &[[f64; 3]], raster: &RasterResult) -> Self {
        let model_x = raster
            .tri_id
            .iter()
            .zip(&raster.bary)
            .map(|(t, w)| t.map_or(0.0, |t| (0..3).map(|k| w[k] * shape[model.triangles[t][k]][0]).sum()))
            .collect();
        FaceRegion { height: raster.height, width: raster.width, covered: raster.coverage(), model_x: Some(model_x) }
    }

    pub fn area(&self) -> usize {
        self.covered.iter().filter(|&&c| c).count()
    }
}

/// Fraction of face pixels that `mask` covers.
pub fn mask_ratio(region: &FaceRegion, mask: &Image) -> f64 {
    let area = region.area();
    if area == 0 {
        return 0.0;
    }
    let hit = region.covered.iter().zip(&mask.data).filter(|(&c, &m)| c && m >= 0.5).count();
    hit as f64 / area as f64
}

/// Counts of covered pixels over rectangles in O(1).
struct Integral {
    w: usize,
    sum: Vec<usize>,
}

impl Integral {
    fn new(region: &FaceRegion) -> Self {
        let (h, w) = (region.height, region.width);
        let mut sum = vec![0; (h + 1) * (w + 1)];
        for i in 0..h {
            for j in 0..w {
                let c = region.covered[i * w + j] as usize;
                sum[(i + 1) * (w + 1) + j + 1] = c + sum[i * (w + 1) + j + 1] + sum[(i + 1) * (w + 1) + j] - sum[i * (w + 1) + j];
            }
        }
        Integral { w, sum }
    }

    /// Covered pixels in rows `y0..y1`, columns `x0..x1`.
    fn count(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> usize {
        let s = |y: usize, x: usize| self.sum[y * (self.w + 1) + x];
        s(y1, x1) + s(y0, x0) - s(y0, x1) - s(y1, x0)
    }
}

fn check_bin(bin: (f64, f64)) -> Result<()> {
    let (lo, hi) = bin;
    if !(lo >= 0.0 && lo < hi && hi <= MAX_RATIO + 1e-12) {
        return Err(FaceError::Infeasible(format!("ratio bin [{lo}, {hi}) must lie within [0, {MAX_RATIO}]")));
    }
    Ok(())
}

/// Generates a mask (1 = missing) whose face ratio falls in the bin. Rect
/// masks are a rectangle inside the face bounding box, intersected with the
/// face region, found by rejection sampling. Half-face masks cover the face
/// pixels on one side of the model's symmetry plane, the side picked by the
/// seed.
pub fn gen_mask(region: &FaceRegion, spec: &MaskSpec) -> Result<Image> {
    check_bin(spec.bin)?;
    let area = region.area();
    if area == 0 {
        return Err(FaceError::Infeasible("empty face region".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.bin;
    let (h, w) = (region.height, region.width);
    let mut mask = Image::new(1, h, w);
    match spec.kind {
        MaskKind::HalfFace => {
            let xs = region
                .model_x
                .as_ref()
                .ok_or_else(|| FaceError::Invalid("half-face masks need a region built from a raster".into()))?;
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            for k in 0..h * w {
                if region.covered[k] && xs[k] * sign > 0.0 {
                    mask.data[k] = 1.0;
                }
            }
            let r = mask_ratio(region, &mask);
            if r < lo || r >= hi {
                return Err(FaceError::Infeasible(format!("half-face ratio {r:.3} outside [{lo}, {hi})")));
            }
            Ok(mask)
        }
        MaskKind::Rect => {
            let ig = Integral::new(region);
            let (mut bx0, mut by0, mut bx1, mut by1) = (w, h, 0, 0);
            for k in 0..h * w {
                if region.covered[k] {
                    let (i, j) = (k / w, k % w);
                    bx0 = bx0.min(j);
                    by0 = by0.min(i);
                    bx1 = bx1.max(j + 1);
                    by1 = by1.max(i + 1);
                }
            }
            let (bw, bh) = ((bx1 - bx0) as f64, (by1 - by0) as f64);
            for _ in 0..MAX_ATTEMPTS {
                let target = rng.gen_range(lo..hi).max(0.5 / area as f64);
                let aspect: f64 = rng.gen_range(0.5f64..2.0).sqrt();
                let side = (target * rng.gen_range(0.8..1.6)).sqrt();
                let rw = ((side * aspect * bw).round() as usize).clamp(1, bx1 - bx0);
                let rh = ((side / aspect * bh).round() as usize).clamp(1, by1 - by0);
                let x0 = bx0 + rng.gen_range(0..=(bx1 - bx0 - rw));
                let y0 = by0 + rng.gen_range(0..=(by1 - by0 - rh));
                let hit = ig.count(x0, y0, x0 + rw, y0 + rh);
                let r = hit as f64 / area as f64;
                if hit > 0 && r >= lo && r < hi {
                    for i in y0..y0 + rh {
                        for j in x0..x0 + rw {
                            if region.covered[i * w + j] {
                                mask.data[i * w + j] = 1.0;
                            }
                        }
                    }
                    return Ok(mask);
                }
            }
            Err(FaceError::Infeasible(format!("no rectangle in [{lo}, {hi}) after {MAX_ATTEMPTS} attempts")))
        }
    }
}

/// Mask for a synthetic face, with the region taken from its ground-truth
/// rendering.
pub fn face_mask(model: &FaceModel, face: &crate::pipeline::SyntheticFace, spec: &MaskSpec) -> Result<Image> {
    let n = face.image.width;
    let region = match spec.kind {
        MaskKind::Rect => FaceRegion::from_coverage(face.coverage.clone(), n, n)?,
        MaskKind::HalfFace => {
            let raster = crate::renderer::rasterize(model, &face.shape, &face.factors.pose, n, n);
            FaceRegion::from_raster(model, &face.shape, &raster)
        }
    };
    gen_mask(&region, spec)
}
