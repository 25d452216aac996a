//! Transport between image and UV space: bilinear vertex sampling,
//! barycentric unwarping, mask unwarping, de-shading, flipping and blending.

use diffcore::ops::bilinear_sample;
use diffcore::{Real, Tensor};

use crate::error::{FaceError, Result};
use crate::facemodel::{FaceModel, Pose};
use crate::renderer::{project_mesh, RasterResult};
use crate::store::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UvKind {
    Albedo,
    Texture,
    Shade,
    Mask,
    Uncertainty,
}

/// Planar `C x H_uv x W_uv` map with a per-texel validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct UvImage {
    pub kind: UvKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl UvImage {
    pub fn new(kind: UvKind, channels: usize, height: usize, width: usize) -> Self {
        UvImage { kind, channels, height, width, data: vec![0.0; channels * height * width], valid: vec![true; height * width] }
    }

    /// Empty map laid out for `model`, validity taken from its texel table.
    pub fn for_model(kind: UvKind, channels: usize, model: &FaceModel) -> Self {
        let mut m = UvImage::new(kind, channels, model.uv_height, model.uv_width);
        m.valid = model.texel_tri.iter().map(Option::is_some).collect();
        m
    }

    pub fn texels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f64) {
        self.data[(c * self.height + r) * self.width + col] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.texels()..(c + 1) * self.texels()]
    }

    /// Stacks maps of equal size into a `(B, C, H, W)` tensor.
    pub fn to_tensor<T: Real>(maps: &[&UvImage]) -> Result<Tensor<T>> {
        let first = maps.first().ok_or_else(|| FaceError::Invalid("no UV maps to stack".into()))?;
        let mut v = Vec::with_capacity(maps.len() * first.data.len());
        for m in maps {
            if (m.channels, m.height, m.width) != (first.channels, first.height, first.width) {
                return Err(FaceError::Dimension("UV maps of different sizes".into()));
            }
            v.extend_from_slice(&m.data);
        }
        Ok(Tensor::from_f64(&v, &[maps.len(), first.channels, first.height, first.width])?)
    }

    /// Sample `i` of a `(B, C, H, W)` tensor; all texels marked valid.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, i: usize, kind: UvKind) -> Result<UvImage> {
        let &[b, c, h, w] = t.shape() else {
            return Err(FaceError::Dimension(format!("expected (B, C, H, W), got {:?}", t.shape())));
        };
        if i >= b {
            return Err(FaceError::Dimension(format!("sample {i} of a batch of {b}")));
        }
        let n = c * h * w;
        let mut m = UvImage::new(kind, c, h, w);
        m.data = t.data()[i * n..(i + 1) * n].iter().map(|v| v.f64()).collect();
        Ok(m)
    }

    /// Planar image for export; values clamped to `[0, 1]`, invalid texels
    /// zero.
    pub fn to_image(&self) -> Image {
        let n = self.texels();
        let data =
            (0..self.channels * n).map(|k| if self.valid[k % n] { self.data[k].clamp(0.0, 1.0) as f32 } else { 0.0 }).collect();
        Image { channels: self.channels, height: self.height, width: self.width, data }
    }
}

/// Bilinear lookup in pixel index space (pixel `(i, j)` at `(x, y) = (j, i)`),
/// coordinates clamped to the image.
pub fn bilinear_pixel(img: &Image, x: f64, y: f64) -> Vec<f64> {
    let (x0, x1, fx) = axis(x, img.width);
    let (y0, y1, fy) = axis(y, img.height);
    (0..img.channels)
        .map(|c| {
            let g = |yy, xx| img.get(c, yy, xx) as f64;
            (1.0 - fx) * (1.0 - fy) * g(y0, x0) + fx * (1.0 - fy) * g(y0, x1) + (1.0 - fx) * fy * g(y1, x0) + fx * fy * g(y1, x1)
        })
        .collect()
}

fn axis(v: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let c = v.clamp(0.0, (n - 1) as f64);
    let i0 = (c.floor() as usize).min(n - 2);
    (i0, i0 + 1, c - i0 as f64)
}

/// Bilinear lookup restricted to the pixels flagged in `coverage`, with the
/// weights renormalized over them. Falls back to the plain lookup when no
/// neighbour is covered.
pub fn bilinear_pixel_covered(img: &Image, coverage: &[bool], x: f64, y: f64) -> Vec<f64> {
    let (x0, x1, fx) = axis(x, img.width);
    let (y0, y1, fy) = axis(y, img.height);
    let taps = [(y0, x0, (1.0 - fx) * (1.0 - fy)), (y0, x1, fx * (1.0 - fy)), (y1, x0, (1.0 - fx) * fy), (y1, x1, fx * fy)];
    let total: f64 = taps.iter().filter(|t| coverage[t.0 * img.width + t.1]).map(|t| t.2).sum();
    if total <= 1e-9 {
        return bilinear_pixel(img, x, y);
    }
    (0..img.channels)
        .map(|c| {
            taps.iter().filter(|t| coverage[t.0 * img.width + t.1]).map(|t| t.2 * img.get(c, t.0, t.1) as f64).sum::<f64>()
                / total
        })
        .collect()
}

/// Continuous image position to pixel index space.
fn to_index(p: [f64; 2]) -> (f64, f64) {
    (p[0] - 0.5, p[1] - 0.5)
}

/// Bilinearly samples `img` at every projected vertex.
pub fn sample_vertex_texture(img: &Image, shape: &[[f64; 3]], pose: &Pose) -> Vec<Vec<f64>> {
    shape
        .iter()
        .map(|&p| {
            let (x, y) = to_index(pose.project(p));
            bilinear_pixel(img, x, y)
        })
        .collect()
}

/// [`sample_vertex_texture`] that ignores pixels outside `coverage`.
pub fn sample_vertex_texture_covered(img: &Image, coverage: &[bool], shape: &[[f64; 3]], pose: &Pose) -> Vec<Vec<f64>> {
    shape
        .iter()
        .map(|&p| {
            let (x, y) = to_index(pose.project(p));
            bilinear_pixel_covered(img, coverage, x, y)
        })
        .collect()
}

/// Differentiable vertex sampling: `image: (B, C, H, W)`, projected
/// vertices `proj: (B, V, 2)` in continuous pixel coordinates -> `(B, V, C)`.
pub fn sample_vertex_texture_t<T: Real>(image: &Tensor<T>, proj: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(bilinear_sample(image, &proj.add_scalar(-0.5)?)?)
}

/// Barycentric interpolation of per-vertex values onto the UV grid.
pub fn unwarp_vertex_values(values: &[Vec<f64>], model: &FaceModel, kind: UvKind) -> Result<UvImage> {
    if values.len() != model.num_vertices() {
        return Err(FaceError::Dimension(format!("{} vertex values for {} vertices", values.len(), model.num_vertices())));
    }
    let ch = values.first().map_or(0, Vec::len);
    let mut out = UvImage::for_model(kind, ch, model);
    let n = out.texels();
    for (i, (t, w)) in model.texel_tri.iter().zip(&model.texel_bary).enumerate() {
        let Some(t) = t else { continue };
        let tri = model.triangles[*t];
        for c in 0..ch {
            out.data[c * n + i] = (0..3).map(|k| w[k] * values[tri[k]][c]).sum();
        }
    }
    Ok(out)
}

/// Bilinear lookup of a UV map in texel index space `(column, row)`,
/// clamped to the grid.
pub fn bilinear_uv(map: &UvImage, x: f64, y: f64) -> Vec<f64> {
    let (x0, x1, fx) = axis(x, map.width);
    let (y0, y1, fy) = axis(y, map.height);
    (0..map.channels)
        .map(|c| {
            let g = |r, col| map.get(c, r, col);
            (1.0 - fx) * (1.0 - fy) * g(y0, x0) + fx * (1.0 - fy) * g(y0, x1) + (1.0 - fx) * fy * g(y1, x0) + fx * fy * g(y1, x1)
        })
        .collect()
}

/// Image position of every valid texel under `pose`.
pub fn texel_positions(model: &FaceModel, shape: &[[f64; 3]], pose: &Pose) -> Vec<Option<[f64; 2]>> {
    let proj: Vec<[f64; 2]> = shape.iter().map(|&p| pose.project(p)).collect();
    model
        .texel_tri
        .iter()
        .zip(&model.texel_bary)
        .map(|(t, w)| {
            let tri = model.triangles[(*t)?];
            let mut p = [0.0; 2];
            for k in 0..3 {
                p[0] += w[k] * proj[tri[k]][0];
                p[1] += w[k] * proj[tri[k]][1];
            }
            Some(p)
        })
        .collect()
}

/// Samples `img` directly at each valid texel's projection.
pub fn unwarp_image(img: &Image, coverage: Option<&[bool]>, model: &FaceModel, shape: &[[f64; 3]], pose: &Pose) -> UvImage {
    let mut out = UvImage::for_model(UvKind::Texture, img.channels, model);
    let n = out.texels();
    for (i, p) in texel_positions(model, shape, pose).into_iter().enumerate() {
        let Some(p) = p else { continue };
        let (x, y) = to_index(p);
        let v = match coverage {
            Some(cov) => bilinear_pixel_covered(img, cov, x, y),
            None => bilinear_pixel(img, x, y),
        };
        for (c, v) in v.into_iter().enumerate() {
            out.data[c * n + i] = v;
        }
    }
    out
}

/// Whether each texel's surface point is seen by the camera: its triangle
/// faces the viewer, it projects inside the image and no other surface in
/// `raster` lies in front of it.
pub fn texel_visibility(model: &FaceModel, shape: &[[f64; 3]], pose: &Pose, raster: &RasterResult) -> Vec<bool> {
    let screen = project_mesh(shape, pose);
    let tol = 0.02 * pose.s;
    model
        .texel_tri
        .iter()
        .zip(&model.texel_bary)
        .map(|(t, w)| {
            let Some(t) = *t else { return false };
            let tri = model.triangles[t];
            let [a, b, c] = tri.map(|v| screen[v]);
            let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            let front = {
                let r = pose.rotation();
                let e1: Vec<f64> = (0..3).map(|k| shape[tri[1]][k] - shape[tri[0]][k]).collect();
                let e2: Vec<f64> = (0..3).map(|k| shape[tri[2]][k] - shape[tri[0]][k]).collect();
                let n = [e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]];
                r[2][0] * n[0] + r[2][1] * n[1] + r[2][2] * n[2] < 0.0
            };
            if !front || area == 0.0 {
                return false;
            }
            let p: Vec<f64> = (0..3).map(|k| w[0] * a[k] + w[1] * b[k] + w[2] * c[k]).collect();
            if p[0] < 0.0 || p[1] < 0.0 || p[0] >= raster.width as f64 || p[1] >= raster.height as f64 {
                return false;
            }
            let pix = p[1] as usize * raster.width + p[0] as usize;
            match raster.tri_id[pix] {
                None => true,
                Some(o) if o == t => true,
                Some(o) => {
                    let [oa, ob, oc] = model.triangles[o].map(|v| screen[v]);
                    let oarea = (ob[0] - oa[0]) * (oc[1] - oa[1]) - (ob[1] - oa[1]) * (oc[0] - oa[0]);
                    if oarea == 0.0 {
                        return true;
                    }
                    let e = |u: [f64; 3], v: [f64; 3]| (v[0] - u[0]) * (p[1] - u[1]) - (v[1] - u[1]) * (p[0] - u[0]);
                    let (wa, wb) = (e(ob, oc) / oarea, e(oc, oa) / oarea);
                    let depth = wa * oa[2] + wb * ob[2] + (1.0 - wa - wb) * oc[2];
                    p[2] <= depth + tol
                }
            }
        })
        .collect()
}

/// UV mask (1 = missing): the image mask sampled at each texel, thresholded
/// at 0.5; texels that are not visible under `pose` count as missing.
pub fn unwarp_mask(mask: &Image, model: &FaceModel, shape: &[[f64; 3]], pose: &Pose, visible: &[bool]) -> UvImage {
    let mut out = UvImage::for_model(UvKind::Mask, 1, model);
    for (i, p) in texel_positions(model, shape, pose).into_iter().enumerate() {
        let Some(p) = p else { continue };
        let (x, y) = to_index(p);
        let m = bilinear_pixel(mask, x, y)[0];
        out.data[i] = if !visible[i] || m >= 0.5 { 1.0 } else { 0.0 };
    }
    out
}

/// Albedo `clamp(T / C, 0, 1)`.
pub fn deshade(texture: &UvImage, shade: &UvImage) -> Result<UvImage> {
    if texture.data.len() != shade.data.len() {
        return Err(FaceError::Dimension("texture and shade maps differ in size".into()));
    }
    let mut out = texture.clone();
    out.kind = UvKind::Albedo;
    for (o, s) in out.data.iter_mut().zip(&shade.data) {
        *o = (*o / s).clamp(0.0, 1.0);
    }
    Ok(out)
}

pub fn deshade_t<T: Real>(texture: &Tensor<T>, shade: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(texture.div(shade)?.clip(0.0, 1.0)?)
}

/// `I (1 - M) + I_hat M` with a single-channel mask broadcast over colour.
/// Pixels with `M = 0` or `M = 1` are copied exactly.
pub fn blend(input: &Image, completed: &Image, mask: &Image) -> Result<Image> {
    if !input.same_size(completed) || mask.channels != 1 || mask.height != input.height || mask.width != input.width {
        return Err(FaceError::Dimension(format!(
            "blend of {}x{}x{} and {}x{}x{} with mask {}x{}x{}",
            input.channels,
            input.height,
            input.width,
            completed.channels,
            completed.height,
            completed.width,
            mask.channels,
            mask.height,
            mask.width
        )));
    }
    let mut out = input.clone();
    let n = input.height * input.width;
    for c in 0..input.channels {
        for i in 0..n {
            let m = mask.data[i];
            let k = c * n + i;
            out.data[k] = if m == 0.0 {
                input.data[k]
            } else if m == 1.0 {
                completed.data[k]
            } else {
                input.data[k] * (1.0 - m) + completed.data[k] * m
            };
        }
    }
    Ok(out)
}

pub fn blend_t<T: Real>(input: &Tensor<T>, completed: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(input.mul(&mask.one_minus()?)?.add(&completed.mul(mask)?)?)
}

/// Mirrors columns `u <-> W - 1 - u`.
pub fn hflip_uv(x: &UvImage) -> Result<UvImage> {
    if !x.width.is_multiple_of(2) {
        return Err(FaceError::Invalid(format!("UV width {} must be even to flip", x.width)));
    }
    let mut out = x.clone();
    for r in 0..x.height {
        for u in 0..x.width {
            out.valid[r * x.width + x.width - 1 - u] = x.valid[r * x.width + u];
            for c in 0..x.channels {
                out.set(c, r, x.width - 1 - u, x.get(c, r, u));
            }
        }
    }
    Ok(out)
}
