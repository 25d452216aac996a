//! Z-buffer rasterization under the weak-perspective camera, textured
//! rendering and novel views.

use std::rc::Rc;

use diffcore::ops::bilinear_sample;
use diffcore::{Real, Tensor};

use crate::error::{FaceError, Result};
use crate::facemodel::{rotate, FaceModel, Pose, PoseT};
use crate::illumination::{shade_uv, Lighting};
use crate::store::Image;
use crate::uvops::{bilinear_uv, UvImage};

/// Per-pixel visibility of a rasterized mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterResult {
    pub height: usize,
    pub width: usize,
    pub tri_id: Vec<Option<usize>>,
    /// Screen-space barycentric weights of the winning triangle's corners.
    pub bary: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
}

impl RasterResult {
    pub fn coverage(&self) -> Vec<bool> {
        self.tri_id.iter().map(Option::is_some).collect()
    }

    pub fn covered_count(&self) -> usize {
        self.tri_id.iter().filter(|t| t.is_some()).count()
    }

    /// Coverage as a single-channel 0/1 image.
    pub fn coverage_image(&self) -> Image {
        let data = self.tri_id.iter().map(|t| if t.is_some() { 1.0 } else { 0.0 }).collect();
        Image { channels: 1, height: self.height, width: self.width, data }
    }
}

/// Screen position and camera depth `(x, y, s (R p)_z)` of every vertex.
pub fn project_mesh(shape: &[[f64; 3]], pose: &Pose) -> Vec<[f64; 3]> {
    let r = pose.rotation();
    shape
        .iter()
        .map(|&p| {
            let c = rotate(&r, p);
            [pose.s * c[0] + pose.t[0], pose.s * c[1] + pose.t[1], pose.s * c[2]]
        })
        .collect()
}

#[inline]
fn edge(u: [f64; 3], v: [f64; 3], px: f64, py: f64) -> f64 {
    (v[0] - u[0]) * (py - u[1]) - (v[1] - u[1]) * (px - u[0])
}

/// Top-left ownership for an edge of a positively oriented triangle
/// (y down): horizontal edges with the interior below, or edges going up.
#[inline]
fn top_left(u: [f64; 3], v: [f64; 3]) -> bool {
    let (dx, dy) = (v[0] - u[0], v[1] - u[1]);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Rasterizes screen-space triangles (vertices as `(x, y, depth)`) at pixel
/// centres. The smallest depth wins; ties go to the lowest triangle index.
pub fn rasterize_screen(screen: &[[f64; 3]], triangles: &[[usize; 3]], height: usize, width: usize) -> RasterResult {
    let n = height * width;
    let mut out = RasterResult { height, width, tri_id: vec![None; n], bary: vec![[0.0; 3]; n], depth: vec![f64::INFINITY; n] };
    for (ti, tri) in triangles.iter().enumerate() {
        let [a, b, c] = tri.map(|v| screen[v]);
        let area = edge(a, b, c[0], c[1]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        // reorder to positive orientation; `slot` maps back to corner order
        let (p, slot) = if area > 0.0 { ([a, b, c], [0, 1, 2]) } else { ([a, c, b], [0, 2, 1]) };
        let area = area.abs();
        let tl = [top_left(p[1], p[2]), top_left(p[2], p[0]), top_left(p[0], p[1])];
        let xmin = p.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
        let xmax = p.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
        let ymin = p.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min);
        let ymax = p.iter().map(|v| v[1]).fold(f64::NEG_INFINITY, f64::max);
        let j0 = (xmin - 0.5).ceil().max(0.0) as usize;
        let i0 = (ymin - 0.5).ceil().max(0.0) as usize;
        let j1 = ((xmax - 0.5).floor() + 1.0).clamp(0.0, width as f64) as usize;
        let i1 = ((ymax - 0.5).floor() + 1.0).clamp(0.0, height as f64) as usize;
        for i in i0..i1 {
            let py = i as f64 + 0.5;
            for j in j0..j1 {
                let px = j as f64 + 0.5;
                let e = [edge(p[1], p[2], px, py), edge(p[2], p[0], px, py), edge(p[0], p[1], px, py)];
                if !(0..3).all(|k| e[k] > 0.0 || (e[k] == 0.0 && tl[k])) {
                    continue;
                }
                let w = e.map(|v| v / area);
                let depth = w[0] * p[0][2] + w[1] * p[1][2] + w[2] * p[2][2];
                let k = i * width + j;
                if depth < out.depth[k] {
                    out.depth[k] = depth;
                    out.tri_id[k] = Some(ti);
                    let mut bary = [0.0; 3];
                    for s in 0..3 {
                        bary[slot[s]] = w[s];
                    }
                    out.bary[k] = bary;
                }
            }
        }
    }
    for d in out.depth.iter_mut() {
        if !d.is_finite() {
            *d = 0.0;
        }
    }
    out
}

pub fn rasterize(model: &FaceModel, shape: &[[f64; 3]], pose: &Pose, height: usize, width: usize) -> RasterResult {
    rasterize_screen(&project_mesh(shape, pose), &model.triangles, height, width)
}

/// UV position `(column, row)` seen at a covered pixel.
pub fn pixel_uv(model: &FaceModel, raster: &RasterResult, k: usize) -> Option<[f64; 2]> {
    let tri = model.triangles[raster.tri_id[k]?];
    let w = raster.bary[k];
    let mut uv = [0.0; 2];
    for s in 0..3 {
        uv[0] += w[s] * model.uv[tri[s]][0];
        uv[1] += w[s] * model.uv[tri[s]][1];
    }
    Some(uv)
}

/// Looks up a UV map at every covered pixel; uncovered pixels get 0.
pub fn sample_uv_to_image(model: &FaceModel, raster: &RasterResult, map: &UvImage) -> Image {
    let mut img = Image::new(map.channels, raster.height, raster.width);
    let n = raster.height * raster.width;
    for k in 0..n {
        if let Some(uv) = pixel_uv(model, raster, k) {
            for (c, v) in bilinear_uv(map, uv[0], uv[1]).into_iter().enumerate() {
                img.data[c * n + k] = v as f32;
            }
        }
    }
    img
}

/// A rendered image together with the visibility and shade used for it.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: Image,
    pub raster: RasterResult,
    pub shade: UvImage,
}

/// Renders `albedo` (values in `[0, 1]`) shaded by `lighting` into a square
/// image with a black background.
pub fn render(
    model: &FaceModel,
    shape: &[[f64; 3]],
    albedo: &UvImage,
    pose: &Pose,
    lighting: &Lighting,
    size: usize,
) -> Result<Rendered> {
    if albedo.channels != 3 || albedo.height != model.uv_height || albedo.width != model.uv_width {
        return Err(FaceError::Dimension(format!(
            "albedo {}x{}x{} for a {}x{} UV layout",
            albedo.channels, albedo.height, albedo.width, model.uv_height, model.uv_width
        )));
    }
    let shade = shade_uv(model, shape, lighting, &pose.rotation())?;
    let raster = rasterize(model, shape, pose, size, size);
    let mut image = Image::new(3, size, size);
    let n = size * size;
    for k in 0..n {
        if let Some(uv) = pixel_uv(model, &raster, k) {
            let a = bilinear_uv(albedo, uv[0], uv[1]);
            let s = bilinear_uv(&shade, uv[0], uv[1]);
            for c in 0..3 {
                image.data[c * n + k] = (a[c] * s[c]).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(Rendered { image, raster, shade })
}

/// Renders one view per yaw angle (radians) at the canonical pose.
pub fn render_views(
    model: &FaceModel,
    shape: &[[f64; 3]],
    albedo: &UvImage,
    lighting: &Lighting,
    yaws: &[f64],
    size: usize,
) -> Result<Vec<Image>> {
    yaws.iter()
        .map(|&yaw| {
            let pose = Pose { yaw, ..Pose::canonical(model, size) };
            Ok(render(model, shape, albedo, &pose, lighting, size)?.image)
        })
        .collect()
}

/// Differentiable UV-to-image lookup for a batch. Visibility comes from a
/// plain rasterization and is held fixed; the barycentric weights are
/// recomputed from the projected vertices so that gradients reach shape and
/// pose.
pub struct PixelSampler<T: Real> {
    pub height: usize,
    pub width: usize,
    pub rasters: Vec<RasterResult>,
    pixels: Vec<Rc<Vec<usize>>>,
    /// Per sample `(1, P, 2)` UV coordinates of the covered pixels.
    coords: Vec<Tensor<T>>,
}

impl<T: Real> PixelSampler<T> {
    /// `verts: (B, V, 3)` model-space vertices posed by `pose`.
    pub fn new(model: &FaceModel, verts: &Tensor<T>, pose: &PoseT<T>, size: usize) -> Result<Self> {
        let b = pose.batch();
        let nv = model.num_vertices();
        let proj = pose.project(verts)?;
        let vd = verts.data();
        let mut rasters = Vec::with_capacity(b);
        let mut pixels = Vec::with_capacity(b);
        let mut coords = Vec::with_capacity(b);
        for s in 0..b {
            let shape: Vec<[f64; 3]> = (0..nv)
                .map(|v| {
                    let o = (s * nv + v) * 3;
                    [vd[o].f64(), vd[o + 1].f64(), vd[o + 2].f64()]
                })
                .collect();
            let raster = rasterize(model, &shape, &pose.pose(s), size, size);
            let mut pix = Vec::new();
            let mut corner = [Vec::new(), Vec::new(), Vec::new()];
            let mut centre = Vec::new();
            let mut uv = [Vec::new(), Vec::new(), Vec::new()];
            for (k, t) in raster.tri_id.iter().enumerate() {
                let Some(t) = t else { continue };
                pix.push(k);
                centre.extend([(k % size) as f64 + 0.5, (k / size) as f64 + 0.5]);
                for c in 0..3 {
                    let v = model.triangles[*t][c];
                    corner[c].push(v);
                    uv[c].extend(model.uv[v]);
                }
            }
            let p = pix.len();
            let coord = if p == 0 {
                Tensor::zeros(&[1, 0, 2])
            } else {
                let ps = proj.narrow(0, s, 1)?;
                let [a, bb, c] = corner.map(Rc::new);
                let (pa, pb, pc) = (ps.gather_rows(&a)?, ps.gather_rows(&bb)?, ps.gather_rows(&c)?);
                let q = Tensor::from_f64(&centre, &[1, p, 2])?;
                let area = edge_t(&pa, &pb, &pc)?;
                let wa = edge_t(&pb, &pc, &q)?.div(&area)?;
                let wb = edge_t(&pc, &pa, &q)?.div(&area)?;
                let wc = wa.add(&wb)?.one_minus()?;
                let uvt = |u: &Vec<f64>| Tensor::<T>::from_f64(u, &[1, p, 2]);
                wa.mul(&uvt(&uv[0])?)?.add(&wb.mul(&uvt(&uv[1])?)?)?.add(&wc.mul(&uvt(&uv[2])?)?)?
            };
            rasters.push(raster);
            pixels.push(Rc::new(pix));
            coords.push(coord);
        }
        Ok(PixelSampler { height: size, width: size, rasters, pixels, coords })
    }

    pub fn batch(&self) -> usize {
        self.rasters.len()
    }

    /// `(B, 1, H, W)` coverage as a constant 0/1 tensor.
    pub fn coverage(&self) -> Result<Tensor<T>> {
        let v: Vec<f64> =
            self.rasters.iter().flat_map(|r| r.tri_id.iter().map(|t| if t.is_some() { 1.0 } else { 0.0 })).collect();
        Ok(Tensor::from_f64(&v, &[self.batch(), 1, self.height, self.width])?)
    }

    /// Bilinear lookup of `tex: (B, C, H_uv, W_uv)` at every covered pixel,
    /// giving `(B, C, H, W)` with zeros outside the coverage.
    pub fn sample(&self, tex: &Tensor<T>) -> Result<Tensor<T>> {
        let c = tex.dim(1);
        let n = self.height * self.width;
        let mut parts = Vec::with_capacity(self.batch());
        for s in 0..self.batch() {
            let img = if self.pixels[s].is_empty() {
                Tensor::zeros(&[1, c, self.height, self.width])
            } else {
                bilinear_sample(&tex.narrow(0, s, 1)?, &self.coords[s])?
                    .scatter_rows(&self.pixels[s], n)?
                    .transpose_last()?
                    .reshape(&[1, c, self.height, self.width])?
            };
            parts.push(img);
        }
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Ok(Tensor::concat(&refs, 0)?)
    }

    /// `clip(albedo * shade, 0, 1)` for UV albedo in `[0, 1]` and UV shade.
    pub fn render(&self, albedo: &Tensor<T>, shade: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.sample(albedo)?.mul(&self.sample(shade)?)?.clip(0.0, 1.0)?)
    }
}

/// Edge function `(v - u) x (p - u)` over `(.., 2)` point tensors, `(.., 1)`.
fn edge_t<T: Real>(u: &Tensor<T>, v: &Tensor<T>, p: &Tensor<T>) -> Result<Tensor<T>> {
    let ax = u.dims() - 1;
    let d = v.sub(u)?;
    let e = p.sub(u)?;
    let c = |t: &Tensor<T>, i| t.narrow(ax, i, 1);
    Ok(c(&d, 0)?.mul(&c(&e, 1)?)?.sub(&c(&d, 1)?.mul(&c(&e, 0)?)?)?)
}
