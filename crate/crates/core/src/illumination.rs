//! Vertex normals and second-order spherical-harmonics shading in UV space.

use std::rc::Rc;

use diffcore::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{FaceError, Result};
use crate::facemodel::{rotate, FaceModel, Mat3};
use crate::uvops::{UvImage, UvKind};

pub const SH_BANDS: usize = 9;
pub const EPS_SHADE: f64 = 1e-3;

/// 27 lighting weights, channel-major: `coeffs[c * 9 + k]` is the weight of
/// basis function `k` for colour channel `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub coeffs: [f64; 3 * SH_BANDS],
}

impl Lighting {
    /// Ambient-only light of the given intensity.
    pub fn ambient(v: f64) -> Self {
        let mut coeffs = [0.0; 27];
        for c in 0..3 {
            coeffs[c * SH_BANDS] = v;
        }
        Lighting { coeffs }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let coeffs: [f64; 27] =
            v.try_into().map_err(|_| FaceError::Dimension(format!("{} lighting coefficients, expected 27", v.len())))?;
        Ok(Lighting { coeffs })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.coeffs[c * SH_BANDS..(c + 1) * SH_BANDS]
    }

    /// Lighting of the horizontally mirrored scene: bands odd in `n_x` flip.
    pub fn mirrored(&self) -> Self {
        let mut out = *self;
        for c in 0..3 {
            for k in [1, 4, 5] {
                out.coeffs[c * SH_BANDS + k] = -out.coeffs[c * SH_BANDS + k];
            }
        }
        out
    }

    pub fn to_tensor<T: Real>(lights: &[Lighting]) -> Result<Tensor<T>> {
        let v: Vec<f64> = lights.iter().flat_map(|l| l.coeffs).collect();
        Ok(Tensor::from_f64(&v, &[lights.len(), 27])?)
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (n > 1e-300).then(|| v.map(|x| x / n))
}

/// Area-weighted vertex normals; face normals follow the right-hand rule
/// on the triangle's vertex order.
pub fn vertex_normals(shape: &[[f64; 3]], triangles: &[[usize; 3]]) -> Result<Vec<[f64; 3]>> {
    let mut acc = vec![[0.0; 3]; shape.len()];
    for t in triangles {
        if t.iter().any(|&v| v >= shape.len()) {
            return Err(FaceError::Geometry(format!("triangle {t:?} references a missing vertex")));
        }
        // the unnormalized cross product carries twice the triangle area
        let n = cross(sub(shape[t[1]], shape[t[0]]), sub(shape[t[2]], shape[t[0]]));
        for &v in t {
            for a in 0..3 {
                acc[v][a] += n[a];
            }
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(v, n)| normalize(n).ok_or_else(|| FaceError::Geometry(format!("vertex {v} has a zero-length normal"))))
        .collect()
}

/// Differentiable vertex normals for `verts: (B, V, 3)`.
pub fn vertex_normals_t<T: Real>(model: &FaceModel, verts: &Tensor<T>) -> Result<Tensor<T>> {
    let nv = model.num_vertices();
    let corner = |k: usize| Rc::new(model.triangles.iter().map(|t| t[k]).collect::<Vec<_>>());
    let idx = [corner(0), corner(1), corner(2)];
    let p0 = verts.gather_rows(&idx[0])?;
    let e1 = verts.gather_rows(&idx[1])?.sub(&p0)?;
    let e2 = verts.gather_rows(&idx[2])?.sub(&p0)?;
    let n = cross_t(&e1, &e2)?;
    let mut acc = n.scatter_rows(&idx[0], nv)?;
    acc = acc.add(&n.scatter_rows(&idx[1], nv)?)?;
    acc = acc.add(&n.scatter_rows(&idx[2], nv)?)?;
    normalize_t(&acc)
}

/// Cross product along the last axis of two `(.., 3)` tensors.
pub fn cross_t<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ax = a.dims() - 1;
    let c = |t: &Tensor<T>, i| t.narrow(ax, i, 1);
    let (a0, a1, a2) = (c(a, 0)?, c(a, 1)?, c(a, 2)?);
    let (b0, b1, b2) = (c(b, 0)?, c(b, 1)?, c(b, 2)?);
    let x = a1.mul(&b2)?.sub(&a2.mul(&b1)?)?;
    let y = a2.mul(&b0)?.sub(&a0.mul(&b2)?)?;
    let z = a0.mul(&b1)?.sub(&a1.mul(&b0)?)?;
    Ok(Tensor::concat(&[&x, &y, &z], ax)?)
}

/// Normalizes the last axis.
pub fn normalize_t<T: Real>(v: &Tensor<T>) -> Result<Tensor<T>> {
    let ax = v.dims() - 1;
    let len = v.square()?.sum_keepdim(&[ax])?.add_scalar(1e-20)?.sqrt()?;
    Ok(v.div(&len)?)
}

fn basis(n: [f64; 3]) -> [f64; SH_BANDS] {
    let [x, y, z] = n;
    [1.0, x, y, z, x * y, x * z, y * z, x * x - y * y, 3.0 * z * z - 1.0]
}

/// Unnormalized polynomial SH basis at a unit normal.
pub fn sh_basis(n: [f64; 3]) -> Result<[f64; SH_BANDS]> {
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if (len - 1.0).abs() > 1e-6 {
        return Err(FaceError::Invalid(format!("normal {n:?} has length {len}, expected 1")));
    }
    Ok(basis(n))
}

/// Tensor SH basis: `(.., 3) -> (.., 9)`.
pub fn sh_basis_t<T: Real>(n: &Tensor<T>) -> Result<Tensor<T>> {
    let ax = n.dims() - 1;
    let c = |i| n.narrow(ax, i, 1);
    let (x, y, z) = (c(0)?, c(1)?, c(2)?);
    let one = Tensor::ones(x.shape());
    let parts = [
        one,
        x.clone(),
        y.clone(),
        z.clone(),
        x.mul(&y)?,
        x.mul(&z)?,
        y.mul(&z)?,
        x.square()?.sub(&y.square()?)?,
        z.square()?.mul_scalar(3.0)?.add_scalar(-1.0)?,
    ];
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    Ok(Tensor::concat(&refs, ax)?)
}

/// Per-texel unit normals in the frame given by `rotation`, or `None` for
/// empty texels.
pub fn texel_normals(model: &FaceModel, shape: &[[f64; 3]], rotation: &Mat3) -> Result<Vec<Option<[f64; 3]>>> {
    let vn = vertex_normals(shape, &model.triangles)?;
    Ok(model
        .texel_tri
        .iter()
        .zip(&model.texel_bary)
        .map(|(t, w)| {
            let tri = model.triangles[(*t)?];
            let mut n = [0.0; 3];
            for k in 0..3 {
                for a in 0..3 {
                    n[a] += w[k] * vn[tri[k]][a];
                }
            }
            normalize(rotate(rotation, n))
        })
        .collect())
}

/// Shade map `max(h(n) . l_c, eps)` over the UV grid; normals are rotated
/// into the camera frame by `rotation` before shading. Empty texels hold 1.
pub fn shade_uv(model: &FaceModel, shape: &[[f64; 3]], lighting: &Lighting, rotation: &Mat3) -> Result<UvImage> {
    let normals = texel_normals(model, shape, rotation)?;
    let mut out = UvImage::new(UvKind::Shade, 3, model.uv_height, model.uv_width);
    for (i, n) in normals.iter().enumerate() {
        out.valid[i] = n.is_some();
        for c in 0..3 {
            out.data[c * model.num_texels() + i] = match n {
                Some(n) => {
                    let h = basis(*n);
                    h.iter().zip(lighting.channel(c)).map(|(a, b)| a * b).sum::<f64>().max(EPS_SHADE)
                }
                None => 1.0,
            };
        }
    }
    Ok(out)
}

/// Texel lookup tables shared by the tensor paths: the three corner vertex
/// indices and barycentric weights of every texel (zero weights for empty
/// texels) and a validity mask.
pub struct TexelTables<T: Real> {
    pub corner: [Rc<Vec<usize>>; 3],
    /// `(1, texels, 1)` weights per corner.
    pub weight: [Tensor<T>; 3],
    /// `(1, texels, 1)`, 1 for texels covered by a triangle.
    pub valid: Tensor<T>,
}

impl<T: Real> TexelTables<T> {
    pub fn new(model: &FaceModel) -> Result<Self> {
        let nt = model.num_texels();
        let mut corner = [Vec::with_capacity(nt), Vec::with_capacity(nt), Vec::with_capacity(nt)];
        let mut weight = [Vec::with_capacity(nt), Vec::with_capacity(nt), Vec::with_capacity(nt)];
        let mut valid = Vec::with_capacity(nt);
        for (t, w) in model.texel_tri.iter().zip(&model.texel_bary) {
            for k in 0..3 {
                corner[k].push(t.map_or(0, |t| model.triangles[t][k]));
                weight[k].push(if t.is_some() { w[k] } else { 0.0 });
            }
            valid.push(if t.is_some() { 1.0 } else { 0.0 });
        }
        let wt = |w: &[f64]| Tensor::from_f64(w, &[1, nt, 1]);
        Ok(TexelTables {
            corner: corner.map(Rc::new),
            weight: [wt(&weight[0])?, wt(&weight[1])?, wt(&weight[2])?],
            valid: wt(&valid)?,
        })
    }

    /// Barycentric interpolation of per-vertex values `(B, V, C)` onto the
    /// texel list, `(B, texels, C)`.
    pub fn interpolate(&self, values: &Tensor<T>) -> Result<Tensor<T>> {
        let mut acc = values.gather_rows(&self.corner[0])?.mul(&self.weight[0])?;
        for k in 1..3 {
            acc = acc.add(&values.gather_rows(&self.corner[k])?.mul(&self.weight[k])?)?;
        }
        Ok(acc)
    }
}

/// Differentiable shade map `(B, 3, H_uv, W_uv)` from `verts: (B, V, 3)`,
/// camera rotations `(B, 3, 3)` and lighting `(B, 27)`.
pub fn shade_uv_t<T: Real>(
    model: &FaceModel,
    tables: &TexelTables<T>,
    verts: &Tensor<T>,
    rotation: &Tensor<T>,
    lighting: &Tensor<T>,
) -> Result<Tensor<T>> {
    let b = verts.dim(0);
    let vn = vertex_normals_t(model, verts)?;
    let tn = normalize_t(&tables.interpolate(&vn)?.matmul(&rotation.transpose_last()?)?)?;
    let h = sh_basis_t(&tn)?;
    let l = lighting.reshape(&[b, 3, SH_BANDS])?.transpose_last()?;
    let shade = h.matmul(&l)?.clamp_min(EPS_SHADE)?;
    let inv = tables.valid.one_minus()?;
    let shade = shade.mul(&tables.valid)?.add(&inv)?;
    Ok(shade.transpose_last()?.reshape(&[b, 3, model.uv_height, model.uv_width])?)
}
