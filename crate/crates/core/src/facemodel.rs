//! Parametric face geometry: shape assembly, pose, weak-perspective camera
//! and landmark projection.
//!
//! Coordinates: model and camera frames have x to the right, y down and z
//! pointing away from the viewer, so smaller camera-space z is closer.
//! Image coordinates are continuous pixels with pixel `(i, j)` centred at
//! `(j + 0.5, i + 0.5)`.

use std::f64::consts::FRAC_PI_2;
use std::rc::Rc;

use diffcore::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{FaceError, Result};

pub const NUM_LANDMARKS: usize = 68;

#[derive(Debug, Clone, PartialEq)]
pub struct FaceModel {
    /// Mean vertex positions, `V x 3`.
    pub mean_shape: Vec<[f64; 3]>,
    /// Shape basis, `d_shape` rows of `3V` displacements (x, y, z per vertex).
    pub shape_basis: Vec<f64>,
    /// Expression basis, `d_expr` rows of `3V`.
    pub expr_basis: Vec<f64>,
    pub d_shape: usize,
    pub d_expr: usize,
    pub triangles: Vec<[usize; 3]>,
    /// Per-vertex UV position in texel index units: `(column, row)`.
    pub uv: Vec<[f64; 2]>,
    pub uv_height: usize,
    pub uv_width: usize,
    /// Triangle covering each texel (row-major), `None` for empty texels.
    pub texel_tri: Vec<Option<usize>>,
    pub texel_bary: Vec<[f64; 3]>,
    pub landmarks: Vec<usize>,
    /// Index of each vertex's mirror image across the x = 0 plane.
    pub mirror_vertex: Vec<usize>,
}

impl FaceModel {
    pub fn num_vertices(&self) -> usize {
        self.mean_shape.len()
    }

    pub fn num_coeffs(&self) -> usize {
        self.d_shape + self.d_expr
    }

    pub fn num_texels(&self) -> usize {
        self.uv_height * self.uv_width
    }

    /// Basis row `k` over shape then expression components.
    pub fn basis_row(&self, k: usize) -> &[f64] {
        let n = 3 * self.num_vertices();
        if k < self.d_shape {
            &self.shape_basis[k * n..(k + 1) * n]
        } else {
            let k = k - self.d_shape;
            &self.expr_basis[k * n..(k + 1) * n]
        }
    }

    /// `mean + sum_k coeffs[k] * basis_k`.
    pub fn assemble_shape(&self, coeffs: &[f64]) -> Result<Vec<[f64; 3]>> {
        if coeffs.len() != self.num_coeffs() {
            return Err(FaceError::Dimension(format!(
                "{} coefficients for a model with {} shape + {} expression bases",
                coeffs.len(),
                self.d_shape,
                self.d_expr
            )));
        }
        let mut out = self.mean_shape.clone();
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let row = self.basis_row(k);
            for (v, p) in out.iter_mut().enumerate() {
                for a in 0..3 {
                    p[a] += c * row[3 * v + a];
                }
            }
        }
        Ok(out)
    }

    /// Vertical extent of the mean shape.
    pub fn height(&self) -> f64 {
        let (lo, hi) = self.mean_shape.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])));
        hi - lo
    }

    /// Reference scale placing the mean face over 80% of an image of side
    /// `image_size` when the raw scale output is zero.
    pub fn s_ref(&self, image_size: usize) -> f64 {
        0.8 * image_size as f64 / self.height()
    }

    /// Shape bases stacked as a `(d_shape + d_expr, 3V)` matrix.
    pub fn basis_tensor<T: Real>(&self) -> Tensor<T> {
        let mut v = Vec::with_capacity(self.shape_basis.len() + self.expr_basis.len());
        v.extend(self.shape_basis.iter().chain(&self.expr_basis).map(|&x| T::of(x)));
        Tensor::from_vec(v, &[self.num_coeffs(), 3 * self.num_vertices()]).expect("basis layout")
    }

    pub fn mean_tensor<T: Real>(&self) -> Tensor<T> {
        let v = self.mean_shape.iter().flat_map(|p| p.iter().map(|&x| T::of(x))).collect();
        Tensor::from_vec(v, &[1, self.num_vertices(), 3]).expect("mean layout")
    }

    /// Differentiable shape assembly: `coeffs (B, K) -> vertices (B, V, 3)`.
    pub fn assemble_shape_t<T: Real>(&self, coeffs: &Tensor<T>) -> Result<Tensor<T>> {
        let b = coeffs.dim(0);
        let d = coeffs.matmul(&self.basis_tensor())?.reshape(&[b, self.num_vertices(), 3])?;
        Ok(d.add(&self.mean_tensor())?)
    }

    pub fn landmark_index(&self) -> Rc<Vec<usize>> {
        Rc::new(self.landmarks.clone())
    }
}

/// Scale, rotation (yaw, roll, pitch in radians) and 2-D translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub s: f64,
    pub yaw: f64,
    pub roll: f64,
    pub pitch: f64,
    pub t: [f64; 2],
}

pub type Mat3 = [[f64; 3]; 3];

impl Pose {
    pub fn identity() -> Self {
        Pose { s: 1.0, yaw: 0.0, roll: 0.0, pitch: 0.0, t: [0.0, 0.0] }
    }

    /// Frontal pose at reference scale, centred in a square image.
    pub fn canonical(model: &FaceModel, image_size: usize) -> Self {
        let c = image_size as f64 / 2.0;
        Pose { s: model.s_ref(image_size), yaw: 0.0, roll: 0.0, pitch: 0.0, t: [c, c] }
    }

    /// `R = Rz(roll) Rx(pitch) Ry(yaw)`: yaw is applied first, roll last.
    pub fn rotation(&self) -> Mat3 {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sr, cr) = self.roll.sin_cos();
        [
            [cr * cy - sr * sp * sy, -sr * cp, cr * sy + sr * sp * cy],
            [sr * cy + cr * sp * sy, cr * cp, sr * sy - cr * sp * cy],
            [-cp * sy, sp, cp * cy],
        ]
    }

    /// Unit quaternion `(w, x, y, z)` of [`Pose::rotation`] in canonical form
    /// (`w >= 0`; if `w == 0` the first non-zero component is positive).
    pub fn quaternion(&self) -> [f64; 4] {
        let (sy, cy) = (self.yaw / 2.0).sin_cos();
        let (sp, cp) = (self.pitch / 2.0).sin_cos();
        let (sr, cr) = (self.roll / 2.0).sin_cos();
        canonical_quat([
            cr * cp * cy - sr * sp * sy,
            cr * sp * cy - sr * cp * sy,
            cr * cp * sy + sr * sp * cy,
            cr * sp * sy + sr * cp * cy,
        ])
    }

    /// 2x4 weak-perspective matrix `[s P R | t]`.
    pub fn camera_matrix(&self) -> [[f64; 4]; 2] {
        let r = self.rotation();
        let mut m = [[0.0; 4]; 2];
        for i in 0..2 {
            for j in 0..3 {
                m[i][j] = self.s * r[i][j];
            }
            m[i][3] = self.t[i];
        }
        m
    }

    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        let m = self.camera_matrix();
        [m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3], m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3]]
    }

    /// Raw network encoding: inverse of [`decode_pose`].
    pub fn to_raw(&self, s_ref: f64, image_size: usize) -> [f64; 6] {
        let n = image_size as f64;
        [
            2.0 * (self.s / s_ref - 1.0),
            self.yaw / FRAC_PI_2,
            self.roll / FRAC_PI_2,
            self.pitch / FRAC_PI_2,
            self.t[0] / n,
            self.t[1] / n,
        ]
    }

    /// Pose of the horizontally mirrored image of a face posed by `self`.
    pub fn mirrored(&self, image_size: usize) -> Pose {
        Pose { yaw: -self.yaw, roll: -self.roll, t: [image_size as f64 - self.t[0], self.t[1]], ..*self }
    }
}

pub fn canonical_quat(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut q = q.map(|v| v / n);
    let lead = q.iter().copied().find(|v| *v != 0.0).unwrap_or(1.0);
    if q[0] < 0.0 || (q[0] == 0.0 && lead < 0.0) {
        q = q.map(|v| -v);
    }
    q
}

/// Decodes six tanh outputs: scale `s_ref (1 + raw0 / 2)`, angles
/// `(yaw, roll, pitch) = pi/2 raw[1..4]`, translation `image_size raw[4..6]`.
pub fn decode_pose(raw: &[f64; 6], s_ref: f64, image_size: usize) -> Pose {
    let n = image_size as f64;
    Pose {
        s: s_ref * (1.0 + 0.5 * raw[0]),
        yaw: FRAC_PI_2 * raw[1],
        roll: FRAC_PI_2 * raw[2],
        pitch: FRAC_PI_2 * raw[3],
        t: [n * raw[4], n * raw[5]],
    }
}

pub fn rotate(r: &Mat3, p: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
        r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
        r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
    ]
}

pub fn project_landmarks(model: &FaceModel, shape: &[[f64; 3]], pose: &Pose) -> Vec<[f64; 2]> {
    model.landmarks.iter().map(|&i| pose.project(shape[i])).collect()
}

/// Differentiable pose: per-sample scale `(B, 1)`, rotation `(B, 3, 3)`,
/// translation `(B, 2)`.
#[derive(Clone)]
pub struct PoseT<T: Real> {
    pub s: Tensor<T>,
    pub r: Tensor<T>,
    pub t: Tensor<T>,
    /// `(yaw, roll, pitch)`, `(B, 3)`.
    pub angles: Tensor<T>,
}

impl<T: Real> PoseT<T> {
    /// Tensor form of [`decode_pose`] for `raw: (B, 6)`.
    pub fn decode(raw: &Tensor<T>, s_ref: f64, image_size: usize) -> Result<Self> {
        let s = raw.narrow(1, 0, 1)?.mul_scalar(0.5 * s_ref)?.add_scalar(s_ref)?;
        let angles = raw.narrow(1, 1, 3)?.mul_scalar(FRAC_PI_2)?;
        let t = raw.narrow(1, 4, 2)?.mul_scalar(image_size as f64)?;
        let r = rotation_t(&angles)?;
        Ok(PoseT { s, r, t, angles })
    }

    pub fn from_poses(poses: &[Pose]) -> Result<Self> {
        let b = poses.len();
        let s = Tensor::from_f64(&poses.iter().map(|p| p.s).collect::<Vec<_>>(), &[b, 1])?;
        let a: Vec<f64> = poses.iter().flat_map(|p| [p.yaw, p.roll, p.pitch]).collect();
        let angles = Tensor::from_f64(&a, &[b, 3])?;
        let t = Tensor::from_f64(&poses.iter().flat_map(|p| p.t).collect::<Vec<_>>(), &[b, 2])?;
        let r = rotation_t(&angles)?;
        Ok(PoseT { s, r, t, angles })
    }

    pub fn batch(&self) -> usize {
        self.s.dim(0)
    }

    /// Plain pose of sample `i`.
    pub fn pose(&self, i: usize) -> Pose {
        let a = self.angles.data();
        Pose {
            s: self.s.data()[i].f64(),
            yaw: a[3 * i].f64(),
            roll: a[3 * i + 1].f64(),
            pitch: a[3 * i + 2].f64(),
            t: [self.t.data()[2 * i].f64(), self.t.data()[2 * i + 1].f64()],
        }
    }

    /// Camera-frame vertices `X R^T`, `(B, V, 3)`.
    pub fn rotate(&self, verts: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(verts.matmul(&self.r.transpose_last()?)?)
    }

    /// Image-plane projection `s (X R^T)_xy + t`, `(B, V, 2)`.
    pub fn project(&self, verts: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.batch();
        let cam = self.rotate(verts)?;
        let xy = cam.narrow(2, 0, 2)?;
        Ok(xy.mul(&self.s.reshape(&[b, 1, 1])?)?.add(&self.t.reshape(&[b, 1, 2])?)?)
    }

    /// Quaternions `(B, 4)` of the rotations, signs canonicalized per
    /// sample (the sign choice is treated as a constant).
    pub fn quaternion(&self) -> Result<Tensor<T>> {
        let half = self.angles.mul_scalar(0.5)?;
        let (s, c) = (half.sin()?, half.cos()?);
        let col = |t: &Tensor<T>, i| t.narrow(1, i, 1);
        let (sy, sr, sp) = (col(&s, 0)?, col(&s, 1)?, col(&s, 2)?);
        let (cy, cr, cp) = (col(&c, 0)?, col(&c, 1)?, col(&c, 2)?);
        let m3 = |a: &Tensor<T>, b: &Tensor<T>, c: &Tensor<T>| -> diffcore::Result<Tensor<T>> { a.mul(b)?.mul(c) };
        let w = m3(&cr, &cp, &cy)?.sub(&m3(&sr, &sp, &sy)?)?;
        let x = m3(&cr, &sp, &cy)?.sub(&m3(&sr, &cp, &sy)?)?;
        let y = m3(&cr, &cp, &sy)?.add(&m3(&sr, &sp, &cy)?)?;
        let z = m3(&cr, &sp, &sy)?.add(&m3(&sr, &cp, &cy)?)?;
        let q = Tensor::concat(&[&w, &x, &y, &z], 1)?;
        let b = self.batch();
        let mut sign = Vec::with_capacity(b);
        for i in 0..b {
            let row: Vec<f64> = q.data()[4 * i..4 * i + 4].iter().map(|v| v.f64()).collect();
            let c = canonical_quat([row[0], row[1], row[2], row[3]]);
            let same = row.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() >= 0.0;
            sign.push(if same { 1.0 } else { -1.0 });
        }
        Ok(q.mul(&Tensor::from_f64(&sign, &[b, 1])?)?)
    }
}

/// Rotation matrices `(B, 3, 3)` from `(yaw, roll, pitch)` angles `(B, 3)`,
/// built from differentiable elementwise ops.
pub fn rotation_t<T: Real>(angles: &Tensor<T>) -> Result<Tensor<T>> {
    let b = angles.dim(0);
    let (s, c) = (angles.sin()?, angles.cos()?);
    let col = |t: &Tensor<T>, i| t.narrow(1, i, 1);
    let (sy, sr, sp) = (col(&s, 0)?, col(&s, 1)?, col(&s, 2)?);
    let (cy, cr, cp) = (col(&c, 0)?, col(&c, 1)?, col(&c, 2)?);
    let e00 = cr.mul(&cy)?.sub(&sr.mul(&sp)?.mul(&sy)?)?;
    let e01 = sr.mul(&cp)?.neg()?;
    let e02 = cr.mul(&sy)?.add(&sr.mul(&sp)?.mul(&cy)?)?;
    let e10 = sr.mul(&cy)?.add(&cr.mul(&sp)?.mul(&sy)?)?;
    let e11 = cr.mul(&cp)?;
    let e12 = sr.mul(&sy)?.sub(&cr.mul(&sp)?.mul(&cy)?)?;
    let e20 = cp.mul(&sy)?.neg()?;
    let e21 = sp;
    let e22 = cp.mul(&cy)?;
    let m = Tensor::concat(&[&e00, &e01, &e02, &e10, &e11, &e12, &e20, &e21, &e22], 1)?;
    Ok(m.reshape(&[b, 3, 3])?)
}
