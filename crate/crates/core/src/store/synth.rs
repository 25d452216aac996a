//! Deterministic generator of a synthetic parametric face model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FaceError, Result};
use crate::facemodel::{FaceModel, NUM_LANDMARKS};
use crate::store::container::{Container, Entry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticModelSpec {
    pub vertex_count: usize,
    pub d_shape: usize,
    pub d_expr: usize,
    pub uv_height: usize,
    pub uv_width: usize,
    pub seed: u64,
}

impl Default for SyntheticModelSpec {
    fn default() -> Self {
        SyntheticModelSpec { vertex_count: 2562, d_shape: 16, d_expr: 8, uv_height: 48, uv_width: 64, seed: 7 }
    }
}

// Half-angles of the lattice on the ellipsoid and the ellipsoid radii.
const PHI_MAX: f64 = 1.35;
const THETA_MAX: f64 = 1.2;
const RADII: [f64; 3] = [0.8, 1.05, 0.75];
// Largest allowed distance between a landmark and its vertex.
const LANDMARK_RADIUS: f64 = 0.08;

fn gauss2(x: f64, y: f64, cx: f64, cy: f64, sx: f64, sy: f64) -> f64 {
    (-((x - cx).powi(2) / (2.0 * sx * sx) + (y - cy).powi(2) / (2.0 * sy * sy))).exp()
}

/// Depth offset of the facial relief at `(x, y)`; negative values protrude
/// towards the viewer. Even in `x`.
fn relief(x: f64, y: f64) -> f64 {
    let ax = x.abs();
    -0.26 * gauss2(x, y, 0.0, 0.05, 0.09, 0.2) - 0.1 * gauss2(x, y, 0.0, 0.22, 0.07, 0.07)
        + 0.09 * gauss2(ax, y, 0.33, -0.18, 0.12, 0.1)
        - 0.05 * gauss2(x, y, 0.0, -0.35, 0.4, 0.06)
        - 0.05 * gauss2(x, y, 0.0, 0.5, 0.2, 0.06)
        - 0.05 * gauss2(x, y, 0.0, 0.82, 0.22, 0.1)
}

fn lattice_dims(spec: &SyntheticModelSpec) -> (usize, usize) {
    let aspect = (spec.uv_width - 1) as f64 / (spec.uv_height - 1) as f64;
    let rows = ((spec.vertex_count as f64 / aspect).sqrt().round() as usize).max(2);
    let mut cols = (((rows - 1) as f64 * aspect).round() as usize + 1).max(3);
    if cols.is_multiple_of(2) {
        cols += 1;
    }
    (rows, cols)
}

/// Separable Gaussian blur of a `rows x cols` field with clamped borders.
fn blur(f: &[f64], rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let ks: f64 = k.iter().sum();
    let mut tmp = vec![0.0; f.len()];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (o, w) in (-r..=r).zip(&k) {
                let jj = (j as isize + o).clamp(0, cols as isize - 1) as usize;
                acc += w * f[i * cols + jj];
            }
            tmp[i * cols + j] = acc / ks;
        }
    }
    let mut out = vec![0.0; f.len()];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (o, w) in (-r..=r).zip(&k) {
                let ii = (i as isize + o).clamp(0, rows as isize - 1) as usize;
                acc += w * tmp[ii * cols + j];
            }
            out[i * cols + j] = acc / ks;
        }
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Landmark template in unit face coordinates (x right, y down), in the
/// usual 68-point order: jaw, brows, nose bridge, nostrils, eyes, mouth.
fn landmark_template() -> Vec<[f64; 2]> {
    use std::f64::consts::PI;
    let mut t = Vec::with_capacity(NUM_LANDMARKS);
    for k in 0..17 {
        let a = PI * k as f64 / 16.0;
        t.push([-0.88 * a.cos(), -0.2 + 1.1 * a.sin()]);
    }
    for side in [-1.0, 1.0] {
        for k in 0..5 {
            let f = k as f64 / 4.0;
            let x = if side < 0.0 { -0.7 + 0.55 * f } else { 0.15 + 0.55 * f };
            t.push([x, -0.45 - 0.08 * (PI * f).sin()]);
        }
    }
    for k in 0..4 {
        t.push([0.0, -0.3 + 0.13 * k as f64]);
    }
    for k in 0..5 {
        let x = -0.18 + 0.09 * k as f64;
        t.push([x, 0.2 + 0.03 * (1.0 - (x / 0.18).abs())]);
    }
    for cx in [-0.4, 0.4] {
        for k in 0..6 {
            let a = PI * k as f64 / 3.0;
            t.push([cx - 0.15 * a.cos(), -0.22 - 0.06 * a.sin()]);
        }
    }
    for k in 0..12 {
        let a = PI * k as f64 / 6.0;
        t.push([-0.35 * a.cos(), 0.5 - 0.13 * a.sin()]);
    }
    for k in 0..8 {
        let a = PI * k as f64 / 4.0;
        t.push([-0.22 * a.cos(), 0.5 - 0.05 * a.sin()]);
    }
    t
}

/// Builds the synthetic face model: a lattice on the front half of an
/// ellipsoid with facial relief, mirror-symmetric bases, a UV layout
/// aligned with the lattice and 68 landmarks.
pub fn generate_synthetic_model(spec: &SyntheticModelSpec) -> Result<FaceModel> {
    if spec.d_shape < 1 {
        return Err(FaceError::Invalid("d_shape must be at least 1".into()));
    }
    if !spec.uv_height.is_multiple_of(2) || !spec.uv_width.is_multiple_of(2) || spec.uv_height < 4 || spec.uv_width < 4 {
        return Err(FaceError::Invalid(format!(
            "UV resolution {}x{} must be even and at least 4",
            spec.uv_height, spec.uv_width
        )));
    }
    let (rows, cols) = lattice_dims(spec);
    if rows < 9 || cols < 9 {
        return Err(FaceError::Invalid(format!(
            "vertex_count {} too small to place {NUM_LANDMARKS} landmarks",
            spec.vertex_count
        )));
    }
    let nv = rows * cols;
    let half = (cols - 1) / 2;
    let mirror_vertex: Vec<usize> = (0..nv).map(|v| (v / cols) * cols + (cols - 1 - v % cols)).collect();

    let mut mean = vec![[0.0; 3]; nv];
    for i in 0..rows {
        let theta = (2.0 * i as f64 - (rows - 1) as f64) / (rows - 1) as f64 * THETA_MAX;
        for j in 0..=half {
            let phi = (2.0 * j as f64 - (cols - 1) as f64) / (cols - 1) as f64 * PHI_MAX;
            let x = RADII[0] * phi.sin() * theta.cos();
            let y = RADII[1] * theta.sin();
            let z = -RADII[2] * phi.cos() * theta.cos() + relief(x, y);
            let x = if j == half { 0.0 } else { x };
            mean[i * cols + j] = [x, y, z];
            mean[i * cols + cols - 1 - j] = [-x, y, z];
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut make_basis = |count: usize, expr: bool| -> Vec<f64> {
        let mut out = Vec::with_capacity(count * 3 * nv);
        for k in 0..count {
            let mut comps = Vec::new();
            for _ in 0..3 {
                let raw: Vec<f64> = (0..nv).map(|_| normal(&mut rng)).collect();
                comps.push(blur(&raw, rows, cols, if expr { 3.0 } else { 4.0 + (k % 3) as f64 }));
            }
            let mut d = vec![0.0; 3 * nv];
            for v in 0..nv {
                let m = mirror_vertex[v];
                let window = if expr {
                    let [x, y, _] = mean[v];
                    gauss2(x, y, 0.0, 0.5, 0.35, 0.2) + 0.6 * gauss2(x.abs(), y, 0.35, -0.25, 0.2, 0.15)
                } else {
                    1.0
                };
                d[3 * v] = 0.5 * (comps[0][v] - comps[0][m]) * window;
                d[3 * v + 1] = 0.5 * (comps[1][v] + comps[1][m]) * window;
                d[3 * v + 2] = 0.5 * (comps[2][v] + comps[2][m]) * window;
                if v % cols == half {
                    d[3 * v] = 0.0;
                }
            }
            let rms = (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt().max(1e-12);
            let target = if expr { 0.02 } else { 0.04 / (1.0 + 0.15 * k as f64) };
            out.extend(d.iter().map(|x| x / rms * target));
        }
        out
    };
    let shape_basis = make_basis(spec.d_shape, false);
    let expr_basis = make_basis(spec.d_expr, true);

    let (hu, wu) = (spec.uv_height, spec.uv_width);
    let sx = (wu - 1) as f64 / (cols - 1) as f64;
    let sy = (hu - 1) as f64 / (rows - 1) as f64;
    let uv: Vec<[f64; 2]> = (0..nv).map(|v| [(v % cols) as f64 * sx, (v / cols) as f64 * sy]).collect();

    // two triangles per lattice cell; the diagonal is mirrored across the
    // centre column so that the triangulation is symmetric
    let mut triangles = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            let v00 = i * cols + j;
            let (v01, v10, v11) = (v00 + 1, v00 + cols, v00 + cols + 1);
            if j < half {
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            } else {
                triangles.push([v00, v10, v01]);
                triangles.push([v01, v10, v11]);
            }
        }
    }

    let mut texel_tri = Vec::with_capacity(hu * wu);
    let mut texel_bary = Vec::with_capacity(hu * wu);
    for r in 0..hu {
        let gy = r as f64 / sy;
        let i = (gy.floor() as usize).min(rows - 2);
        let fy = gy - i as f64;
        for c in 0..wu {
            let gx = c as f64 / sx;
            let j = (gx.floor() as usize).min(cols - 2);
            let fx = gx - j as f64;
            let base = 2 * (i * (cols - 1) + j);
            let (t, w) = if j < half {
                if fy >= fx {
                    (base, [1.0 - fy, fy - fx, fx])
                } else {
                    (base + 1, [1.0 - fx, fy, fx - fy])
                }
            } else if fx + fy < 1.0 {
                (base, [1.0 - fx - fy, fy, fx])
            } else {
                (base + 1, [1.0 - fy, 1.0 - fx, fx + fy - 1.0])
            };
            let w = w.map(|x: f64| x.max(0.0));
            let s: f64 = w.iter().sum();
            texel_tri.push(Some(t));
            texel_bary.push(w.map(|x| x / s));
        }
    }

    let template = landmark_template();
    let mut landmarks: Vec<usize> = Vec::with_capacity(NUM_LANDMARKS);
    for p in &template {
        let tx = 0.6 * p[0] + 0.01 * normal(&mut rng);
        let ty = 0.75 * p[1] + 0.01 * normal(&mut rng);
        let d2 = |v: usize| (mean[v][0] - tx).powi(2) + (mean[v][1] - ty).powi(2);
        let best = (0..nv)
            .filter(|v| !landmarks.contains(v))
            .min_by(|&a, &b| d2(a).total_cmp(&d2(b)).then(a.cmp(&b)))
            .filter(|&v| d2(v) <= LANDMARK_RADIUS * LANDMARK_RADIUS)
            .ok_or_else(|| {
                FaceError::Invalid(format!("vertex_count {} too small to place {NUM_LANDMARKS} landmarks", spec.vertex_count))
            })?;
        landmarks.push(best);
    }

    Ok(FaceModel {
        mean_shape: mean,
        shape_basis,
        expr_basis,
        d_shape: spec.d_shape,
        d_expr: spec.d_expr,
        triangles,
        uv,
        uv_height: hu,
        uv_width: wu,
        texel_tri,
        texel_bary,
        landmarks,
        mirror_vertex,
    })
}

fn usize_entry(name: &str, shape: &[usize], v: impl Iterator<Item = usize>) -> Result<Entry> {
    Entry::from_i64(name, shape, &v.map(|x| x as i64).collect::<Vec<_>>())
}

impl FaceModel {
    pub fn to_container(&self) -> Result<Container> {
        let nv = self.num_vertices();
        let mut c = Container::new();
        c.push(Entry::from_f64("mean_shape", &[nv, 3], &self.mean_shape.concat())?)?;
        c.push(Entry::from_f64("shape_basis", &[self.d_shape, 3 * nv], &self.shape_basis)?)?;
        c.push(Entry::from_f64("expr_basis", &[self.d_expr, 3 * nv], &self.expr_basis)?)?;
        c.push(usize_entry("triangles", &[self.triangles.len(), 3], self.triangles.iter().flatten().copied())?)?;
        c.push(Entry::from_f64("uv", &[nv, 2], &self.uv.concat())?)?;
        let tt: Vec<i64> = self.texel_tri.iter().map(|t| t.map_or(-1, |v| v as i64)).collect();
        c.push(Entry::from_i64("texel_tri", &[self.uv_height, self.uv_width], &tt)?)?;
        c.push(Entry::from_f64("texel_bary", &[self.uv_height, self.uv_width, 3], &self.texel_bary.concat())?)?;
        c.push(usize_entry("landmarks", &[self.landmarks.len()], self.landmarks.iter().copied())?)?;
        c.push(usize_entry("mirror_vertex", &[nv], self.mirror_vertex.iter().copied())?)?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<FaceModel> {
        let f = |n: &str| -> Result<(Vec<usize>, Vec<f64>)> {
            let e = c.require(n)?;
            Ok((e.shape.clone(), e.to_f64()))
        };
        let idx = |n: &str| -> Result<Vec<usize>> {
            let e = c.require(n)?;
            e.to_i64()?
                .into_iter()
                .map(|v| usize::try_from(v).map_err(|_| FaceError::Container(format!("negative index in {n}"))))
                .collect()
        };
        let (ms, mean) = f("mean_shape")?;
        let nv = ms[0];
        let (ss, shape_basis) = f("shape_basis")?;
        let (es, expr_basis) = f("expr_basis")?;
        let tris = idx("triangles")?;
        let (_, uv) = f("uv")?;
        let tt = c.require("texel_tri")?;
        let (hu, wu) = (tt.shape[0], tt.shape[1]);
        let texel_tri = tt.to_i64()?.into_iter().map(|v| usize::try_from(v).ok()).collect();
        let (_, bary) = f("texel_bary")?;
        let model = FaceModel {
            mean_shape: mean.chunks(3).map(|p| [p[0], p[1], p[2]]).collect(),
            shape_basis,
            expr_basis,
            d_shape: ss[0],
            d_expr: es[0],
            triangles: tris.chunks(3).map(|t| [t[0], t[1], t[2]]).collect(),
            uv: uv.chunks(2).map(|p| [p[0], p[1]]).collect(),
            uv_height: hu,
            uv_width: wu,
            texel_tri,
            texel_bary: bary.chunks(3).map(|p| [p[0], p[1], p[2]]).collect(),
            landmarks: idx("landmarks")?,
            mirror_vertex: idx("mirror_vertex")?,
        };
        if model.triangles.iter().flatten().any(|&v| v >= nv) || model.landmarks.iter().any(|&v| v >= nv) {
            return Err(FaceError::Container("vertex index out of range".into()));
        }
        Ok(model)
    }
}
