//! Self-synthesized training and evaluation faces with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FaceError, Result};
use crate::facemodel::{project_landmarks, FaceModel, Pose};
use crate::illumination::Lighting;
use crate::renderer::render;
use crate::store::Image;
use crate::uvops::{hflip_uv, UvImage, UvKind};

/// Shape/expression coefficients, pose and lighting of one face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceFactors {
    pub coeffs: Vec<f64>,
    pub pose: Pose,
    pub lighting: Lighting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub image_size: usize,
    /// Amplitude of the asymmetric albedo detail; 0 gives mirror-symmetric
    /// albedo.
    pub asym: f64,
    /// Standard deviation of the shape and expression coefficients.
    pub coeff_std: f64,
    pub max_yaw_deg: f64,
    pub max_tilt_deg: f64,
    pub scale_jitter: f64,
    pub shift: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            image_size: 112,
            asym: 1.0,
            coeff_std: 0.35,
            max_yaw_deg: 30.0,
            max_tilt_deg: 10.0,
            scale_jitter: 0.1,
            shift: 4.0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(FaceError::Invalid(format!("image size {} too small", self.image_size)));
        }
        let v = [self.asym, self.coeff_std, self.max_yaw_deg, self.max_tilt_deg, self.scale_jitter, self.shift];
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) || self.scale_jitter >= 1.0 {
            return Err(FaceError::Invalid(format!("bad data config {self:?}")));
        }
        Ok(())
    }
}

/// A rendered synthetic face with every factor that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticFace {
    pub factors: FaceFactors,
    pub albedo: UvImage,
    pub shape: Vec<[f64; 3]>,
    pub image: Image,
    pub coverage: Vec<bool>,
    pub landmarks: Vec<[f64; 2]>,
}

impl SyntheticFace {
    /// The same face seen in a horizontal mirror. Shape coefficients are
    /// unchanged because the bases are mirror-symmetric.
    pub fn mirrored(&self, model: &FaceModel) -> Result<SyntheticFace> {
        let n = self.image.width;
        let pose = self.factors.pose.mirrored(n);
        let cov: Vec<bool> = (0..self.coverage.len())
            .map(|k| {
                let (i, j) = (k / n, k % n);
                self.coverage[i * n + n - 1 - j]
            })
            .collect();
        Ok(SyntheticFace {
            factors: FaceFactors { coeffs: self.factors.coeffs.clone(), pose, lighting: self.factors.lighting.mirrored() },
            albedo: hflip_uv(&self.albedo)?,
            shape: self.shape.clone(),
            image: self.image.hflip(),
            coverage: cov,
            landmarks: project_landmarks(model, &self.shape, &pose),
        })
    }

    pub fn coverage_image(&self) -> Image {
        let data = self.coverage.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
        Image { channels: 1, height: self.image.height, width: self.image.width, data }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn random_coeffs(model: &FaceModel, std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..model.num_coeffs()).map(|_| (std * normal(rng)).clamp(-2.5 * std, 2.5 * std)).collect()
}

/// Mostly frontal, slightly tinted light from above.
pub fn random_lighting(rng: &mut ChaCha8Rng) -> Lighting {
    let mut l = Lighting::ambient(0.0);
    let level = rng.gen_range(0.65..0.8);
    let dir = [rng.gen_range(-0.12..0.12), rng.gen_range(-0.1..0.1)];
    for c in 0..3 {
        let k = c * 9;
        l.coeffs[k] = level * rng.gen_range(0.93..1.07);
        l.coeffs[k + 1] = dir[0] + rng.gen_range(-0.02..0.02);
        l.coeffs[k + 2] = dir[1] + rng.gen_range(-0.02..0.02);
        l.coeffs[k + 3] = rng.gen_range(-0.35..-0.2);
        for b in 4..9 {
            l.coeffs[k + b] = rng.gen_range(-0.03..0.03);
        }
    }
    l
}

pub fn random_pose(model: &FaceModel, cfg: &DataConfig, rng: &mut ChaCha8Rng) -> Pose {
    let base = Pose::canonical(model, cfg.image_size);
    let yaw = cfg.max_yaw_deg.to_radians();
    let tilt = cfg.max_tilt_deg.to_radians();
    let u = |rng: &mut ChaCha8Rng, a: f64| if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 };
    Pose {
        s: base.s * (1.0 + u(rng, cfg.scale_jitter)),
        yaw: u(rng, yaw),
        pitch: u(rng, tilt),
        roll: u(rng, tilt),
        t: [base.t[0] + u(rng, cfg.shift), base.t[1] + u(rng, cfg.shift)],
    }
}

fn gauss(dx: f64, dy: f64, sx: f64, sy: f64) -> f64 {
    (-(dx * dx / (2.0 * sx * sx) + dy * dy / (2.0 * sy * sy))).exp()
}

/// Mean UV position of a landmark range, folded onto the right half.
fn feature_uv(model: &FaceModel, range: std::ops::Range<usize>) -> [f64; 2] {
    let n = range.len() as f64;
    let c = (model.uv_width - 1) as f64 / 2.0;
    let mut p = [0.0; 2];
    for i in range {
        let uv = model.uv[model.landmarks[i]];
        p[0] += (uv[0] - c).abs() / n;
        p[1] += uv[1] / n;
    }
    p
}

/// Procedural albedo in `[0.03, 0.97]`: a mirror-symmetric skin base with
/// eyes, brows, lips and cheeks at the landmark positions, plus asymmetric
/// blemishes scaled by `asym`.
pub fn random_albedo(model: &FaceModel, asym: f64, rng: &mut ChaCha8Rng) -> UvImage {
    let (h, w) = (model.uv_height, model.uv_width);
    let c = (w - 1) as f64 / 2.0;
    let tone = rng.gen_range(0.75..1.15);
    let skin = [0.78 * tone, 0.58 * tone * rng.gen_range(0.92..1.05), 0.46 * tone * rng.gen_range(0.9..1.08)];
    let waves: Vec<[f64; 3]> =
        (0..3).map(|_| [rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(1.0..3.0), rng.gen_range(0.02..0.05)]).collect();
    let jit = |rng: &mut ChaCha8Rng| [rng.gen_range(-0.7..0.7), rng.gen_range(-0.5..0.5)];
    let (je, jb, jm) = (jit(rng), jit(rng), jit(rng));
    let eye = feature_uv(model, 36..42);
    let eye = [eye[0] + je[0], eye[1] + je[1]];
    let brow = feature_uv(model, 17..22);
    let brow = [brow[0] + jb[0], brow[1] + jb[1]];
    let mouth = feature_uv(model, 48..60);
    let mouth = [0.0, mouth[1] + jm[1]];
    let iris = [rng.gen_range(0.1..0.35), rng.gen_range(0.08..0.25), rng.gen_range(0.05..0.2)];
    let hair = rng.gen_range(0.15..0.45);
    let lip = [rng.gen_range(0.6..0.8), rng.gen_range(0.25..0.4), rng.gen_range(0.28..0.42)];
    let eye_size = [rng.gen_range(1.8..2.6), rng.gen_range(0.9..1.3)];
    let mouth_w = rng.gen_range(3.5..5.5);
    let blush = rng.gen_range(0.0..0.08);
    let blobs: Vec<[f64; 6]> = (0..4)
        .map(|_| {
            [
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(0.8..2.5),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
            ]
        })
        .collect();
    let tilt = rng.gen_range(-0.06..0.06);

    let mut a = UvImage::for_model(UvKind::Albedo, 3, model);
    for r in 0..h {
        for col in 0..w {
            let (x, y) = ((col as f64 - c).abs(), r as f64);
            let xn = x / c;
            let yn = y / (h - 1) as f64;
            let mut v = skin;
            let shade = waves.iter().map(|p| p[2] * (p[1] * (xn + yn) + p[0]).sin()).sum::<f64>();
            for ch in 0..3 {
                v[ch] *= 1.0 + shade - 0.1 * xn * xn;
            }
            let g_eye = gauss(x - eye[0], y - eye[1], eye_size[0], eye_size[1]);
            let g_pupil = gauss(x - eye[0], y - eye[1], 0.8, 0.8);
            let g_brow = gauss(x - brow[0], y - brow[1], 3.5, 0.8);
            let g_lip = gauss(x - mouth[0], y - mouth[1], mouth_w, 1.2);
            let g_cheek = gauss(x - eye[0], y - eye[1] - 7.0, 3.0, 2.5);
            for ch in 0..3 {
                v[ch] = v[ch] * (1.0 - 0.55 * g_eye) + 0.55 * g_eye * (0.88 - 0.03 * ch as f64);
                v[ch] = v[ch] * (1.0 - 0.9 * g_pupil) + 0.9 * g_pupil * iris[ch];
                v[ch] = v[ch] * (1.0 - 0.7 * g_brow) + 0.7 * g_brow * hair * (1.0 - 0.15 * ch as f64);
                v[ch] = v[ch] * (1.0 - 0.8 * g_lip) + 0.8 * g_lip * lip[ch];
            }
            v[0] += blush * g_cheek;
            v[1] -= 0.5 * blush * g_cheek;
            if asym > 0.0 {
                let xs = col as f64;
                for b in &blobs {
                    let g = gauss(xs - b[0], y - b[1], b[2], b[2]);
                    v[0] += asym * g * (b[3] + b[4]);
                    v[1] += asym * g * b[3];
                    v[2] += asym * g * (b[3] + b[5]);
                }
                let side = (xs - c) / c;
                for ch in 0..3 {
                    v[ch] *= 1.0 + asym * tilt * side;
                }
            }
            for (ch, val) in v.iter().enumerate() {
                a.set(ch, r, col, val.clamp(0.03, 0.97));
            }
        }
    }
    a
}

/// Renders a face from explicit factors and albedo.
pub fn synthesize(model: &FaceModel, factors: FaceFactors, albedo: UvImage, size: usize) -> Result<SyntheticFace> {
    let shape = model.assemble_shape(&factors.coeffs)?;
    let r = render(model, &shape, &albedo, &factors.pose, &factors.lighting, size)?;
    let landmarks = project_landmarks(model, &shape, &factors.pose);
    Ok(SyntheticFace { coverage: r.raster.coverage(), image: r.image, factors, albedo, shape, landmarks })
}

/// Face `index` of the dataset seeded by `seed`; each face has its own
/// random stream so faces can be generated in any order.
pub fn sample_face(model: &FaceModel, cfg: &DataConfig, seed: u64, index: u64) -> Result<SyntheticFace> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let coeffs = random_coeffs(model, cfg.coeff_std, &mut rng);
    let pose = random_pose(model, cfg, &mut rng);
    let lighting = random_lighting(&mut rng);
    let albedo = random_albedo(model, cfg.asym, &mut rng);
    synthesize(model, FaceFactors { coeffs, pose, lighting }, albedo, cfg.image_size)
}

pub fn generate_dataset(model: &FaceModel, cfg: &DataConfig, n: usize, seed: u64) -> Result<Vec<SyntheticFace>> {
    (0..n as u64).map(|i| sample_face(model, cfg, seed, i)).collect()
}
