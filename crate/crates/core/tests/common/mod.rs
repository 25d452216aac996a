#![allow(dead_code)]

use std::sync::OnceLock;

use diffcore::gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
use diffcore::Tensor;
use facefill::facemodel::{FaceModel, Pose};
use facefill::illumination::Lighting;
use facefill::store::{generate_synthetic_model, SyntheticModelSpec};
use facefill::uvops::{UvImage, UvKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn model() -> &'static FaceModel {
    static M: OnceLock<FaceModel> = OnceLock::new();
    M.get_or_init(|| generate_synthetic_model(&SyntheticModelSpec::default()).unwrap())
}

pub fn mean_shape() -> Vec<[f64; 3]> {
    model().mean_shape.clone()
}

pub fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.gen_range(lo..hi)).collect(), shape).unwrap()
}

/// Smooth albedo in `[0.2, 0.9]` built from a few low-frequency waves.
pub fn smooth_albedo(model: &FaceModel, rng: &mut ChaCha8Rng) -> UvImage {
    let mut a = UvImage::for_model(UvKind::Albedo, 3, model);
    let ph: Vec<f64> = (0..9).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    for r in 0..a.height {
        for c in 0..a.width {
            let x = c as f64 / a.width as f64;
            let y = r as f64 / a.height as f64;
            for ch in 0..3 {
                let v = 0.55
                    + 0.12 * (4.0 * x + ph[ch]).sin()
                    + 0.1 * (3.0 * y + ph[3 + ch]).cos()
                    + 0.05 * (5.0 * (x + y) + ph[6 + ch]).sin();
                a.set(ch, r, c, v);
            }
        }
    }
    a
}

/// Mostly frontal light with random colour and mild directionality.
pub fn rand_lighting(rng: &mut ChaCha8Rng) -> Lighting {
    let mut l = Lighting::ambient(0.0);
    for c in 0..3 {
        let k = c * 9;
        l.coeffs[k] = rng.gen_range(0.6..0.8);
        l.coeffs[k + 3] = rng.gen_range(-0.35..-0.2);
        l.coeffs[k + 1] = rng.gen_range(-0.1..0.1);
        l.coeffs[k + 2] = rng.gen_range(-0.1..0.1);
        for b in 4..9 {
            l.coeffs[k + b] = rng.gen_range(-0.03..0.03);
        }
    }
    l
}

pub fn rand_pose(model: &FaceModel, size: usize, rng: &mut ChaCha8Rng) -> Pose {
    let base = Pose::canonical(model, size);
    let d = 30f64.to_radians();
    let p = 10f64.to_radians();
    Pose {
        s: base.s * rng.gen_range(0.9..1.1),
        yaw: rng.gen_range(-d..d),
        pitch: rng.gen_range(-p..p),
        roll: rng.gen_range(-p..p),
        t: [base.t[0] + rng.gen_range(-4.0..4.0), base.t[1] + rng.gen_range(-4.0..4.0)],
    }
}

/// Gradchecks `sum(f(inputs) * w)` with fixed random output weights.
pub fn check<F>(inputs: &[Tensor<f64>], skip: &dyn Fn(usize, usize) -> bool, max_coords: Option<usize>, f: F) -> GradcheckReport
where
    F: Fn(&[Tensor<f64>]) -> facefill::Result<Tensor<f64>>,
{
    check_tol(inputs, skip, max_coords, 1e-4, f)
}

pub fn check_tol<F>(
    inputs: &[Tensor<f64>],
    skip: &dyn Fn(usize, usize) -> bool,
    max_coords: Option<usize>,
    tol: f64,
    f: F,
) -> GradcheckReport
where
    F: Fn(&[Tensor<f64>]) -> facefill::Result<Tensor<f64>>,
{
    let mut r = rng(99);
    let probe = f(inputs).unwrap();
    let w = rand_t(&mut r, probe.shape(), -1.0, 1.0);
    let report = gradcheck(
        |xs| f(xs).map_err(|e| diffcore::DiffError::Invalid { op: "test", detail: e.to_string() })?.mul(&w),
        inputs,
        skip,
        &GradcheckOptions { tol, max_coords, ..Default::default() },
    )
    .unwrap();
    assert!(report.passed(), "gradcheck failures: {:?}", &report.failures[..report.failures.len().min(5)]);
    assert!(report.checked > 0);
    report
}

/// Brute-force rasterizer written independently of the library: every pixel
/// tests every triangle with textbook barycentrics and a geometric
/// top-left rule. Returns `(tri_id, bary, depth)` per pixel.
pub fn reference_rasterize(
    screen: &[[f64; 3]],
    triangles: &[[usize; 3]],
    height: usize,
    width: usize,
) -> Vec<Option<(usize, [f64; 3], f64)>> {
    let owns_edge = |u: [f64; 3], v: [f64; 3], w: [f64; 3]| -> bool {
        if u[1] == v[1] {
            // horizontal: owned when the triangle lies below it
            w[1] > u[1]
        } else {
            // otherwise owned when the triangle lies to its right
            let x_line = u[0] + (w[1] - u[1]) * (v[0] - u[0]) / (v[1] - u[1]);
            w[0] > x_line
        }
    };
    let mut out = vec![None; height * width];
    for i in 0..height {
        for j in 0..width {
            let (px, py) = (j as f64 + 0.5, i as f64 + 0.5);
            let mut best: Option<(usize, [f64; 3], f64)> = None;
            for (t, tri) in triangles.iter().enumerate() {
                let [a, b, c] = tri.map(|v| screen[v]);
                let d = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
                if d == 0.0 {
                    continue;
                }
                let l0 = ((b[1] - c[1]) * (px - c[0]) + (c[0] - b[0]) * (py - c[1])) / d;
                let l1 = ((c[1] - a[1]) * (px - c[0]) + (a[0] - c[0]) * (py - c[1])) / d;
                let l2 = 1.0 - l0 - l1;
                let ok = |l: f64, u, v, w| l > 1e-12 || (l.abs() <= 1e-12 && owns_edge(u, v, w));
                if !(ok(l0, b, c, a) && ok(l1, c, a, b) && ok(l2, a, b, c)) {
                    continue;
                }
                let z = l0 * a[2] + l1 * b[2] + l2 * c[2];
                if best.is_none_or(|(_, _, bz)| z < bz) {
                    best = Some((t, [l0, l1, l2], z));
                }
            }
            out[i * width + j] = best;
        }
    }
    out
}

/// Texels that are visible and at least one texel away from any invisible
/// or invalid texel.
pub fn interior_visible(model: &FaceModel, visible: &[bool]) -> Vec<bool> {
    let (h, w) = (model.uv_height as isize, model.uv_width as isize);
    (0..visible.len())
        .map(|i| {
            let (r, c) = ((i as isize) / w, (i as isize) % w);
            (-1..=1).all(|dr| {
                (-1..=1).all(|dc| {
                    let (rr, cc) = (r + dr, c + dc);
                    rr >= 0 && cc >= 0 && rr < h && cc < w && visible[(rr * w + cc) as usize]
                })
            })
        })
        .collect()
}

/// Renders `albedo` under `pose` and `light`, samples the texture back per
/// vertex, de-shades it and returns the albedo RMSE over interior visible
/// texels together with the number of such texels.
pub fn uv_round_trip_rmse(model: &FaceModel, albedo: &UvImage, pose: &Pose, light: &Lighting, size: usize) -> (f64, usize) {
    use facefill::renderer::render;
    use facefill::uvops::{deshade, sample_vertex_texture_covered, texel_visibility, unwarp_vertex_values};
    let shape = &model.mean_shape;
    let out = render(model, shape, albedo, pose, light, size).unwrap();
    let cov = out.raster.coverage();
    let vt = sample_vertex_texture_covered(&out.image, &cov, shape, pose);
    let tex = unwarp_vertex_values(&vt, model, UvKind::Texture).unwrap();
    let back = deshade(&tex, &out.shade).unwrap();
    let vis = texel_visibility(model, shape, pose, &out.raster);
    let keep = interior_visible(model, &vis);
    let n = model.num_texels();
    let (mut se, mut cnt) = (0.0, 0usize);
    for i in (0..n).filter(|&i| keep[i]) {
        for c in 0..3 {
            se += (back.data[c * n + i] - albedo.data[c * n + i]).powi(2);
        }
        cnt += 1;
    }
    ((se / (3 * cnt.max(1)) as f64).sqrt(), cnt)
}
