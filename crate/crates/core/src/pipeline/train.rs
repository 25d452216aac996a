//! Training loops for the 3DMM networks and for the inpainter.

use std::collections::BTreeMap;
use std::io::Write;
use std::rc::Rc;

use diffcore::optim::{Adam, AdamConfig};
use diffcore::{no_grad, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FaceError, Result};
use crate::facemodel::{FaceModel, PoseT, NUM_LANDMARKS};
use crate::illumination::{shade_uv_t, TexelTables};
use crate::losses::{
    albedo_symmetry, constancy, hinge_d, hinge_g, l1, l1_aleatoric, landmark_loss, mean_score, pose_loss, sq_dist, symmetry_loss,
    wgan_gp, LossWeights, Normalizer,
};
use crate::masks::{face_mask, MaskKind, MaskSpec};
use crate::nets::PyramidGan;
use crate::pipeline::models::{InpainterConfig, Model3dmmConfig, Trained3dmm, TrainedInpainter};
use crate::pipeline::{apply_mask, factorize_with, net_input, Analyzer, SyntheticFace};
use crate::renderer::PixelSampler;
use crate::store::Image;
use crate::uvops::{blend_t, UvImage};

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub stage: usize,
    pub lr: f64,
    pub total: f64,
    pub terms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub logs: Vec<StepLog>,
    pub g_steps: usize,
    pub d_steps: usize,
}

impl TrainReport {
    pub fn totals(&self) -> Vec<f64> {
        self.logs.iter().map(|l| l.total).collect()
    }

    pub fn term(&self, name: &str) -> Vec<f64> {
        self.logs.iter().map(|l| l.terms.get(name).copied().unwrap_or(f64::NAN)).collect()
    }
}

/// Means of consecutive non-overlapping windows of `w` values.
pub fn window_means(v: &[f64], w: usize) -> Vec<f64> {
    v.chunks_exact(w.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

/// Writes one log entry as a JSON line.
pub fn write_log_line(w: &mut dyn Write, entry: &StepLog) -> Result<()> {
    let line = serde_json::to_string(entry).map_err(|e| FaceError::Invalid(e.to_string()))?;
    writeln!(w, "{line}").map_err(|e| FaceError::Invalid(format!("writing training log: {e}")))
}

/// Step observer; returning `false` stops training after that step.
pub type OnStep<'a> = &'a mut dyn FnMut(&StepLog) -> bool;

fn record(on_step: &mut OnStep, report: &mut TrainReport, entry: StepLog) -> bool {
    let go = on_step(&entry);
    report.logs.push(entry);
    go
}

fn guard(step: usize, total: f64, terms: &BTreeMap<String, f64>) -> Result<()> {
    if !total.is_finite() {
        return Err(FaceError::Diverged { step, detail: format!("loss terms {terms:?}") });
    }
    Ok(())
}

fn check_data(data: &[SyntheticFace], batch: usize, steps: usize) -> Result<()> {
    if data.is_empty() {
        return Err(FaceError::Invalid("empty training set".into()));
    }
    if batch == 0 || steps == 0 {
        return Err(FaceError::Invalid("batch size and step count must be positive".into()));
    }
    Ok(())
}

fn value(t: &Tensor<f32>) -> f64 {
    t.item() as f64
}

/// Random rectangular occlusion with a face ratio in a random 10% bin below
/// `max_ratio`, or no mask when the draw fails.
fn random_rect(model: &FaceModel, face: &SyntheticFace, max_ratio: f64, rng: &mut ChaCha8Rng) -> Image {
    let n = face.image.width;
    let bins = ((max_ratio * 10.0).round() as usize).max(1);
    let lo = rng.gen_range(0..bins) as f64 / 10.0;
    face_mask(model, face, &MaskSpec::rect(lo, lo + 0.1, rng.gen())).unwrap_or_else(|_| Image::new(1, n, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Train3dmmConfig {
    pub steps: usize,
    /// Supervised steps; the rest run unsupervised at a tenth of `lr`.
    pub stage1_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub mask_prob: f64,
    pub max_mask_ratio: f64,
    pub flip: bool,
    pub norm_floor: f64,
}

impl Default for Train3dmmConfig {
    fn default() -> Self {
        Train3dmmConfig {
            steps: 1000,
            stage1_steps: 800,
            batch: 4,
            lr: 5e-4,
            seed: 0,
            weights: LossWeights::default(),
            mask_prob: 0.5,
            max_mask_ratio: 0.4,
            flip: true,
            norm_floor: 0.1,
        }
    }
}

/// Trains the encoder and albedo decoder. Stage 1 combines supervised
/// factor losses with reconstruction, landmark and regularization terms;
/// stage 2 drops the supervised terms. Every term is scaled once, at the
/// first step, to unit magnitude before its weight is applied.
pub fn train_3dmm(
    model: &FaceModel,
    data: &[SyntheticFace],
    cfg: &Train3dmmConfig,
    init: Option<Trained3dmm>,
    mut on_step: OnStep,
) -> Result<(Trained3dmm, TrainReport)> {
    check_data(data, cfg.batch, cfg.steps)?;
    cfg.weights.validate()?;
    let size = data[0].image.width;
    let net = match init {
        Some(n) => n,
        None => Trained3dmm::new(Model3dmmConfig { image_size: size, ..Model3dmmConfig::desk(model) }, cfg.seed)?,
    };
    net.vs.set_training(true);
    let mut opt = Adam::new(net.vs.trainable(), AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let tables = TexelTables::<f32>::new(model)?;
    let valid = Tensor::<f32>::from_f64(
        &model.texel_tri.iter().map(|t| if t.is_some() { 1.0 } else { 0.0 }).collect::<Vec<_>>(),
        &[1, 1, model.uv_height, model.uv_width],
    )?;
    let lmk: Rc<Vec<usize>> = model.landmark_index();
    let s_ref = model.s_ref(size);
    let w = cfg.weights;
    let mut norm = Normalizer::new(cfg.norm_floor);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    for step in 0..cfg.steps {
        let stage = if step < cfg.stage1_steps { 1 } else { 2 };
        let lr = if stage == 1 { cfg.lr } else { cfg.lr / 10.0 };
        opt.set_lr(lr);
        let mut faces = Vec::with_capacity(cfg.batch);
        let mut masks = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let f = &data[rng.gen_range(0..data.len())];
            let f = if cfg.flip && rng.gen_bool(0.5) { f.mirrored(model)? } else { f.clone() };
            let m = if rng.gen_bool(cfg.mask_prob.clamp(0.0, 1.0)) {
                random_rect(model, &f, cfg.max_mask_ratio, &mut rng)
            } else {
                Image::new(1, size, size)
            };
            faces.push(f);
            masks.push(m);
        }
        let b = cfg.batch;
        let masked: Vec<Image> = faces.iter().zip(&masks).map(|(f, m)| apply_mask(&f.image, m)).collect();
        let x = Image::to_tensor::<f32>(&masked.iter().collect::<Vec<_>>())?;
        let gt_img = Image::to_tensor::<f32>(&faces.iter().map(|f| &f.image).collect::<Vec<_>>())?;
        let m_img = Image::to_tensor::<f32>(&masks.iter().collect::<Vec<_>>())?;
        let cov_gt =
            Image::to_tensor::<f32>(&faces.iter().map(|f| f.coverage_image()).collect::<Vec<_>>().iter().collect::<Vec<_>>())?;
        let coeffs: Vec<f64> = faces.iter().flat_map(|f| f.factors.coeffs.iter().copied()).collect();
        let gt_coeffs = Tensor::<f32>::from_f64(&coeffs, &[b, model.num_coeffs()])?;
        let gt_pose = PoseT::<f32>::from_poses(&faces.iter().map(|f| f.factors.pose).collect::<Vec<_>>())?;
        let gt_albedo = UvImage::to_tensor::<f32>(&faces.iter().map(|f| &f.albedo).collect::<Vec<_>>())?;
        let lm: Vec<f64> = faces.iter().flat_map(|f| f.landmarks.iter().flat_map(|p| *p)).collect();
        let gt_lm = Tensor::<f32>::from_f64(&lm, &[b, NUM_LANDMARKS, 2])?;

        let out = net.encoder.forward(&x)?;
        let albedo = net.decoder.forward(&out.albedo_feats)?.add_scalar(1.0)?.mul_scalar(0.5)?;
        let pose = PoseT::decode(&out.pose_raw, s_ref, size)?;
        let verts = model.assemble_shape_t(&out.shape_coeffs)?;
        let sampler = PixelSampler::new(model, &verts, &pose, size)?;
        let shade = shade_uv_t(model, &tables, &verts, &pose.r, &out.illum)?;
        let rendered = sampler.render(&albedo, &shade)?;
        let seen = no_grad(|| -> Result<Tensor<f32>> {
            let cov = sampler.coverage()?;
            let union = cov.add(&cov_gt)?.clip(0.0, 1.0)?;
            Ok(union.mul(&m_img.one_minus()?)?)
        })?;
        let l_rec = l1(&rendered, &gt_img, Some(&seen))?;
        let l_lmark = landmark_loss(&pose.project(&verts)?.gather_rows(&lmk)?, &gt_lm, size)?;
        let l_shape = sq_dist(&out.shape_coeffs, &gt_coeffs)?;
        let l_pose = pose_loss(&pose, &gt_pose, s_ref, size, &w)?;
        let l_tex = l1(&albedo, &gt_albedo, Some(&valid))?;
        let l_sym = albedo_symmetry(&albedo, Some(&valid))?;
        let l_const = constancy(&albedo, &albedo.detach(), Some(&valid), w.alpha, w.p_const)?;
        let all: [(&str, f64, &Tensor<f32>); 7] = [
            ("shape", w.sup * w.shape, &l_shape),
            ("pose", w.sup * w.pose, &l_pose),
            ("texture", w.sup * w.texture, &l_tex),
            ("rec", w.rec, &l_rec),
            ("landmark", w.rec * w.lmark, &l_lmark),
            ("symmetry", w.reg * w.sym3d, &l_sym),
            ("constancy", w.reg * w.constancy, &l_const),
        ];
        let terms: BTreeMap<String, f64> = all.iter().map(|(n, _, t)| (n.to_string(), value(t))).collect();
        if !norm.is_fitted() {
            norm.fit(&terms.iter().map(|(k, v)| (k.as_str(), *v)).collect::<Vec<_>>());
        }
        let active: Vec<(&str, f64, &Tensor<f32>)> =
            all.iter().copied().filter(|(n, _, _)| stage == 1 || !matches!(*n, "shape" | "pose" | "texture")).collect();
        let total = norm.combine(&active)?;
        let tv = value(&total);
        guard(step, tv, &terms)?;
        let grads = total.backward()?;
        opt.step(&grads)?;
        report.g_steps += 1;
        if !record(&mut on_step, &mut report, StepLog { step, stage, lr, total: tv, terms }) {
            break;
        }
    }
    net.vs.set_training(false);
    Ok((net, report))
}

/// Where the inpainter's training factors come from.
pub enum FactorSource<'a> {
    /// Ground-truth factors of the synthetic faces.
    Oracle,
    /// A frozen trained encoder applied to the masked image.
    Encoder(&'a Trained3dmm),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainInpainterConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Adversarial training; without it only the reconstruction and
    /// symmetry terms train the inpainter.
    pub gan: bool,
    pub symmetry_loss: bool,
    pub mask_kind: MaskKind,
    /// Masks are drawn from random 10% bins in `[lo, hi)`.
    pub mask_bins: (f64, f64),
    /// Draw one mask per face up front instead of one per batch.
    pub fixed_masks: bool,
    pub flip: bool,
    pub norm_floor: f64,
    pub net: InpainterConfig,
}

impl Default for TrainInpainterConfig {
    fn default() -> Self {
        TrainInpainterConfig {
            steps: 1000,
            batch: 4,
            lr_g: 1e-4,
            lr_d: 3e-4,
            seed: 0,
            weights: LossWeights::default(),
            gan: true,
            symmetry_loss: true,
            mask_kind: MaskKind::Rect,
            mask_bins: (0.1, 0.6),
            fixed_masks: false,
            flip: true,
            norm_floor: 0.1,
            net: InpainterConfig::default(),
        }
    }
}

/// One training example for the inpainter.
#[derive(Clone)]
struct Prepared {
    partial: UvImage,
    uv_mask: UvImage,
    target: UvImage,
    target_w: UvImage,
    shape: Vec<[f64; 3]>,
    pose: crate::facemodel::Pose,
    shade: UvImage,
    image: Image,
    mask: Image,
}

fn prepare(model: &FaceModel, face: &SyntheticFace, mask: Image, source: &FactorSource) -> Result<Prepared> {
    let masked = apply_mask(&face.image, &mask);
    let factors = match source {
        FactorSource::Oracle => face.factors.clone(),
        FactorSource::Encoder(e) => e.analyze(model, &masked, &mask)?,
    };
    let n = face.image.width;
    let fz = factorize_with(model, &masked, &mask, factors.clone())?;
    let full = factorize_with(model, &face.image, &Image::new(1, n, n), factors)?;
    let mut target_w = fz.uv_mask.clone();
    for (i, v) in target_w.data.iter_mut().enumerate() {
        *v = if full.visible[i] && full.albedo.valid[i] { 1.0 } else { 0.0 };
    }
    let target = full.albedo.clone();
    Ok(Prepared {
        partial: fz.partial_albedo,
        uv_mask: fz.uv_mask,
        target,
        target_w,
        shape: fz.shape,
        pose: fz.factors.pose,
        shade: fz.shade,
        image: face.image.clone(),
        mask,
    })
}

fn draw_mask(model: &FaceModel, face: &SyntheticFace, cfg: &TrainInpainterConfig, rng: &mut ChaCha8Rng) -> Image {
    let n = face.image.width;
    let spec = match cfg.mask_kind {
        MaskKind::HalfFace => MaskSpec::half_face(rng.gen()),
        MaskKind::Rect => {
            let lo_bin = (cfg.mask_bins.0 * 10.0).round() as usize;
            let hi_bin = ((cfg.mask_bins.1 * 10.0).round() as usize).max(lo_bin + 1);
            let lo = rng.gen_range(lo_bin..hi_bin) as f64 / 10.0;
            MaskSpec::rect(lo, lo + 0.1, rng.gen())
        }
    };
    face_mask(model, face, &spec).unwrap_or_else(|_| Image::new(1, n, n))
}

/// Discriminator objective: pyramid hinge loss plus `l5` times the gradient
/// penalty. `fake` is detached, so no gradient reaches the generator.
pub fn discriminator_loss(
    d: &PyramidGan<f32>,
    real: &Tensor<f32>,
    fake: &Tensor<f32>,
    u: &[f64],
    l5: f64,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let fake = fake.detach();
    let real = real.detach();
    let hinge = hinge_d(&d.forward(&real)?, &d.forward(&fake)?)?;
    let gp = wgan_gp(|x| mean_score(&d.forward(x)?), &real, &fake, u)?;
    Ok((hinge.add(&gp.mul_scalar(l5)?)?, gp))
}

/// Trains the inpainter against frozen factors. Each step updates the
/// inpainter once on all its losses, then (with `gan`) the discriminator
/// once on the detached blended output.
pub fn train_inpainter(
    model: &FaceModel,
    data: &[SyntheticFace],
    source: FactorSource,
    cfg: &TrainInpainterConfig,
    init: Option<TrainedInpainter>,
    mut on_step: OnStep,
) -> Result<(TrainedInpainter, TrainReport)> {
    check_data(data, cfg.batch, cfg.steps)?;
    cfg.weights.validate()?;
    let size = data[0].image.width;
    let net = init.unwrap_or_else(|| TrainedInpainter::new(cfg.net, cfg.seed));
    net.vs_g.set_training(true);
    net.vs_d.set_training(true);
    let mut opt_g = Adam::new(net.vs_g.trainable(), AdamConfig { lr: cfg.lr_g, ..AdamConfig::default() });
    let mut opt_d = Adam::new(net.vs_d.trainable(), AdamConfig { lr: cfg.lr_d, beta1: 0.5, ..AdamConfig::default() });
    let valid = Tensor::<f32>::from_f64(
        &model.texel_tri.iter().map(|t| if t.is_some() { 1.0 } else { 0.0 }).collect::<Vec<_>>(),
        &[1, 1, model.uv_height, model.uv_width],
    )?;
    let w = cfg.weights;
    let mut norm = Normalizer::new(cfg.norm_floor);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache: Vec<[Option<Prepared>; 2]> = vec![[None, None]; data.len()];
    let mut fixed_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let fixed: Vec<Option<Image>> = if cfg.fixed_masks {
        data.iter().map(|f| Some(draw_mask(model, f, cfg, &mut fixed_rng))).collect()
    } else {
        vec![None; data.len()]
    };
    let mut report = TrainReport::default();
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let i = rng.gen_range(0..data.len());
            let flip = cfg.flip && rng.gen_bool(0.5);
            if cfg.fixed_masks {
                if cache[i][flip as usize].is_none() {
                    let m = fixed[i].clone().unwrap();
                    let (f, m) = if flip { (data[i].mirrored(model)?, m.hflip()) } else { (data[i].clone(), m) };
                    cache[i][flip as usize] = Some(prepare(model, &f, m, &source)?);
                }
                batch.push(cache[i][flip as usize].clone().unwrap());
            } else {
                let f = if flip { data[i].mirrored(model)? } else { data[i].clone() };
                let m = draw_mask(model, &f, cfg, &mut rng);
                batch.push(prepare(model, &f, m, &source)?);
            }
        }
        let b = batch.len();
        let (a_m, m_uv) = net_input(
            &batch.iter().map(|p| &p.partial).collect::<Vec<_>>(),
            &batch.iter().map(|p| &p.uv_mask).collect::<Vec<_>>(),
        )?;
        let target =
            UvImage::to_tensor::<f32>(&batch.iter().map(|p| &p.target).collect::<Vec<_>>())?.mul_scalar(2.0)?.add_scalar(-1.0)?;
        let target_w = UvImage::to_tensor::<f32>(&batch.iter().map(|p| &p.target_w).collect::<Vec<_>>())?;
        let shade = UvImage::to_tensor::<f32>(&batch.iter().map(|p| &p.shade).collect::<Vec<_>>())?;
        let gt = Image::to_tensor::<f32>(&batch.iter().map(|p| &p.image).collect::<Vec<_>>())?;
        let mask = Image::to_tensor::<f32>(&batch.iter().map(|p| &p.mask).collect::<Vec<_>>())?;
        let nv = model.num_vertices();
        let verts: Vec<f64> = batch.iter().flat_map(|p| p.shape.iter().flat_map(|v| *v)).collect();
        let verts = Tensor::<f32>::from_f64(&verts, &[b, nv, 3])?;
        let pose = PoseT::<f32>::from_poses(&batch.iter().map(|p| p.pose).collect::<Vec<_>>())?;
        let sampler = PixelSampler::new(model, &verts, &pose, size)?;
        let coverage = sampler.coverage()?;

        let out = net.g.forward(&a_m, &m_uv)?;
        let l_albedo = l1_aleatoric(&out.albedo, &target, &out.log_sigma, Some(&target_w))?;
        let albedo01 = out.albedo.add_scalar(1.0)?.mul_scalar(0.5)?;
        let rendered = sampler.render(&albedo01, &shade)?;
        let sigma_img = sampler.sample(&out.log_sigma)?;
        let l_image = l1_aleatoric(&rendered, &gt, &sigma_img, Some(&coverage))?;
        let l_sym = symmetry_loss(&out.albedo, &m_uv, &out.log_sigma, Some(&valid))?;
        let plain = no_grad(|| l1(&out.albedo, &target, Some(&target_w)))?;
        let blended = blend_t(&gt, &rendered, &mask)?;
        let l_adv = if cfg.gan { Some(hinge_g(&net.d.forward(&blended)?)?) } else { None };

        let mut terms: BTreeMap<String, f64> = BTreeMap::new();
        terms.insert("albedo".into(), value(&l_albedo));
        terms.insert("image".into(), value(&l_image));
        terms.insert("symmetry".into(), value(&l_sym));
        terms.insert("l1_albedo".into(), value(&plain));
        let mut parts: Vec<(&str, f64, &Tensor<f32>)> = vec![("albedo", w.l1, &l_albedo), ("image", w.l2, &l_image)];
        if cfg.symmetry_loss {
            parts.push(("symmetry", w.l3, &l_sym));
        }
        if let Some(adv) = &l_adv {
            terms.insert("adversarial".into(), value(adv));
            parts.push(("adversarial", w.l4, adv));
        }
        if !norm.is_fitted() {
            norm.fit(&parts.iter().map(|(n, _, t)| (*n, value(t))).collect::<Vec<_>>());
        }
        let total = norm.combine(&parts)?;
        let tv = value(&total);
        guard(step, tv, &terms)?;
        let grads = total.backward()?;
        opt_g.step(&grads)?;
        report.g_steps += 1;

        if cfg.gan {
            let u: Vec<f64> = (0..b).map(|_| rng.gen::<f64>()).collect();
            let (l_d, gp) = discriminator_loss(&net.d, &gt, &blended, &u, w.l5)?;
            let dv = value(&l_d);
            terms.insert("discriminator".into(), dv);
            terms.insert("penalty".into(), value(&gp));
            guard(step, dv, &terms)?;
            let grads = l_d.backward()?;
            opt_d.step(&grads)?;
            report.d_steps += 1;
        }
        if !record(&mut on_step, &mut report, StepLog { step, stage: 1, lr: cfg.lr_g, total: tv, terms }) {
            break;
        }
    }
    net.vs_g.set_training(false);
    net.vs_d.set_training(false);
    Ok((net, report))
}
