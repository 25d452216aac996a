//! Trained networks wrapped as analyzers and inpainters, with checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use diffcore::nn::VarStore;
use diffcore::{no_grad, Tensor};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{FaceError, Result};
use crate::facemodel::{decode_pose, FaceModel};
use crate::illumination::Lighting;
use crate::nets::{AlbedoDecoder, DecoderConfig, Encoder, EncoderConfig, PyramidGan, SymUNet, UNetConfig};
use crate::pipeline::{apply_mask, net_input, Analyzer, FaceFactors, Inpainter};
use crate::store::{read_container, write_container, Container, Entry, Image};
use crate::uvops::{UvImage, UvKind};

const CONFIG_ENTRY: &str = "config.json";

fn store_to_container<S: Serialize>(cfg: &S, stores: &[(&str, &VarStore<f32>)]) -> Result<Container> {
    let mut c = Container::new();
    let json = serde_json::to_vec(cfg).map_err(|e| FaceError::Container(e.to_string()))?;
    c.push(Entry::from_u8(CONFIG_ENTRY, &[json.len()], &json)?)?;
    for (prefix, vs) in stores {
        for (name, shape, values) in vs.named_values() {
            c.push(Entry::from_f32(&format!("{prefix}/{name}"), &shape, &values)?)?;
        }
    }
    Ok(c)
}

fn read_config<S: DeserializeOwned>(c: &Container) -> Result<S> {
    serde_json::from_slice(&c.require(CONFIG_ENTRY)?.data).map_err(|e| FaceError::Container(format!("bad config: {e}")))
}

fn load_store(c: &Container, prefix: &str, vs: &VarStore<f32>) -> Result<()> {
    let p = format!("{prefix}/");
    let values: BTreeMap<String, (Vec<usize>, Vec<f64>)> = c
        .entries
        .iter()
        .filter_map(|e| e.name.strip_prefix(&p).map(|n| (n.to_string(), (e.shape.clone(), e.to_f64()))))
        .collect();
    vs.load_values(&values).map_err(|e| FaceError::Container(format!("{prefix}: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Model3dmmConfig {
    pub image_size: usize,
    pub width_div: usize,
    pub coeffs: usize,
    pub uv_height: usize,
    pub uv_width: usize,
}

impl Model3dmmConfig {
    pub fn desk(model: &FaceModel) -> Self {
        Model3dmmConfig {
            image_size: crate::nets::IMAGE_SIZE,
            width_div: 4,
            coeffs: model.num_coeffs(),
            uv_height: model.uv_height,
            uv_width: model.uv_width,
        }
    }
}

/// Image encoder with its albedo decoder.
pub struct Trained3dmm {
    pub cfg: Model3dmmConfig,
    pub vs: VarStore<f32>,
    pub encoder: Encoder<f32>,
    pub decoder: AlbedoDecoder<f32>,
}

/// Per-image factors and decoder albedo in `[0, 1]`.
pub struct Prediction {
    pub factors: FaceFactors,
    pub albedo: UvImage,
}

impl Trained3dmm {
    /// Fresh networks in inference mode.
    pub fn new(cfg: Model3dmmConfig, seed: u64) -> Result<Self> {
        let vs = VarStore::new(seed);
        let root = vs.root();
        let ecfg = EncoderConfig { input_size: cfg.image_size, width_div: cfg.width_div, coeffs: cfg.coeffs };
        let encoder = Encoder::new(&root.sub("encoder"), ecfg);
        let dcfg = DecoderConfig { uv_height: cfg.uv_height, uv_width: cfg.uv_width, width_div: cfg.width_div };
        let decoder = AlbedoDecoder::new(&root.sub("decoder"), ecfg.albedo_feats(), dcfg)?;
        vs.set_training(false);
        Ok(Trained3dmm { cfg, vs, encoder, decoder })
    }

    fn check_model(&self, model: &FaceModel) -> Result<()> {
        if model.num_coeffs() != self.cfg.coeffs || (model.uv_height, model.uv_width) != (self.cfg.uv_height, self.cfg.uv_width) {
            return Err(FaceError::Dimension(format!(
                "network built for {} coefficients and {}x{} UV, model has {} and {}x{}",
                self.cfg.coeffs,
                self.cfg.uv_height,
                self.cfg.uv_width,
                model.num_coeffs(),
                model.uv_height,
                model.uv_width
            )));
        }
        Ok(())
    }

    /// Runs the networks on already masked images.
    pub fn predict(&self, model: &FaceModel, images: &[&Image]) -> Result<Vec<Prediction>> {
        self.check_model(model)?;
        for img in images {
            if img.height != self.cfg.image_size || img.width != self.cfg.image_size {
                return Err(FaceError::Dimension(format!(
                    "encoder expects {0}x{0} images, got {1}x{2}",
                    self.cfg.image_size, img.height, img.width
                )));
            }
        }
        let x = Image::to_tensor::<f32>(images)?;
        let (out, albedo) = no_grad(|| -> Result<_> {
            let out = self.encoder.forward(&x)?;
            let albedo = self.decoder.forward(&out.albedo_feats)?.add_scalar(1.0)?.mul_scalar(0.5)?;
            Ok((out, albedo))
        })?;
        let s_ref = model.s_ref(self.cfg.image_size);
        let k = self.cfg.coeffs;
        let row = |t: &Tensor<f32>, i: usize, n: usize| -> Vec<f64> {
            t.data()[i * n..(i + 1) * n].iter().map(|v| *v as f64).collect()
        };
        (0..images.len())
            .map(|i| {
                let raw: [f64; 6] = row(&out.pose_raw, i, 6).try_into().unwrap();
                let factors = FaceFactors {
                    coeffs: row(&out.shape_coeffs, i, k),
                    pose: decode_pose(&raw, s_ref, self.cfg.image_size),
                    lighting: Lighting::from_slice(&row(&out.illum, i, 27))?,
                };
                let mut a = UvImage::from_tensor(&albedo, i, UvKind::Albedo)?;
                a.valid = model.texel_tri.iter().map(Option::is_some).collect();
                Ok(Prediction { factors, albedo: a })
            })
            .collect()
    }

    pub fn to_container(&self) -> Result<Container> {
        store_to_container(&self.cfg, &[("net", &self.vs)])
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let cfg: Model3dmmConfig = read_config(c)?;
        let m = Trained3dmm::new(cfg, 0)?;
        load_store(c, "net", &m.vs)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_container(path, &self.to_container()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&read_container(path)?)
    }
}

impl Analyzer for Trained3dmm {
    fn analyze(&self, model: &FaceModel, image: &Image, mask: &Image) -> Result<FaceFactors> {
        let masked = apply_mask(image, mask);
        Ok(self.predict(model, &[&masked])?.remove(0).factors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InpainterConfig {
    pub width_div: usize,
    pub symmetric: bool,
    pub disc_width_div: usize,
}

impl Default for InpainterConfig {
    fn default() -> Self {
        InpainterConfig { width_div: 4, symmetric: true, disc_width_div: 4 }
    }
}

/// Inpainter and its discriminator, each in its own store.
pub struct TrainedInpainter {
    pub cfg: InpainterConfig,
    pub vs_g: VarStore<f32>,
    pub g: SymUNet<f32>,
    pub vs_d: VarStore<f32>,
    pub d: PyramidGan<f32>,
}

impl TrainedInpainter {
    pub fn new(cfg: InpainterConfig, seed: u64) -> Self {
        let vs_g = VarStore::new(seed);
        let g = SymUNet::new(&vs_g.root(), UNetConfig { width_div: cfg.width_div, symmetric: cfg.symmetric });
        let vs_d = VarStore::new(seed.wrapping_add(1));
        let d = PyramidGan::new(&vs_d.root(), cfg.disc_width_div);
        vs_g.set_training(false);
        vs_d.set_training(false);
        TrainedInpainter { cfg, vs_g, g, vs_d, d }
    }

    pub fn to_container(&self) -> Result<Container> {
        store_to_container(&self.cfg, &[("g", &self.vs_g), ("d", &self.vs_d)])
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let cfg: InpainterConfig = read_config(c)?;
        let m = TrainedInpainter::new(cfg, 0);
        load_store(c, "g", &m.vs_g)?;
        load_store(c, "d", &m.vs_d)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_container(path, &self.to_container()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&read_container(path)?)
    }

    /// Completed albedo in `[0, 1]` and log-variance for a batch.
    pub fn predict(&self, partial: &[&UvImage], masks: &[&UvImage]) -> Result<Vec<(UvImage, UvImage)>> {
        let (a, m) = net_input(partial, masks)?;
        let out = no_grad(|| self.g.forward(&a, &m))?;
        (0..partial.len())
            .map(|i| {
                let mut alb = UvImage::from_tensor(&out.albedo, i, UvKind::Albedo)?;
                for v in alb.data.iter_mut() {
                    *v = (*v + 1.0) / 2.0;
                }
                alb.valid = partial[i].valid.clone();
                let sigma = UvImage::from_tensor(&out.log_sigma, i, UvKind::Uncertainty)?;
                Ok((alb, sigma))
            })
            .collect()
    }
}

impl Inpainter for TrainedInpainter {
    fn inpaint(&self, partial: &UvImage, mask: &UvImage) -> Result<UvImage> {
        Ok(self.predict(&[partial], &[mask])?.remove(0).0)
    }
}
