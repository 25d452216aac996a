//! Renders a face with known albedo, unwarps the image back to UV space,
//! removes the shading and measures how well the albedo is recovered.

use facefill::illumination::shade_uv;
use facefill::pipeline::data::{sample_face, DataConfig};
use facefill::renderer::render;
use facefill::store::{generate_synthetic_model, SyntheticModelSpec};
use facefill::uvops::{deshade, texel_visibility, unwarp_image};

fn main() -> facefill::Result<()> {
    let model = generate_synthetic_model(&SyntheticModelSpec::default())?;
    let cfg = DataConfig::default();
    for index in 0..4 {
        let face = sample_face(&model, &cfg, 1, index)?;
        let pose = face.factors.pose;
        let out = render(&model, &face.shape, &face.albedo, &pose, &face.factors.lighting, cfg.image_size)?;
        let cov = out.raster.coverage();
        let texture = unwarp_image(&out.image, Some(&cov), &model, &face.shape, &pose);
        let shade = shade_uv(&model, &face.shape, &face.factors.lighting, &pose.rotation())?;
        let albedo = deshade(&texture, &shade)?;
        let visible = texel_visibility(&model, &face.shape, &pose, &out.raster);
        let n = model.num_texels();
        let (mut se, mut cnt) = (0.0, 0);
        for i in (0..n).filter(|&i| visible[i]) {
            for c in 0..3 {
                se += (albedo.data[c * n + i] - face.albedo.data[c * n + i]).powi(2);
            }
            cnt += 1;
        }
        println!(
            "face {index}: yaw {:>6.1} deg, {cnt} visible texels, albedo RMSE {:.4}",
            pose.yaw.to_degrees(),
            (se / (3 * cnt) as f64).sqrt()
        );
    }
    Ok(())
}
