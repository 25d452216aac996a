//! Renders one synthetic face from several yaw angles and saves the PNGs.

use facefill::pipeline::data::{sample_face, DataConfig};
use facefill::renderer::render_views;
use facefill::store::{generate_synthetic_model, save_image, SyntheticModelSpec};

fn main() -> facefill::Result<()> {
    let model = generate_synthetic_model(&SyntheticModelSpec::default())?;
    let cfg = DataConfig::default();
    let face = sample_face(&model, &cfg, 0, 0)?;
    let yaws = [-30.0f64, 0.0, 30.0];
    let rad: Vec<f64> = yaws.iter().map(|y| y.to_radians()).collect();
    let views = render_views(&model, &face.shape, &face.albedo, &face.factors.lighting, &rad, cfg.image_size)?;
    let dir = std::env::temp_dir().join("facefill-examples");
    std::fs::create_dir_all(&dir).map_err(|e| facefill::FaceError::Invalid(e.to_string()))?;
    for (img, yaw) in views.iter().zip(yaws) {
        let p = dir.join(format!("view_{yaw}.png"));
        save_image(&p, img)?;
        let covered = (0..img.height * img.width).filter(|&k| img.data[k] > 0.0).count();
        println!("yaw {yaw:>5}: {covered} lit pixels -> {}", p.display());
    }
    Ok(())
}
