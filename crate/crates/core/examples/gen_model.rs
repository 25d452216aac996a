//! Generates the synthetic face model, writes it to a container and reads
//! it back.

use facefill::facemodel::FaceModel;
use facefill::store::{generate_synthetic_model, read_container, write_container, SyntheticModelSpec};

fn main() -> facefill::Result<()> {
    let model = generate_synthetic_model(&SyntheticModelSpec::default())?;
    let dir = std::env::temp_dir().join("facefill-examples");
    std::fs::create_dir_all(&dir).map_err(|e| facefill::FaceError::Invalid(e.to_string()))?;
    let path = dir.join("model.ffm");
    write_container(&path, &model.to_container()?)?;
    let back = FaceModel::from_container(&read_container(&path)?)?;
    assert!(back == model);
    println!(
        "{} vertices, {} triangles, {} shape/expression coefficients, UV {}x{}, {} landmarks",
        model.num_vertices(),
        model.triangles.len(),
        model.num_coeffs(),
        model.uv_height,
        model.uv_width,
        model.landmarks.len()
    );
    println!("written to {}", path.display());
    Ok(())
}
