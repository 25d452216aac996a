//! Draws one rectangular mask per 10% ratio bin and a half-face mask.

use facefill::masks::{face_mask, mask_ratio, standard_bins, FaceRegion, MaskSpec};
use facefill::pipeline::data::{sample_face, DataConfig};
use facefill::store::{generate_synthetic_model, SyntheticModelSpec};

fn main() -> facefill::Result<()> {
    let model = generate_synthetic_model(&SyntheticModelSpec::default())?;
    let face = sample_face(&model, &DataConfig::default(), 2, 0)?;
    let region = FaceRegion::from_coverage(face.coverage.clone(), face.image.height, face.image.width)?;
    println!("face region: {} pixels", region.area());
    for (seed, (lo, hi)) in standard_bins().into_iter().enumerate() {
        let mask = face_mask(&model, &face, &MaskSpec::rect(lo, hi, seed as u64))?;
        println!("bin [{lo:.1}, {hi:.1}): ratio {:.3}", mask_ratio(&region, &mask));
    }
    let half = face_mask(&model, &face, &MaskSpec::half_face(0))?;
    println!("half face: ratio {:.3}", mask_ratio(&region, &half));
    Ok(())
}
