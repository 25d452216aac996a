//! Completes a masked synthetic face with ground-truth factors and the
//! mean-fill inpainter, reporting PSNR per iteration.

use facefill::losses::psnr_masked;
use facefill::masks::{face_mask, MaskSpec};
use facefill::pipeline::data::{sample_face, DataConfig};
use facefill::pipeline::{complete, CompletionOptions, MeanFillInpainter, OracleAnalyzer};
use facefill::store::{generate_synthetic_model, save_image, SyntheticModelSpec};

fn main() -> facefill::Result<()> {
    let model = generate_synthetic_model(&SyntheticModelSpec::default())?;
    let face = sample_face(&model, &DataConfig::default(), 3, 0)?;
    let mask = face_mask(&model, &face, &MaskSpec::rect(0.3, 0.4, 11))?;
    let analyzer = OracleAnalyzer(face.factors.clone());
    let opts = CompletionOptions { iters: 2, reunwarp_mask: false };
    let res = complete(&model, &face.image, &mask, &analyzer, &MeanFillInpainter, &opts, Some(&face.image))?;
    for (k, it) in res.iterations.iter().enumerate() {
        println!(
            "iter {}: PSNR {:.2} dB, masked-region PSNR {:.2} dB",
            k + 1,
            it.psnr.unwrap_or(f64::NAN),
            psnr_masked(&it.blended, &face.image, &mask)?
        );
    }
    let dir = std::env::temp_dir().join("facefill-examples");
    std::fs::create_dir_all(&dir).map_err(|e| facefill::FaceError::Invalid(e.to_string()))?;
    save_image(&dir.join("completed.png"), res.output())?;
    println!("output -> {}", dir.join("completed.png").display());
    Ok(())
}
