//! Short inpainter training run with ground-truth factors, then a
//! completion with the trained network.

use facefill::masks::{face_mask, MaskSpec};
use facefill::pipeline::data::{generate_dataset, sample_face, DataConfig};
use facefill::pipeline::train::{train_inpainter, FactorSource, StepLog, TrainInpainterConfig};
use facefill::pipeline::{complete, CompletionOptions, MeanFillInpainter, OracleAnalyzer};
use facefill::store::{generate_synthetic_model, SyntheticModelSpec};

fn main() -> facefill::Result<()> {
    let model = generate_synthetic_model(&SyntheticModelSpec::default())?;
    let cfg = DataConfig::default();
    let data = generate_dataset(&model, &cfg, 16, 5)?;
    let tcfg = TrainInpainterConfig { steps: 40, batch: 4, lr_g: 5e-4, seed: 2, ..Default::default() };
    let (net, report) = train_inpainter(&model, &data, FactorSource::Oracle, &tcfg, None, &mut |l: &StepLog| {
        if l.step.is_multiple_of(10) {
            println!("step {:3} total {:.4} l1 {:.4}", l.step, l.total, l.terms.get("l1_albedo").copied().unwrap_or(f64::NAN));
        }
        true
    })?;
    println!("{} generator and {} discriminator updates", report.g_steps, report.d_steps);

    let face = sample_face(&model, &cfg, 98, 0)?;
    let mask = face_mask(&model, &face, &MaskSpec::rect(0.2, 0.3, 3))?;
    let analyzer = OracleAnalyzer(face.factors.clone());
    let opts = CompletionOptions::default();
    let trained = complete(&model, &face.image, &mask, &analyzer, &net, &opts, Some(&face.image))?;
    let baseline = complete(&model, &face.image, &mask, &analyzer, &MeanFillInpainter, &opts, Some(&face.image))?;
    println!(
        "PSNR after {} iterations: inpainter {:.2} dB, mean fill {:.2} dB",
        opts.iters,
        trained.iterations.last().and_then(|r| r.psnr).unwrap_or(f64::NAN),
        baseline.iterations.last().and_then(|r| r.psnr).unwrap_or(f64::NAN)
    );
    Ok(())
}
