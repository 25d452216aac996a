//! Binned evaluation of the mean-fill baseline over mask-to-face ratio,
//! written as CSV and a line plot.

use facefill::eval::{eval_binned, write_plot, EvalConfig, EvalFactors};
use facefill::pipeline::{IdentityInpainter, MeanFillInpainter};
use facefill::store::{generate_synthetic_model, SyntheticModelSpec};

fn main() -> facefill::Result<()> {
    let model = generate_synthetic_model(&SyntheticModelSpec::default())?;
    let cfg = EvalConfig { faces_per_bin: 4, iters: 1, ..EvalConfig::default() };
    let mean = eval_binned(&model, EvalFactors::Oracle, &MeanFillInpainter, &cfg)?;
    let zero = eval_binned(&model, EvalFactors::Oracle, &IdentityInpainter, &cfg)?;
    print!("{}", mean.to_csv());
    println!("overall: mean fill {:.2} dB, zero fill {:.2} dB", mean.overall_psnr(), zero.overall_psnr());
    let dir = std::env::temp_dir().join("facefill-examples");
    std::fs::create_dir_all(&dir).map_err(|e| facefill::FaceError::Invalid(e.to_string()))?;
    mean.write_csv(&dir.join("eval.csv"))?;
    write_plot(&dir.join("eval.png"), &[("mean fill", &mean), ("zero fill", &zero)])?;
    println!("CSV and plot -> {}", dir.display());
    Ok(())
}
