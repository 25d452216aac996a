//! Short 3DMM training run on a handful of faces, then factor recovery on
//! an unseen face.

use facefill::pipeline::data::{generate_dataset, sample_face, DataConfig};
use facefill::pipeline::train::{train_3dmm, window_means, StepLog, Train3dmmConfig};
use facefill::pipeline::Analyzer;
use facefill::store::{generate_synthetic_model, Image, SyntheticModelSpec};

fn main() -> facefill::Result<()> {
    let model = generate_synthetic_model(&SyntheticModelSpec::default())?;
    let cfg = DataConfig::default();
    let data = generate_dataset(&model, &cfg, 16, 4)?;
    let tcfg = Train3dmmConfig { steps: 60, stage1_steps: 50, batch: 4, seed: 1, ..Default::default() };
    let (net, report) = train_3dmm(&model, &data, &tcfg, None, &mut |l: &StepLog| {
        if l.step.is_multiple_of(10) {
            println!("step {:3} stage {} total {:.4}", l.step, l.stage, l.total);
        }
        true
    })?;
    println!(
        "10-step window means: {:?}",
        window_means(&report.totals(), 10).iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
    );
    let face = sample_face(&model, &cfg, 99, 0)?;
    let zero = Image::new(1, cfg.image_size, cfg.image_size);
    let pred = net.analyze(&model, &face.image, &zero)?;
    println!(
        "held-out face: yaw {:.1} deg (true {:.1}), scale {:.2} (true {:.2})",
        pred.pose.yaw.to_degrees(),
        face.factors.pose.yaw.to_degrees(),
        pred.pose.s,
        face.factors.pose.s
    );
    Ok(())
}
