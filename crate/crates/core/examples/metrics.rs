//! PSNR, SSIM and the aleatoric and hinge losses on small inputs.

use diffcore::Tensor;
use facefill::losses::{aleatoric, hinge_d, hinge_g, psnr, ssim};
use facefill::store::Image;

fn main() -> facefill::Result<()> {
    let a = vec![0.25; 64];
    let b = vec![0.35; 64];
    println!("PSNR of a 0.1 offset: {:.6} dB", psnr(&a, &b, 1.0)?);

    let data: Vec<f32> = (0..3 * 16 * 16).map(|k| ((k * 37) % 101) as f32 / 100.0).collect();
    let img = Image::from_data(3, 16, 16, data.clone())?;
    let noisy = Image::from_data(
        3,
        16,
        16,
        data.iter().enumerate().map(|(k, v)| (v + if k % 2 == 0 { 0.05 } else { -0.05 }).clamp(0.0, 1.0)).collect(),
    )?;
    println!("SSIM identical {:.4}, noisy {:.4}", ssim(&img, &img)?, ssim(&img, &noisy)?);

    let residual = Tensor::<f64>::from_f64(&[0.1, 0.5, 1.0, 2.0], &[4])?;
    for s in [-2.0, 0.0, 2.0] {
        let log_sigma = Tensor::full(&[4], s);
        println!("aleatoric loss with log sigma {s:>4}: {:.4}", aleatoric(&residual, &log_sigma, None)?.item());
    }

    let real = vec![Tensor::<f64>::from_f64(&[1.5, 0.2], &[2])?];
    let fake = vec![Tensor::<f64>::from_f64(&[-0.5, 0.8], &[2])?];
    println!("hinge D {:.4}, hinge G {:.4}", hinge_d(&real, &fake)?.item(), hinge_g(&fake)?.item());
    Ok(())
}
