//! Completion quality binned by mask-to-face ratio, with CSV and plot
//! output.

use std::path::Path;
use std::sync::OnceLock;

use crate::error::{io_err, FaceError, Result};
use crate::facemodel::FaceModel;
use crate::losses::{psnr_images, ssim};
use crate::masks::{face_mask, MaskSpec};
use crate::pipeline::data::{sample_face, DataConfig};
use crate::pipeline::{complete, Analyzer, CompletionOptions, Inpainter, OracleAnalyzer};

pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "bin_lo,bin_hi,n,psnr,ssim";
/// Candidate faces tried per requested face before a bin is declared
/// short.
const FACE_BUDGET: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStats {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bins: Vec<BinStats>,
}

impl EvalReport {
    pub fn overall_psnr(&self) -> f64 {
        weighted(&self.bins, |b| b.psnr)
    }

    pub fn overall_ssim(&self) -> f64 {
        weighted(&self.bins, |b| b.ssim)
    }

    /// CSV with [`CSV_HEADER`]; floats use the shortest representation
    /// that parses back to the same value.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for b in &self.bins {
            s.push_str(&format!("{},{},{},{},{}\n", b.lo, b.hi, b.n, b.psnr, b.ssim));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(FaceError::Invalid(format!("CSV header must be {CSV_HEADER}")));
        }
        let bad = |l: &str| FaceError::Invalid(format!("bad CSV row {l:?}"));
        let bins = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 5 {
                    return Err(bad(l));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| bad(l));
                Ok(BinStats {
                    lo: num(f[0])?,
                    hi: num(f[1])?,
                    n: f[2].parse().map_err(|_| bad(l))?,
                    psnr: num(f[3])?,
                    ssim: num(f[4])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EvalReport { bins })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| io_err(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
    }
}

fn weighted(bins: &[BinStats], f: impl Fn(&BinStats) -> f64) -> f64 {
    let n: usize = bins.iter().map(|b| b.n).sum();
    if n == 0 {
        return f64::NAN;
    }
    bins.iter().map(|b| f(b) * b.n as f64).sum::<f64>() / n as f64
}

/// Factors used during evaluation.
pub enum EvalFactors<'a> {
    /// Ground truth of each synthetic face.
    Oracle,
    Model(&'a dyn Analyzer),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalConfig {
    pub faces_per_bin: usize,
    pub bins: Vec<(f64, f64)>,
    pub seed: u64,
    pub iters: usize,
    pub data: DataConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { faces_per_bin: 20, bins: crate::masks::standard_bins(), seed: 0, iters: 2, data: DataConfig::default() }
    }
}

/// Evaluates completion on fresh synthetic faces with rectangular masks in
/// each ratio bin. Faces and masks depend only on the seed, so every
/// inpainter sees the same inputs.
pub fn eval_binned(model: &FaceModel, factors: EvalFactors, inpainter: &dyn Inpainter, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.faces_per_bin == 0 || cfg.bins.is_empty() {
        return Err(FaceError::Invalid("evaluation needs at least one bin and one face per bin".into()));
    }
    let opts = CompletionOptions { iters: cfg.iters, reunwarp_mask: false };
    let mut bins = Vec::with_capacity(cfg.bins.len());
    for (bi, &(lo, hi)) in cfg.bins.iter().enumerate() {
        let (mut psnr, mut ssim_sum, mut n) = (0.0, 0.0, 0);
        for j in 0..cfg.faces_per_bin * FACE_BUDGET {
            if n == cfg.faces_per_bin {
                break;
            }
            let index = (bi * cfg.faces_per_bin * FACE_BUDGET + j) as u64;
            let face = sample_face(model, &cfg.data, cfg.seed, index)?;
            let spec = MaskSpec::rect(lo, hi, cfg.seed.wrapping_mul(1_000_003).wrapping_add(index));
            let mask = match face_mask(model, &face, &spec) {
                Ok(m) => m,
                Err(FaceError::Infeasible(_)) => continue,
                Err(e) => return Err(e),
            };
            let oracle;
            let analyzer: &dyn Analyzer = match &factors {
                EvalFactors::Oracle => {
                    oracle = OracleAnalyzer(face.factors.clone());
                    &oracle
                }
                EvalFactors::Model(a) => *a,
            };
            let r = complete(model, &face.image, &mask, analyzer, inpainter, &opts, None)?;
            psnr += psnr_images(r.output(), &face.image)?;
            ssim_sum += ssim(r.output(), &face.image)?;
            n += 1;
        }
        if n == 0 {
            return Err(FaceError::Invalid(format!("empty evaluation bin [{lo}, {hi})")));
        }
        bins.push(BinStats { lo, hi, n, psnr: psnr / n as f64, ssim: ssim_sum / n as f64 });
    }
    Ok(EvalReport { bins })
}

const FONT_PATHS: [&str; 3] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
];

/// Registers a system sans-serif font for plot text; false when none is
/// found.
fn ensure_font() -> bool {
    static FONT: OnceLock<bool> = OnceLock::new();
    *FONT.get_or_init(|| {
        let path = std::env::var("FACEFILL_FONT").ok().into_iter().chain(FONT_PATHS.iter().map(|s| s.to_string()));
        for p in path {
            if let Ok(bytes) = std::fs::read(&p) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font("sans-serif", plotters::style::FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        false
    })
}

/// Line plot of PSNR against the bin centre for each labelled report. Axis
/// labels and the legend are drawn when a font is available.
pub fn write_plot(path: &Path, series: &[(&str, &EvalReport)]) -> Result<()> {
    use plotters::prelude::*;
    let err = |e: &dyn std::fmt::Display| FaceError::Image(format!("plot: {e}"));
    let has_font = ensure_font();
    let pts: Vec<Vec<(f64, f64)>> =
        series.iter().map(|(_, r)| r.bins.iter().map(|b| ((b.lo + b.hi) * 50.0, b.psnr)).collect()).collect();
    let ys = pts.iter().flatten().map(|p| p.1).filter(|v| v.is_finite());
    let (ymin, ymax) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (ymin, ymax) = if ymin.is_finite() { (ymin.floor() - 1.0, ymax.ceil() + 1.0) } else { (0.0, 1.0) };
    let root = BitMapBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(12);
    if has_font {
        builder.caption("PSNR vs mask-to-face ratio", ("sans-serif", 20)).x_label_area_size(36).y_label_area_size(48);
    }
    let mut chart = builder.build_cartesian_2d(0.0..90.0, ymin..ymax).map_err(|e| err(&e))?;
    let mut mesh = chart.configure_mesh();
    if has_font {
        mesh.x_desc("mask / face area (%)").y_desc("PSNR (dB)");
    } else {
        mesh.disable_x_axis().disable_y_axis();
    }
    mesh.draw().map_err(|e| err(&e))?;
    let colors = [BLUE, RED, GREEN, MAGENTA, BLACK];
    for (k, ((label, _), p)) in series.iter().zip(&pts).enumerate() {
        let c = colors[k % colors.len()];
        let s = chart.draw_series(LineSeries::new(p.clone(), c.stroke_width(2))).map_err(|e| err(&e))?;
        if has_font {
            s.label(*label).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], c));
        }
        chart.draw_series(p.iter().map(|&q| Circle::new(q, 3, c.filled()))).map_err(|e| err(&e))?;
    }
    if has_font {
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(|e| err(&e))?;
    }
    root.present().map_err(|e| err(&e))?;
    Ok(())
}
