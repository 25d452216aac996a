use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use facefill::checks;
use facefill::eval::{eval_binned, write_plot, EvalConfig, EvalFactors};
use facefill::facemodel::FaceModel;
use facefill::masks::{face_mask, MaskSpec};
use facefill::pipeline::data::{generate_dataset, sample_face, DataConfig};
use facefill::pipeline::train::{
    train_3dmm, train_inpainter, write_log_line, FactorSource, Train3dmmConfig, TrainInpainterConfig,
};
use facefill::pipeline::{
    complete, factorize, Analyzer, CompletionOptions, FaceFactors, Inpainter, MeanFillInpainter, OracleAnalyzer, Trained3dmm,
    TrainedInpainter,
};
use facefill::renderer::render_views;
use facefill::store::{
    generate_synthetic_model, load_image, read_container, save_image, write_container, Image, SyntheticModelSpec,
};
use facefill::FaceError;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "facefill", version, about = "Face completion by analysis-by-synthesis on a synthetic face model")]
struct Cli {
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// File of `key=value` lines overriding command settings; dotted keys
    /// reach nested fields, e.g. `train.lr=1e-4` or `data.asym=0`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Face model container; the default synthetic model when absent.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic face model and write `model.ffm`.
    GenModel,
    /// Render a synthetic face with its factors, coverage and a random mask.
    Render(RenderArgs),
    /// Split a masked face into factors, shade and partial UV albedo.
    Factorize(FactorArgs),
    /// Complete the masked region of a face.
    Complete(CompleteArgs),
    /// Train the 3DMM encoder and albedo decoder.
    #[command(name = "train-3dmm")]
    Train3dmm(TrainArgs),
    /// Train the inpainter and its discriminator.
    TrainInpainter(TrainInpainterArgs),
    /// Binned PSNR/SSIM evaluation against mask-to-face ratio.
    Eval(EvalArgs),
    /// Run the registered gradient checks.
    Gradcheck(GradcheckArgs),
    /// Render one face from several yaw angles.
    RenderViews(ViewArgs),
}

#[derive(Args)]
struct RenderArgs {
    /// Face index within the seeded stream.
    #[arg(long, default_value_t = 0)]
    index: u64,
    /// Mask-to-face ratio bin as `lo,hi`.
    #[arg(long, default_value = "0.3,0.4")]
    mask_bin: String,
    /// Mask kind: `rect` or `half-face`.
    #[arg(long, default_value = "rect")]
    mask_kind: String,
}

#[derive(Args)]
struct FactorSourceArgs {
    /// Factors JSON written by `render`.
    #[arg(long, conflicts_with = "encoder")]
    factors: Option<PathBuf>,
    /// Trained 3DMM checkpoint.
    #[arg(long)]
    encoder: Option<PathBuf>,
}

#[derive(Args)]
struct FactorArgs {
    #[arg(long)]
    image: PathBuf,
    /// Single-channel mask, white for missing pixels; none when absent.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[command(flatten)]
    source: FactorSourceArgs,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = 2)]
    iters: usize,
    #[command(flatten)]
    source: FactorSourceArgs,
    /// Trained inpainter checkpoint; mean fill when absent.
    #[arg(long)]
    inpainter: Option<PathBuf>,
    /// Ground-truth image for PSNR reporting.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Re-unwarp the image mask at every iteration.
    #[arg(long)]
    reunwarp_mask: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    faces: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Checkpoint to continue from.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct TrainInpainterArgs {
    #[command(flatten)]
    common: TrainArgs,
    /// Trained 3DMM for the factors; ground-truth factors when absent.
    #[arg(long)]
    encoder: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Trained inpainter; only the mean-fill baseline when absent.
    #[arg(long)]
    inpainter: Option<PathBuf>,
    #[arg(long)]
    faces_per_bin: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Only checks whose name contains this string.
    #[arg(long)]
    filter: Option<String>,
}

#[derive(Args)]
struct ViewArgs {
    /// Comma-separated yaw angles in degrees.
    #[arg(long, allow_hyphen_values = true, default_value = "-30,0,30")]
    yaws: String,
    #[arg(long, default_value_t = 0)]
    index: u64,
}

/// Error caused by the invocation rather than by the program.
#[derive(Debug)]
struct UserError(String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UserError>() {
            return 1;
        }
        if let Some(fe) = cause.downcast_ref::<FaceError>() {
            return match fe {
                FaceError::Io { .. }
                | FaceError::Container(_)
                | FaceError::Image(_)
                | FaceError::Dimension(_)
                | FaceError::Invalid(_)
                | FaceError::Infeasible(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

/// Settings of one command as a JSON tree, overridable by dotted keys.
struct Settings {
    tree: Value,
}

impl Settings {
    fn new(tree: Value) -> Self {
        Settings { tree }
    }

    fn set(&mut self, key: &str, raw: &str) -> anyhow::Result<()> {
        let mut node = &mut self.tree;
        for part in key.split('.') {
            node = node.get_mut(part).ok_or_else(|| user(format!("unknown config key `{key}`")))?;
        }
        let parsed = match node {
            Value::String(_) => Value::String(raw.to_string()),
            Value::Array(_) => serde_json::from_str(&format!("[{raw}]")).map_err(|e| user(format!("`{key}`: {e}")))?,
            _ => serde_json::from_str(raw).map_err(|e| user(format!("`{key}`: {e}")))?,
        };
        if std::mem::discriminant(&parsed) != std::mem::discriminant(node) {
            bail!(user(format!("`{key}`: `{raw}` has the wrong type")));
        }
        *node = parsed;
        Ok(())
    }

    fn set_value(&mut self, key: &str, v: impl Serialize) {
        let mut node = &mut self.tree;
        for part in key.split('.') {
            node = node.get_mut(part).expect("built-in key");
        }
        *node = serde_json::to_value(v).expect("serializable");
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> anyhow::Result<T> {
        let mut node = &self.tree;
        for part in key.split('.') {
            node = node.get(part).expect("built-in key");
        }
        serde_json::from_value(node.clone()).map_err(|e| user(format!("`{key}`: {e}")))
    }
}

fn read_config(path: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| user(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

struct Ctx {
    seed: u64,
    seed_given: bool,
    out: PathBuf,
    config: Vec<(String, String)>,
    model_path: Option<PathBuf>,
}

impl Ctx {
    fn settings(&self, tree: Value) -> anyhow::Result<Settings> {
        let mut s = Settings::new(tree);
        for (k, v) in &self.config {
            s.set(k, v)?;
        }
        Ok(s)
    }

    fn model(&self) -> anyhow::Result<FaceModel> {
        Ok(match &self.model_path {
            Some(p) => FaceModel::from_container(&read_container(p)?)?,
            None => generate_synthetic_model(&SyntheticModelSpec::default())?,
        })
    }

    fn out_dir(&self) -> anyhow::Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn json(v: impl Serialize) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn parse_pair(s: &str) -> anyhow::Result<(f64, f64)> {
    let v: Vec<f64> =
        s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| user(format!("`{s}`: {e}")))?;
    match v[..] {
        [a, b] => Ok((a, b)),
        _ => Err(user(format!("`{s}`: expected lo,hi"))),
    }
}

fn load_mask(path: &Path, image: &Image) -> anyhow::Result<Image> {
    let m = load_image(path)?;
    if (m.height, m.width) != (image.height, image.width) {
        bail!(user(format!("mask is {}x{} but the image is {}x{}", m.height, m.width, image.height, image.width)));
    }
    let n = m.height * m.width;
    let data = (0..n).map(|k| if m.data[k] >= 0.5 { 1.0 } else { 0.0 }).collect();
    Ok(Image::from_data(1, m.height, m.width, data)?)
}

fn analyzer(src: &FactorSourceArgs) -> anyhow::Result<Box<dyn Analyzer>> {
    match (&src.factors, &src.encoder) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).map_err(|e| user(format!("{}: {e}", p.display())))?;
            let f: FaceFactors = serde_json::from_str(&text).map_err(|e| user(format!("{}: {e}", p.display())))?;
            Ok(Box::new(OracleAnalyzer(f)))
        }
        (None, Some(p)) => Ok(Box::new(Trained3dmm::load(p)?)),
        (None, None) => Err(user("need --factors or --encoder")),
    }
}

fn write_json(path: &Path, v: impl Serialize) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(&v)? + "\n").with_context(|| path.display().to_string())
}

fn gen_model(ctx: &Ctx) -> anyhow::Result<()> {
    let mut s = ctx.settings(serde_json::json!({ "model": json(SyntheticModelSpec::default()) }))?;
    if ctx.seed_given {
        s.set_value("model.seed", ctx.seed);
    }
    let spec: SyntheticModelSpec = s.get("model")?;
    let m = generate_synthetic_model(&spec)?;
    let path = ctx.out_dir()?.join("model.ffm");
    write_container(&path, &m.to_container()?)?;
    println!(
        "{} vertices, {} triangles, {} coefficients -> {}",
        m.num_vertices(),
        m.triangles.len(),
        m.num_coeffs(),
        path.display()
    );
    Ok(())
}

fn render_cmd(ctx: &Ctx, a: &RenderArgs) -> anyhow::Result<()> {
    let s = ctx.settings(serde_json::json!({ "data": json(DataConfig::default()) }))?;
    let data: DataConfig = s.get("data")?;
    let m = ctx.model()?;
    let face = sample_face(&m, &data, ctx.seed, a.index)?;
    let (lo, hi) = parse_pair(&a.mask_bin)?;
    let spec = match a.mask_kind.as_str() {
        "rect" => MaskSpec::rect(lo, hi, ctx.seed ^ a.index.rotate_left(17)),
        "half-face" => MaskSpec::half_face(ctx.seed ^ a.index.rotate_left(17)),
        k => bail!(user(format!("unknown mask kind `{k}`"))),
    };
    let mask = face_mask(&m, &face, &spec)?;
    let dir = ctx.out_dir()?;
    save_image(&dir.join("face.png"), &face.image)?;
    save_image(&dir.join("mask.png"), &mask)?;
    save_image(&dir.join("coverage.png"), &face.coverage_image())?;
    save_image(&dir.join("albedo_uv.png"), &face.albedo.to_image())?;
    write_json(&dir.join("factors.json"), &face.factors)?;
    println!("face {} -> {}", a.index, dir.display());
    Ok(())
}

fn factorize_cmd(ctx: &Ctx, a: &FactorArgs) -> anyhow::Result<()> {
    let m = ctx.model()?;
    let image = load_image(&a.image)?;
    let mask = match &a.mask {
        Some(p) => load_mask(p, &image)?,
        None => Image::new(1, image.height, image.width),
    };
    let an = analyzer(&a.source)?;
    let fz = factorize(&m, &image, &mask, an.as_ref())?;
    let dir = ctx.out_dir()?;
    save_image(&dir.join("albedo_uv.png"), &fz.albedo.to_image())?;
    save_image(&dir.join("partial_albedo_uv.png"), &fz.partial_albedo.to_image())?;
    save_image(&dir.join("uv_mask.png"), &fz.uv_mask.to_image())?;
    save_image(&dir.join("shade_uv.png"), &fz.shade.to_image())?;
    write_json(&dir.join("factors.json"), &fz.factors)?;
    let missing = fz.uv_mask.data.iter().zip(&fz.uv_mask.valid).filter(|(&v, &ok)| ok && v >= 0.5).count();
    let valid = fz.uv_mask.valid.iter().filter(|&&v| v).count();
    println!("{missing} of {valid} texels missing -> {}", dir.display());
    Ok(())
}

fn complete_cmd(ctx: &Ctx, a: &CompleteArgs) -> anyhow::Result<()> {
    if a.iters == 0 {
        bail!(user("--iters must be at least 1"));
    }
    let m = ctx.model()?;
    let image = load_image(&a.image)?;
    let mask = load_mask(&a.mask, &image)?;
    let truth = a.truth.as_deref().map(load_image).transpose()?;
    let an = analyzer(&a.source)?;
    let net = a.inpainter.as_deref().map(TrainedInpainter::load).transpose()?;
    let inp: &dyn Inpainter = match &net {
        Some(n) => n,
        None => &MeanFillInpainter,
    };
    let opts = CompletionOptions { iters: a.iters, reunwarp_mask: a.reunwarp_mask };
    let res = complete(&m, &image, &mask, an.as_ref(), inp, &opts, truth.as_ref())?;
    let dir = ctx.out_dir()?;
    for (k, it) in res.iterations.iter().enumerate() {
        save_image(&dir.join(format!("iter_{}.png", k + 1)), &it.blended)?;
        save_image(&dir.join(format!("rendered_{}.png", k + 1)), &it.rendered)?;
        if let Some(p) = it.psnr {
            println!("iter {}: PSNR {p:.3} dB", k + 1);
        }
    }
    save_image(&dir.join("completed.png"), res.output())?;
    println!("completed -> {}", dir.join("completed.png").display());
    Ok(())
}

fn log_writer(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| path.display().to_string())?))
}

fn train_3dmm_cmd(ctx: &Ctx, a: &TrainArgs) -> anyhow::Result<()> {
    let mut s = ctx.settings(serde_json::json!({
        "faces": 256,
        "data": json(DataConfig::default()),
        "train": json(Train3dmmConfig::default()),
    }))?;
    if let Some(n) = a.faces {
        s.set_value("faces", n);
    }
    if let Some(n) = a.steps {
        s.set_value("train.steps", n);
        let stage1: usize = s.get("train.stage1_steps")?;
        s.set_value("train.stage1_steps", stage1.min(n));
    }
    if ctx.seed_given {
        s.set_value("train.seed", ctx.seed);
    }
    let (faces, data, cfg): (usize, DataConfig, Train3dmmConfig) = (s.get("faces")?, s.get("data")?, s.get("train")?);
    let m = ctx.model()?;
    let set = generate_dataset(&m, &data, faces, ctx.seed)?;
    let init = match &a.init {
        Some(p) => Some(Trained3dmm::load(p)?),
        None => None,
    };
    let dir = ctx.out_dir()?;
    let mut log = log_writer(&dir.join("train_3dmm.jsonl"))?;
    let mut io_err = None;
    let (net, rep) = train_3dmm(&m, &set, &cfg, init, &mut |l| {
        if l.step % 50 == 0 {
            eprintln!("step {} stage {} total {:.4}", l.step, l.stage, l.total);
        }
        match write_log_line(&mut log, l) {
            Ok(()) => true,
            Err(e) => {
                io_err = Some(e);
                false
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    log.flush()?;
    net.save(&dir.join("encoder.ffc"))?;
    println!("{} steps -> {}", rep.logs.len(), dir.join("encoder.ffc").display());
    Ok(())
}

fn train_inpainter_cmd(ctx: &Ctx, a: &TrainInpainterArgs) -> anyhow::Result<()> {
    let mut s = ctx.settings(serde_json::json!({
        "faces": 256,
        "data": json(DataConfig::default()),
        "train": json(TrainInpainterConfig::default()),
    }))?;
    if let Some(n) = a.common.faces {
        s.set_value("faces", n);
    }
    if let Some(n) = a.common.steps {
        s.set_value("train.steps", n);
    }
    if ctx.seed_given {
        s.set_value("train.seed", ctx.seed);
    }
    let (faces, data, cfg): (usize, DataConfig, TrainInpainterConfig) = (s.get("faces")?, s.get("data")?, s.get("train")?);
    let m = ctx.model()?;
    let set = generate_dataset(&m, &data, faces, ctx.seed)?;
    let enc = a.encoder.as_deref().map(Trained3dmm::load).transpose()?;
    let source = match &enc {
        Some(e) => FactorSource::Encoder(e),
        None => FactorSource::Oracle,
    };
    let init = a.common.init.as_deref().map(TrainedInpainter::load).transpose()?;
    let dir = ctx.out_dir()?;
    let mut log = log_writer(&dir.join("train_inpainter.jsonl"))?;
    let mut io_err = None;
    let (net, rep) = train_inpainter(&m, &set, source, &cfg, init, &mut |l| {
        if l.step % 50 == 0 {
            eprintln!("step {} total {:.4}", l.step, l.total);
        }
        match write_log_line(&mut log, l) {
            Ok(()) => true,
            Err(e) => {
                io_err = Some(e);
                false
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    log.flush()?;
    net.save(&dir.join("inpainter.ffc"))?;
    println!("{} generator / {} discriminator steps -> {}", rep.g_steps, rep.d_steps, dir.join("inpainter.ffc").display());
    Ok(())
}

fn eval_cmd(ctx: &Ctx, a: &EvalArgs) -> anyhow::Result<()> {
    let mut s = ctx.settings(serde_json::json!({ "eval": json(EvalConfig::default()) }))?;
    if let Some(n) = a.faces_per_bin {
        s.set_value("eval.faces_per_bin", n);
    }
    if let Some(n) = a.iters {
        s.set_value("eval.iters", n);
    }
    if ctx.seed_given {
        s.set_value("eval.seed", ctx.seed);
    }
    let cfg: EvalConfig = s.get("eval")?;
    let m = ctx.model()?;
    let enc = a.encoder.as_deref().map(Trained3dmm::load).transpose()?;
    let factors = || match &enc {
        Some(e) => EvalFactors::Model(e),
        None => EvalFactors::Oracle,
    };
    let dir = ctx.out_dir()?;
    let baseline = eval_binned(&m, factors(), &MeanFillInpainter, &cfg)?;
    baseline.write_csv(&dir.join("eval_mean_fill.csv"))?;
    let mut series = vec![];
    let model_report = match &a.inpainter {
        Some(p) => {
            let net = TrainedInpainter::load(p)?;
            let r = eval_binned(&m, factors(), &net, &cfg)?;
            r.write_csv(&dir.join("eval.csv"))?;
            Some(r)
        }
        None => None,
    };
    if let Some(r) = &model_report {
        series.push(("inpainter", r));
        println!("inpainter: PSNR {:.3} dB, SSIM {:.4}", r.overall_psnr(), r.overall_ssim());
    }
    series.push(("mean fill", &baseline));
    println!("mean fill: PSNR {:.3} dB, SSIM {:.4}", baseline.overall_psnr(), baseline.overall_ssim());
    write_plot(&dir.join("eval.png"), &series)?;
    Ok(())
}

fn gradcheck_cmd(ctx: &Ctx, a: &GradcheckArgs) -> anyhow::Result<()> {
    let m = ctx.model()?;
    let out = checks::run_all(&m, ctx.seed, a.filter.as_deref());
    if out.is_empty() {
        bail!(user("no check matches the filter"));
    }
    let mut failed = 0;
    for o in &out {
        let status = if o.passed() { "ok" } else { "FAIL" };
        failed += !o.passed() as usize;
        match &o.report {
            Ok(r) => println!(
                "{status:4} {:10} {:28} max rel err {:.2e} over {} coords (tol {:.0e})",
                o.group, o.name, r.max_rel_err, r.checked, o.tol
            ),
            Err(e) => println!("{status:4} {:10} {:28} error: {e}", o.group, o.name),
        }
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", out.len());
    }
    println!("all {} checks passed", out.len());
    Ok(())
}

fn render_views_cmd(ctx: &Ctx, a: &ViewArgs) -> anyhow::Result<()> {
    let yaws: Vec<f64> = a
        .yaws
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| user(format!("--yaws `{}`: {e}", a.yaws)))?;
    if let Some(y) = yaws.iter().find(|y| y.abs() > 90.0) {
        bail!(user(format!("yaw {y} outside [-90, 90]")));
    }
    let s = ctx.settings(serde_json::json!({ "data": json(DataConfig::default()) }))?;
    let data: DataConfig = s.get("data")?;
    let m = ctx.model()?;
    let face = sample_face(&m, &data, ctx.seed, a.index)?;
    let rad: Vec<f64> = yaws.iter().map(|y| y.to_radians()).collect();
    let views = render_views(&m, &face.shape, &face.albedo, &face.factors.lighting, &rad, data.image_size)?;
    let dir = ctx.out_dir()?;
    for (k, (v, y)) in views.iter().zip(&yaws).enumerate() {
        let p = dir.join(format!("view_{k}_yaw{y}.png"));
        save_image(&p, v)?;
        println!("{}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(p) => read_config(p)?,
        None => Vec::new(),
    };
    let ctx = Ctx { seed: cli.seed.unwrap_or(0), seed_given: cli.seed.is_some(), out: cli.out, config, model_path: cli.model };
    match &cli.command {
        Command::GenModel => gen_model(&ctx),
        Command::Render(a) => render_cmd(&ctx, a),
        Command::Factorize(a) => factorize_cmd(&ctx, a),
        Command::Complete(a) => complete_cmd(&ctx, a),
        Command::Train3dmm(a) => train_3dmm_cmd(&ctx, a),
        Command::TrainInpainter(a) => train_inpainter_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Gradcheck(a) => gradcheck_cmd(&ctx, a),
        Command::RenderViews(a) => render_views_cmd(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
