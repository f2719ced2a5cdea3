use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use eid_core::adversarial::train_pseudo_physics;
use eid_core::data::{
    evaluate_pairs, list_images, load_depth, load_image, save_image, synth_dataset, MetricReport,
};
use eid_core::physics::{DepthMap, HazeOperator, ScatteringParams};
use eid_core::tensor::{Reduction, Tensor};
use eid_core::trainer::{audit_equivariance, dehaze, load_dehazer, load_hazy_dir, train_eid, PhysicsSource, Variant};
use eid_core::{Error, Result};

use crate::ablation::{ablation_matrix, check_variant_list, to_csv, Benchmark};
use crate::config::RunConfig;
use crate::threads;

#[derive(Debug, Parser)]
#[command(name = "eid", version, about = "Unsupervised image dehazing toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark (clean, depth, hazy, manifest).
    Synth(SynthArgs),
    /// Apply the scattering model to images.
    Haze(HazeArgs),
    /// Learn a haze generator from unpaired clear and hazy images.
    TrainPhysics(TrainPhysicsArgs),
    /// Train a dehazer from hazy images.
    Train(TrainArgs),
    /// Run a trained dehazer.
    Dehaze(DehazeArgs),
    /// PSNR/SSIM of predictions against references (JSON on stdout).
    Eval(EvalArgs),
    /// Equivariance residual of a trained dehazer (JSON on stdout).
    Audit(AuditArgs),
    /// Train and score every (variant, transform) cell.
    Ablation(AblationArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub beta_min: Option<f64>,
    #[arg(long)]
    pub beta_max: Option<f64>,
    #[arg(long)]
    pub alpha_min: Option<f64>,
    #[arg(long)]
    pub alpha_max: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HazeArgs {
    /// PNG file or directory of PNGs.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// EIDTNSR1 file or 16-bit grayscale PNG.
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub beta: f64,
    /// One value, or `r/g/b`.
    #[arg(long)]
    pub alpha: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Depth of a full-scale PNG depth value.
    #[arg(long, default_value_t = 1.0)]
    pub d_max: f64,
}

#[derive(Debug, Args)]
pub struct TrainPhysicsArgs {
    #[arg(long)]
    pub clear: PathBuf,
    #[arg(long)]
    pub hazy: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub cycle_weight: Option<f64>,
    /// Literal `log(1 − D(G(x)))` generator loss.
    #[arg(long)]
    pub saturating: bool,
    #[arg(long)]
    pub clear_discriminator: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub hazy: PathBuf,
    /// Dataset manifest (or its directory), frozen generator checkpoint, or
    /// `analytic:beta=B,alpha=A[,depth=D]`.
    #[arg(long)]
    pub physics: Option<String>,
    #[arg(long)]
    pub transform: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub detach_target: bool,
    #[arg(long)]
    pub per_item_transform: bool,
    /// Quarter-turn rotations only.
    #[arg(long)]
    pub exact: bool,
    /// `mse` or `l1`.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DehazeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// PNG file or directory of PNGs.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// PNG file or directory.
    #[arg(long)]
    pub pred: PathBuf,
    /// PNG file or directory with the same file names.
    #[arg(long = "ref")]
    pub reference: PathBuf,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub physics: String,
    #[arg(long)]
    pub transform: String,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated, e.g. `V1,V2,V3`.
    #[arg(long)]
    pub variants: Option<String>,
    /// Comma-separated transform specs, e.g. `rotate,shift,rotate+shift`.
    #[arg(long)]
    pub transforms: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn base_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::read(p),
        None => Ok(RunConfig::default()),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn invalid(key: &str, value: impl ToString, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        key: key.into(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

/// `(file name, path)` of a PNG file or of every PNG in a directory.
fn inputs(path: &Path, key: &str) -> Result<Vec<(String, PathBuf)>> {
    let files = if path.is_dir() {
        list_images(path)?
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        return Err(invalid(key, path.display(), "no such file or directory"));
    };
    if files.is_empty() {
        return Err(invalid(key, path.display(), "contains no PNG images"));
    }
    Ok(files
        .into_iter()
        .map(|p| (p.file_name().expect("file").to_string_lossy().into_owned(), p))
        .collect())
}

/// Runs one subcommand; returns the JSON report for `eval` and `audit`.
pub fn run(cli: Cli) -> Result<Option<String>> {
    match cli.command {
        Command::Synth(a) => synth(a).map(|_| None),
        Command::Haze(a) => haze(a).map(|_| None),
        Command::TrainPhysics(a) => train_physics(a).map(|_| None),
        Command::Train(a) => train(a).map(|_| None),
        Command::Dehaze(a) => dehaze_cmd(a).map(|_| None),
        Command::Eval(a) => eval(a).map(Some),
        Command::Audit(a) => audit(a).map(Some),
        Command::Ablation(a) => ablation(a).map(|_| None),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = base_config(&a.config)?;
    if let Some(v) = a.count {
        cfg.count = v;
    }
    if let Some(v) = a.size {
        cfg.scene.size = v;
    }
    if let Some(v) = a.seed {
        cfg.scene.seed = v;
    }
    if let Some(v) = a.channels {
        cfg.scene.channels = v;
    }
    if let Some(v) = a.beta_min {
        cfg.haze.beta[0] = v;
    }
    if let Some(v) = a.beta_max {
        cfg.haze.beta[1] = v;
    }
    if let Some(v) = a.alpha_min {
        cfg.haze.alpha[0] = v;
    }
    if let Some(v) = a.alpha_max {
        cfg.haze.alpha[1] = v;
    }
    if cfg.count == 0 {
        return Err(invalid("count", 0, "must be positive"));
    }
    cfg.scene.validate()?;
    cfg.haze.validate()?;
    synth_dataset(&cfg.scene, cfg.count, &cfg.haze, &a.out)?;
    cfg.echo(&a.out)
}

fn haze(a: HazeArgs) -> Result<()> {
    let alpha = a
        .alpha
        .split('/')
        .map(|v| v.trim().parse::<f64>().map_err(|_| invalid("alpha", &a.alpha, "expected a number or r/g/b")))
        .collect::<Result<Vec<_>>>()?;
    if !(a.d_max.is_finite() && a.d_max > 0.0) {
        return Err(invalid("d_max", a.d_max, "must be positive"));
    }
    let depth = DepthMap::<f32>::new(load_depth(&a.depth, a.d_max)?)?;
    let params = ScatteringParams::new(a.beta, alpha.clone(), depth)
        .map_err(|e| match e {
            Error::InvalidParameter { name, reason } => invalid(&name, if name == "beta" { a.beta.to_string() } else { a.alpha.clone() }, reason),
            other => other,
        })?;
    let op = HazeOperator::analytic(&params);
    let files = inputs(&a.input, "in")?;
    let images = files
        .iter()
        .map(|(_, p)| load_image::<f32>(p))
        .collect::<Result<Vec<_>>>()?;
    let (dh, dw) = params.depth.size();
    for ((name, _), x) in files.iter().zip(&images) {
        let [_, _, h, w] = x.shape();
        if (h, w) != (dh, dw) {
            return Err(invalid("depth", a.depth.display(), format!("is {dh}x{dw} but {name} is {h}x{w}")));
        }
    }
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    for ((name, _), x) in files.iter().zip(&images) {
        save_image(a.out.join(name), &op.apply_tensor(x)?)?;
    }
    let echo = serde_json::json!({
        "beta": a.beta,
        "alpha": alpha,
        "depth": a.depth,
        "d_max": a.d_max,
    });
    let p = a.out.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(&echo).expect("serializable") + "\n").map_err(|e| io_err(&p, e))
}

fn train_physics(a: TrainPhysicsArgs) -> Result<()> {
    let mut cfg = base_config(&a.config)?;
    let g = &mut cfg.gan;
    if let Some(v) = a.iterations {
        g.iterations = v;
    }
    if let Some(v) = a.batch_size {
        g.batch_size = v;
    }
    if let Some(v) = a.lr {
        g.lr = v;
    }
    if let Some(v) = a.cycle_weight {
        g.cycle_weight = v;
    }
    if let Some(v) = a.seed {
        g.seed = v;
    }
    g.saturating |= a.saturating;
    g.clear_discriminator |= a.clear_discriminator;
    cfg.gan.validate()?;
    train_pseudo_physics(&a.clear, &a.hazy, &cfg.gan, &a.out)?;
    cfg.echo(&a.out)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = base_config(&a.config)?;
    let t = &mut cfg.train;
    if let Some(p) = &a.physics {
        t.physics = Some(PhysicsSource::parse(p)?);
    }
    if let Some(v) = &a.transform {
        t.transform = v.clone();
    }
    if let Some(v) = a.lambda {
        t.lambda_ec = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.variant {
        t.variant = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.base_lr = v;
    }
    if let Some(v) = &a.loss {
        t.loss = match v.as_str() {
            "mse" => Reduction::Mse,
            "l1" => Reduction::L1,
            _ => return Err(invalid("loss", v, "expected mse or l1")),
        };
    }
    if let Some(v) = a.levels {
        t.unet.levels = v;
    }
    if let Some(v) = a.base_channels {
        t.unet.base_channels = v;
    }
    t.detach_target |= a.detach_target;
    t.per_item_transform |= a.per_item_transform;
    t.exact_transforms |= a.exact;
    cfg.train.validate()?;
    if cfg.train.physics.is_none() {
        return Err(invalid("physics", "none", "a physics source is required"));
    }
    train_eid(&a.hazy, &cfg.train, &a.out)?;
    cfg.echo(&a.out)
}

fn dehaze_cmd(a: DehazeArgs) -> Result<()> {
    let net = load_dehazer::<f32>(&a.ckpt)?;
    let files = inputs(&a.input, "in")?;
    let images = files
        .iter()
        .map(|(_, p)| load_image::<f32>(p))
        .collect::<Result<Vec<_>>>()?;
    let out = dehaze(&net, &images)?;
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    for ((name, _), x) in files.iter().zip(&out) {
        save_image(a.out.join(name), x)?;
    }
    let echo = serde_json::json!({
        "ckpt": a.ckpt,
        "in": a.input,
        "unet": net.arch.config(),
    });
    let p = a.out.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(&echo).expect("serializable") + "\n").map_err(|e| io_err(&p, e))
}

fn eval(a: EvalArgs) -> Result<String> {
    let pred = inputs(&a.pred, "pred")?;
    let pairs = if a.reference.is_dir() {
        pred.iter()
            .map(|(name, p)| {
                let r = a.reference.join(name);
                if !r.is_file() {
                    return Err(invalid("ref", a.reference.display(), format!("has no image named {name}")));
                }
                Ok((name.clone(), load_image::<f64>(p)?, load_image::<f64>(&r)?))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        if pred.len() != 1 {
            return Err(invalid("ref", a.reference.display(), "a directory is needed for several predictions"));
        }
        vec![(pred[0].0.clone(), load_image::<f64>(&pred[0].1)?, load_image::<f64>(&a.reference)?)]
    };
    for (name, p, r) in &pairs {
        if p.shape() != r.shape() {
            return Err(invalid(
                "ref",
                a.reference.display(),
                format!("{name}: prediction {:?} vs reference {:?}", p.shape(), r.shape()),
            ));
        }
    }
    let report: MetricReport = evaluate_pairs(&pairs, threads())?;
    Ok(serde_json::to_string_pretty(&report).expect("serializable"))
}

fn audit(a: AuditArgs) -> Result<String> {
    let net = load_dehazer::<f32>(&a.ckpt)?;
    let source = PhysicsSource::parse(&a.physics)?;
    let (names, hazy): (Vec<String>, Vec<Tensor<f32>>) = load_hazy_dir(&a.input)?;
    let [_, _, h, w] = hazy[0].shape();
    let physics = source.resolve::<f32>(&names, h, w)?;
    let spec = eid_core::transforms::TransformSpec::parse(&a.transform)?.exact(a.exact);
    let report = audit_equivariance(&net, &physics, &hazy, &spec, a.seed)?;
    Ok(serde_json::to_string_pretty(&report).expect("serializable"))
}

fn ablation(a: AblationArgs) -> Result<()> {
    let mut cfg = base_config(&a.config)?;
    if let Some(v) = &a.variants {
        cfg.ablation.variants = check_variant_list(v)?;
    }
    if let Some(v) = &a.transforms {
        cfg.ablation.transforms = v.split(',').filter(|t| !t.is_empty()).map(str::to_string).collect();
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.lambda {
        cfg.train.lambda_ec = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.base_lr = v;
    }
    if let Some(v) = a.base_channels {
        cfg.train.unet.base_channels = v;
    }
    cfg.ablation.parallel |= a.parallel;
    if cfg.ablation.variants.is_empty() {
        return Err(invalid("variants", "", "at least one variant is required"));
    }
    if cfg.ablation.transforms.is_empty() {
        return Err(invalid("transforms", "", "at least one transform is required"));
    }
    for t in &cfg.ablation.transforms {
        eid_core::transforms::TransformSpec::parse(t)?;
    }
    cfg.train.validate()?;
    let bench = Benchmark::load(&a.data)?;
    let rows = ablation_matrix(&cfg.train, &cfg.ablation, &bench, threads());
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let p = a.out.join("ablation.csv");
    fs::write(&p, to_csv(&rows)).map_err(|e| io_err(&p, e))?;
    cfg.echo(&a.out)
}

