//! Command-line front end. [`run`] maps errors to exit codes: 0 on success,
//! 1 for usage errors and 2 for failures while running.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use num_complex::Complex;

use crate::error::Error;
use crate::fourier::{decode_field, BandLimitedPatch};
use crate::io::{
    gen_synthetic, load_checkpoint, load_image, load_pairs, parse_config, save_checkpoint, write_atomic, write_tensor,
    Checkpoint, ConfigMap, SyntheticConfig,
};
use crate::model::{count_costs, forward, ModelKind, ModelParams, NetVariant};
use crate::tensor::{AnyTensor, Real, Tensor};
use crate::train::{evaluate, train_loop, LossKind, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "bandreg", version, about = "Band-limited deformable image registration")]
struct Cli {
    /// File of `key=value` lines; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with train and test manifests.
    GenData(GenDataArgs),
    /// Train a network on a dataset manifest.
    Train(TrainArgs),
    /// Register one moving image to one fixed image.
    Register(RegisterArgs),
    /// Score a checkpoint on a dataset manifest as JSON lines.
    Evaluate(EvaluateArgs),
    /// Print the layer plan, parameter count and multiply-adds.
    Inspect(InspectArgs),
    /// Decode a band-limited patch file into a displacement field.
    Decode(DecodeArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct ModelArgs {
    /// One of fourier-net, fourier-net-plus, unet, bilinear-net, bilinear-net-plus.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    cascades: Option<usize>,
    /// Predict a velocity field and integrate it.
    #[arg(long)]
    diff: bool,
    #[arg(long)]
    image_reduction: Option<usize>,
    #[arg(long)]
    field_reduction: Option<usize>,
    /// Channels at the finest encoder level.
    #[arg(long)]
    channels: Option<usize>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training pairs.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    test_pairs: Option<usize>,
    /// Spatial shape such as `96x96`.
    #[arg(long)]
    shape: Option<String>,
    /// Largest velocity magnitude in voxels.
    #[arg(long)]
    deform_scale: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training manifest.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation manifest.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Arithmetic precision, f32 or f64.
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    moving: PathBuf,
    fixed: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// JSON-lines output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Input shape such as `96x96` or `64x64x64`.
    #[arg(long)]
    shape: Option<String>,
    /// Also write an initialized checkpoint to this directory.
    #[arg(long)]
    save_init: Option<PathBuf>,
    /// With `--save-init`, write all-zero weights instead of random ones.
    #[arg(long)]
    zero: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    patch: PathBuf,
    /// Full spatial shape of the decoded field, such as `96x96`.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Merges command-line values over the config file.
struct Settings {
    config: ConfigMap,
}

impl Settings {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text).map_err(|e| usage(e.to_string()))?
            }
            None => ConfigMap::default(),
        };
        Ok(Settings { config })
    }

    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.config.parsed(key).map_err(|e| usage(e.to_string())),
        }
    }

    fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T> {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<T> {
        self.pick(flag, key)?.ok_or_else(|| usage(format!("missing required --{key}")))
    }

    fn switch(&self, flag: bool, key: &str) -> CliResult<bool> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }

    fn variant(&self, m: &ModelArgs, rank: usize) -> CliResult<NetVariant> {
        let name: String = self.or(m.variant.clone(), "variant", ModelKind::FourierNet.name().to_string())?;
        let kind = ModelKind::parse(&name).map_err(|e| usage(e.to_string()))?;
        let mut v = NetVariant::new(kind, rank);
        v.cascades = self.or(m.cascades, "cascades", v.cascades)?;
        v.diffeomorphic = self.switch(m.diff, "diff")?;
        v.image_reduction = self.or(m.image_reduction, "image-reduction", v.image_reduction)?;
        v.field_reduction = self.or(m.field_reduction, "field-reduction", v.field_reduction)?;
        v.base_channels = self.or(m.channels, "channels", v.base_channels)?;
        v.validate().map_err(|e| usage(e.to_string()))?;
        Ok(v)
    }
}

fn parse_shape(s: &str) -> CliResult<Vec<usize>> {
    let dims: Option<Vec<usize>> = s.split(['x', 'X', ',']).map(|d| d.trim().parse().ok()).collect();
    match dims {
        Some(d) if (2..=3).contains(&d.len()) && d.iter().all(|&n| n > 0) => Ok(d),
        _ => Err(usage(format!("invalid shape '{s}' (expected e.g. 96x96 or 64x64x64)"))),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let s = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => gen_data(&s, a),
        Command::Train(a) => train(&s, a),
        Command::Register(a) => register(&s, a),
        Command::Evaluate(a) => evaluate_cmd(&s, a),
        Command::Inspect(a) => inspect(&s, a),
        Command::Decode(a) => decode(&s, a),
    }
}

fn gen_data(s: &Settings, a: GenDataArgs) -> CliResult<()> {
    let out: PathBuf = s.required(a.out, "out")?;
    let shape = parse_shape(&s.or(a.shape, "shape", "96x96".to_string())?)?;
    let cfg = SyntheticConfig {
        seed: s.or(a.seed, "seed", 7)?,
        n_pairs: s.or(a.pairs, "pairs", 200)?,
        test_pairs: s.or(a.test_pairs, "test-pairs", 20)?,
        shape,
        deform_scale: s.or(a.deform_scale, "deform-scale", 3.0)?,
    };
    let (train, test) = gen_synthetic(&out, &cfg)?;
    println!("wrote {} and {}", train.display(), test.display());
    Ok(())
}

fn train(s: &Settings, a: TrainArgs) -> CliResult<()> {
    let train_path: PathBuf = s.required(a.train, "train")?;
    let out: PathBuf = s.required(a.out, "out")?;
    let train_pairs = load_pairs(&train_path)?;
    let val_pairs = match s.pick(a.val, "val")? {
        Some(p) => load_pairs(&p)?,
        None => Vec::new(),
    };
    let rank = train_pairs.first().map(|p| p.moving.ndim() - 1).unwrap_or(2);
    let variant = s.variant(&a.model, rank)?;
    let d = TrainConfig::default();
    let loss = s.or(a.loss, "loss", "mse".to_string())?;
    let cfg = TrainConfig {
        loss: LossKind::parse(&loss).map_err(|e| usage(e.to_string()))?,
        lambda: s.or(a.lambda, "lambda", d.lambda)?,
        epochs: s.or(a.epochs, "epochs", d.epochs)?,
        batch: s.or(a.batch, "batch", d.batch)?,
        lr: s.or(a.lr, "lr", d.lr)?,
        seed: s.or(a.seed, "seed", d.seed)?,
        checkpoint_every: s.or(a.checkpoint_every, "checkpoint-every", d.checkpoint_every)?,
        ..d
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let precision = s.or(a.precision, "precision", "f32".to_string())?;
    let curve = match precision.as_str() {
        "f32" => train_with::<f32>(&variant, &train_pairs, &val_pairs, &cfg, &out)?,
        "f64" => train_with::<f64>(&variant, &train_pairs, &val_pairs, &cfg, &out)?,
        other => return Err(usage(format!("unknown precision '{other}' (expected f32 or f64)"))),
    };
    if let Some(last) = curve.last() {
        println!("epoch {}: loss {:.6}, val dice {:.4}", last.epoch, last.loss, last.val_dice);
    }
    println!("checkpoint written to {}", out.join("checkpoint").display());
    Ok(())
}

fn train_with<R: Real>(
    variant: &NetVariant,
    train: &[crate::io::ImagePair],
    val: &[crate::io::ImagePair],
    cfg: &TrainConfig,
    out: &Path,
) -> CliResult<Vec<crate::train::EpochRecord>> {
    let init = ModelParams::<R>::init(variant, cfg.seed)?;
    Ok(train_loop(variant, init, train, val, cfg, Some(out))?.curve)
}

fn register(s: &Settings, a: RegisterArgs) -> CliResult<()> {
    let ckpt_dir: PathBuf = s.required(a.checkpoint, "checkpoint")?;
    let out: PathBuf = s.required(a.out, "out")?;
    let ckpt = load_checkpoint::<f64>(&ckpt_dir)?;
    let moving = load_image(&a.moving)?;
    let fixed = load_image(&a.fixed)?;
    let pred = forward(&ckpt.variant, &ckpt.params, &moving, &fixed)?;
    std::fs::create_dir_all(&out).map_err(Error::from)?;
    write_tensor(&out.join("field.blt"), &AnyTensor::Real64(pred.field.as_tensor().clone()))?;
    write_tensor(&out.join("warped.blt"), &AnyTensor::Real64(pred.warped))?;
    if let Some(v) = &pred.velocity {
        write_tensor(&out.join("velocity.blt"), &AnyTensor::Real64(v.as_tensor().clone()))?;
    }
    if let Some(p) = pred.patches.last() {
        write_tensor(&out.join("patch.blt"), &AnyTensor::Complex64(p.coeffs().cast()))?;
    }
    println!("wrote registration outputs to {}", out.display());
    Ok(())
}

fn evaluate_cmd(s: &Settings, a: EvaluateArgs) -> CliResult<()> {
    let manifest: PathBuf = s.required(a.manifest, "manifest")?;
    let ckpt_dir: PathBuf = s.required(a.checkpoint, "checkpoint")?;
    let ckpt = load_checkpoint::<f64>(&ckpt_dir)?;
    let pairs = load_pairs(&manifest)?;
    let metrics = evaluate(&ckpt.variant, &ckpt.params, &pairs)?;
    let mut text = String::new();
    for m in &metrics {
        text.push_str(&serde_json::to_string(m).map_err(Error::from)?);
        text.push('\n');
    }
    match a.out {
        Some(path) => write_atomic(&path, text.as_bytes())?,
        None => print!("{text}"),
    }
    let scored: Vec<f64> = metrics.iter().map(|m| m.dice_mean).filter(|d| !d.is_nan()).collect();
    if !scored.is_empty() {
        eprintln!("mean dice {:.6} over {} pairs", scored.iter().sum::<f64>() / scored.len() as f64, scored.len());
    }
    Ok(())
}

fn inspect(s: &Settings, a: InspectArgs) -> CliResult<()> {
    let shape = parse_shape(&s.or(a.shape, "shape", "96x96".to_string())?)?;
    let variant = s.variant(&a.model, shape.len())?;
    variant.check_spatial(&shape).map_err(|e| usage(e.to_string()))?;
    let costs = count_costs(&variant, &shape)?;
    println!("{}", variant.describe(&shape)?);
    println!("params: {}", costs.params);
    println!("mult-adds: {}", costs.mult_adds);
    if let Some(dir) = s.pick(a.save_init, "save-init")? {
        let params = if a.zero {
            ModelParams::<f64>::zeros(&variant)?
        } else {
            ModelParams::<f64>::init(&variant, s.or(a.seed, "seed", 0)?)?
        };
        save_checkpoint(&dir, &Checkpoint { variant, params, epoch: 0 })?;
        println!("initial checkpoint written to {}", dir.display());
    }
    Ok(())
}

fn decode(s: &Settings, a: DecodeArgs) -> CliResult<()> {
    let out: PathBuf = s.required(a.out, "out")?;
    let shape = parse_shape(&s.required::<String>(a.shape, "shape")?)?;
    let coeffs: Tensor<Complex<f64>> = match crate::io::read_tensor(&a.patch)? {
        AnyTensor::Complex64(t) => t.cast(),
        other => return Err(usage(format!("patch file must hold complex64 data, found {}", other.dtype().name()))),
    };
    let patch_spatial = &coeffs.shape()[1..];
    if patch_spatial.len() != shape.len() {
        return Err(usage(format!("patch {:?} does not match shape {shape:?}", coeffs.shape())));
    }
    let reduction: Option<Vec<usize>> = shape
        .iter()
        .zip(patch_spatial)
        .map(|(&n, &p)| (p > 0 && n % p == 0).then(|| n / p))
        .collect();
    let reduction = reduction.ok_or_else(|| usage(format!("shape {shape:?} is not a multiple of patch {patch_spatial:?}")))?;
    let decoded = decode_field(&BandLimitedPatch::new(coeffs, shape, reduction)?)?;
    write_tensor(&out, &AnyTensor::Real64(decoded.field))?;
    println!("wrote field to {}", out.display());
    Ok(())
}
