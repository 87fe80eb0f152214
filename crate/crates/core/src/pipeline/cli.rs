//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use super::image_io::{load_rgb, save_rgb};
use super::{DataSource, ImageTriplet, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_predictions, export_predictions, inference_fps, predict_all, write_csv, EvalConfig, MetricsReport};
use crate::losses::LossConfig;
use crate::ndiff::Array;
use crate::nets::checkpoint::ModelBundle;
use crate::nets::{Arch, NetConfig};
use crate::robust::{corrupt, robustness_sweep, write_sweep_csv, Condition, Corruption, CorruptionSpec, LossSource, SweepSuite, FLIP_EPSILONS, PGD_EPSILONS};
use crate::train::{IntrinsicsMode, RunDir};

#[derive(Debug, Parser)]
#[command(name = "sfmk", version, about = "Self-supervised monocular depth and ego-motion")]
pub struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train depth and ego-motion networks.
    Train(TrainArgs),
    /// Depth metrics of a checkpoint.
    Eval(EvalArgs),
    /// Adversarial attack on a checkpoint.
    Attack(AttackArgs),
    /// Write corrupted copies of images.
    Corrupt(CorruptArgs),
    /// Inference speed in frames per second.
    Bench(BenchArgs),
    /// Write depth predictions as 16-bit PNGs.
    Export(ExportArgs),
    /// Full robustness sweep to CSV.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (`key = value`); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Depth and ego architecture codes, e.g. `tt`, `ct`.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub learn_intrinsics: bool,
    /// `desk` or `full`.
    #[arg(long)]
    pub preset: Option<String>,
    /// `synth[:count[:seed]]` or `kitti:<root>`.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value = "runs/latest")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `synth[:count[:seed]]` or `kitti:<root>`.
    #[arg(long, default_value = "synth")]
    pub data: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Median-scale predictions (default).
    #[arg(long, conflicts_with = "unscaled")]
    pub scaled: bool,
    #[arg(long)]
    pub unscaled: bool,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `pgd`, `flip-h` or `flip-v`.
    #[arg(long, default_value = "pgd")]
    pub kind: String,
    /// Strength in 1/255 units; every standard strength when omitted.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[arg(long, required_unless_present = "all", conflicts_with = "all")]
    pub name: Option<String>,
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = 5)]
    pub severity: u8,
    /// Input images; target frames of `--data` when none are given.
    #[arg(long)]
    pub image: Vec<PathBuf>,
    #[arg(long, default_value = "synth:1")]
    pub data: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `full` (every condition) or `corruptions`.
    #[arg(long, default_value = "full")]
    pub suite: String,
    #[arg(long, default_value_t = 5)]
    pub severity: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub csv: PathBuf,
}

/// Parse `argv`, run, and return the process exit code: 0 on success, 2
/// for usage errors, 1 for runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    if let Err(e) = configure_threads(cli.deterministic) {
        eprintln!("error: {e}");
        return 1;
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn configure_threads(deterministic: bool) -> Result<()> {
    let threads = if deterministic {
        Some(1)
    } else {
        match std::env::var("SFMK_THREADS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| Error::Config(format!("SFMK_THREADS={v:?} is not a count")))?),
            Err(_) => None,
        }
    };
    if let Some(n) = threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Attack(a) => attack(a),
        Command::Corrupt(a) => corrupt_images(a),
        Command::Bench(a) => bench(a),
        Command::Export(a) => export(a),
        Command::Sweep(a) => sweep(a),
    }
}

/// Two architecture codes, depth first: `tt`, `tc`, `ct`, `cc`.
pub fn parse_arch_pair(s: &str) -> Result<(Arch, Arch)> {
    let codes: Vec<char> = s.chars().filter(|c| !matches!(c, ',' | '-' | ' ')).collect();
    match codes.as_slice() {
        [d, e] => Ok((d.to_string().parse()?, e.to_string().parse()?)),
        [d] => {
            let a: Arch = d.to_string().parse()?;
            Ok((a, a))
        }
        _ => Err(Error::Config(format!("--arch {s:?}: expected two codes from {{t,c}}"))),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(Arch::Transformer, Arch::Transformer),
    };
    if let Some(arch) = &a.arch {
        let (d, e) = parse_arch_pair(arch)?;
        cfg.depth_arch = d;
        cfg.ego_arch = e;
    }
    match a.preset.as_deref() {
        None => {}
        Some("desk") => cfg.net = NetConfig::desk(),
        Some("full") => cfg.net = NetConfig::full(),
        Some(other) => return Err(Error::Config(format!("unknown preset {other:?}"))),
    }
    if let Some(d) = &a.data {
        cfg.data = d.parse()?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.learn_intrinsics {
        cfg.intrinsics = IntrinsicsMode::Learned;
    }
    if let Some(n) = a.epochs {
        cfg.optim.epochs = n;
    }
    if let Some(n) = a.batch_size {
        cfg.optim.batch_size = n;
    }
    cfg.validate()?;
    let data = cfg.load_data()?;
    info!("training {}{} on {} ({} samples)", cfg.depth_arch.code(), cfg.ego_arch.code(), cfg.data, data.len());
    let run = RunDir::create(&a.out, &cfg.to_kv())?;
    let mut trainer = cfg.trainer()?;
    let history = trainer.fit(&data, Some(&run))?;
    let bundle = trainer.bundle(cfg.to_kv());
    let model = a.out.join("model.sfmk");
    bundle.save(&model)?;
    if let Some(last) = history.last() {
        println!("final loss {:.9}", last.mean_loss);
    }
    println!("model {}", model.display());
    Ok(())
}

fn load_model_and_data(a: &DataArgs) -> Result<(ModelBundle, Vec<ImageTriplet>)> {
    let bundle = ModelBundle::load(&a.checkpoint)?;
    let source: DataSource = a.data.parse()?;
    let data = source.load(bundle.depth.cfg.height, bundle.depth.cfg.width)?;
    Ok((bundle, data))
}

fn eval(a: EvalArgs) -> Result<()> {
    let (bundle, data) = load_model_and_data(&a.data)?;
    let cfg = if a.unscaled { EvalConfig::unscaled() } else { EvalConfig::default() };
    let preds = predict_all(&bundle.depth, &data)?;
    let reports = evaluate_predictions(&preds, &data, &cfg)?;
    let mut rows: Vec<(String, MetricsReport)> = data.iter().map(|t| t.id.clone()).zip(reports.iter().cloned()).collect();
    rows.push(("mean".into(), MetricsReport::mean(&reports)?));
    print!("{}", MetricsReport::table(&rows[rows.len() - 1..]));
    if let Some(csv) = &a.csv {
        write_csv(csv, &rows)?;
    }
    Ok(())
}

fn loss_config(bundle: &ModelBundle) -> Result<LossConfig> {
    let mut cfg = LossConfig::default();
    if !bundle.extra.is_empty() && bundle.extra.get("loss.alpha").is_some() {
        cfg = RunConfig::from_kv(&bundle.extra)?.loss;
    }
    Ok(cfg)
}

fn print_rows(rows: &[crate::robust::SweepRow]) {
    for r in rows {
        println!("{:<10} {:<18} eps {:>5} sev {} rmse {:.4}", r.condition, r.name, r.epsilon, r.severity, r.mean_rmse);
    }
}

fn attack(a: AttackArgs) -> Result<()> {
    let (bundle, data) = load_model_and_data(&a.data)?;
    let source: LossSource = a.kind.parse()?;
    let eps: Vec<f64> = match (a.eps, source) {
        (Some(e), _) => vec![e],
        (None, LossSource::TrainingLoss) => PGD_EPSILONS.to_vec(),
        (None, LossSource::Flip(_)) => FLIP_EPSILONS.to_vec(),
    };
    let mut conditions = vec![Condition::Clean];
    conditions.extend(eps.iter().map(|&epsilon| match source {
        LossSource::TrainingLoss => Condition::Pgd { epsilon },
        LossSource::Flip(direction) => Condition::Flip { direction, epsilon },
    }));
    let rows = robustness_sweep(&bundle, &data, &SweepSuite { conditions, seed: 0 }, &loss_config(&bundle)?)?;
    print_rows(&rows);
    if let Some(csv) = &a.csv {
        write_sweep_csv(csv, &rows)?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let (bundle, data) = load_model_and_data(&a.data)?;
    let mut suite = match a.suite.as_str() {
        "full" => SweepSuite::full(),
        "corruptions" => SweepSuite::corruptions(a.severity)?,
        other => return Err(Error::Config(format!("unknown suite {other:?}"))),
    };
    suite.seed = a.seed;
    let rows = robustness_sweep(&bundle, &data, &suite, &loss_config(&bundle)?)?;
    print_rows(&rows);
    write_sweep_csv(&a.csv, &rows)
}

fn corrupt_images(a: CorruptArgs) -> Result<()> {
    let kinds: Vec<Corruption> = match &a.name {
        Some(n) => vec![n.parse()?],
        None => Corruption::ALL.to_vec(),
    };
    let images: Vec<(String, Array)> = if a.image.is_empty() {
        let source: DataSource = a.data.parse()?;
        let net = NetConfig::desk();
        source.load(net.height, net.width)?.into_iter().map(|t| (t.id, t.target)).collect()
    } else {
        a.image
            .iter()
            .map(|p| Ok((stem(p), load_rgb(p)?)))
            .collect::<Result<_>>()?
    };
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    for kind in kinds {
        let spec = CorruptionSpec::new(kind, a.severity)?;
        for (i, (id, img)) in images.iter().enumerate() {
            let out = corrupt(img, &spec, a.seed.wrapping_add(i as u64))?;
            let path = a.out_dir.join(format!("{id}_{kind}_s{}.png", a.severity));
            save_rgb(&path, &out)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn bench(a: BenchArgs) -> Result<()> {
    let bundle = ModelBundle::load(&a.checkpoint)?;
    let (h, w) = (bundle.depth.cfg.height, bundle.depth.cfg.width);
    let fps = inference_fps(&bundle.depth, h, w, a.iters)?;
    println!("{} forward passes at {h}x{w}: {fps:.2} fps", a.iters);
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let (bundle, data) = load_model_and_data(&a.data)?;
    let preds = predict_all(&bundle.depth, &data)?;
    for p in export_predictions(&a.out_dir, &preds)? {
        println!("{}", p.display());
    }
    Ok(())
}
