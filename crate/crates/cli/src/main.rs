use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use rlcsc::data::{
    bicubic_resize, build_patchset, load_y, load_ycbcr, read_manifest, save_rgb, save_y,
    AugmentSpec, ImageY, PatchOptions, PatchSet,
};
use rlcsc::gradcheck::{gradcheck, GradcheckOptions};
use rlcsc::metrics::{evaluate, EvalOptions, Predictor};
use rlcsc::model::{ModelConfig, Summary};
use rlcsc::sparse::{ista_solve, random_problem, reference_minimum};
use rlcsc::tensor::set_num_threads;
use rlcsc::trainer::{train, Checkpoint, EpochRecord, TrainConfig, TrainSink};
use rlcsc::Error;

const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "rlcsc",
    version,
    about = "Recursive convolutional sparse coding super-resolution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a packed training patch file from a manifest of images.
    Prepare(PrepareArgs),
    /// Train a model on a patch file.
    Train(TrainArgs),
    /// Super-resolve one image.
    Sr(SrArgs),
    /// Score a model or plain bicubic on a dataset.
    Eval(EvalArgs),
    /// Run ISTA on a random sparse coding problem.
    IstaDemo(IstaArgs),
    /// Compare tape gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Print depth, layer shapes and parameter count.
    Summary(SummaryArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Aug {
    Full,
    None,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "2,3,4", value_delimiter = ',')]
    scales: Vec<usize>,
    #[arg(long, default_value_t = 33)]
    patch: usize,
    #[arg(long, default_value_t = 33)]
    stride: usize,
    #[arg(long, value_enum, default_value_t = Aug::Full)]
    aug: Aug,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep a seeded random subset of at most this many pairs.
    #[arg(long)]
    max_pairs: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    /// Recursion count K.
    #[arg(long)]
    k: Option<usize>,
    /// Feature and code channels, as "n,m".
    #[arg(long)]
    channels: Option<String>,
}

impl ModelArgs {
    fn config(&self) -> Result<ModelConfig> {
        let mut c = ModelConfig::default();
        if let Some(k) = self.k {
            c.recursions = k;
        }
        if let Some(ch) = &self.channels {
            let (n, m) = parse_channels(ch)?;
            c.features = n;
            c.codes = m;
        }
        c.validate()?;
        Ok(c)
    }
}

fn parse_channels(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [n, m] => Ok((
            n.parse()
                .with_context(|| format!("bad channel count {n:?}"))?,
            m.parse()
                .with_context(|| format!("bad channel count {m:?}"))?,
        )),
        _ => bail!(Error::InvalidArgument(format!(
            "--channels expects \"features,codes\", got {s:?}"
        ))),
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// key = value file; unspecified keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SrArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    scale: usize,
    #[arg(long)]
    output: PathBuf,
    /// Accept scales other than 2, 3 and 4.
    #[arg(long)]
    allow_any: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, conflicts_with = "bicubic", required_unless_present = "bicubic")]
    model: Option<PathBuf>,
    #[arg(long)]
    bicubic: bool,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    scale: usize,
    /// Border pixels removed per side; defaults to the scale.
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Round images to 8-bit levels at every stage.
    #[arg(long)]
    quantize: bool,
}

#[derive(Args)]
struct IstaArgs {
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    m: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value = "16,32")]
    channels: String,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check a random subset of entries per tensor instead of all.
    #[arg(long)]
    max_per_tensor: Option<usize>,
}

#[derive(Args)]
struct SummaryArgs {
    #[command(flatten)]
    model: ModelArgs,
}

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
enum Failure {
    /// Gradient check exceeded its tolerance.
    Check,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Check => write!(f, "gradient check failed"),
        }
    }
}

impl std::error::Error for Failure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Failure>().is_some() {
        return 6;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } => 3,
                Error::Image { .. }
                | Error::UnsupportedImage { .. }
                | Error::Format { .. }
                | Error::Config { .. } => 4,
                Error::Divergence { .. } | Error::NonFinite { .. } => 5,
                Error::InvalidArgument(_) | Error::Empty(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = threads_from_env().and_then(|()| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn threads_from_env() -> Result<()> {
    if let Ok(v) = std::env::var("RLCSC_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "RLCSC_THREADS must be a positive integer, got {v:?}"
            ))
        })?;
        set_num_threads(n);
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train_cmd(a),
        Command::Sr(a) => sr(a),
        Command::Eval(a) => eval(a),
        Command::IstaDemo(a) => ista_demo(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Summary(a) => {
            println!(
                "{}",
                Summary {
                    config: a.model.config()?
                }
            );
            Ok(())
        }
    }
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let paths = read_manifest(&a.manifest)?;
    if paths.is_empty() {
        bail!(Error::Empty("manifest lists no images"));
    }
    let images = paths
        .iter()
        .map(load_y)
        .collect::<rlcsc::Result<Vec<ImageY>>>()?;
    let spec = match a.aug {
        Aug::Full => AugmentSpec::full(a.scales.clone()),
        Aug::None => AugmentSpec::none(a.scales.clone()),
    };
    let opts = PatchOptions {
        patch: a.patch,
        stride: a.stride,
        max_pairs: a.max_pairs,
        seed: a.seed,
    };
    let set = build_patchset(&images, &spec, &opts)?;
    let bytes = set.to_bytes();
    fs::write(&a.out, &bytes).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    println!("pairs: {}", set.len());
    println!("sha256: {}", hex::encode(Sha256::digest(&bytes)));
    Ok(())
}

struct DirSink {
    dir: PathBuf,
    csv: fs::File,
}

impl TrainSink for DirSink {
    fn on_epoch(&mut self, r: &EpochRecord) -> rlcsc::Result<()> {
        println!(
            "epoch {:>4}  step {:>8}  lr {:.3e}  loss {:.6e}",
            r.epoch, r.step, r.lr, r.loss
        );
        let path = self.dir.join("loss.csv");
        writeln!(self.csv, "{}", r.csv_row())
            .and_then(|()| self.csv.flush())
            .map_err(|e| Error::Io { path, source: e })
    }

    fn on_checkpoint(&mut self, c: &Checkpoint) -> rlcsc::Result<()> {
        c.save(self.dir.join(format!("epoch-{:04}.ckpt", c.epoch)))?;
        c.save(self.dir.join("last.ckpt"))
    }
}

/// Rewrites `loss.csv` keeping rows up to `epoch`, for resumed runs.
fn open_loss_csv(dir: &Path, keep_through: Option<usize>) -> Result<fs::File> {
    let path = dir.join("loss.csv");
    let mut kept = String::from(EpochRecord::CSV_HEADER);
    kept.push('\n');
    if let Some(limit) = keep_through {
        if let Ok(old) = fs::read_to_string(&path) {
            for line in old.lines().skip(1) {
                let epoch: Option<usize> = line.split(',').next().and_then(|e| e.parse().ok());
                if epoch.is_some_and(|e| e <= limit) {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
    }
    fs::write(&path, kept).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .map_err(|e| Error::Io { path, source: e })?)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    let set = PatchSet::load(&a.data)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::Io {
        path: a.out_dir.clone(),
        source: e,
    })?;
    let start = match &a.resume {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            if a.model.k.is_some() || a.model.channels.is_some() {
                let wanted = a.model.config()?;
                let have = c.params.config;
                if (a.model.k.is_some() && wanted.recursions != have.recursions)
                    || (a.model.channels.is_some()
                        && (wanted.features, wanted.codes) != (have.features, have.codes))
                {
                    bail!(Error::InvalidArgument(format!(
                        "--k/--channels disagree with the checkpoint ({}x{} K={})",
                        have.features, have.codes, have.recursions
                    )));
                }
            }
            c
        }
        None => Checkpoint::fresh(a.model.config()?, cfg.seed)?,
    };
    fs::write(a.out_dir.join("config.txt"), cfg.to_text()).map_err(|e| Error::Io {
        path: a.out_dir.join("config.txt"),
        source: e,
    })?;
    let csv = open_loss_csv(&a.out_dir, a.resume.as_ref().map(|_| start.epoch))?;
    if a.resume.is_none() {
        start.save(a.out_dir.join("epoch-0000.ckpt"))?;
        start.save(a.out_dir.join("last.ckpt"))?;
    }
    println!(
        "training {} pairs, {} parameters, from epoch {}",
        set.len(),
        start.params.parameter_count(),
        start.epoch
    );
    let mut sink = DirSink {
        dir: a.out_dir.clone(),
        csv,
    };
    match train(&set, start, &cfg, &mut sink) {
        Ok(out) => {
            println!(
                "done: epoch {} step {}; checkpoint {}",
                out.checkpoint.epoch,
                out.checkpoint.step,
                a.out_dir.join("last.ckpt").display()
            );
            Ok(())
        }
        Err(e @ (Error::Divergence { .. } | Error::NonFinite { .. })) => {
            Err(anyhow!(e).context(format!(
                "aborted; last good checkpoint kept at {}",
                a.out_dir.join("last.ckpt").display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn sr(a: SrArgs) -> Result<()> {
    if !a.allow_any && !(2..=4).contains(&a.scale) {
        bail!(Error::InvalidArgument(format!(
            "scale {} is outside 2, 3, 4; pass --allow-any to override",
            a.scale
        )));
    }
    if a.scale == 0 {
        bail!(Error::InvalidArgument("scale must be positive".into()));
    }
    let ckpt = Checkpoint::load(&a.model)?;
    let img = load_ycbcr(&a.input)?;
    let t0 = Instant::now();
    let s = a.scale as f64;
    let ilr = bicubic_resize(&img.y, s)?;
    let r = ImageY::from_tensor(&ckpt.params.residual(&ilr.to_tensor::<f32>())?);
    let samples = ilr
        .samples()
        .iter()
        .zip(r.samples())
        .map(|(x, d)| x + d)
        .collect();
    let y = ImageY::new(ilr.height(), ilr.width(), samples)?.clamp01();
    let elapsed = t0.elapsed();
    match &img.chroma {
        Some((cb, cr)) => save_rgb(
            &y,
            &bicubic_resize(cb, s)?,
            &bicubic_resize(cr, s)?,
            &a.output,
        )?,
        None => save_y(&y, &a.output)?,
    }
    println!(
        "{}x{} -> {}x{} in {:.3} s",
        img.y.width(),
        img.y.height(),
        y.width(),
        y.height(),
        elapsed.as_secs_f64()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let paths = read_manifest(&a.manifest)?;
    let opts = EvalOptions {
        scale: a.scale,
        crop: a.crop.unwrap_or(a.scale),
        quantize: a.quantize,
    };
    let ckpt = match &a.model {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let (predictor, label) = match &ckpt {
        Some(c) => (Predictor::Model(&c.params), "RL-CSC"),
        None => (Predictor::Bicubic, "Bicubic"),
    };
    let report = evaluate(predictor, &paths, &opts);
    print!("{}", report.to_table(label));
    if let Some(csv) = &a.csv {
        fs::write(csv, report.to_csv()).map_err(|e| Error::Io {
            path: csv.clone(),
            source: e,
        })?;
    }
    if report.images.is_empty() {
        bail!(Error::Empty("no image could be evaluated"));
    }
    Ok(())
}

fn ista_demo(a: IstaArgs) -> Result<()> {
    let p = random_problem(a.n, a.m, a.lambda, a.seed)?;
    let res = ista_solve(&p, a.iters)?;
    println!("L = {:.6}", p.lipschitz);
    println!("iter,objective");
    for (k, obj) in res.objective_trace.iter().enumerate() {
        println!("{k},{obj:.12e}");
    }
    let (_, best) = reference_minimum(&p, 10_000)?;
    let last = *res.objective_trace.last().expect("iters >= 1");
    let monotone = res.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-10);
    println!("oracle minimum: {best:.12e}");
    println!("gap: {:.3e}", last - best);
    println!("nonincreasing: {monotone}");
    println!(
        "nonzeros: {}",
        res.code.iter().filter(|&&v| v != 0.0).count()
    );
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let (n, m) = parse_channels(&a.channels)?;
    let mut opts = GradcheckOptions::new(a.k, n, m);
    opts.eps = a.eps;
    opts.seed = a.seed;
    opts.max_per_tensor = a.max_per_tensor;
    let report = gradcheck(&opts)?;
    println!(
        "{:<6} {:>8} {:>6} {:>12} {:>12}",
        "param", "checked", "kinks", "max rel", "norm rel"
    );
    for t in &report.tensors {
        println!(
            "{:<6} {:>8} {:>6} {:>12.3e} {:>12.3e}",
            t.name, t.checked, t.kinks, t.max_rel_err, t.norm_rel_err
        );
    }
    let pass = report.passes(GRADCHECK_TOL);
    println!(
        "max relative error {:.3e} ({} at {GRADCHECK_TOL:e})",
        report.max_rel_err(),
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(Failure::Check.into())
    }
}
