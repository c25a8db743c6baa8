//! `overnet` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error
//! (unreadable images, corrupt checkpoints, I/O), 4 numeric failure
//! (non-finite training state, gradient check above tolerance), 5 scale
//! overflow. Reports go to stdout; diagnostics and timing to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use overnet::eval::{evaluate, EvalOptions};
use overnet::image::{degrade, BdOrder, DegradationKind, DegradationSpec};
use overnet::model::{init_params, super_resolve};
use overnet::train::{load_images, train_loop, Event, TrainConfig, TrainPairs};
use overnet::{gradcheck, kv, param_count, Checkpoint, Error, Image, ModelConfig, Scale, ScaleSet};

#[derive(Parser)]
#[command(name = "overnet", version, about = "Multi-scale super-resolution with an overscaling head")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of HR PNGs.
    Train(TrainArgs),
    /// Super-resolve one image.
    Sr(SrArgs),
    /// Evaluate a checkpoint on a directory of HR PNGs.
    Eval(EvalArgs),
    /// Produce a low-resolution image.
    Degrade(DegradeArgs),
    /// Finite-difference check of every operation and a tiny network.
    Gradcheck(GradcheckArgs),
    /// Print a checkpoint's configuration and parameter count.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of HR PNG images.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write (also rewritten on the checkpoint schedule).
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Full-size hyperparameters: batch 64, patch 64, halving every 2·10⁵ steps.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    /// Comma-separated training scales, e.g. `2,3,4` or `1.5,2`.
    #[arg(long)]
    scales: Option<String>,
    /// Override any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct SrArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Output scale; decimals and fractions such as `2.5` or `5/2` work.
    #[arg(long)]
    scale: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DegradationArgs {
    /// BI, BD or DN.
    #[arg(long, default_value = "BI")]
    kind: String,
    /// Gaussian noise level on the 0–255 scale (DN).
    #[arg(long, default_value_t = 30.0)]
    noise: f64,
    #[arg(long, default_value_t = 1.6)]
    blur_sigma: f64,
    #[arg(long, default_value_t = 7)]
    blur_kernel: usize,
    /// `down_then_blur` or `blur_then_down` (BD).
    #[arg(long, default_value = "down_then_blur")]
    bd_order: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DegradationArgs {
    fn spec(&self, scale: Scale) -> overnet::Result<DegradationSpec> {
        let kind: DegradationKind = self.kind.parse()?;
        let order: BdOrder = self.bd_order.parse()?;
        let spec = DegradationSpec {
            kind,
            scale,
            blur_sigma: self.blur_sigma,
            blur_kernel: self.blur_kernel,
            noise_level: self.noise,
            bd_order: order,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated scales; defaults to every integer from 2 to the
    /// checkpoint's maximum.
    #[arg(long)]
    scales: Option<String>,
    #[command(flatten)]
    degradation: DegradationArgs,
    /// Measure on the full image instead of cropping `⌈s⌉` border pixels.
    #[arg(long)]
    no_crop: bool,
    /// Print one line per image and scale instead of the summary table.
    #[arg(long)]
    records: bool,
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Downscaling factor; defaults to 3 for BD and 4 otherwise.
    #[arg(long)]
    scale: Option<String>,
    #[command(flatten)]
    degradation: DegradationArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of random seeds.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Coordinates sampled per network parameter tensor.
    #[arg(long, default_value_t = 8)]
    per_tensor: usize,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    ckpt: PathBuf,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Data(_) | Error::Io { .. } | Error::Format { .. } => 3,
            Error::Numeric(_) => 4,
            Error::ScaleOverflow { .. } => 5,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Sr(a) => sr(a),
        Command::Eval(a) => eval(a),
        Command::Degrade(a) => degrade_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Build the effective training configuration, recording where each
/// non-default value came from.
fn resolve_config(a: &TrainArgs) -> Result<(TrainConfig, Vec<(String, &'static str)>), Failure> {
    let mut cfg = TrainConfig::default();
    let mut origin: IndexMap<String, &'static str> = IndexMap::new();
    if a.paper_scale {
        cfg = cfg.paper_scale();
        for k in ["batch_size", "halve_every", "patch", "lr0"] {
            origin.insert(k.to_string(), "paper-scale");
        }
    }
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        let map = kv::parse(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        cfg.apply(&map)
            .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        for k in map.keys() {
            origin.insert(k.clone(), "file");
        }
    }
    let mut flags: IndexMap<String, String> = IndexMap::new();
    let mut flag = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.insert(k.to_string(), v);
        }
    };
    flag("seed", a.seed.map(|v| v.to_string()));
    flag("total_iters", a.iters.map(|v| v.to_string()));
    flag("lr0", a.lr0.map(|v| v.to_string()));
    flag("batch_size", a.batch_size.map(|v| v.to_string()));
    flag("patch", a.patch.map(|v| v.to_string()));
    flag("scales", a.scales.clone());
    for s in &a.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| config_error(format!("--set expects KEY=VALUE, got `{s}`")))?;
        flags.insert(k.trim().to_string(), v.trim().to_string());
    }
    cfg.apply(&flags)?;
    for k in flags.keys() {
        origin.insert(k.clone(), "flag");
    }
    cfg.validate()?;

    let mut pairs = cfg.model.to_pairs();
    pairs.extend(cfg.train_pairs());
    let shown = pairs
        .into_iter()
        .map(|(k, v)| {
            let src = origin.get(k).copied().unwrap_or("default");
            (format!("{k} = {v}"), src)
        })
        .collect();
    Ok((cfg, shown))
}

fn train(a: TrainArgs) -> Outcome {
    let (cfg, shown) = resolve_config(&a)?;
    eprintln!("configuration (flag > file > default):");
    for (line, src) in &shown {
        eprintln!("  {line:<32} # {src}");
    }

    let images = load_images(&a.data)?;
    let pairs = TrainPairs::prepare(&images, &cfg)?;
    let mut params = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.model != cfg.model {
                return Err(config_error(format!(
                    "{}: checkpoint model differs from the configured model",
                    path.display()
                )));
            }
            eprintln!("resuming from {} at step {}", path.display(), ck.params.step_count());
            ck.params
        }
        None => init_params(&cfg.model, cfg.seed)?,
    };
    eprintln!(
        "{} images, {} parameters, {} iterations",
        pairs.len(),
        param_count(&cfg.model),
        cfg.total_iters
    );

    let text = cfg.to_text();
    let save = |params: &overnet::ParamStore<f32>| -> overnet::Result<()> {
        let mut ck = Checkpoint::new(cfg.model.clone(), params.clone());
        ck.train_config = Some(text.clone());
        ck.save(&a.out)
    };
    let t = Instant::now();
    train_loop(&cfg, &pairs, &mut params, &mut |e, p| {
        match e {
            Event::Log { .. } => println!("{}", e.log_line().expect("log event")),
            Event::Checkpoint { step } => {
                save(p)?;
                eprintln!("checkpoint at step {step} → {}", a.out.display());
            }
        }
        Ok(())
    })?;
    save(&params)?;
    eprintln!("trained in {:.1}s → {}", t.elapsed().as_secs_f64(), a.out.display());
    Ok(())
}

fn sr(a: SrArgs) -> Outcome {
    let scale: Scale = a.scale.parse()?;
    let ck = Checkpoint::load(&a.ckpt)?;
    let lr = Image::read_png(&a.input)?;
    let t = Instant::now();
    let out = super_resolve(&ck.model, &ck.params, &lr, &[scale])?;
    let (_, img) = out.into_iter().next().expect("one scale requested");
    img.write_png(&a.out)?;
    eprintln!(
        "×{scale}: {}x{} → {}x{} in {:.2}s",
        lr.width(),
        lr.height(),
        img.width(),
        img.height(),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let ck = Checkpoint::load(&a.ckpt)?;
    let n = ck.model.max_scale;
    let scales: ScaleSet = match &a.scales {
        Some(s) => s.parse()?,
        None => ScaleSet::integers(&(2..=n).collect::<Vec<_>>())?,
    };
    let opts = EvalOptions {
        scales,
        degradation: a.degradation.spec(Scale::integer(n))?,
        seed: a.degradation.seed,
        crop: !a.no_crop,
    };
    let images = load_images(&a.data)?;
    let t = Instant::now();
    let mut report = evaluate(&ck, &images, &opts)?;
    report.seconds = t.elapsed().as_secs_f64();
    if a.records {
        print!("{}", report.to_records());
    } else {
        print!("{}", report.to_table());
    }
    eprintln!("evaluated {} images in {:.2}s", images.len(), report.seconds);
    Ok(())
}

fn degrade_cmd(a: DegradeArgs) -> Outcome {
    let kind: DegradationKind = a.degradation.kind.parse()?;
    let scale: Scale = match &a.scale {
        Some(s) => s.parse()?,
        None if kind == DegradationKind::Bd => Scale::integer(3),
        None => Scale::integer(4),
    };
    let spec = a.degradation.spec(scale)?;
    let img = Image::read_png(&a.input)?;
    let lr = degrade(&img, &spec, a.degradation.seed)?;
    if same_file(&a.input, &a.out) {
        return Err(config_error("refusing to overwrite the input image"));
    }
    lr.write_png(&a.out)?;
    eprintln!(
        "{kind} ×{scale}: {}x{} → {}x{}",
        img.width(),
        img.height(),
        lr.width(),
        lr.height()
    );
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn gradcheck_cmd(a: GradcheckArgs) -> Outcome {
    let t = Instant::now();
    let results = gradcheck::run_suite(&ModelConfig::tiny(), a.seeds, a.per_tensor)?;
    println!("check\tworst_rel\tchecked\tskipped");
    for r in &results {
        println!("{}\t{:.3e}\t{}\t{}", r.name, r.worst_rel, r.checked, r.skipped);
    }
    let worst = results.iter().map(|r| r.worst_rel).fold(0.0, f64::max);
    println!("worst\t{worst:.3e}");
    eprintln!("{} seeds in {:.1}s", a.seeds, t.elapsed().as_secs_f64());
    if results.iter().all(|r| r.passed()) {
        Ok(())
    } else {
        Err(Failure {
            code: 4,
            message: format!(
                "worst relative error {worst:.3e} exceeds {:.0e}",
                gradcheck::TOLERANCE
            ),
        })
    }
}

fn inspect(a: InspectArgs) -> Outcome {
    let ck = Checkpoint::load(&a.ckpt)?;
    print!("{}", ck.model.to_text());
    println!("param_count = {}", param_count(&ck.model));
    println!("step_count = {}", ck.params.step_count());
    if let Some(t) = &ck.train_config {
        println!("# training configuration");
        print!("{t}");
    }
    Ok(())
}
