use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use tprox::harness::{self, MetricsRow, MetricsWriter, RunConfig};
use tprox::synthgen::{generate_clip_range, ClipDistribution, Dataset};

#[derive(Parser)]
#[command(name = "tprox", version, about = "Temporal-proximity regularized diffusion training on synthetic video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic train split and, optionally, a disjoint validation split.
    GenData(GenData),
    /// Train one run into an output directory.
    Train(Train),
    /// Draw DDIM samples from a checkpoint's EMA parameters.
    Sample(Sample),
    /// Desk-FID and diversity of a sample file against reference splits.
    Evaluate(Evaluate),
    /// Re-run the gradient analysis on every checkpoint of a run.
    Analyze(Analyze),
    /// Compare runs: best desk-FID, steps to threshold, speedup.
    Compare(Compare),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 250)]
    clips: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Validation split path; holds `val_fraction * clips` clips from a disjoint index range.
    #[arg(long)]
    val_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Upper end of the per-clip speed range in pixels per frame.
    #[arg(long, default_value_t = 3.0)]
    max_speed: f64,
}

/// One flag per config key; each overrides the `--config` file.
#[derive(Args, Default)]
struct ConfigFlags {
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    val_dataset: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    lambda_disp: Option<String>,
    #[arg(long)]
    temperature: Option<String>,
    #[arg(long)]
    ema_decay: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    eps_w: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    /// Comma-separated hidden widths overriding the preset.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    diffusion_steps: Option<String>,
    #[arg(long)]
    beta_start: Option<String>,
    #[arg(long)]
    beta_end: Option<String>,
    #[arg(long)]
    checkpoint_interval: Option<String>,
    #[arg(long)]
    log_interval: Option<String>,
    #[arg(long)]
    sample_count: Option<String>,
    #[arg(long)]
    ddim_steps: Option<String>,
    #[arg(long)]
    feature_seed: Option<String>,
    #[arg(long)]
    probe_windows: Option<String>,
    #[arg(long)]
    probe_seed: Option<String>,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all = [
            ("variant", &self.variant),
            ("seed", &self.seed),
            ("dataset", &self.dataset),
            ("val_dataset", &self.val_dataset),
            ("epochs", &self.epochs),
            ("steps", &self.steps),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("lambda", &self.lambda),
            ("lambda_disp", &self.lambda_disp),
            ("temperature", &self.temperature),
            ("ema_decay", &self.ema_decay),
            ("k", &self.k),
            ("dt", &self.dt),
            ("delta", &self.delta),
            ("eps_w", &self.eps_w),
            ("preset", &self.preset),
            ("hidden", &self.hidden),
            ("optimizer", &self.optimizer),
            ("diffusion_steps", &self.diffusion_steps),
            ("beta_start", &self.beta_start),
            ("beta_end", &self.beta_end),
            ("checkpoint_interval", &self.checkpoint_interval),
            ("log_interval", &self.log_interval),
            ("sample_count", &self.sample_count),
            ("ddim_steps", &self.ddim_steps),
            ("feature_seed", &self.feature_seed),
            ("probe_windows", &self.probe_windows),
            ("probe_seed", &self.probe_seed),
        ];
        all.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))).collect()
    }
}

#[derive(Args)]
struct Train {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory (created; must not already hold a run).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct Sample {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    ddim_steps: usize,
    /// Config of the run the checkpoint came from (for its noise schedule).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, default_value_t = tprox::metrics::DEFAULT_FEATURE_SEED)]
    feature_seed: u64,
    /// Metrics CSV to append the result row to.
    #[arg(long)]
    append: Option<PathBuf>,
    /// Step, variant and seed recorded in the appended row.
    #[arg(long, default_value_t = 0)]
    step: u64,
    #[arg(long, default_value = "")]
    variant: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Analyze {
    #[arg(long)]
    run: PathBuf,
    /// Output CSV; defaults to `analysis.csv` inside the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Compare {
    /// Run directories; the first one is the reference.
    #[arg(required = true, num_args = 2..)]
    runs: Vec<PathBuf>,
    /// Validation desk-FID target; defaults to the reference run's best.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn gen_data(a: &GenData) -> anyhow::Result<()> {
    let dist = ClipDistribution {
        num_frames: a.frames,
        height: a.height,
        width: a.width,
        max_speed: a.max_speed,
        ..ClipDistribution::default()
    };
    let train = generate_clip_range(0..a.clips, &dist, a.seed)?;
    train.save(&a.out)?;
    println!("{}: {} clips, {} frames", a.out.display(), train.len(), train.frame_count());
    if let Some(val_out) = &a.val_out {
        if !(0.0..=1.0).contains(&a.val_fraction) {
            return Err(tprox::Error::Config(format!("val_fraction must lie in [0, 1], got {}", a.val_fraction)).into());
        }
        let n_val = ((a.clips as f64 * a.val_fraction).round() as usize).max(1);
        let val = generate_clip_range(a.clips..a.clips + n_val, &dist, a.seed)?;
        val.save(val_out)?;
        println!("{}: {} clips, {} frames", val_out.display(), val.len(), val.frame_count());
    }
    Ok(())
}

fn load_config(path: Option<&Path>, flags: &ConfigFlags) -> tprox::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for (k, v) in flags.pairs() {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a)?,
        Command::Train(a) => {
            let cfg = load_config(a.config.as_deref(), &a.flags)?;
            let rec = harness::train(&cfg, &a.out)?;
            println!("run {} ({}): {} checkpoints, metrics in {}", rec.dir.display(), rec.config_hash, rec.checkpoints.len(), rec.metrics.display());
        }
        Command::Sample(a) => {
            let cfg = load_config(a.config.as_deref(), &ConfigFlags::default())?;
            let sched = tprox::diffusion::build_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)?;
            let ds = harness::sample(&a.checkpoint, a.n, a.seed, a.ddim_steps, &sched, &a.out)?;
            println!("{}: {} samples", a.out.display(), ds.len());
        }
        Command::Evaluate(a) => {
            let samples = Dataset::load(&a.samples)?;
            let train = Dataset::load(&a.train)?;
            let val = a.val.as_deref().map(Dataset::load).transpose()?;
            let res = harness::evaluate(&samples, &train, val.as_ref(), a.feature_seed)?;
            println!("fid_train = {}", res.fid_train);
            if let Some(v) = res.fid_val {
                println!("fid_val = {v}");
            }
            println!("diversity = {}", res.diversity);
            if let Some(path) = &a.append {
                let row = MetricsRow {
                    step: a.step,
                    variant: a.variant.clone(),
                    seed: a.seed,
                    fid_train: Some(res.fid_train),
                    fid_val: res.fid_val,
                    diversity: Some(res.diversity),
                    ..Default::default()
                };
                MetricsWriter::open(path)?.append(&row)?;
            }
        }
        Command::Analyze(a) => {
            let rows = harness::analyze_run(&a.run)?;
            let out = a.out.unwrap_or_else(|| a.run.join("analysis.csv"));
            std::fs::write(&out, harness::analysis_csv(&rows)).with_context(|| format!("writing {}", out.display()))?;
            let reports: Vec<_> = rows.iter().flat_map(|r| &r.reports).collect();
            let held = |f: &dyn Fn(&tprox::analysis::AnalysisReport) -> Option<bool>| {
                let v: Vec<bool> = reports.iter().filter_map(|r| f(r)).collect();
                format!("{}/{}", v.iter().filter(|b| **b).count(), v.len())
            };
            println!("{} checkpoints analyzed, written to {}", rows.len(), out.display());
            println!("poincare bound holds: {}", held(&|r| Some(r.poincare.holds)));
            println!("variance bound holds: {}", held(&|r| r.bound_holds));
            println!("pairwise bound holds: {}", held(&|r| (!r.pairwise.is_empty()).then(|| r.pairwise.iter().all(|p| p.holds))));
        }
        Command::Compare(a) => {
            let cmp = harness::compare(&a.runs, a.threshold)?;
            let csv = cmp.to_csv();
            match &a.out {
                Some(p) => std::fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
            println!("threshold = {}", cmp.threshold);
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<tprox::Error>() {
        Some(e) => e.exit_code() as u8,
        None if err.downcast_ref::<std::io::Error>().is_some() => 4,
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
