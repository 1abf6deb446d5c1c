mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use causebench::benchmark::{fidelity_report, run_benchmark};
use causebench::io;
use causebench::model::{self, GenerativeModel, KnobConfig};
use causebench::plot::export_plot_data;
use causebench::rng::sub_seed;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use config::RunConfig;

/// Seed stream for the sample behind plot tables, apart from the test streams.
const PLOT_STREAM: u64 = 0x706c_6f74;

#[derive(Parser)]
#[command(name = "causebench", version, about = "Realistic generative benchmarks for causal estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generative model on a dataset and save it.
    Fit(FitArgs),
    /// Draw a dataset from a model, with its ground-truth sidecar.
    Sample(SampleArgs),
    /// Two-sample tests of a model against real data.
    Test(TestArgs),
    /// Evaluate estimators on repeated samples from a model.
    Benchmark(BenchmarkArgs),
    /// Test report plus plot tables comparing real and generated data.
    Fidelity(FidelityArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every stage; also read from CAUSEBENCH_SEED.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Default)]
struct KnobArgs {
    #[arg(long)]
    knob_positivity: Option<f64>,
    #[arg(long)]
    knob_effect: Option<f64>,
    #[arg(long)]
    knob_heterogeneity: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep the best candidate when none passes the realism gate.
    #[arg(long)]
    allow_unrealistic: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    knobs: KnobArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated estimator ids.
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,
    #[arg(long)]
    reps: Option<usize>,
    /// Units per replication.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    knobs: KnobArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FidelityArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for the plot tables.
    #[arg(long)]
    plots: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("CAUSEBENCH_SEED") {
        Ok(v) => Ok(Some(v.trim().parse().map_err(|_| {
            config_error(format!("CAUSEBENCH_SEED must be an unsigned integer, got `{v}`"))
        })?)),
        Err(_) => Ok(None),
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CAUSEBENCH_THREADS") {
        let threads: usize = v
            .trim()
            .parse()
            .map_err(|_| config_error(format!("CAUSEBENCH_THREADS must be a positive integer, got `{v}`")))?;
        if threads == 0 {
            bail!(config_error("CAUSEBENCH_THREADS must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    Ok(())
}

#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Loads the config and resolves the seed: flag, then environment, then file.
fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| config_error(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    let seed = match common.seed {
        Some(s) => Some(s),
        None => env_seed()?,
    };
    Ok(match seed.or(cfg.seed) {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn output(flag: &Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| config_error(format!("no output path for the {what}; pass --out")).into())
}

fn knobs(base: KnobConfig, args: &KnobArgs) -> Result<KnobConfig> {
    let k = KnobConfig {
        positivity_alpha: args.knob_positivity.unwrap_or(base.positivity_alpha),
        effect_delta: args.knob_effect.unwrap_or(base.effect_delta),
        heterogeneity_lambda: args.knob_heterogeneity.unwrap_or(base.heterogeneity_lambda),
    };
    k.validate()?;
    Ok(k)
}

fn load_model(path: &Path) -> Result<GenerativeModel> {
    model::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn with_knobs(model: GenerativeModel, k: KnobConfig) -> Result<GenerativeModel> {
    if k.is_identity() {
        Ok(model)
    } else {
        Ok(model.apply_knobs(k)?)
    }
}

fn fit_cmd(args: FitArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let out = output(&args.out, &cfg.outputs.model, "model")?;
    let data = io::load_dataset(&args.data, &cfg.atoms).with_context(|| format!("reading {}", args.data.display()))?;
    info!("fitting {} candidates on {} rows", cfg.fit.grid.len(), data.n());
    let fitted = match model::fit(&data, &cfg.fit) {
        Ok(m) => m,
        Err(causebench::Error::NoRealisticModel { best, p_value, alpha }) if args.allow_unrealistic => {
            warn!("no candidate passed the realism gate; keeping the best one (p = {p_value:.4}, alpha {alpha})");
            *best
        }
        Err(e) => return Err(e.into()),
    };
    model::save(&fitted, &out)?;
    info!("model written to {}", out.display());
    Ok(())
}

fn sample_cmd(args: SampleArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let out = output(&args.out, &cfg.outputs.sample, "sample")?;
    let Some(seed) = args.common.seed.or(cfg.seed) else {
        bail!(config_error("sample needs a seed: pass --seed or set CAUSEBENCH_SEED"));
    };
    let model = with_knobs(load_model(&args.model)?, knobs(cfg.knobs, &args.knobs)?)?;
    let data = model.sample(args.n, seed)?;
    let truth = model.ground_truth(&data.w)?;
    io::save_dataset(&data, &out)?;
    io::save_truth(&truth, io::truth_path(&out))?;
    info!("{} rows written to {}", data.n(), out.display());
    Ok(())
}

fn report(
    model_path: &Path,
    data_path: &Path,
    permutations: Option<usize>,
    cfg: &mut RunConfig,
) -> Result<(GenerativeModel, causebench::data::Dataset, causebench::benchmark::FidelityReport)> {
    if let Some(p) = permutations {
        cfg.fidelity.permutations = p;
        cfg.fidelity.validate()?;
    }
    let model = load_model(model_path)?;
    let data = io::load_dataset(data_path, &cfg.atoms).with_context(|| format!("reading {}", data_path.display()))?;
    let rep = fidelity_report(&model, &data, &cfg.fidelity)?;
    for r in &rep.rows {
        info!("{:>6} {:<6} statistic {:.4} p {:.4}", r.test, r.variables, r.statistic, r.p_value);
    }
    Ok((model, data, rep))
}

fn test_cmd(args: TestArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    let out = output(&args.out, &cfg.outputs.report, "report")?;
    let (_, _, rep) = report(&args.model, &args.data, args.permutations, &mut cfg)?;
    io::save_fidelity(&rep, &out)?;
    Ok(())
}

fn fidelity_cmd(args: FidelityArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    let out = output(&args.out, &cfg.outputs.report, "report")?;
    let plots = args.plots.clone().or_else(|| cfg.outputs.plots.clone()).unwrap_or_else(|| {
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
        out.with_file_name(format!("{stem}_plots"))
    });
    let (model, data, rep) = report(&args.model, &args.data, args.permutations, &mut cfg)?;
    io::save_fidelity(&rep, &out)?;
    for p in export_plot_data(&model, &data, &plots, sub_seed(cfg.fidelity.seed, PLOT_STREAM))? {
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn benchmark_cmd(args: BenchmarkArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    let out = output(&args.out, &cfg.outputs.benchmark, "benchmark table")?;
    if !args.estimators.is_empty() {
        cfg.benchmark.estimators = args.estimators.iter().map(|s| s.trim().to_string()).collect();
    }
    if let Some(r) = args.reps {
        cfg.benchmark.replications = r;
    }
    if args.samples.is_some() {
        cfg.benchmark.samples = args.samples;
    }
    if cfg.benchmark.estimators.is_empty() {
        bail!(config_error("no estimators given; pass --estimators or list them in the config"));
    }
    cfg.benchmark.validate()?;
    let model = with_knobs(load_model(&args.model)?, knobs(cfg.knobs, &args.knobs)?)?;
    let rows = run_benchmark(&model, &cfg.benchmark)?;
    io::save_metrics(&rows, &out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Fit(a) => fit_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Test(a) => test_cmd(a),
        Command::Benchmark(a) => benchmark_cmd(a),
        Command::Fidelity(a) => fidelity_cmd(a),
    }
}

/// `kind=<kind> message=<msg>` on one line.
fn describe(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| {
            if let Some(c) = e.downcast_ref::<causebench::Error>() {
                Some(c.kind())
            } else if e.is::<ConfigError>() {
                Some("config")
            } else {
                e.downcast_ref::<std::io::Error>().map(|_| "io")
            }
        })
        .unwrap_or("other");
    let message = format!("{err:#}").replace(['\n', '\r'], " ");
    format!("kind={kind} message={message}")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
