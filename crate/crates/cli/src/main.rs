mod config;
mod plot;
mod report;
mod train;

use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use anchor_core::experiments::ablation::{integer_task, run_ablation, AblationConfig};
use anchor_core::experiments::compensation::{run_compensation, CompensationConfig};
use anchor_core::experiments::gradcheck::{run_gradcheck, GradcheckScope, GradcheckSuiteConfig};
use anchor_core::experiments::periods::extract_periods;
use anchor_core::experiments::routing::{run_routing_ablation, RoutingConfig};
use anchor_core::experiments::topk::{run_topk_sweep, TopkSweepConfig};
use anchor_core::experiments::{run_cost_model, CostConfig};
use anchor_core::synth::{generate, load_csv, Component, CsvOptions, SignalSpec};
use anchor_core::SeriesBatch;

use config::{set, GlobalKeys, Override};
use report::RunDir;

/// Why a run stopped early; each variant owns an exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad input or configuration (exit 2).
    Usage(String),
    /// Anything that went wrong while running (exit 1).
    Runtime(String),
}

impl From<anchor_core::Error> for Failure {
    fn from(e: anchor_core::Error) -> Self {
        if e.is_validation() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "anchor", version, about = "Period-anchored deformable convolution experiments")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory for run folders [default: runs]
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for independent sweep cases [default: 1]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also render PNG charts.
    #[arg(long, global = true)]
    plot: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Top-K periods of a CSV file or a synthetic sinusoid.
    ExtractPeriods {
        #[arg(long)]
        input: Option<PathBuf>,
        /// The CSV has no header row.
        #[arg(long)]
        no_header: bool,
        #[arg(long)]
        k: Option<usize>,
        /// Generate a unit sinusoid with this period instead of reading a file.
        #[arg(long)]
        sine_period: Option<f64>,
        #[arg(long, requires = "sine_period")]
        length: Option<usize>,
    },
    /// Analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, value_enum)]
        scope: Option<Scope>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        cases: Option<usize>,
        /// Corrupt one analytic gradient; the run must then fail.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Learned sub-sample offsets under bilinear and Gaussian sampling.
    CompensationBench {
        #[arg(long, value_delimiter = ',')]
        periods: Option<Vec<f64>>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Plain dilated, bilinear and Gaussian variants on one forecasting task.
    Ablation {
        /// Any of anchor-1d, anchor-bl, anchor-gaussian.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long, value_enum)]
        task: Option<AblationTask>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Forecast error as the number of routed periods varies.
    TopkSweep {
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_ratio: Option<f64>,
    },
    /// Anomaly detection with ascending versus descending kernel routing.
    RoutingAblation {
        #[arg(long)]
        anomaly_ratio: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Multiply-accumulate counts of the partitioned cascade.
    CostModel {
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        partitions: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        kernels: Option<Vec<usize>>,
    },
    /// Train a backbone on a CSV file.
    Train {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        no_header: bool,
        #[arg(long, value_enum)]
        task: Option<train::TaskKind>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        anomaly_ratio: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Scope {
    Interp,
    Defop,
    Fgdm,
    Backbone,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationTask {
    Fractional,
    Integer,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ExtractPeriods { .. } => "extract-periods",
            Command::Gradcheck { .. } => "gradcheck",
            Command::CompensationBench { .. } => "compensation-bench",
            Command::Ablation { .. } => "ablation",
            Command::TopkSweep { .. } => "topk-sweep",
            Command::RoutingAblation { .. } => "routing-ablation",
            Command::CostModel { .. } => "cost-model",
            Command::Train { .. } => "train",
        }
    }
}

/// Settings shared by every subcommand after flags and file are combined.
pub struct Context {
    pub file: Option<Value>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub plot: bool,
    out_dir: PathBuf,
}

/// What a subcommand hands back for reporting.
pub struct Outcome {
    pub config: Value,
    pub summary: Value,
    pub run: RunDir,
    pub passed: bool,
    pub headline: String,
}

impl Context {
    pub fn resolve<T: Serialize + serde::de::DeserializeOwned>(
        &mut self,
        defaults: &T,
        overrides: impl IntoIterator<Item = Option<Override>>,
    ) -> Result<T, Failure> {
        config::resolve(defaults, self.file.take(), overrides, self.seed)
    }

    pub fn run_dir(&self, name: &str) -> Result<RunDir, Failure> {
        RunDir::create(&self.out_dir, name)
    }

    pub fn chart(&self, run: &RunDir, name: &str, png: impl FnOnce() -> Vec<u8>) -> Result<(), Failure> {
        if self.plot {
            run.write_bytes(name, &png())?;
        }
        Ok(())
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

struct Palette(bool);

impl Palette {
    fn detect(stream_is_tty: bool) -> Self {
        Palette(stream_is_tty && std::env::var_os("ANCHOR_NO_COLOR").is_none())
    }

    fn paint(&self, code: &str, text: &str) -> String {
        if self.0 {
            format!("\x1b[{code}m{text}\x1b[0m")
        } else {
            text.to_string()
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .write_style(if std::env::var_os("ANCHOR_NO_COLOR").is_some() {
            env_logger::WriteStyle::Never
        } else {
            env_logger::WriteStyle::Auto
        })
        .init();
    let cli = Cli::parse();
    let name = cli.command.name();
    let err_palette = Palette::detect(std::io::stderr().is_terminal());
    match execute(cli) {
        Ok(outcome) => {
            let out = Palette::detect(std::io::stdout().is_terminal());
            let status = if outcome.passed {
                out.paint("32", "ok")
            } else {
                out.paint("31", "FAILED")
            };
            println!("{name}: {status} - {}", outcome.headline);
            println!("report: {}", outcome.run.path.display());
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK_FAILED)
            }
        }
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (EXIT_USAGE, m),
                Failure::Runtime(m) => (EXIT_RUNTIME, m),
            };
            eprintln!("{} {name}: {msg}", err_palette.paint("31", "error:"));
            ExitCode::from(code)
        }
    }
}

fn execute(cli: Cli) -> Result<Outcome, Failure> {
    let g = cli.global;
    let mut file = g.config.as_deref().map(config::read_file).transpose()?;
    let keys = match file.as_mut() {
        Some(f) => config::take_globals(f)?,
        None => GlobalKeys::default(),
    };
    let threads = g.threads.or(keys.threads).unwrap_or(1);
    if threads == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    let mut ctx = Context {
        file,
        seed: g.seed,
        threads,
        plot: g.plot || keys.plot.unwrap_or(false),
        out_dir: g.out_dir.or(keys.out_dir).unwrap_or_else(|| PathBuf::from("runs")),
    };
    let started = chrono::Local::now();
    let clock = Instant::now();
    let name = cli.command.name();
    let outcome = dispatch(cli.command, &mut ctx)?;
    let doc = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": name,
        "started_at": started.to_rfc3339(),
        "wall_clock_seconds": clock.elapsed().as_secs_f64(),
        "threads": ctx.threads,
        "passed": outcome.passed,
        "config": outcome.config,
        "summary": outcome.summary,
    });
    outcome.run.write_json("summary.json", &doc)?;
    Ok(outcome)
}

fn dispatch(cmd: Command, ctx: &mut Context) -> Result<Outcome, Failure> {
    match cmd {
        Command::ExtractPeriods {
            input,
            no_header,
            k,
            sine_period,
            length,
        } => {
            let signal = sine_period.map(|p| {
                SignalSpec::multi_tone(vec![Component::new(p, 1.0)], length.unwrap_or(96), 0.0, ctx.seed.unwrap_or(0))
            });
            let cfg: ExtractConfig = ctx.resolve(
                &ExtractConfig::default(),
                [
                    set("input", input),
                    set("header", no_header.then_some(false)),
                    set("k", k),
                    set("signal", signal),
                ],
            )?;
            cmd_extract(ctx, cfg)
        }
        Command::Gradcheck {
            scope,
            tolerance,
            cases,
            inject_fault,
        } => {
            let cfg: GradcheckSuiteConfig = ctx.resolve(
                &GradcheckSuiteConfig::new(GradcheckScope::Interp, 0),
                [
                    set("scope", scope),
                    set("tolerance", tolerance),
                    set("cases", cases),
                    set("inject_fault", inject_fault.then_some(true)),
                ],
            )?;
            let (rows, summary) = run_gradcheck(&cfg)?;
            let run = ctx.run_dir("gradcheck")?;
            run.write_csv("results.csv", &rows)?;
            Ok(Outcome {
                headline: format!(
                    "{} checks, max error {:.3e} at {} (tolerance {:.0e})",
                    rows.len(),
                    summary.max_error,
                    summary.worst,
                    cfg.tolerance()
                ),
                passed: summary.passed,
                config: to_value(&cfg),
                summary: to_value(&summary),
                run,
            })
        }
        Command::CompensationBench {
            periods,
            steps,
            lr,
            sigma,
        } => {
            let cfg: CompensationConfig = ctx.resolve(
                &CompensationConfig::default(),
                [set("periods", periods), set("steps", steps), set("lr", lr), set("sigma", sigma)],
            )?;
            let (rows, summary) = run_compensation(&cfg, ctx.threads)?;
            let run = ctx.run_dir("compensation-bench")?;
            run.write_csv("results.csv", &rows)?;
            ctx.chart(&run, "eta.png", || plot::bars(&rows.iter().map(|r| r.eta).collect::<Vec<_>>()))?;
            Ok(Outcome {
                headline: format!(
                    "eta > 1 in {}/{} cases, mean eta {:.4}",
                    summary.eta_above_one, summary.cases, summary.mean_eta
                ),
                passed: true,
                config: to_value(&cfg),
                summary: to_value(&summary),
                run,
            })
        }
        Command::Ablation {
            variants,
            task,
            epochs,
            repeats,
        } => {
            let task = task.map(|t| match t {
                AblationTask::Fractional => AblationConfig::default().task,
                AblationTask::Integer => integer_task(),
            });
            let cfg: AblationConfig = ctx.resolve(
                &AblationConfig::default(),
                [
                    set("variants", variants),
                    set("task", task),
                    set("train.epochs", epochs),
                    set("repeats", repeats),
                ],
            )?;
            let (rows, summary) = run_ablation(&cfg, ctx.threads)?;
            let run = ctx.run_dir("ablation")?;
            run.write_csv("results.csv", &rows)?;
            ctx.chart(&run, "mse.png", || plot::bars(&rows.iter().map(|r| r.mse).collect::<Vec<_>>()))?;
            Ok(Outcome {
                headline: format!(
                    "periods {:?}, ranking by test MSE: {}",
                    summary.periods,
                    summary.ranking.join(" < ")
                ),
                passed: true,
                config: to_value(&cfg),
                summary: to_value(&summary),
                run,
            })
        }
        Command::TopkSweep {
            k_min,
            k_max,
            epochs,
            max_ratio,
        } => {
            let cfg: TopkSweepConfig = ctx.resolve(
                &TopkSweepConfig::default(),
                [
                    set("k_min", k_min),
                    set("k_max", k_max),
                    set("train.epochs", epochs),
                    set("max_ratio", max_ratio),
                ],
            )?;
            let (rows, summary) = run_topk_sweep(&cfg, ctx.threads)?;
            let run = ctx.run_dir("topk-sweep")?;
            run.write_csv("results.csv", &rows)?;
            ctx.chart(&run, "mse_vs_k.png", || plot::lines(&[rows.iter().map(|r| r.mse).collect()]))?;
            Ok(Outcome {
                headline: format!(
                    "best k = {}, max/min MSE ratio {:.3} (bound {})",
                    summary.best_k, summary.mse_ratio, summary.max_ratio
                ),
                passed: summary.within_bound,
                config: to_value(&cfg),
                summary: to_value(&summary),
                run,
            })
        }
        Command::RoutingAblation { anomaly_ratio, epochs } => {
            let cfg: RoutingConfig = ctx.resolve(
                &RoutingConfig::default(),
                [set("anomaly_ratio", anomaly_ratio), set("train.epochs", epochs)],
            )?;
            let (rows, summary) = run_routing_ablation(&cfg, ctx.threads)?;
            let run = ctx.run_dir("routing-ablation")?;
            run.write_csv("results.csv", &rows)?;
            ctx.chart(&run, "f1.png", || plot::bars(&rows.iter().map(|r| r.f1).collect::<Vec<_>>()))?;
            Ok(Outcome {
                headline: format!("F1 ascending {:.4}, descending {:.4}", summary.f1_asc, summary.f1_desc),
                passed: true,
                config: to_value(&cfg),
                summary: to_value(&summary),
                run,
            })
        }
        Command::CostModel {
            channels,
            length,
            partitions,
            kernels,
        } => {
            let cfg: CostConfig = ctx.resolve(
                &CostConfig::default(),
                [
                    set("channels", channels),
                    set("length", length),
                    set("partitions", partitions),
                    set("kernels", kernels),
                ],
            )?;
            let report = run_cost_model(&cfg)?;
            let run = ctx.run_dir("cost-model")?;
            run.write_csv("results.csv", &[report])?;
            Ok(Outcome {
                headline: format!(
                    "ratio {:.4}, rfft {:.0} of {:.0} MACs ({:.2}%)",
                    report.ratio,
                    report.rfft,
                    report.rfft + report.spatial,
                    100.0 * report.rfft_fraction
                ),
                passed: true,
                config: to_value(&cfg),
                summary: to_value(&report),
                run,
            })
        }
        Command::Train {
            input,
            no_header,
            task,
            horizon,
            window,
            epochs,
            anomaly_ratio,
        } => {
            let head = train::head_override(task, horizon);
            let cfg: train::TrainRunConfig = ctx.resolve(
                &train::TrainRunConfig::default(),
                [
                    set("input", input),
                    set("header", no_header.then_some(false)),
                    set("head", head),
                    set("window", window),
                    set("train.epochs", epochs),
                    set("anomaly_ratio", anomaly_ratio),
                ],
            )?;
            train::run(ctx, cfg)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExtractConfig {
    input: Option<PathBuf>,
    header: bool,
    signal: Option<SignalSpec>,
    k: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            input: None,
            header: true,
            signal: None,
            k: 3,
        }
    }
}

fn series_for(input: Option<&Path>, header: bool, signal: Option<&SignalSpec>) -> Result<SeriesBatch, Failure> {
    match (input, signal) {
        (Some(path), _) => Ok(load_csv(
            path,
            CsvOptions {
                header,
                standardize: false,
            },
        )?
        .batch),
        (None, Some(spec)) => Ok(generate(spec)?.0),
        (None, None) => Err(Failure::Usage("give --input <csv>, --sine-period or a `signal` in --config".into())),
    }
}

fn cmd_extract(ctx: &mut Context, cfg: ExtractConfig) -> Result<Outcome, Failure> {
    let series = series_for(cfg.input.as_deref(), cfg.header, cfg.signal.as_ref())?;
    let (prior, rows) = extract_periods(&series, cfg.k)?;
    let run = ctx.run_dir("extract-periods")?;
    run.write_csv("results.csv", &rows)?;
    ctx.chart(&run, "spectrum.png", || plot::lines(&[prior.energies().to_vec()]))?;
    let periods: Vec<String> = rows.iter().map(|r| r.period.to_string()).collect();
    Ok(Outcome {
        headline: format!("top periods {} (window length {})", periods.join(", "), prior.window_length()),
        passed: true,
        config: to_value(&cfg),
        summary: json!({
            "window_length": prior.window_length(),
            "periods": prior.periods(),
            "frequencies": prior.top_freqs(),
        }),
        run,
    })
}
