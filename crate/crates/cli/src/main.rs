use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use subgauss_core::engine::Engine;
use subgauss_core::gausslin::LinearProcessSpec;
use subgauss_core::harness::{
    self, Analysis, ExperimentConfig, GeneratorSpec, RunSummary, Source, Task,
};
use subgauss_core::rng::RNG_ALGORITHM;

const DEFAULT_REPS: usize = 100;

#[derive(Parser)]
#[command(
    name = "subgauss",
    version,
    about = "Extremes of subordinated Gaussian processes: simulation and checks"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Base seed; replication i uses seed ^ i. Overrides the config value.
    #[arg(long, global = true, env = "SUBGAUSS_SEED")]
    seed: Option<u64>,
    /// Replications; overrides every replication count in the config.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Output directory for CSV artifacts and summary.json.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// What to print on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, global = true, value_enum)]
    engine: Option<EngineArg>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Parallel,
    Sequential,
}

#[derive(Subcommand)]
enum Command {
    /// Run every analysis of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate one path of a generator.
    Simulate {
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Sample autocovariance of coordinate 0 against the exact one.
    Acf {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = 20)]
        max_lag: usize,
    },
    /// Maxima records and the empirical P(M_n <= u_n(tau)).
    Maxima {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        m_trunc: Option<usize>,
    },
    /// Runs or blocks estimates of the extremal index.
    Theta {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_enum, default_value_t = ThetaMethod::Runs)]
        method: ThetaMethod,
        /// Run lengths for the runs estimator.
        #[arg(long, value_delimiter = ',', default_value = "3")]
        m: Vec<usize>,
        /// Block length for the blocks estimator.
        #[arg(long, default_value_t = 100)]
        b: usize,
    },
    /// Closed-form limits of an M4 generator.
    M4Verify {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
        m_trunc: Vec<usize>,
    },
    /// Gapped-block point patterns and Poisson diagnostics.
    Pointproc {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        r: usize,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// theta_0..theta_m; estimated by runs when absent.
        #[arg(long, value_delimiter = ',')]
        theta: Option<Vec<f64>>,
        #[arg(long)]
        theta_n: Option<usize>,
        #[arg(long)]
        theta_reps: Option<usize>,
        /// G(tau); taken from the M4 closed form when absent.
        #[arg(long)]
        g: Option<f64>,
    },
    /// D' statistic over a list of k.
    Dprime {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = 256)]
        n_stat: usize,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        k: Vec<usize>,
    },
    /// Deterministic Gaussian checks.
    GaussTools {
        #[command(subcommand)]
        tool: GaussTool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ThetaMethod {
    Runs,
    Blocks,
}

#[derive(Subcommand)]
enum GaussTool {
    /// max |Gamma(h)| log h over [from, to].
    Berman {
        /// Linear process spec: a JSON file or inline JSON.
        #[arg(long)]
        process: String,
        #[arg(long, default_value_t = 1000)]
        from: usize,
        #[arg(long, default_value_t = 100000)]
        to: usize,
    },
    /// Hypercontractivity pairs over the default catalog.
    Hyper {
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0,0.25,0.5,0.75,0.9,0.99"
        )]
        a: Vec<f64>,
    },
    /// SVD canonical correlation against direct search.
    Cancorr {
        #[arg(long, default_value_t = 50)]
        pairs: usize,
        #[arg(long, default_value_t = 3)]
        p: usize,
        #[arg(long, default_value_t = 2)]
        q: usize,
        #[arg(long, default_value_t = 200)]
        directions: usize,
    },
    /// Joint exceedances of a bivariate generator against the bound.
    Scan {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.001")]
        fbar: Vec<f64>,
    },
}

#[derive(Args)]
struct SourceArgs {
    /// Generator spec: a JSON file or inline JSON.
    #[arg(long)]
    generator: String,
    #[arg(long, default_value_t = 10000)]
    n: usize,
    /// Threshold levels; defaults to 1 per coordinate.
    #[arg(long, value_delimiter = ',')]
    tau: Option<Vec<f64>>,
}

enum Failure {
    Validation(String),
    Runtime(anyhow::Error),
}

impl From<subgauss_core::Error> for Failure {
    fn from(e: subgauss_core::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Reads `arg` as a file, or as inline JSON when it starts with `{`.
fn read_json_arg(arg: &str) -> Result<String, Failure> {
    if arg.trim_start().starts_with('{') {
        Ok(arg.to_string())
    } else {
        fs::read_to_string(arg)
            .with_context(|| format!("reading {arg}"))
            .map_err(Failure::Runtime)
    }
}

/// Deserializes with a field path in the error message.
fn parse<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, Failure> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Failure::Validation(format!("invalid {what} at `{path}`: {}", e.inner()))
    })
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    let config = match cli.command {
        Command::Run { config } => {
            let text = read_json_arg(&config.to_string_lossy())?;
            parse::<ExperimentConfig>(&text, "config")?
        }
        Command::Simulate { source } => return simulate(g, &source),
        Command::Acf { source, max_lag } => single(&source, Task::Acf { max_lag })?,
        Command::Maxima { source, m_trunc } => single(&source, Task::Nonexceed { m_trunc })?,
        Command::Theta {
            source,
            method,
            m,
            b,
        } => single(
            &source,
            match method {
                ThetaMethod::Runs => Task::Runs { m },
                ThetaMethod::Blocks => Task::Blocks { b },
            },
        )?,
        Command::M4Verify { source, m_trunc } => single(&source, Task::M4Limits { m_trunc })?,
        Command::Pointproc {
            source,
            r,
            p,
            m,
            bins,
            theta,
            theta_n,
            theta_reps,
            g,
        } => single(
            &source,
            Task::Pointproc {
                r,
                p,
                m,
                bins,
                theta,
                theta_n,
                theta_reps,
                g,
            },
        )?,
        Command::Dprime { source, n_stat, k } => single(&source, Task::Dprime { n_stat, k })?,
        Command::GaussTools { tool } => match tool {
            GaussTool::Berman { process, from, to } => {
                let process: LinearProcessSpec = parse(&read_json_arg(&process)?, "process")?;
                fixed(
                    GeneratorSpec::Linear {
                        process,
                        transform: None,
                    },
                    Task::Berman { from, to },
                )
            }
            GaussTool::Hyper { a } => fixed(
                iid_generator(),
                Task::Hypercontractivity { a, functions: None },
            ),
            GaussTool::Cancorr {
                pairs,
                p,
                q,
                directions,
            } => {
                let mut config = fixed(
                    iid_generator(),
                    Task::CancorrCheck {
                        pairs,
                        p,
                        q,
                        directions,
                    },
                );
                config.reps = pairs;
                config
            }
            GaussTool::Scan { source, fbar } => single(&source, Task::Scan { fbar })?,
        },
    };
    execute(g, config)
}

fn iid_generator() -> GeneratorSpec {
    GeneratorSpec::Linear {
        process: LinearProcessSpec::iid(1),
        transform: None,
    }
}

/// Config for a deterministic task that ignores `n` and `tau`.
fn fixed(generator: GeneratorSpec, task: Task) -> ExperimentConfig {
    ExperimentConfig {
        name: task.name().to_string(),
        generator,
        n: 1,
        tau: vec![1.0],
        reps: 1,
        base_seed: 0,
        engine: None,
        analyses: vec![Analysis::new(task)],
        output: None,
    }
}

fn single(source: &SourceArgs, task: Task) -> Result<ExperimentConfig, Failure> {
    let generator: GeneratorSpec = parse(&read_json_arg(&source.generator)?, "generator")?;
    let d = Source::new(&generator)
        .map_err(|e| e.within("generator"))?
        .d();
    Ok(ExperimentConfig {
        name: task.name().to_string(),
        generator,
        n: source.n,
        tau: source.tau.clone().unwrap_or_else(|| vec![1.0; d]),
        reps: DEFAULT_REPS,
        base_seed: 0,
        engine: None,
        analyses: vec![Analysis::new(task)],
        output: None,
    })
}

fn engine(g: &Global, config: &ExperimentConfig) -> Engine {
    match g.engine {
        Some(EngineArg::Parallel) => Engine::Parallel,
        Some(EngineArg::Sequential) => Engine::Sequential,
        None => config.engine.unwrap_or_default(),
    }
}

fn execute(g: &Global, mut config: ExperimentConfig) -> Result<(), Failure> {
    if let Some(seed) = g.seed {
        config.base_seed = seed;
    }
    if let Some(reps) = g.reps {
        config.reps = reps;
        for a in &mut config.analyses {
            a.reps = Some(reps);
        }
    }
    config.validate()?;
    let scratch;
    let out: &Path = match g.out.as_deref().or(config.output.as_deref()) {
        Some(dir) => dir,
        None => {
            scratch = tempfile::tempdir()?;
            scratch.path()
        }
    };
    let summary = harness::run_with(&config, engine(g, &config), Some(out))?;
    emit(g.format, &summary, out)
}

fn emit(format: Format, summary: &RunSummary, out: &Path) -> Result<(), Failure> {
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, summary).context("writing summary")?;
            writeln!(w)?;
        }
        Format::Csv => {
            for (i, r) in summary.results.iter().enumerate() {
                if let Some(name) = &r.artifact {
                    if summary.results.len() > 1 {
                        writeln!(w, "# {i} {}", r.label.as_deref().unwrap_or(&r.kind))?;
                    }
                    w.write_all(&fs::read(out.join(name))?)?;
                }
            }
        }
    }
    Ok(())
}

fn simulate(g: &Global, source: &SourceArgs) -> Result<(), Failure> {
    let spec: GeneratorSpec = parse(&read_json_arg(&source.generator)?, "generator")?;
    let src = Source::new(&spec).map_err(|e| e.within("generator"))?;
    let seed = g.seed.unwrap_or(0);
    let path = src.path(source.n, seed, None)?;
    let mut csv = Vec::new();
    path.write_csv(&mut csv)?;
    if let Some(dir) = &g.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("path.csv"), &csv)?;
    }
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    match g.format {
        Format::Csv => w.write_all(&csv)?,
        Format::Json => {
            let rows: Vec<&[f64]> = path.rows().collect();
            let doc = json!({ "n": path.n(), "d": path.d(), "seed": seed, "rng": RNG_ALGORITHM, "values": rows });
            serde_json::to_writer(&mut w, &doc).context("writing path")?;
            writeln!(w)?;
        }
    }
    Ok(())
}
