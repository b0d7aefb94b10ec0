use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use mpfc_core::export::{aggregate_csv, cost_csv, matrix_csv, parse_aggregate_csv, trajectory_csv};
use mpfc_core::harness::{aggregate, metrics_of, run_experiment, sweep, Aggregate, Experiment, SeededRun, SweepParameter, SweepTable};
use mpfc_core::predictive::Architecture;
use mpfc_core::scenarios::{build_scenario, seed_sequence, ScenarioKind};
use serde_json::json;

use crate::config::{ConfigError, RunConfig};
use crate::io::{resolve_output, write_atomic, write_json};
use crate::plot::{self, Chart, Series};

#[derive(Debug, Parser)]
#[command(name = "mpfc", version, about = "Search-and-rescue robot control experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one architecture over the configured seeds.
    Run(RunArgs),
    /// Run once per value of a parameter and fit a trend.
    Sweep(SweepArgs),
    /// Run several architectures on the same seeds.
    Compare(CompareArgs),
    /// Plot aggregate CSV files as an SVG chart.
    Plot(PlotArgs),
    /// Write the maps of a scenario as CSV files.
    ScenarioExport(ExportArgs),
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// TOML config; every key is optional.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Output directory (relative paths resolve against MPFC_OUTPUT_ROOT).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<ScenarioKind>,
    #[arg(long)]
    pub n_sim: Option<usize>,
    /// Simulated seconds per run.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per seed).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub architecture: Option<Architecture>,
    /// Write the fire state of every step.
    #[arg(long)]
    pub emit_fire_frames: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub architecture: Option<Architecture>,
    /// One of robots, env-size, t-ctrl, horizon, local-radius, prediction-mode, architecture.
    #[arg(long)]
    pub parameter: SweepParameter,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated architectures; all five by default.
    #[arg(long, value_delimiter = ',')]
    pub architectures: Vec<Architecture>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Files with the `k,mean,ci_lo,ci_hi` header.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value = "")]
    pub title: String,
    /// Comma-separated series labels; file stems by default.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long, default_value = "step")]
    pub x_label: String,
    #[arg(long, default_value = "cost")]
    pub y_label: String,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
}

/// Errors split by exit code: configuration problems exit 2, everything else 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Plot(args) => cmd_plot(args),
        Command::ScenarioExport(args) => cmd_export(args),
    }
}

/// Loads the config and applies command-line overrides, re-validating after.
fn load(common: &Common, architecture: Option<Architecture>) -> CliResult<RunConfig> {
    let text = match &common.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut config = RunConfig::parse(&text)?;
    if common.scenario.is_some_and(|k| k != config.scenario.kind) || architecture.is_some_and(|a| a != config.control.architecture) {
        // Switching preset keeps the run section and rebuilds the rest.
        let run = config.run.clone();
        config = RunConfig::preset(
            common.scenario.unwrap_or(config.scenario.kind),
            architecture.unwrap_or(config.control.architecture),
        );
        config.run = run;
    }
    if let Some(n) = common.n_sim {
        config.run.n_sim = n;
    }
    if let Some(d) = common.duration {
        config.run.duration_seconds = d;
    }
    if let Some(s) = common.seed {
        config.run.master_seed = s;
    }
    if let Some(j) = common.jobs {
        config.run.jobs = j;
    }
    if let Some(o) = &common.output {
        config.run.output_dir = Some(o.clone());
    }
    config.validate()?;
    Ok(config)
}

fn output_dir(config: &RunConfig) -> PathBuf {
    resolve_output(config.run.output_dir.as_deref().unwrap_or(Path::new("out")))
}

/// Runs `f` on a pool sized by `run.jobs`.
fn with_pool<T: Send>(config: &RunConfig, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let threads = if config.run.jobs == 0 { config.run.n_sim } else { config.run.jobs };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
    Ok(pool.install(f))
}

fn experiment_runs(config: &RunConfig, exp: &Experiment) -> anyhow::Result<Vec<SeededRun>> {
    Ok(with_pool(config, || run_experiment(exp))??)
}

fn cmd_run(args: RunArgs) -> CliResult<()> {
    let mut config = load(&args.common, args.architecture)?;
    config.run.emit_fire_frames |= args.emit_fire_frames;
    let dir = output_dir(&config);
    let exp = config.experiment();
    let runs = experiment_runs(&config, &exp)?;
    let agg = aggregate(&metrics_of(&runs)).map_err(anyhow::Error::from)?;
    write_run(&dir, &config, &exp, &runs, &agg)?;
    println!(
        "{}: mean cost {:.1} ± {:.1} over {} runs -> {}",
        config.control.architecture.name(),
        agg.summary.mean,
        agg.summary.half_width,
        agg.summary.n,
        dir.display()
    );
    Ok(())
}

fn manifest(config: &RunConfig, exp: &Experiment) -> serde_json::Value {
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": config.hash(),
        "seeds": exp.seeds(),
        "steps": exp.steps(),
        "config": config,
    })
}

fn write_run(dir: &Path, config: &RunConfig, exp: &Experiment, runs: &[SeededRun], agg: &Aggregate) -> anyhow::Result<()> {
    write_json(&dir.join("manifest.json"), &manifest(config, exp))?;
    write_atomic(&dir.join("config.toml"), config.to_toml())?;
    for run in runs {
        let seed_dir = dir.join(format!("seed-{}", run.seed));
        let out = &run.output;
        write_atomic(&seed_dir.join("costs.csv"), cost_csv(&out.costs))?;
        write_atomic(&seed_dir.join("trajectory.csv"), trajectory_csv(&out.trajectory))?;
        let mut solves = String::new();
        for record in &out.solves {
            writeln!(solves, "{}", serde_json::to_string(record)?)?;
        }
        write_atomic(&seed_dir.join("solves.jsonl"), solves)?;
        let mut thetas = String::new();
        for (k, surfaces) in &out.thetas {
            writeln!(thetas, "{}", json!({"k": k, "thetas": surfaces}))?;
        }
        write_atomic(&seed_dir.join("thetas.jsonl"), thetas)?;
        let mut times = String::from("solve,seconds\n");
        for (n, t) in out.solve_seconds.iter().enumerate() {
            writeln!(times, "{},{t}", n + 1)?;
        }
        write_atomic(&seed_dir.join("solve_seconds.csv"), times)?;
        if let Some(frames) = &out.fire {
            let width = frames.len().saturating_sub(1).to_string().len().max(4);
            for (k, frame) in frames.iter().enumerate() {
                write_atomic(&seed_dir.join("fire").join(format!("step-{k:0width$}.csv")), matrix_csv(frame))?;
            }
        }
    }
    write_atomic(&dir.join("aggregate.csv"), aggregate_csv(&agg.costs, 1))?;
    write_atomic(&dir.join("solve_time.csv"), aggregate_csv(&agg.solve_seconds, 1))?;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "architecture": config.control.architecture,
            "scenario": config.scenario.kind,
            "runs": agg.summary.n,
            "mean_cost": agg.summary,
            "mean_solve_seconds": agg.solve_summary,
        }),
    )?;
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let config = load(&args.common, args.architecture)?;
    let dir = output_dir(&config);
    let exp = config.experiment();
    // Bad values are input errors; check them all before running anything.
    for value in &args.values {
        args.parameter.apply(value, &exp).map_err(|e| CliError::Config(format!("`{value}`: {e}")))?;
    }
    let table = with_pool(&config, || sweep(args.parameter, &args.values, &exp))?.map_err(anyhow::Error::from)?;
    write_sweep(&dir, &config, &exp, &table)?;
    for row in &table.rows {
        println!("{} = {}: mean cost {:.1} ± {:.1}", table.parameter.name(), row.value, row.aggregate.summary.mean, row.aggregate.summary.half_width);
    }
    if let Some(fit) = &table.fit {
        println!("trend: slope {:.4}, intercept {:.1}", fit.slope, fit.intercept);
    }
    Ok(())
}

fn write_sweep(dir: &Path, config: &RunConfig, exp: &Experiment, table: &SweepTable) -> anyhow::Result<()> {
    write_json(&dir.join("manifest.json"), &manifest(config, exp))?;
    write_atomic(&dir.join("config.toml"), config.to_toml())?;
    let mut csv = String::from("value,x,mean,ci_lo,ci_hi,solve_mean,solve_ci_lo,solve_ci_hi,runs\n");
    for row in &table.rows {
        let s = &row.aggregate.summary;
        let x = row.x.map(|x| x.to_string()).unwrap_or_default();
        let (sm, sl, sh) = match &row.aggregate.solve_summary {
            Some(i) => (i.mean.to_string(), i.lo().to_string(), i.hi().to_string()),
            None => Default::default(),
        };
        writeln!(csv, "{},{x},{},{},{},{sm},{sl},{sh},{}", row.value, s.mean, s.lo(), s.hi(), s.n)?;
        write_atomic(&dir.join(format!("aggregate-{}.csv", row.value)), aggregate_csv(&row.aggregate.costs, 1))?;
    }
    write_atomic(&dir.join("sweep.csv"), csv)?;
    write_json(&dir.join("sweep.json"), table)?;

    // Non-numeric values are plotted at their position in the list.
    let points = table
        .rows
        .iter()
        .enumerate()
        .map(|(n, r)| (r.x.unwrap_or(n as f64), r.aggregate.summary.mean, r.aggregate.summary.lo(), r.aggregate.summary.hi()))
        .collect();
    let chart = Chart {
        title: format!("Mean cost against {}", table.parameter.name()),
        x_label: table.parameter.name().into(),
        y_label: "mean cost".into(),
        series: vec![Series {
            label: config.control.architecture.name().into(),
            points,
        }],
        markers: true,
        trend: table.fit.as_ref().filter(|f| !f.degenerate).map(|f| (f.slope, f.intercept)),
    };
    write_atomic(&dir.join("sweep.svg"), plot::render(&chart).map_err(|e| anyhow!(e))?)?;
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> CliResult<()> {
    let config = load(&args.common, None)?;
    let dir = output_dir(&config);
    let architectures = if args.architectures.is_empty() { Architecture::ALL.to_vec() } else { args.architectures };
    let mut results = Vec::new();
    for &arch in &architectures {
        let mut c = config.clone();
        c.control.architecture = arch;
        c.validate()?;
        let exp = c.experiment();
        let runs = experiment_runs(&c, &exp)?;
        let agg = aggregate(&metrics_of(&runs)).map_err(anyhow::Error::from)?;
        write_run(&dir.join(arch.name()), &c, &exp, &runs, &agg)?;
        write_atomic(&dir.join(format!("{}.csv", arch.name())), aggregate_csv(&agg.costs, 1)).map_err(CliError::from)?;
        println!("{}: mean cost {:.1} ± {:.1}", arch.name(), agg.summary.mean, agg.summary.half_width);
        results.push((arch, agg));
    }
    let baseline = results.iter().find(|(a, _)| *a == Architecture::PretunedFlc).map(|(_, agg)| agg.summary.mean);
    let mut csv = String::from("architecture,mean,ci_lo,ci_hi,solve_mean,vs_flc_percent\n");
    for (arch, agg) in &results {
        let s = &agg.summary;
        let solve = agg.solve_summary.map(|i| i.mean.to_string()).unwrap_or_default();
        let vs = baseline.map(|b| (100.0 * (s.mean - b) / b).to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{},{},{solve},{vs}", arch.name(), s.mean, s.lo(), s.hi()).map_err(anyhow::Error::from)?;
    }
    write_atomic(&dir.join("comparison.csv"), csv)?;
    let chart = Chart {
        title: format!("{} scenario", config.scenario.kind.name()),
        x_label: "step".into(),
        y_label: "cost".into(),
        series: results.iter().map(|(arch, agg)| series_of(arch.name(), agg)).collect(),
        ..Default::default()
    };
    write_atomic(&dir.join("comparison.svg"), plot::render(&chart).map_err(|e| anyhow!(e))?)?;
    Ok(())
}

fn series_of(label: &str, agg: &Aggregate) -> Series {
    let c = &agg.costs;
    Series {
        label: label.into(),
        points: (0..c.len()).map(|n| ((n + 1) as f64, c.mean[n], c.ci_lo[n], c.ci_hi[n])).collect(),
    }
}

fn cmd_plot(args: PlotArgs) -> CliResult<()> {
    if !args.labels.is_empty() && args.labels.len() != args.inputs.len() {
        return Err(CliError::Config(format!("{} labels for {} inputs", args.labels.len(), args.inputs.len())));
    }
    let mut series = Vec::new();
    for (n, path) in args.inputs.iter().enumerate() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let rows = parse_aggregate_csv(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
        let label = match args.labels.get(n) {
            Some(l) => l.clone(),
            None => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        };
        series.push(Series { label, points: rows });
    }
    let chart = Chart {
        title: args.title,
        x_label: args.x_label,
        y_label: args.y_label,
        series,
        ..Default::default()
    };
    let svg = plot::render(&chart).map_err(|e| anyhow!(e))?;
    write_atomic(&resolve_output(&args.output), svg)?;
    Ok(())
}

fn cmd_export(args: ExportArgs) -> CliResult<()> {
    let config = load(&args.common, None)?;
    let dir = output_dir(&config);
    let seed = seed_sequence(1, config.run.master_seed)[0];
    let setup = build_scenario(&config.scenario, seed).map_err(anyhow::Error::from)?;
    let env = &setup.env;
    let maps = [
        ("structure", env.structure.clone()),
        ("occupancy", env.occupancy.clone()),
        ("debris", env.debris.clone()),
        ("victims", env.perceived_victims.mapv(f64::from)),
        ("wind_speed", env.wind_speed.clone()),
        ("wind_direction", env.wind_dir.clone()),
        ("fire", setup.fire.codes()),
    ];
    for (name, m) in &maps {
        write_atomic(&dir.join(format!("{name}.csv")), matrix_csv(m))?;
    }
    let robots: Vec<_> = setup.robots.iter().map(|r| r.position).collect();
    write_json(
        &dir.join("scenario.json"),
        &json!({"seed": seed, "spec": config.scenario, "robots": robots}),
    )?;
    println!("{} (seed {seed}) -> {}", config.scenario.kind.name(), dir.display());
    Ok(())
}
