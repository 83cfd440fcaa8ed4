use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use gridtop_core::experiment::{run_grid, GridConfig, Scenario};
use gridtop_core::formats::{self, NoiseManifest, Orientation};
use gridtop_core::ident::identify_topology;
use gridtop_core::{NetworkSpec, NoiseConfig};

/// Phase and topology identification of radial distribution networks from
/// smart-meter energy readings.
#[derive(Parser, Debug)]
#[command(name = "gridtop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a network and its readings; writes topology, readings and noise manifest.
    Generate(GenerateArgs),
    /// Infer the topology behind a readings file, given layer metadata.
    Identify(IdentifyArgs),
    /// Run repeated generate + identify cycles over sample-count multipliers.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
struct NoiseArgs {
    /// Minutes per reading interval.
    #[arg(long, default_value_t = 15.0)]
    interval_minutes: f64,
    /// Meter accuracy class in percent.
    #[arg(long, default_value_t = 0.5)]
    accuracy_class: f64,
    /// Loss percentage range as LOW,HIGH.
    #[arg(long, default_value = "5,10", value_parser = parse_range)]
    loss_range: (f64, f64),
}

impl NoiseArgs {
    fn config(&self, seed: u64) -> NoiseConfig {
        NoiseConfig {
            loss_pct_range: self.loss_range,
            accuracy_class_pct: self.accuracy_class,
            interval_minutes: self.interval_minutes,
            rng_seed: seed,
        }
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// `phase`, `phase:LO-HI`, `rbts`, `chain`, `uniform:F,T,C`, or a JSON network spec file.
    #[arg(long, default_value = "phase")]
    spec: String,
    /// Random seed; one is drawn and printed if omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Samples as a multiple of n_i (phase) or n (layered).
    #[arg(long, default_value_t = 2.0)]
    n_multiplier: f64,
    /// Skip losses, meter error and sync error.
    #[arg(long)]
    noise_free: bool,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Layout of the written readings file: `intervals` or `meters`.
    #[arg(long, default_value = "intervals")]
    orientation: Orientation,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IdentifyArgs {
    /// Readings file.
    #[arg(long)]
    readings: PathBuf,
    /// Topology file supplying layer membership; edges in it are ignored.
    #[arg(long)]
    topology: PathBuf,
    /// Layout of the readings file: `intervals` or `meters`.
    #[arg(long, default_value = "intervals")]
    orientation: Orientation,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long, default_value = "phase")]
    spec: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Comma-separated sample-count multipliers.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    n_multiplier: Vec<f64>,
    #[arg(long)]
    noise_free: bool,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Output directory for report.csv, trials.csv and summary.txt.
    #[arg(long)]
    out: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .or_else(|| s.split_once(':'))
        .ok_or_else(|| format!("expected LOW,HIGH, got `{s}`"))?;
    let parse = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    Ok((parse(lo)?, parse(hi)?))
}

/// Errors split by exit status.
enum Failure {
    /// Bad flags, unreadable or malformed input.
    Input(anyhow::Error),
    /// Anything else that stopped the command.
    Runtime(anyhow::Error),
}

const EXIT_PARTIAL: u8 = 2;
const EXIT_INPUT: u8 = 3;

trait InputContext<T> {
    fn input(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> InputContext<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into()))
    }
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn seed_or_fresh(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random();
        eprintln!("seed: {s}");
        s
    })
}

fn threads_from_env() -> anyhow::Result<Option<usize>> {
    match std::env::var("GRIDTOP_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => bail!("GRIDTOP_THREADS must be a positive integer, got `{v}`"),
        },
        Err(_) => Ok(None),
    }
}

fn load_scenario(spec: &str) -> anyhow::Result<Scenario> {
    if let Ok(s) = spec.parse() {
        return Ok(s);
    }
    let path = Path::new(spec);
    if !path.is_file() {
        bail!("`{spec}` is neither a built-in network spec nor a file");
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {spec}"))?;
    let spec: NetworkSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing network spec {spec}"))?;
    spec.validate()?;
    Ok(Scenario::Layered(spec))
}

fn out_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(runtime)
}

fn generate(args: GenerateArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&args.spec).input()?;
    if !(args.n_multiplier.is_finite() && args.n_multiplier > 0.0) {
        return Err(Failure::Input(anyhow!("--n-multiplier must be positive")));
    }
    let seed = seed_or_fresh(args.seed);
    let noise = (!args.noise_free).then(|| args.noise.config(seed));
    if let Some(cfg) = &noise {
        cfg.validate().input()?;
    }
    let gt = scenario
        .generate(args.n_multiplier, noise.as_ref(), seed)
        .input()?;

    out_dir(&args.out)?;
    let write = |name: &str, f: &dyn Fn(&mut dyn std::io::Write) -> Result<(), formats::FormatError>| {
        let path = args.out.join(name);
        let mut w = formats::create(&path).map_err(runtime)?;
        f(&mut w).map_err(runtime)?;
        std::io::Write::flush(&mut w)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime)
    };
    write("topology.json", &|w| formats::write_topology(&gt.network, w))?;
    write("readings.csv", &|w| {
        formats::write_readings(&gt.noisy_readings, w, args.orientation)
    })?;
    write("noise.json", &|w| {
        formats::write_manifest(&NoiseManifest::injected(&gt, seed), w)
    })?;
    println!(
        "wrote {} nodes, {} intervals to {}",
        gt.network.node_count(),
        gt.n_samples(),
        args.out.display()
    );
    Ok(())
}

/// Returns whether every layer pair was identified.
fn identify(args: IdentifyArgs) -> Result<bool, Failure> {
    let topo = formats::read_topology(formats::open(&args.topology).input()?)
        .with_context(|| format!("{}", args.topology.display()))
        .input()?;
    if topo.layers().len() < 2 {
        return Err(Failure::Input(anyhow!(
            "{}: layer metadata missing (need at least two layers)",
            args.topology.display()
        )));
    }
    let readings = formats::read_readings(
        formats::open(&args.readings).input()?,
        args.orientation,
        args.noise.interval_minutes,
    )
    .with_context(|| format!("{}", args.readings.display()))
    .input()?;
    let cfg = args.noise.config(0);
    cfg.validate().input()?;

    let result = identify_topology(&readings, topo.layers(), &cfg).input()?;
    // Keep the caller's names and roles on the inferred network.
    let inferred = topo
        .with_edges(result.network.edges().iter().copied())
        .map_err(runtime)?;

    out_dir(&args.out)?;
    let path = args.out.join("inferred_topology.json");
    let mut w = formats::create(&path).map_err(runtime)?;
    formats::write_topology(&inferred, &mut w).map_err(runtime)?;
    let path = args.out.join("diagnostics.csv");
    formats::write_csv_rows(
        &formats::diagnostics_rows(&result),
        formats::create(&path).map_err(runtime)?,
    )
    .map_err(runtime)?;
    formats::write_spectrum(&result, formats::create(&args.out.join("spectrum.csv")).map_err(runtime)?)
        .map_err(runtime)?;
    for pair in result.successes() {
        let path = args.out.join(format!("estimates_level{}.json", pair.parent_level));
        formats::write_manifest(
            &NoiseManifest::estimated(pair, &cfg),
            formats::create(&path).map_err(runtime)?,
        )
        .map_err(runtime)?;
    }

    for f in result.failures() {
        eprintln!("layer pair {} -> {}: {}", f.parent_level, f.parent_level - 1, f.error);
    }
    println!(
        "identified {}/{} layer pairs, {} edges, {:.3}s",
        result.successes().count(),
        result.pairs.len(),
        inferred.edge_count(),
        result.elapsed.as_secs_f64()
    );
    Ok(result.is_complete())
}

fn benchmark(args: BenchmarkArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&args.spec).input()?;
    let threads = threads_from_env().input()?;
    let seed = seed_or_fresh(args.seed);
    let cfg = GridConfig {
        scenario,
        multipliers: args.n_multiplier.clone(),
        trials: args.trials,
        seed,
        noise: (!args.noise_free).then(|| args.noise.config(seed)),
        threads,
    };
    let report = run_grid(&cfg).input()?;

    out_dir(&args.out)?;
    formats::write_report(&report, formats::create(&args.out.join("report.csv")).map_err(runtime)?)
        .map_err(runtime)?;
    formats::write_trials(&report, formats::create(&args.out.join("trials.csv")).map_err(runtime)?)
        .map_err(runtime)?;
    let summary = formats::summary(&report);
    std::fs::write(args.out.join("summary.txt"), &summary)
        .context("writing summary.txt")
        .map_err(runtime)?;
    print!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = threads_from_env() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_INPUT);
    }

    let outcome = match cli.command {
        Command::Generate(a) => generate(a).map(|()| true),
        Command::Identify(a) => identify(a),
        Command::Benchmark(a) => benchmark(a).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_PARTIAL),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
