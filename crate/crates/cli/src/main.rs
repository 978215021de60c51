use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chaoscope::numerics::PrecisionMode;
use chaoscope::report::{self, Demo, PlotKind, ReportError, RunConfig, RunOutcome, EXIT_CONFIG};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chaoscope", version, about = "Floating-point chaos probes for a toy transformer")]
struct Cli {
    /// Overrides `model.precision` from the config.
    #[arg(long, global = true, value_parser = parse_precision)]
    precision: Option<PrecisionMode>,
    /// Worker threads for the probes.
    #[arg(long, global = true, env = "CHAOSCOPE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the probe described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        overwrite: bool,
        /// Also render an SVG plot.
        #[arg(long)]
        plot: bool,
    },
    /// Compute (or load from cache) the Jacobian spectrum at the configured point.
    Spectrum {
        config: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
    /// Render a CSV written by `run` as SVG.
    Plot {
        csv: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: PlotKind,
        /// Defaults to the CSV path with an `.svg` extension.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Canned desk-scale reproductions: regimes, avalanche or boundary.
    Demo {
        #[arg(value_parser = parse_demo)]
        name: Demo,
        #[arg(long, default_value = "chaoscope-demo")]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
}

fn parse_precision(s: &str) -> Result<PrecisionMode, String> {
    s.parse().map_err(|e: chaoscope::numerics::NumericsError| e.to_string())
}

fn parse_kind(s: &str) -> Result<PlotKind, String> {
    s.parse()
}

fn parse_demo(s: &str) -> Result<Demo, String> {
    s.parse()
}

fn load(path: &Path, precision: Option<PrecisionMode>) -> Result<RunConfig, ReportError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(p) = precision {
        cfg.model.precision = p;
    }
    Ok(cfg)
}

fn describe(out: &RunOutcome) {
    println!("{}: {} records -> {}", out.probe, out.records, out.csv.display());
    println!("manifest: {}", out.manifest.display());
    if let Some(svg) = &out.svg {
        println!("plot: {}", svg.display());
    }
}

fn execute(cli: Cli) -> Result<(), ReportError> {
    match cli.command {
        Command::Run { config, overwrite, plot } => {
            let mut cfg = load(&config, cli.precision)?;
            cfg.overwrite |= overwrite;
            cfg.plot |= plot;
            describe(&report::run(&cfg)?);
        }
        Command::Spectrum { config, overwrite } => {
            let mut cfg = load(&config, cli.precision)?;
            cfg.overwrite |= overwrite;
            describe(&report::run_spectrum(&cfg)?);
        }
        Command::Plot { csv, kind, out, overwrite } => {
            let path = report::plot_csv(&csv, kind, out.as_deref(), overwrite)?;
            println!("plot: {}", path.display());
        }
        Command::Demo { name, out, overwrite } => {
            for outcome in report::run_demo(name, &out, overwrite, cli.precision)? {
                describe(&outcome);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
