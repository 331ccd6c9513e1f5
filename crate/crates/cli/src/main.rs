use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use eigencert::experiment::{self, check_dominance, ExperimentConfig, ReferenceKind, RunOutput};
use eigencert::mesh::{build_lshape_mesh, build_unit_square_mesh, save_mesh};

#[derive(Parser)]
#[command(name = "eigencert", version, about = "Guaranteed error bounds for P1 Laplace eigenfunctions")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a mesh sweep and write reports, series and rates.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated mesh to a file.
    Mesh {
        #[arg(long, value_enum)]
        domain: DomainArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a sweep and check every bound against the reference distances.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    #[value(name = "unit_square", alias = "square")]
    UnitSquare,
    #[value(name = "l_shape", alias = "lshape")]
    LShape,
}

fn load(config: &PathBuf, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    Ok(cfg)
}

fn print_rates(out: &RunOutput) {
    for note in &out.notes {
        println!("note: {note}");
    }
    for s in &out.rates.series {
        if let Some(slope) = s.slope {
            println!("cluster {:>5}  {:<20} slope {:>7.3}", s.cluster, s.quantity, slope);
        }
    }
    for r in &out.results {
        for e in &r.errors {
            eprintln!("n = {}: {e}", r.n);
        }
        for rep in &r.reports {
            if !rep.complete() {
                eprintln!("n = {}, cluster {}: {}", r.n, rep.spec.label(), rep.diagnostics.join("; "));
            }
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load(&config, out)?;
            let result = experiment::run(&cfg)?;
            if result.clusters.is_empty() {
                eprintln!("no clusters configured; nothing written");
                return Ok(true);
            }
            print_rates(&result);
            println!("reports written to {}", cfg.output_dir.display());
            Ok(result.ok())
        }
        Command::Mesh { domain, n, out } => {
            let mesh = match domain {
                DomainArg::UnitSquare => build_unit_square_mesh(n)?,
                DomainArg::LShape => build_lshape_mesh(n)?,
            };
            save_mesh(&mesh, &out)?;
            println!(
                "{} vertices, {} triangles, h = {} -> {}",
                mesh.vertices().len(),
                mesh.triangles().len(),
                mesh.h(),
                out.display()
            );
            Ok(true)
        }
        Command::Validate { config, out } => {
            let cfg = load(&config, out)?;
            if cfg.validation.reference == ReferenceKind::None {
                bail!("config has no [validation] reference; set reference = \"analytic\" or \"proxy\"");
            }
            let result = experiment::run(&cfg)?;
            print_rates(&result);
            let summary = check_dominance(&result);
            for v in &summary.violations {
                println!(
                    "VIOLATION n = {} cluster {} {}: bound {:e} < reference {:e}",
                    v.n, v.cluster, v.bound, v.bound_value, v.reference
                );
            }
            println!(
                "{} comparisons, {} violations",
                summary.checked,
                summary.violations.len()
            );
            Ok(result.ok() && summary.violations.is_empty())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
