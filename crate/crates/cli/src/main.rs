//! `geofold`: every stage of a blocked cross-validation experiment as a
//! file-in, file-out subcommand.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geofold::geo::thin;
use geofold::pipeline::{
    build_plans, emit_report, load_data, prepare, run_experiment, Bundle, CellFilter, ExperimentConfig, RunOptions,
    Stage,
};
use geofold::sac::sac_range;
use geofold::sim::{simulate_virtual_species, VirtualSpeciesParams};
use geofold::Error;

const DEFAULT_THIN_M: f64 = 500.0;

#[derive(Parser)]
#[command(
    name = "geofold",
    version,
    about = "Spatially and temporally blocked cross-validation"
)]
struct Cli {
    /// Worker threads (defaults to every core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Drop records closer than a minimum distance; writes the kept records as CSV.
    Thin {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: PathBuf,
        /// Minimum distance in metres (else the config's value, else 500).
        #[arg(long)]
        min_dist_m: Option<f64>,
    },
    /// Fit variograms to the in-time features; writes the per-feature table.
    SacRange {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build every scheme's fold plan into a directory.
    Split {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        only: Option<String>,
    },
    /// Hyperparameter search only.
    Tune {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cell filter, e.g. `scheme=random,learner=gbm`.
        #[arg(long)]
        only: Option<String>,
    },
    /// Search, finalize, test out of time and report.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        only: Option<String>,
    },
    /// Generate a virtual species dataset as CSV.
    Simulate {
        /// Simulation parameters (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rebuild the report tables of a finished or partial run.
    Report {
        /// Run output directory; tables go to its `report/` folder.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_experiment(args: &ExperimentArgs) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn filter(only: &Option<String>) -> Result<CellFilter, Error> {
    only.as_deref()
        .map(CellFilter::parse)
        .transpose()
        .map(Option::unwrap_or_default)
}

fn create_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|e| Error::InvalidArgument(format!("cannot create {}: {e}", path.display())))
}

/// Exit status 2 marks a run that finished with failed cells.
fn execute(command: Command) -> Result<u8, Error> {
    match command {
        Command::Thin { exp, out, min_dist_m } => {
            let (cfg, base) = load_experiment(&exp)?;
            let (d, _) = load_data(&cfg, &base)?;
            let min = min_dist_m.or(cfg.thin_min_dist_m).unwrap_or(DEFAULT_THIN_M);
            let kept = thin(&d, min, cfg.thin_seed())?;
            println!("kept {} of {} records at {min} m", kept.len(), d.len());
            d.subset(&kept)?.write_csv(&out)?;
        }
        Command::SacRange { exp, out } => {
            let (cfg, base) = load_experiment(&exp)?;
            let prepared = prepare(&cfg, &base)?;
            let sac = sac_range(&prepared.split.in_time, &cfg.sac)?;
            sac.write_csv(&out)?;
            println!("sac range {:.3} km", sac.range_km);
        }
        Command::Split { exp, out, only } => {
            let (cfg, base) = load_experiment(&exp)?;
            let only = filter(&only)?;
            let prepared = prepare(&cfg, &base)?;
            create_dir(&out)?;
            let (sac, plans) = build_plans(&cfg, &prepared.split.in_time);
            if let Some(Ok(s)) = &sac {
                s.write_csv(&out.join("sac_range.csv"))?;
            }
            let mut failed = 0;
            for p in plans.iter().filter(|p| only.admits_scheme(&p.label)) {
                match &p.plan {
                    Ok(plan) => {
                        plan.write(&out, &p.label)?;
                        println!("{}: {} folds", p.label, plan.len());
                    }
                    Err(e) => {
                        failed += 1;
                        eprintln!("{}: {e}", p.label);
                    }
                }
            }
            if failed > 0 {
                return Ok(2);
            }
        }
        Command::Tune { exp, out, only } => return run(&exp, out, &only, Stage::Tune),
        Command::Run { exp, out, only } => return run(&exp, out, &only, Stage::Full),
        Command::Simulate { config, out, seed } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", config.display())))?;
            let mut params: VirtualSpeciesParams =
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            if let Some(seed) = seed {
                params.seed = seed;
            }
            let d = simulate_virtual_species(&params)?;
            d.write_csv(&out)?;
            println!("wrote {} records to {}", d.len(), out.display());
        }
        Command::Report { out } => {
            let bundle = Bundle::load(&out)?;
            emit_report(&bundle, &out.join("report"))?;
            println!("report written to {}", out.join("report").display());
        }
    }
    Ok(0)
}

fn run(exp: &ExperimentArgs, out: Option<PathBuf>, only: &Option<String>, stage: Stage) -> Result<u8, Error> {
    let (cfg, base) = load_experiment(exp)?;
    let opts = RunOptions {
        out_dir: out,
        only: filter(only)?,
        stage,
    };
    let outcome = run_experiment(&cfg, &base, &opts)?;
    println!(
        "{} cells, {} failed; bundle in {}",
        outcome.cells,
        outcome.failures.len(),
        outcome.out_dir.display()
    );
    Ok(if outcome.failures.is_empty() { 0 } else { 2 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
