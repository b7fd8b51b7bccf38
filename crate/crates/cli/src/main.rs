use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use rfbs_cli::config::{Scenario, SweepAxis};
use rfbs_cli::runner::{run_scenario, validate_report, write_artifacts};

#[derive(Parser)]
#[command(name = "rfbs", about = "Equilibrium runner for the backscatter time-scheduling game")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write results.csv, aggregate.csv,
    /// manifest.json and SVG plots.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated subset of hybrid,harvest_only,backscatter_only.
        #[arg(long, value_delimiter = ',')]
        mode: Option<Vec<String>>,
        #[arg(long)]
        multistart: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a scenario file and echo the resolved parameters with units.
    Validate { scenario: PathBuf },
    /// Run a scenario with its sweep section overridden from the command
    /// line.
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        axis: String,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        mode: Option<Vec<String>>,
        #[arg(long)]
        multistart: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn apply_overrides(
    sc: &mut Scenario,
    out: Option<PathBuf>,
    seed: Option<u64>,
    mode: Option<Vec<String>>,
    multistart: Option<usize>,
) {
    if let Some(o) = out {
        sc.out_dir = o.display().to_string();
    }
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(m) = mode {
        sc.modes = m;
    }
    if let Some(n) = multistart {
        sc.multistart = n;
    }
}

fn setup_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run_and_write(sc: &Scenario) -> Result<()> {
    let art = run_scenario(sc)?;
    let dir = PathBuf::from(&sc.out_dir);
    write_artifacts(&art, &dir)?;
    let failed = art.points.iter().filter(|p| p.status.starts_with("error")).count();
    println!(
        "{} runs ({} flagged), artifacts in {}",
        art.points.len(),
        failed,
        dir.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            scenario,
            out,
            seed,
            mode,
            multistart,
            jobs,
        } => {
            setup_jobs(jobs)?;
            let mut sc = Scenario::from_file(&scenario)?;
            apply_overrides(&mut sc, out, seed, mode, multistart);
            run_and_write(&sc)
        }
        Command::Validate { scenario } => {
            let sc = Scenario::from_file(&scenario)?;
            print!("{}", validate_report(&sc)?);
            Ok(())
        }
        Command::Sweep {
            scenario,
            axis,
            from,
            to,
            steps,
            out,
            seed,
            mode,
            multistart,
            jobs,
        } => {
            setup_jobs(jobs)?;
            let mut sc = Scenario::from_file(&scenario)?;
            apply_overrides(&mut sc, out, seed, mode, multistart);
            sc.axis = SweepAxis::parse(&axis)?;
            if steps < 1 || (steps > 1 && !(to > from)) {
                anyhow::bail!("sweep grid must be strictly increasing");
            }
            sc.grid = (0..steps)
                .map(|i| {
                    let v = if steps == 1 {
                        from
                    } else {
                        from + (to - from) * i as f64 / (steps - 1) as f64
                    };
                    if sc.axis == SweepAxis::K {
                        v.round()
                    } else {
                        v
                    }
                })
                .collect();
            if sc.axis == SweepAxis::K {
                sc.grid.dedup();
            }
            run_and_write(&sc)
        }
    }
}
