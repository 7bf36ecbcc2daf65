use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use policysim::cli;

#[derive(Parser)]
#[command(
    name = "policysim",
    version,
    about = "Policy-distribution consistency simulator"
)]
struct Opts {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one properties file per grid point and replicate.
    Sweep {
        #[arg(long)]
        base: PathBuf,
        /// `key=v1,v2,...`; may be repeated.
        #[arg(long)]
        grid: Vec<String>,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        #[arg(long)]
        out: PathBuf,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Run one configuration, or every configuration in a directory.
    Run(RunArgs),
    /// Merge run CSVs and write means and 95% confidence half-widths.
    Post {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(required_unless_present = "dir", conflicts_with = "dir")]
    config: Option<PathBuf>,
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Concurrent runs when running a directory (default 1).
    #[arg(long, requires = "dir", conflicts_with = "config")]
    jobs: Option<usize>,
}

fn report(r: &cli::RunReport) {
    println!(
        "{}: {} probes -> {} | wall {:.3}s | peak queue {} | far inserts {:.1}%",
        r.config_path.display(),
        r.probes,
        r.output_path.display(),
        r.wall.as_secs_f64(),
        r.peak_queue,
        100.0 * r.far_insert_fraction,
    );
}

fn main() -> ExitCode {
    let opts = Opts::parse();
    let result = match opts.command {
        Command::Sweep {
            base,
            grid,
            replicates,
            out,
            force,
        } => cli::cmd_sweep(&base, &grid, replicates, &out, force).map(|count| {
            println!("wrote {count} configurations to {}", out.display());
        }),
        Command::Run(RunArgs { config, dir, jobs }) => match (config, dir) {
            (Some(config), _) => cli::cmd_run(&config).map(|r| report(&r)),
            (None, Some(dir)) => cli::cmd_run_dir(&dir, jobs.unwrap_or(1)).map(|reports| {
                reports.iter().for_each(report);
            }),
            (None, None) => unreachable!("clap enforces one of config or --dir"),
        },
        Command::Post { dir, out } => cli::cmd_post(&dir, &out).map(|points| {
            println!("summarised {points} grid points into {}", out.display());
        }),
    };
    match result {
        Ok(()) => {
            if let Some(kib) = cli::peak_rss_kib() {
                println!("peak_rss_kib {kib}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
