//! The sweep / run / post workflow behind the `policysim` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use crate::config::{generate_sweep, parse_config};
use crate::engine::World;
use crate::persist::{merge_runs, summarize_all, write_summary_csv, ProbeWriter};

/// Parses `key=v1,v2,...` grid arguments.
pub fn parse_grid(args: &[String]) -> Result<Vec<(String, Vec<String>)>> {
    args.iter()
        .map(|arg| {
            let (key, values) = arg
                .split_once('=')
                .with_context(|| format!("grid argument `{arg}` is not key=v1,v2,..."))?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
            Ok((key.trim().to_string(), values))
        })
        .collect()
}

/// Writes one properties file per run into `out_dir` and returns how many.
pub fn cmd_sweep(
    base: &Path,
    grid: &[String],
    replicates: usize,
    out_dir: &Path,
    force: bool,
) -> Result<usize> {
    let text = fs::read_to_string(base).with_context(|| format!("reading {}", base.display()))?;
    let base_config = parse_config(&text).with_context(|| format!("in {}", base.display()))?;
    let grid = parse_grid(grid)?;
    let runs = generate_sweep(&base_config, &grid, replicates)?;

    if out_dir.exists() {
        let non_empty = fs::read_dir(out_dir)
            .with_context(|| format!("reading {}", out_dir.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            bail!(
                "output directory {} is not empty (use --force to write into it)",
                out_dir.display()
            );
        }
    } else {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    }
    for run in &runs {
        let path = out_dir.join(run.properties_file_name());
        fs::write(&path, run.config.render())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(runs.len())
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config_path: PathBuf,
    pub output_path: PathBuf,
    pub probes: usize,
    pub wall: Duration,
    pub peak_queue: usize,
    pub far_insert_fraction: f64,
}

/// Runs one configuration file. A relative `outputPath` is resolved
/// against the configuration file's directory.
pub fn cmd_run(config_path: &Path) -> Result<RunReport> {
    let start = Instant::now();
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let config = parse_config(&text).with_context(|| format!("in {}", config_path.display()))?;
    let output_path = if config.output_path.is_absolute() {
        config.output_path.clone()
    } else {
        config_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&config.output_path)
    };

    let mut world = World::initialize(config)?;
    let mut writer = ProbeWriter::create(&output_path)?;
    world.run_with(|record| writer.write(record).map_err(anyhow::Error::from))?;
    let probes = writer.rows();
    writer.finish()?;

    let stats = world.queue_stats();
    Ok(RunReport {
        config_path: config_path.to_path_buf(),
        output_path,
        probes,
        wall: start.elapsed(),
        peak_queue: stats.peak_len,
        far_insert_fraction: stats.far_fraction(),
    })
}

fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == ext));
    files.sort();
    Ok(files)
}

/// Runs every `.properties` file in `dir`, `jobs` at a time.
pub fn cmd_run_dir(dir: &Path, jobs: usize) -> Result<Vec<RunReport>> {
    let configs = files_with_extension(dir, "properties")?;
    if configs.is_empty() {
        bail!("no .properties files in {}", dir.display());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?;
    pool.install(|| configs.par_iter().map(|p| cmd_run(p)).collect())
}

/// Merges every run CSV in `dir` and writes the summary CSV. Returns the
/// number of grid points.
pub fn cmd_post(dir: &Path, out: &Path) -> Result<usize> {
    let runs = files_with_extension(dir, "csv")?;
    // The summary may be written into the same directory.
    let runs: Vec<PathBuf> = runs
        .into_iter()
        .filter(|p| fs::canonicalize(p).ok() != fs::canonicalize(out).ok())
        .collect();
    if runs.is_empty() {
        bail!("no run CSV files in {}", dir.display());
    }
    let merged = merge_runs(&runs)?;
    let summaries = summarize_all(&merged)?;
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_summary_csv(&summaries, std::io::BufWriter::new(file))
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(summaries.len())
}

/// Peak resident set size of this process in KiB, where the OS reports it.
pub fn peak_rss_kib() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}
