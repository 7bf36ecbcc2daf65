//! Probe CSV output, merging of many run files, and replicate statistics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::config::REPLICATE_SEPARATOR;

/// Header of every run CSV, in column order.
pub const RUN_HEADER: [&str; 12] = [
    "time",
    "n_consistent",
    "n_inconsistent",
    "n_consistent_unfiltered",
    "n_inconsistent_unfiltered",
    "total_load",
    "mean_load_per_service",
    "max_load_blade",
    "max_load_chassis",
    "max_load_rack",
    "max_load_aisle",
    "max_load_root",
];

/// Header of the summary CSV.
pub const SUMMARY_HEADER: [&str; 5] =
    ["grid_point", "metric", "replicates", "mean", "ci_halfwidth"];

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: header does not match the probe schema (found `{found}`)")]
    Schema { path: PathBuf, found: String },
    #[error("{0}: run file has no probe rows")]
    EmptyRun(PathBuf),
    #[error("no run files to merge")]
    NothingToMerge,
}

impl PersistError {
    fn io(path: &Path, source: io::Error) -> Self {
        PersistError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn csv(path: &Path, source: csv::Error) -> Self {
        PersistError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One monitoring probe. Counts with the `_unfiltered` suffix include
/// services that have failed (a failed service counts as inconsistent); the
/// plain counts cover only services that have never failed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub time: f64,
    pub n_consistent: u64,
    pub n_inconsistent: u64,
    pub n_consistent_unfiltered: u64,
    pub n_inconsistent_unfiltered: u64,
    /// Component accesses during the interval ending at `time`.
    pub total_load: u64,
    pub mean_load_per_service: f64,
    pub max_load_blade: u64,
    pub max_load_chassis: u64,
    pub max_load_rack: u64,
    pub max_load_aisle: u64,
    pub max_load_root: u64,
}

impl ProbeRecord {
    /// Metric values in header order, without `time`.
    pub fn metrics(&self) -> [f64; 11] {
        [
            self.n_consistent as f64,
            self.n_inconsistent as f64,
            self.n_consistent_unfiltered as f64,
            self.n_inconsistent_unfiltered as f64,
            self.total_load as f64,
            self.mean_load_per_service,
            self.max_load_blade as f64,
            self.max_load_chassis as f64,
            self.max_load_rack as f64,
            self.max_load_aisle as f64,
            self.max_load_root as f64,
        ]
    }
}

/// Streams probe records to a CSV file, one row at a time.
pub struct ProbeWriter<W: Write> {
    inner: csv::Writer<W>,
    path: PathBuf,
    rows: usize,
}

impl ProbeWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, PersistError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| PersistError::io(path, e))?;
        Self::new(BufWriter::new(file), path)
    }
}

impl<W: Write> ProbeWriter<W> {
    /// Wraps a writer; `path` is only used in error messages.
    pub fn new(writer: W, path: impl AsRef<Path>) -> Result<Self, PersistError> {
        let path = path.as_ref().to_path_buf();
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(writer);
        inner
            .write_record(RUN_HEADER)
            .map_err(|e| PersistError::csv(&path, e))?;
        Ok(ProbeWriter {
            inner,
            path,
            rows: 0,
        })
    }

    pub fn write(&mut self, record: &ProbeRecord) -> Result<(), PersistError> {
        self.rows += 1;
        self.inner
            .serialize(record)
            .map_err(|e| PersistError::csv(&self.path, e))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn finish(mut self) -> Result<W, PersistError> {
        self.inner
            .flush()
            .map_err(|e| PersistError::io(&self.path, e))?;
        self.inner
            .into_inner()
            .map_err(|e| PersistError::io(&self.path, e.into_error()))
    }
}

pub fn write_csv<I>(records: I, path: impl AsRef<Path>) -> Result<(), PersistError>
where
    I: IntoIterator<Item = ProbeRecord>,
{
    let mut writer = ProbeWriter::create(path)?;
    for r in records {
        writer.write(&r)?;
    }
    writer.finish().map(drop)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ProbeRecord>, PersistError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| PersistError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(io::BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| PersistError::csv(path, e))?
        .clone();
    if headers.iter().ne(RUN_HEADER.iter().copied()) {
        return Err(PersistError::Schema {
            path: path.to_path_buf(),
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    reader
        .deserialize()
        .collect::<Result<Vec<ProbeRecord>, _>>()
        .map_err(|e| PersistError::csv(path, e))
}

/// Grid-point label of a run file: its stem without the replicate suffix.
pub fn grid_point_of(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.rfind(REPLICATE_SEPARATOR) {
        Some(pos) => stem[..pos].to_string(),
        None => stem,
    }
}

/// All replicates of one grid point, keyed by run file stem.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridGroup {
    pub replicates: BTreeMap<String, Vec<ProbeRecord>>,
}

impl GridGroup {
    pub fn row_count(&self) -> usize {
        self.replicates.values().map(Vec::len).sum()
    }

    /// Rows of every replicate grouped by probe time, in time order.
    pub fn by_time(&self) -> Vec<(f64, Vec<&ProbeRecord>)> {
        let mut rows: Vec<&ProbeRecord> = self.replicates.values().flatten().collect();
        rows.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut out: Vec<(f64, Vec<&ProbeRecord>)> = Vec::new();
        for r in rows {
            match out.last_mut() {
                Some((t, group)) if *t == r.time => group.push(r),
                _ => out.push((r.time, vec![r])),
            }
        }
        out
    }
}

/// Run files grouped by grid point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergedRuns {
    pub groups: BTreeMap<String, GridGroup>,
}

pub fn merge_runs<P: AsRef<Path>>(paths: &[P]) -> Result<MergedRuns, PersistError> {
    if paths.is_empty() {
        return Err(PersistError::NothingToMerge);
    }
    let mut merged = MergedRuns::default();
    for path in paths {
        let path = path.as_ref();
        let records = read_csv(path)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        merged
            .groups
            .entry(grid_point_of(path))
            .or_default()
            .replicates
            .insert(stem, records);
    }
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub metric: &'static str,
    pub mean: f64,
    /// Absent with fewer than two replicates.
    pub ci_halfwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub grid_point: String,
    pub replicates: usize,
    pub metrics: Vec<MetricSummary>,
}

impl RunSummary {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

/// Mean and 95% Student-t half-width of a sample.
pub fn mean_and_halfwidth(values: &[f64]) -> (f64, Option<f64>) {
    let r = values.len();
    let mean = values.iter().sum::<f64>() / r as f64;
    if r < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (r - 1) as f64)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    (mean, Some(t * var.sqrt() / (r as f64).sqrt()))
}

/// Time-averages every metric within each replicate, then reports the mean
/// and 95% confidence half-width across replicates.
pub fn summarize(grid_point: &str, group: &GridGroup) -> Result<RunSummary, PersistError> {
    let mut per_metric: Vec<Vec<f64>> = vec![Vec::new(); RUN_HEADER.len() - 1];
    for (stem, records) in &group.replicates {
        if records.is_empty() {
            return Err(PersistError::EmptyRun(PathBuf::from(stem)));
        }
        let mut sums = [0.0; 11];
        for r in records {
            for (s, v) in sums.iter_mut().zip(r.metrics()) {
                *s += v;
            }
        }
        for (values, s) in per_metric.iter_mut().zip(sums) {
            values.push(s / records.len() as f64);
        }
    }
    let metrics = RUN_HEADER[1..]
        .iter()
        .zip(&per_metric)
        .map(|(&metric, values)| {
            let (mean, ci_halfwidth) = mean_and_halfwidth(values);
            MetricSummary {
                metric,
                mean,
                ci_halfwidth,
            }
        })
        .collect();
    Ok(RunSummary {
        grid_point: grid_point.to_string(),
        replicates: group.replicates.len(),
        metrics,
    })
}

pub fn summarize_all(merged: &MergedRuns) -> Result<Vec<RunSummary>, PersistError> {
    merged
        .groups
        .iter()
        .map(|(point, group)| summarize(point, group))
        .collect()
}

/// Writes one row per (grid point, metric).
pub fn write_summary_csv<W: Write>(summaries: &[RunSummary], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in summaries {
        for m in &s.metrics {
            w.write_record([
                s.grid_point.clone(),
                m.metric.to_string(),
                s.replicates.to_string(),
                m.mean.to_string(),
                m.ci_halfwidth.map(|h| h.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
