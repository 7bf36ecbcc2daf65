//! Run configuration in `key=value` properties format, and sweep generation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::protocol::{ChangeMode, ProtocolKind};
use crate::subscription::TopologyKind;
use crate::topology::{CostModel, HierarchySpec, TopologyError};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key=value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given more than once")]
    DuplicateKey(String),
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("grid key `{0}` has no values")]
    EmptyGrid(String),
    #[error("replicates must be positive")]
    NoReplicates,
}

pub const KEY_SERVICES_PER_BLADE: &str = "servicesPerBlade";
pub const KEY_BLADES_PER_CHASSIS: &str = "bladesPerChassis";
pub const KEY_CHASSES_PER_RACK: &str = "chassesPerRack";
pub const KEY_RACKS_PER_AISLE: &str = "racksPerAisle";
pub const KEY_AISLES: &str = "aisles";
pub const KEY_SERVICES: &str = "services";
pub const KEY_TOPOLOGY: &str = "topologyKind";
pub const KEY_MEAN_DEGREE: &str = "meanDegree";
pub const KEY_WS_REWIRE: &str = "wsRewireProb";
pub const KEY_PROTOCOL: &str = "protocolKind";
pub const KEY_POLL_INTERVAL: &str = "pollInterval";
pub const KEY_CHANGE_FRACTION: &str = "changeFraction";
pub const KEY_CHANGE_MODE: &str = "changeMode";
pub const KEY_RUNTIME: &str = "runtime";
pub const KEY_PROBE_INTERVAL: &str = "probeInterval";
pub const KEY_SEED: &str = "rngSeed";
pub const KEY_OUTPUT: &str = "outputPath";
pub const KEY_COST_MODEL: &str = "costModel";

/// Every recognised key, in rendering order.
pub const KEYS: [&str; 18] = [
    KEY_AISLES,
    KEY_RACKS_PER_AISLE,
    KEY_CHASSES_PER_RACK,
    KEY_BLADES_PER_CHASSIS,
    KEY_SERVICES_PER_BLADE,
    KEY_SERVICES,
    KEY_TOPOLOGY,
    KEY_MEAN_DEGREE,
    KEY_WS_REWIRE,
    KEY_PROTOCOL,
    KEY_POLL_INTERVAL,
    KEY_CHANGE_FRACTION,
    KEY_CHANGE_MODE,
    KEY_RUNTIME,
    KEY_PROBE_INTERVAL,
    KEY_SEED,
    KEY_OUTPUT,
    KEY_COST_MODEL,
];

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub services_per_blade: usize,
    pub blades_per_chassis: usize,
    pub chasses_per_rack: usize,
    pub racks_per_aisle: usize,
    pub aisles: usize,
    /// Occupied slots when the hierarchy is only partly filled; `None` fills it.
    pub services: Option<usize>,
    pub topology_kind: TopologyKind,
    /// Explicit subscription degree; `None` means floor(sqrt(n)).
    pub mean_degree: Option<usize>,
    pub ws_rewire_prob: f64,
    pub protocol_kind: ProtocolKind,
    pub poll_interval: f64,
    pub change_fraction: f64,
    pub change_mode: ChangeMode,
    pub runtime: f64,
    pub probe_interval: f64,
    pub rng_seed: u64,
    pub output_path: PathBuf,
    pub cost_model: CostModel,
}

impl SimulationConfig {
    /// A small flat configuration with defaults filled in, mainly for tests
    /// and programmatic use.
    pub fn flat(n: usize, topology_kind: TopologyKind, protocol_kind: ProtocolKind) -> Self {
        SimulationConfig {
            services_per_blade: n,
            blades_per_chassis: 1,
            chasses_per_rack: 1,
            racks_per_aisle: 1,
            aisles: 1,
            services: None,
            topology_kind,
            mean_degree: None,
            ws_rewire_prob: 0.1,
            protocol_kind,
            poll_interval: 1.0,
            change_fraction: 0.0,
            change_mode: ChangeMode::Fail,
            runtime: 100.0,
            probe_interval: 1.0,
            rng_seed: 0,
            output_path: PathBuf::from("run.csv"),
            cost_model: CostModel::Tree,
        }
    }

    /// The 4/16/4/16 hierarchy with `aisles` aisles, optionally partly filled.
    pub fn hierarchical(
        services: Option<usize>,
        aisles: usize,
        topology_kind: TopologyKind,
        protocol_kind: ProtocolKind,
    ) -> Self {
        SimulationConfig {
            services_per_blade: 4,
            blades_per_chassis: 16,
            chasses_per_rack: 4,
            racks_per_aisle: 16,
            aisles,
            services,
            ..Self::flat(2, topology_kind, protocol_kind)
        }
    }

    pub fn capacity(&self) -> usize {
        [
            self.services_per_blade,
            self.blades_per_chassis,
            self.chasses_per_rack,
            self.racks_per_aisle,
            self.aisles,
        ]
        .iter()
        .fold(1usize, |acc, &v| acc.saturating_mul(v))
    }

    /// Total number of services.
    pub fn n(&self) -> usize {
        self.services.unwrap_or_else(|| self.capacity())
    }

    pub fn mean_degree(&self) -> usize {
        self.mean_degree.unwrap_or_else(|| default_degree(self.n()))
    }

    pub fn hierarchy(&self) -> Result<HierarchySpec, TopologyError> {
        HierarchySpec::partial(
            self.services_per_blade,
            self.blades_per_chassis,
            self.chasses_per_rack,
            self.racks_per_aisle,
            self.aisles,
            self.n(),
        )
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, value: String, reason: &str| ConfigError::InvalidValue {
            key: key.to_string(),
            value,
            reason: reason.to_string(),
        };
        for (key, v) in [
            (KEY_AISLES, self.aisles),
            (KEY_RACKS_PER_AISLE, self.racks_per_aisle),
            (KEY_CHASSES_PER_RACK, self.chasses_per_rack),
            (KEY_BLADES_PER_CHASSIS, self.blades_per_chassis),
            (KEY_SERVICES_PER_BLADE, self.services_per_blade),
        ] {
            if v == 0 {
                return Err(invalid(key, v.to_string(), "must be positive"));
            }
        }
        let n = self.n();
        let size_key = if self.services.is_some() {
            KEY_SERVICES
        } else {
            KEY_SERVICES_PER_BLADE
        };
        if n < 2 {
            return Err(invalid(
                size_key,
                n.to_string(),
                "total services must be at least 2",
            ));
        }
        if n > u32::MAX as usize {
            return Err(invalid(
                size_key,
                n.to_string(),
                "total services exceed 2^32 - 1",
            ));
        }
        if let Some(s) = self.services {
            if s > self.capacity() {
                return Err(invalid(
                    KEY_SERVICES,
                    s.to_string(),
                    &format!("exceeds hierarchy capacity {}", self.capacity()),
                ));
            }
        }
        let k = self.mean_degree();
        if k == 0 || k >= n {
            return Err(invalid(
                KEY_MEAN_DEGREE,
                k.to_string(),
                &format!("must satisfy 0 < meanDegree < n = {n}"),
            ));
        }
        if !(0.0..=1.0).contains(&self.ws_rewire_prob) {
            return Err(invalid(
                KEY_WS_REWIRE,
                self.ws_rewire_prob.to_string(),
                "must lie in [0, 1]",
            ));
        }
        if !(0.0..=1.0).contains(&self.change_fraction) {
            return Err(invalid(
                KEY_CHANGE_FRACTION,
                self.change_fraction.to_string(),
                "must lie in [0, 1]",
            ));
        }
        for (key, v) in [
            (KEY_POLL_INTERVAL, self.poll_interval),
            (KEY_RUNTIME, self.runtime),
            (KEY_PROBE_INTERVAL, self.probe_interval),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(
                    key,
                    v.to_string(),
                    "must be a positive number of seconds",
                ));
            }
        }
        if self.probe_interval > self.runtime {
            return Err(invalid(
                KEY_PROBE_INTERVAL,
                self.probe_interval.to_string(),
                "must not exceed runtime",
            ));
        }
        Ok(())
    }

    /// Renders the configuration as a properties document accepted by
    /// [`parse_config`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.to_pairs() {
            let _ = writeln!(out, "{key}={value}");
        }
        out
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut pairs = vec![
            (KEY_AISLES, self.aisles.to_string()),
            (KEY_RACKS_PER_AISLE, self.racks_per_aisle.to_string()),
            (KEY_CHASSES_PER_RACK, self.chasses_per_rack.to_string()),
            (KEY_BLADES_PER_CHASSIS, self.blades_per_chassis.to_string()),
            (KEY_SERVICES_PER_BLADE, self.services_per_blade.to_string()),
        ];
        if let Some(s) = self.services {
            pairs.push((KEY_SERVICES, s.to_string()));
        }
        pairs.push((KEY_TOPOLOGY, self.topology_kind.to_string()));
        if let Some(k) = self.mean_degree {
            pairs.push((KEY_MEAN_DEGREE, k.to_string()));
        }
        pairs.extend([
            (KEY_WS_REWIRE, self.ws_rewire_prob.to_string()),
            (KEY_PROTOCOL, self.protocol_kind.to_string()),
            (KEY_POLL_INTERVAL, self.poll_interval.to_string()),
            (KEY_CHANGE_FRACTION, self.change_fraction.to_string()),
            (KEY_CHANGE_MODE, self.change_mode.to_string()),
            (KEY_RUNTIME, self.runtime.to_string()),
            (KEY_PROBE_INTERVAL, self.probe_interval.to_string()),
            (KEY_SEED, self.rng_seed.to_string()),
            (KEY_OUTPUT, self.output_path.display().to_string()),
            (KEY_COST_MODEL, self.cost_model.to_string()),
        ]);
        pairs
    }
}

/// floor(sqrt(n)), exact for every usize.
pub fn default_degree(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.to_string(),
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        if map
            .insert(key.to_string(), value.trim().to_string())
            .is_some()
        {
            return Err(ConfigError::DuplicateKey(key.to_string()));
        }
    }
    Ok(map)
}

fn required<'a>(
    map: &'a BTreeMap<String, String>,
    key: &'static str,
) -> Result<&'a str, ConfigError> {
    map.get(key)
        .map(String::as_str)
        .ok_or(ConfigError::MissingKey(key))
}

fn value<T>(key: &str, raw: &str) -> Result<T, ConfigError>
where
    T: FromStr,
    T::Err: ToString,
{
    raw.parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.to_string(),
        value: raw.to_string(),
        reason: e.to_string(),
    })
}

fn from_pairs(map: &BTreeMap<String, String>) -> Result<SimulationConfig, ConfigError> {
    let req = |key: &'static str| required(map, key);
    let opt = |key: &'static str| map.get(key).map(String::as_str);

    let config = SimulationConfig {
        aisles: value(KEY_AISLES, req(KEY_AISLES)?)?,
        racks_per_aisle: value(KEY_RACKS_PER_AISLE, req(KEY_RACKS_PER_AISLE)?)?,
        chasses_per_rack: value(KEY_CHASSES_PER_RACK, req(KEY_CHASSES_PER_RACK)?)?,
        blades_per_chassis: value(KEY_BLADES_PER_CHASSIS, req(KEY_BLADES_PER_CHASSIS)?)?,
        services_per_blade: value(KEY_SERVICES_PER_BLADE, req(KEY_SERVICES_PER_BLADE)?)?,
        services: opt(KEY_SERVICES)
            .map(|v| value(KEY_SERVICES, v))
            .transpose()?,
        topology_kind: value(KEY_TOPOLOGY, req(KEY_TOPOLOGY)?)?,
        mean_degree: opt(KEY_MEAN_DEGREE)
            .map(|v| value(KEY_MEAN_DEGREE, v))
            .transpose()?,
        ws_rewire_prob: opt(KEY_WS_REWIRE).map_or(Ok(0.1), |v| value(KEY_WS_REWIRE, v))?,
        protocol_kind: value(KEY_PROTOCOL, req(KEY_PROTOCOL)?)?,
        poll_interval: opt(KEY_POLL_INTERVAL).map_or(Ok(1.0), |v| value(KEY_POLL_INTERVAL, v))?,
        change_fraction: value(KEY_CHANGE_FRACTION, req(KEY_CHANGE_FRACTION)?)?,
        change_mode: opt(KEY_CHANGE_MODE)
            .map_or(Ok(ChangeMode::Fail), |v| value(KEY_CHANGE_MODE, v))?,
        runtime: value(KEY_RUNTIME, req(KEY_RUNTIME)?)?,
        probe_interval: opt(KEY_PROBE_INTERVAL)
            .map_or(Ok(1.0), |v| value(KEY_PROBE_INTERVAL, v))?,
        rng_seed: value(KEY_SEED, req(KEY_SEED)?)?,
        output_path: PathBuf::from(req(KEY_OUTPUT)?),
        cost_model: opt(KEY_COST_MODEL)
            .map_or(Ok(CostModel::Tree), |v| value(KEY_COST_MODEL, v))?,
    };
    config.validate()?;
    Ok(config)
}

/// Parses and validates a properties document.
pub fn parse_config(text: &str) -> Result<SimulationConfig, ConfigError> {
    from_pairs(&parse_pairs(text)?)
}

/// One run produced by [`generate_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub config: SimulationConfig,
    /// Label shared by all replicates of one grid point, e.g. `topologyKind-Random__changeFraction-0.01`.
    pub grid_point: String,
    pub grid_index: usize,
    pub replicate: usize,
    /// File stem (no extension) for the run's properties and CSV files.
    pub file_stem: String,
}

impl SweepRun {
    pub fn properties_file_name(&self) -> String {
        format!("{}.properties", self.file_stem)
    }
}

/// Separator between the grid-point label and the replicate suffix in file names.
pub const REPLICATE_SEPARATOR: &str = "__rep";

/// Label used when the grid is empty.
pub const BASE_GRID_POINT: &str = "base";

/// Seed for one run, mixed from the base seed and the run's coordinates.
pub fn derive_seed(base: u64, grid_index: usize, replicate: usize) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(base) ^ grid_index as u64) ^ replicate as u64)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '+' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Cartesian product of `grid` values, `replicates` runs per point.
///
/// Grid keys vary in the given order with the last key varying fastest.
pub fn generate_sweep(
    base: &SimulationConfig,
    grid: &[(String, Vec<String>)],
    replicates: usize,
) -> Result<Vec<SweepRun>, ConfigError> {
    if replicates == 0 {
        return Err(ConfigError::NoReplicates);
    }
    for (key, values) in grid {
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
        if values.is_empty() {
            return Err(ConfigError::EmptyGrid(key.clone()));
        }
    }
    let base_pairs: BTreeMap<String, String> = base
        .to_pairs()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let points: usize = grid.iter().map(|(_, v)| v.len()).product();

    let mut runs = Vec::with_capacity(points * replicates);
    for grid_index in 0..points {
        let mut pairs = base_pairs.clone();
        let mut label_parts = Vec::with_capacity(grid.len());
        let mut rest = grid_index;
        let mut chosen = vec![""; grid.len()];
        for (slot, (_, values)) in grid.iter().enumerate().rev() {
            chosen[slot] = values[rest % values.len()].as_str();
            rest /= values.len();
        }
        for ((key, _), v) in grid.iter().zip(&chosen) {
            pairs.insert(key.clone(), v.to_string());
            label_parts.push(format!("{}-{}", key, sanitize(v)));
        }
        let grid_point = if label_parts.is_empty() {
            BASE_GRID_POINT.to_string()
        } else {
            label_parts.join("__")
        };
        let point_seed: u64 = value(KEY_SEED, &pairs[KEY_SEED])?;
        for replicate in 0..replicates {
            let file_stem = format!("{grid_point}{REPLICATE_SEPARATOR}{replicate:03}");
            let mut run_pairs = pairs.clone();
            run_pairs.insert(
                KEY_SEED.to_string(),
                derive_seed(point_seed, grid_index, replicate).to_string(),
            );
            run_pairs.insert(KEY_OUTPUT.to_string(), format!("{file_stem}.csv"));
            let config = from_pairs(&run_pairs)?;
            runs.push(SweepRun {
                config,
                grid_point: grid_point.clone(),
                grid_index,
                replicate,
                file_stem,
            });
        }
    }
    Ok(runs)
}
