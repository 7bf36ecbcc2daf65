//! Physical hierarchy: aisles contain racks, racks contain chasses, chasses
//! contain blades and blades run services.
//!
//! No object exists per component. Each level is a flat array of access
//! counts indexed by the component's global position, and a service's
//! position in the tree is recovered from its id by mixed-radix decoding.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("service id {id} out of range (n = {n})")]
    OutOfRange { id: usize, n: usize },
    #[error("no path from service {0} to itself")]
    SelfPath(usize),
    #[error("hierarchy level `{0}` must be a positive count")]
    ZeroCount(&'static str),
    #[error("{services} services do not fit into a hierarchy of capacity {capacity}")]
    Overfull { services: usize, capacity: usize },
    #[error("a data centre needs at least 2 services, got {0}")]
    TooSmall(usize),
}

/// Physical component levels, ordered bottom-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Blade,
    Chassis,
    Rack,
    Aisle,
    Root,
}

impl Level {
    pub const ALL: [Level; 5] = [
        Level::Blade,
        Level::Chassis,
        Level::Rack,
        Level::Aisle,
        Level::Root,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// How a message between two services is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostModel {
    /// One unit for every component on the tree path.
    #[default]
    Tree,
    /// Every message costs 1 and is charged to the sender's blade.
    Unit,
}

impl fmt::Display for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostModel::Tree => "Tree",
            CostModel::Unit => "Unit",
        })
    }
}

impl FromStr for CostModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Tree" => Ok(CostModel::Tree),
            "Unit" => Ok(CostModel::Unit),
            other => Err(format!(
                "unknown cost model `{other}` (expected Tree or Unit)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HierarchySpec {
    pub services_per_blade: usize,
    pub blades_per_chassis: usize,
    pub chasses_per_rack: usize,
    pub racks_per_aisle: usize,
    pub aisles: usize,
    n_services: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServiceAddress {
    pub aisle: usize,
    pub rack: usize,
    pub chassis: usize,
    pub blade: usize,
    pub slot: usize,
}

impl HierarchySpec {
    /// A fully populated hierarchy.
    pub fn new(
        services_per_blade: usize,
        blades_per_chassis: usize,
        chasses_per_rack: usize,
        racks_per_aisle: usize,
        aisles: usize,
    ) -> Result<Self, TopologyError> {
        let capacity = services_per_blade
            .checked_mul(blades_per_chassis)
            .and_then(|v| v.checked_mul(chasses_per_rack))
            .and_then(|v| v.checked_mul(racks_per_aisle))
            .and_then(|v| v.checked_mul(aisles))
            .unwrap_or(usize::MAX);
        Self::partial(
            services_per_blade,
            blades_per_chassis,
            chasses_per_rack,
            racks_per_aisle,
            aisles,
            capacity,
        )
    }

    /// A hierarchy whose first `services` slots (in tree order) are occupied.
    pub fn partial(
        services_per_blade: usize,
        blades_per_chassis: usize,
        chasses_per_rack: usize,
        racks_per_aisle: usize,
        aisles: usize,
        services: usize,
    ) -> Result<Self, TopologyError> {
        for (name, v) in [
            ("servicesPerBlade", services_per_blade),
            ("bladesPerChassis", blades_per_chassis),
            ("chassesPerRack", chasses_per_rack),
            ("racksPerAisle", racks_per_aisle),
            ("aisles", aisles),
        ] {
            if v == 0 {
                return Err(TopologyError::ZeroCount(name));
            }
        }
        let capacity = services_per_blade
            .checked_mul(blades_per_chassis)
            .and_then(|v| v.checked_mul(chasses_per_rack))
            .and_then(|v| v.checked_mul(racks_per_aisle))
            .and_then(|v| v.checked_mul(aisles))
            .unwrap_or(usize::MAX);
        if services > capacity {
            return Err(TopologyError::Overfull { services, capacity });
        }
        if services < 2 {
            return Err(TopologyError::TooSmall(services));
        }
        Ok(HierarchySpec {
            services_per_blade,
            blades_per_chassis,
            chasses_per_rack,
            racks_per_aisle,
            aisles,
            n_services: services,
        })
    }

    /// Every service on one blade: one hop between any pair.
    pub fn flat(n: usize) -> Result<Self, TopologyError> {
        Self::new(n, 1, 1, 1, 1)
    }

    pub fn n_services(&self) -> usize {
        self.n_services
    }

    pub fn n_aisles(&self) -> usize {
        self.aisles
    }

    pub fn n_racks(&self) -> usize {
        self.aisles * self.racks_per_aisle
    }

    pub fn n_chasses(&self) -> usize {
        self.n_racks() * self.chasses_per_rack
    }

    pub fn n_blades(&self) -> usize {
        self.n_chasses() * self.blades_per_chassis
    }

    /// Number of components at `level` (the root is a single component).
    pub fn level_count(&self, level: Level) -> usize {
        match level {
            Level::Blade => self.n_blades(),
            Level::Chassis => self.n_chasses(),
            Level::Rack => self.n_racks(),
            Level::Aisle => self.n_aisles(),
            Level::Root => 1,
        }
    }

    pub fn address_of(&self, service: usize) -> Result<ServiceAddress, TopologyError> {
        if service >= self.n_services {
            return Err(TopologyError::OutOfRange {
                id: service,
                n: self.n_services,
            });
        }
        let mut rest = service;
        let slot = rest % self.services_per_blade;
        rest /= self.services_per_blade;
        let blade = rest % self.blades_per_chassis;
        rest /= self.blades_per_chassis;
        let chassis = rest % self.chasses_per_rack;
        rest /= self.chasses_per_rack;
        let rack = rest % self.racks_per_aisle;
        let aisle = rest / self.racks_per_aisle;
        Ok(ServiceAddress {
            aisle,
            rack,
            chassis,
            blade,
            slot,
        })
    }

    pub fn service_at(&self, addr: ServiceAddress) -> Option<usize> {
        if addr.slot >= self.services_per_blade
            || addr.blade >= self.blades_per_chassis
            || addr.chassis >= self.chasses_per_rack
            || addr.rack >= self.racks_per_aisle
            || addr.aisle >= self.aisles
        {
            return None;
        }
        let id = (((addr.aisle * self.racks_per_aisle + addr.rack) * self.chasses_per_rack
            + addr.chassis)
            * self.blades_per_chassis
            + addr.blade)
            * self.services_per_blade
            + addr.slot;
        (id < self.n_services).then_some(id)
    }

    /// Global component indices of a service's ancestors: blade, chassis, rack, aisle.
    #[inline]
    fn ancestors(&self, service: usize) -> [usize; 4] {
        let blade = service / self.services_per_blade;
        let chassis = blade / self.blades_per_chassis;
        let rack = chassis / self.chasses_per_rack;
        let aisle = rack / self.racks_per_aisle;
        [blade, chassis, rack, aisle]
    }

    /// Lowest level whose component contains both services.
    #[inline]
    fn common_level(a: &[usize; 4], b: &[usize; 4]) -> usize {
        (0..4).find(|&l| a[l] == b[l]).unwrap_or(4)
    }

    /// The tree path between two services, excluding the services themselves.
    pub fn communication_path(
        &self,
        src: usize,
        dst: usize,
    ) -> Result<Vec<(Level, usize)>, TopologyError> {
        for id in [src, dst] {
            if id >= self.n_services {
                return Err(TopologyError::OutOfRange {
                    id,
                    n: self.n_services,
                });
            }
        }
        if src == dst {
            return Err(TopologyError::SelfPath(src));
        }
        let a = self.ancestors(src);
        let b = self.ancestors(dst);
        let top = Self::common_level(&a, &b);
        let mut path = Vec::with_capacity(2 * top + 1);
        for (l, &idx) in a.iter().enumerate().take(top) {
            path.push((Level::ALL[l], idx));
        }
        path.push((Level::ALL[top], if top == 4 { 0 } else { a[top] }));
        for l in (0..top).rev() {
            path.push((Level::ALL[l], b[l]));
        }
        Ok(path)
    }

    /// Cost of a message between two distinct services: the length of
    /// their tree path.
    #[inline]
    pub fn distance(&self, src: usize, dst: usize) -> u64 {
        let top = Self::common_level(&self.ancestors(src), &self.ancestors(dst));
        2 * top as u64 + 1
    }
}

/// Cost of a path: one unit per traversed component.
pub fn hop_cost(path: &[(Level, usize)]) -> u64 {
    path.len() as u64
}

/// Access counts for one closed probe interval.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IntervalLoad {
    pub total: u64,
    /// Largest single-component count per level, indexed by [`Level::index`].
    pub max_per_level: [u64; 5],
}

/// Access counts per component and per originating service.
///
/// Counts accumulate in an interval buffer and are folded into the running
/// totals by [`LoadLedger::close_interval`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadLedger {
    totals: [Vec<u64>; 5],
    interval: [Vec<u64>; 5],
    per_service: Vec<u64>,
    interval_total: u64,
}

impl LoadLedger {
    pub fn new(spec: &HierarchySpec) -> Self {
        let mk = || Level::ALL.map(|l| vec![0u64; spec.level_count(l)]);
        LoadLedger {
            totals: mk(),
            interval: mk(),
            per_service: vec![0; spec.n_services()],
            interval_total: 0,
        }
    }

    pub fn record_access(&mut self, path: &[(Level, usize)]) {
        for &(level, idx) in path {
            self.interval[level.index()][idx] += 1;
        }
        self.interval_total += hop_cost(path);
    }

    /// Charge one message from `src` to `dst`, returning its cost. Equivalent
    /// to `record_access(communication_path(src, dst))` plus per-service
    /// attribution, without building the path.
    #[inline]
    pub fn record_message(
        &mut self,
        spec: &HierarchySpec,
        cost_model: CostModel,
        src: usize,
        dst: usize,
    ) -> u64 {
        let a = spec.ancestors(src);
        let cost = match cost_model {
            CostModel::Unit => {
                self.interval[0][a[0]] += 1;
                1
            }
            CostModel::Tree => {
                let b = spec.ancestors(dst);
                let top = HierarchySpec::common_level(&a, &b);
                for l in 0..top {
                    self.interval[l][a[l]] += 1;
                    self.interval[l][b[l]] += 1;
                }
                if top == 4 {
                    self.interval[4][0] += 1;
                } else {
                    self.interval[top][a[top]] += 1;
                }
                2 * top as u64 + 1
            }
        };
        self.per_service[src] += cost;
        self.interval_total += cost;
        cost
    }

    /// Load accrued since the previous call; folds it into the totals.
    pub fn close_interval(&mut self) -> IntervalLoad {
        let mut out = IntervalLoad {
            total: self.interval_total,
            max_per_level: [0; 5],
        };
        for l in 0..5 {
            let (buf, tot) = (&mut self.interval[l], &mut self.totals[l]);
            let mut max = 0;
            for (c, t) in buf.iter_mut().zip(tot.iter_mut()) {
                max = max.max(*c);
                *t += *c;
                *c = 0;
            }
            out.max_per_level[l] = max;
        }
        self.interval_total = 0;
        out
    }

    /// Cumulative count for one component, including the open interval.
    pub fn count(&self, level: Level, idx: usize) -> u64 {
        self.totals[level.index()][idx] + self.interval[level.index()][idx]
    }

    pub fn level_total(&self, level: Level) -> u64 {
        let l = level.index();
        self.totals[l].iter().sum::<u64>() + self.interval[l].iter().sum::<u64>()
    }

    /// Sum over every component at every level.
    pub fn grand_total(&self) -> u64 {
        Level::ALL.iter().map(|&l| self.level_total(l)).sum()
    }

    /// Total cost of messages originated by `service`.
    pub fn service_count(&self, service: usize) -> u64 {
        self.per_service[service]
    }

    pub fn per_service(&self) -> &[u64] {
        &self.per_service
    }
}
