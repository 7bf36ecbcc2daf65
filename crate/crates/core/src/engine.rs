//! World construction and the event loop.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::config::{ConfigError, SimulationConfig};
use crate::persist::ProbeRecord;
use crate::protocol::{self, ServiceStates, UpdateContext};
use crate::queue::{
    Event, QueueError, QueueStats, TwoTierQueue, CODE_CHANGE, CODE_END, CODE_PROBE,
};
use crate::subscription::{self, GraphError, SubscriptionGraph};
use crate::topology::{HierarchySpec, Level, LoadLedger, TopologyError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("graph has {graph} nodes but the configuration describes {config} services")]
    SizeMismatch { graph: usize, config: usize },
    #[error("unknown event code {0}")]
    UnknownEvent(i64),
}

/// Independent random streams, so e.g. the graph does not depend on how
/// many change events were drawn.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Graph = 1,
    Phase = 2,
    ChangeTimes = 3,
    ChangeTargets = 4,
    Protocol = 5,
}

fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Arrival times of change events: a Poisson process of rate
/// `change_fraction * n / runtime` on `[0, runtime]`.
pub fn schedule_changes<R: Rng + ?Sized>(config: &SimulationConfig, rng: &mut R) -> Vec<f64> {
    let expected = config.change_fraction * config.n() as f64;
    if expected <= 0.0 {
        return Vec::new();
    }
    let rate = expected / config.runtime;
    let exp = Exp::new(rate).expect("rate is positive and finite");
    let mut times = Vec::with_capacity(expected.ceil() as usize + 16);
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t > config.runtime {
            break;
        }
        times.push(t);
    }
    times
}

/// What a single [`World::step`] did.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Update {
        service: u32,
        messages: usize,
    },
    /// `target` is `None` when no eligible service was left.
    Change {
        target: Option<u32>,
    },
    Probe(ProbeRecord),
    /// End of run, with the final probe if one was due.
    End(Option<ProbeRecord>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunCounters {
    pub events: u64,
    pub messages: u64,
    pub changes_applied: u64,
    pub probes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    config: SimulationConfig,
    hierarchy: HierarchySpec,
    graph: SubscriptionGraph,
    states: ServiceStates,
    ledger: LoadLedger,
    queue: TwoTierQueue,
    clock: f64,
    protocol_rng: ChaCha8Rng,
    target_rng: ChaCha8Rng,
    // Services that a change event may still target.
    eligible: Vec<u32>,
    never_failed: usize,
    probe_index: u64,
    last_probe: f64,
    finished: bool,
    counters: RunCounters,
}

impl World {
    /// Builds the hierarchy and subscription graph, then fills the queue.
    pub fn initialize(config: SimulationConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let mut rng = stream_rng(config.rng_seed, Stream::Graph);
        let graph = subscription::generate(
            config.topology_kind,
            config.n(),
            config.mean_degree(),
            config.ws_rewire_prob,
            &mut rng,
        )?;
        Self::with_graph(config, graph)
    }

    /// As [`World::initialize`] but with a caller-supplied graph.
    pub fn with_graph(
        config: SimulationConfig,
        graph: SubscriptionGraph,
    ) -> Result<Self, EngineError> {
        let hierarchy = config.hierarchy()?;
        let n = hierarchy.n_services();
        if graph.n() != n {
            return Err(EngineError::SizeMismatch {
                graph: graph.n(),
                config: n,
            });
        }
        let changes = schedule_changes(
            &config,
            &mut stream_rng(config.rng_seed, Stream::ChangeTimes),
        );
        let mut queue = TwoTierQueue::with_capacity(n + changes.len() + 2);

        let mut phase = stream_rng(config.rng_seed, Stream::Phase);
        for id in 0..n {
            let offset = phase.random_range(0.0..config.poll_interval);
            queue.insert(Event::update(offset, id as u32))?;
        }
        for t in changes {
            queue.insert(Event {
                time: t,
                code: CODE_CHANGE,
            })?;
        }
        queue.insert(Event {
            time: config.probe_interval,
            code: CODE_PROBE,
        })?;
        queue.insert(Event {
            time: config.runtime,
            code: CODE_END,
        })?;

        Ok(World {
            states: ServiceStates::new(&graph),
            ledger: LoadLedger::new(&hierarchy),
            protocol_rng: stream_rng(config.rng_seed, Stream::Protocol),
            target_rng: stream_rng(config.rng_seed, Stream::ChangeTargets),
            eligible: (0..n as u32).collect(),
            never_failed: n,
            probe_index: 1,
            last_probe: 0.0,
            finished: false,
            counters: RunCounters::default(),
            clock: 0.0,
            queue,
            graph,
            hierarchy,
            config,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn hierarchy(&self) -> &HierarchySpec {
        &self.hierarchy
    }

    pub fn graph(&self) -> &SubscriptionGraph {
        &self.graph
    }

    pub fn states(&self) -> &ServiceStates {
        &self.states
    }

    pub fn ledger(&self) -> &LoadLedger {
        &self.ledger
    }

    pub fn queue(&self) -> &TwoTierQueue {
        &self.queue
    }

    pub fn queue_stats(&self) -> QueueStats {
        self.queue.stats()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn counters(&self) -> RunCounters {
        self.counters
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Services that have failed so far.
    pub fn failed_count(&self) -> usize {
        self.states.len() - self.never_failed
    }

    /// Pops and executes one event. Returns `None` once the run has ended.
    pub fn step(&mut self) -> Result<Option<Step>, EngineError> {
        if self.finished {
            return Ok(None);
        }
        let Some(event) = self.queue.pop_next() else {
            self.finished = true;
            return Ok(None);
        };
        self.clock = event.time;
        self.counters.events += 1;

        let step = match event.code {
            code if code >= 1 => {
                let service = (code - 1) as u32;
                let messages = UpdateContext {
                    graph: &self.graph,
                    states: &mut self.states,
                    ledger: &mut self.ledger,
                    hierarchy: &self.hierarchy,
                    cost_model: self.config.cost_model,
                    rng: &mut self.protocol_rng,
                }
                .on_update_event(self.config.protocol_kind, service as usize);
                self.counters.messages += messages as u64;
                self.queue.insert(Event::update(
                    self.clock + self.config.poll_interval,
                    service,
                ))?;
                Step::Update { service, messages }
            }
            CODE_CHANGE => Step::Change {
                target: self.apply_change(),
            },
            CODE_PROBE => {
                let record = self.take_probe();
                self.probe_index += 1;
                self.queue.insert(Event {
                    time: self.probe_index as f64 * self.config.probe_interval,
                    code: CODE_PROBE,
                })?;
                Step::Probe(record)
            }
            CODE_END => {
                self.finished = true;
                // A probe due at the end time, or load accrued after the last
                // probe, is reported before stopping.
                let due = self.last_probe < self.clock;
                Step::End(due.then(|| self.take_probe()))
            }
            other => return Err(EngineError::UnknownEvent(other)),
        };
        Ok(Some(step))
    }

    fn apply_change(&mut self) -> Option<u32> {
        if self.eligible.is_empty() {
            return None;
        }
        let pick = self.target_rng.random_range(0..self.eligible.len());
        let target = self.eligible[pick];
        protocol::apply_change(&mut self.states, target as usize, self.config.change_mode);
        self.counters.changes_applied += 1;
        if !self.states.is_alive(target as usize) {
            self.eligible.swap_remove(pick);
            self.never_failed -= 1;
        }
        Some(target)
    }

    /// Consistency counts and the load accrued since the previous probe.
    pub fn take_probe(&mut self) -> ProbeRecord {
        let (mut consistent, mut inconsistent) = (0u64, 0u64);
        let mut failed = 0u64;
        for id in 0..self.states.len() {
            if self.states.ever_failed(id) {
                failed += 1;
            } else if protocol::is_consistent(&self.graph, &self.states, id) {
                consistent += 1;
            } else {
                inconsistent += 1;
            }
        }
        let load = self.ledger.close_interval();
        let live = consistent + inconsistent;
        self.last_probe = self.clock;
        self.counters.probes += 1;
        ProbeRecord {
            time: self.clock,
            n_consistent: consistent,
            n_inconsistent: inconsistent,
            n_consistent_unfiltered: consistent,
            n_inconsistent_unfiltered: inconsistent + failed,
            total_load: load.total,
            mean_load_per_service: if live == 0 {
                0.0
            } else {
                load.total as f64 / live as f64
            },
            max_load_blade: load.max_per_level[Level::Blade.index()],
            max_load_chassis: load.max_per_level[Level::Chassis.index()],
            max_load_rack: load.max_per_level[Level::Rack.index()],
            max_load_aisle: load.max_per_level[Level::Aisle.index()],
            max_load_root: load.max_per_level[Level::Root.index()],
        }
    }

    /// Runs to completion, handing every probe to `sink` as it is taken.
    pub fn run_with<E, F>(&mut self, mut sink: F) -> Result<(), E>
    where
        E: From<EngineError>,
        F: FnMut(&ProbeRecord) -> Result<(), E>,
    {
        while let Some(step) = self.step()? {
            match step {
                Step::Probe(r) | Step::End(Some(r)) => sink(&r)?,
                _ => {}
            }
        }
        Ok(())
    }

    /// Runs to completion and returns all probes in time order.
    pub fn run(&mut self) -> Result<Vec<ProbeRecord>, EngineError> {
        let mut out = Vec::new();
        self.run_with(|r: &ProbeRecord| {
            out.push(*r);
            Ok::<(), EngineError>(())
        })?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ChangeMode, ProtocolKind};
    use crate::subscription::TopologyKind;
    use crate::topology::CostModel;

    fn flat(n: usize, topo: TopologyKind, proto: ProtocolKind) -> SimulationConfig {
        SimulationConfig::flat(n, topo, proto)
    }

    #[test]
    fn initial_queue_contents() {
        let mut c = flat(1024, TopologyKind::Random, ProtocolKind::DirectPolling);
        c.change_fraction = 0.05;
        let w = World::initialize(c.clone()).unwrap();
        let changes = schedule_changes(&c, &mut stream_rng(c.rng_seed, Stream::ChangeTimes));
        assert!(!changes.is_empty());
        assert_eq!(w.queue().len(), 1024 + changes.len() + 2);

        c.change_fraction = 0.0;
        let w = World::initialize(c).unwrap();
        assert_eq!(w.queue().len(), 1024 + 2);
    }

    #[test]
    fn initialization_is_deterministic() {
        let mut c = flat(
            300,
            TopologyKind::WattsStrogatz,
            ProtocolKind::TransitiveP2P,
        );
        c.change_fraction = 0.1;
        c.rng_seed = 99;
        assert_eq!(
            World::initialize(c.clone()).unwrap(),
            World::initialize(c.clone()).unwrap()
        );
        let mut other = c.clone();
        other.rng_seed = 100;
        assert_ne!(
            World::initialize(c).unwrap(),
            World::initialize(other).unwrap()
        );
    }

    #[test]
    fn zero_change_stays_consistent() {
        for proto in [ProtocolKind::DirectPolling, ProtocolKind::TransitiveP2P] {
            let mut c = flat(64, TopologyKind::Random, proto);
            c.runtime = 20.0;
            let probes = World::initialize(c).unwrap().run().unwrap();
            assert_eq!(probes.len(), 20);
            assert!(probes
                .iter()
                .all(|p| p.n_inconsistent == 0 && p.n_consistent == 64));
        }
    }

    #[test]
    fn no_subscriptions_no_load() {
        let c = flat(2, TopologyKind::Regular, ProtocolKind::DirectPolling);
        let g = SubscriptionGraph::from_adjacency(vec![vec![], vec![]]).unwrap();
        let mut w = World::with_graph(c, g).unwrap();
        let probes = w.run().unwrap();
        assert!(probes
            .iter()
            .all(|p| p.total_load == 0 && p.n_inconsistent == 0));
    }

    #[test]
    fn size_mismatch_is_reported() {
        let c = flat(3, TopologyKind::Regular, ProtocolKind::DirectPolling);
        let g = SubscriptionGraph::from_adjacency(vec![vec![], vec![]]).unwrap();
        assert!(matches!(
            World::with_graph(c, g),
            Err(EngineError::SizeMismatch {
                graph: 2,
                config: 3
            })
        ));
    }

    #[test]
    fn direct_polling_load_matches_analytic_rate() {
        // n = 100, k = 10, one poll per service per second, unit cost on one blade.
        let mut c = flat(100, TopologyKind::Regular, ProtocolKind::DirectPolling);
        c.change_fraction = 0.01;
        c.change_mode = ChangeMode::Increment;
        c.runtime = 50.0;
        let probes = World::initialize(c).unwrap().run().unwrap();
        for p in &probes {
            assert_eq!(p.total_load, 1000, "at t={}", p.time);
            assert_eq!(p.max_load_blade, 1000);
        }
    }

    #[test]
    fn probe_partition_and_conservation() {
        let mut c = flat(
            200,
            TopologyKind::BarabasiAlbert,
            ProtocolKind::TransitiveP2P,
        );
        c.change_fraction = 0.2;
        c.runtime = 40.0;
        let mut w = World::initialize(c).unwrap();
        let probes = w.run().unwrap();
        let failed = w.failed_count() as u64;
        assert!(failed > 0);
        let last = probes.last().unwrap();
        assert_eq!(last.n_consistent + last.n_inconsistent, 200 - failed);
        assert_eq!(
            last.n_consistent_unfiltered + last.n_inconsistent_unfiltered,
            200
        );
        let sum: u64 = probes.iter().map(|p| p.total_load).sum();
        assert_eq!(sum, w.ledger().grand_total());
    }

    #[test]
    fn probe_times_and_end() {
        let mut c = flat(10, TopologyKind::Regular, ProtocolKind::DirectPolling);
        c.runtime = 10.0;
        c.probe_interval = 3.0;
        let probes = World::initialize(c.clone()).unwrap().run().unwrap();
        let times: Vec<f64> = probes.iter().map(|p| p.time).collect();
        assert_eq!(times, vec![3.0, 6.0, 9.0, 10.0]);

        c.probe_interval = 2.5;
        let probes = World::initialize(c).unwrap().run().unwrap();
        let times: Vec<f64> = probes.iter().map(|p| p.time).collect();
        assert_eq!(times, vec![2.5, 5.0, 7.5, 10.0]);
    }

    #[test]
    fn nothing_runs_after_end() {
        let mut c = flat(20, TopologyKind::Regular, ProtocolKind::TransitiveP2P);
        c.runtime = 5.0;
        let mut w = World::initialize(c).unwrap();
        let mut last_clock = 0.0;
        while let Some(step) = w.step().unwrap() {
            assert!(w.clock() >= last_clock);
            assert!(w.clock() <= 5.0);
            last_clock = w.clock();
            if matches!(step, Step::End(_)) {
                break;
            }
        }
        assert!(w.step().unwrap().is_none());
        assert!(w.is_finished());
    }

    #[test]
    fn poisson_change_count() {
        // n = 1000, p = 0.1, runtime 1000 s: rate 0.1/s, 100 events expected.
        let mut c = flat(1000, TopologyKind::Random, ProtocolKind::DirectPolling);
        c.change_fraction = 0.1;
        c.runtime = 1000.0;
        let runs = 100;
        let total: usize = (0..runs)
            .map(|seed| {
                c.rng_seed = seed;
                schedule_changes(&c, &mut stream_rng(seed, Stream::ChangeTimes)).len()
            })
            .sum();
        let mean = total as f64 / runs as f64;
        assert!((mean - 100.0).abs() <= 3.0 * 10.0, "mean {mean}");
        c.change_fraction = 0.0;
        assert!(schedule_changes(&c, &mut stream_rng(1, Stream::ChangeTimes)).is_empty());
    }

    #[test]
    fn full_failure_matches_reference_replay() {
        let mut c = flat(100, TopologyKind::Random, ProtocolKind::DirectPolling);
        c.change_fraction = 1.0;
        c.runtime = 50.0;
        for seed in 0..20 {
            c.rng_seed = seed;
            let times = schedule_changes(&c, &mut stream_rng(seed, Stream::ChangeTimes));
            // Replay: each change fails one still-alive service until none remain.
            let mut alive = [true; 100];
            for _ in &times {
                if let Some(i) = alive.iter().position(|&a| a) {
                    alive[i] = false;
                }
            }
            let expected = alive.iter().filter(|&&a| !a).count();
            let mut w = World::initialize(c.clone()).unwrap();
            w.run().unwrap();
            assert_eq!(w.failed_count(), expected);
            let dead = (0..100).filter(|&i| !w.states().is_alive(i)).count();
            assert_eq!(dead, expected);
        }
    }

    #[test]
    fn unit_cost_flattening_matches_single_blade() {
        let mut flat_cfg = flat(
            256,
            TopologyKind::WattsStrogatz,
            ProtocolKind::DirectPolling,
        );
        flat_cfg.change_fraction = 0.05;
        flat_cfg.runtime = 30.0;
        let mut spread = flat_cfg.clone();
        spread.services_per_blade = 4;
        spread.blades_per_chassis = 16;
        spread.chasses_per_rack = 4;
        spread.cost_model = CostModel::Unit;
        let a = World::initialize(flat_cfg).unwrap().run().unwrap();
        let b = World::initialize(spread).unwrap().run().unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.n_inconsistent, y.n_inconsistent);
            assert_eq!(x.total_load, y.total_load);
        }
    }
}
