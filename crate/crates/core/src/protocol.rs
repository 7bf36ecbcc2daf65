//! Service state and the update protocols that move policy versions between
//! services.
//!
//! State is kept as flat arrays. A service's view of the services it watches
//! lives in `views`, parallel to the subscription graph's edge array, so the
//! view entry for edge `e` is `views[e]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::subscription::SubscriptionGraph;
use crate::topology::{CostModel, HierarchySpec, LoadLedger};

/// Policy version reserved for a failed service.
pub const FAILED: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolKind {
    /// Every update polls every watched service directly.
    DirectPolling,
    /// Every update gossips with one watched service and merges views of
    /// the services both sides watch.
    TransitiveP2P,
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolKind::DirectPolling => "DirectPolling",
            ProtocolKind::TransitiveP2P => "TransitiveP2P",
        })
    }
}

impl FromStr for ProtocolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DirectPolling" => Ok(ProtocolKind::DirectPolling),
            "TransitiveP2P" => Ok(ProtocolKind::TransitiveP2P),
            other => Err(format!(
                "unknown protocol `{other}` (expected DirectPolling or TransitiveP2P)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChangeMode {
    Fail,
    Increment,
}

impl fmt::Display for ChangeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChangeMode::Fail => "Fail",
            ChangeMode::Increment => "Increment",
        })
    }
}

impl FromStr for ChangeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Fail" => Ok(ChangeMode::Fail),
            "Increment" => Ok(ChangeMode::Increment),
            other => Err(format!(
                "unknown change mode `{other}` (expected Fail or Increment)"
            )),
        }
    }
}

/// Versions, views and failure flags of every service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceStates {
    versions: Vec<u32>,
    views: Vec<u32>,
    ever_failed: Vec<bool>,
}

/// Borrowed state of one service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServiceState<'a> {
    pub id: usize,
    pub current_version: u32,
    pub watched: &'a [u32],
    /// Last-known versions, aligned with `watched`.
    pub view: &'a [u32],
    pub ever_failed: bool,
}

impl ServiceStates {
    /// Every service at version 1 with a view matching reality.
    pub fn new(graph: &SubscriptionGraph) -> Self {
        ServiceStates {
            versions: vec![1; graph.n()],
            views: vec![1; graph.edge_count()],
            ever_failed: vec![false; graph.n()],
        }
    }

    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }

    pub fn version(&self, id: usize) -> u32 {
        self.versions[id]
    }

    pub fn is_alive(&self, id: usize) -> bool {
        self.versions[id] != FAILED
    }

    pub fn ever_failed(&self, id: usize) -> bool {
        self.ever_failed[id]
    }

    pub fn get<'a>(&'a self, graph: &'a SubscriptionGraph, id: usize) -> ServiceState<'a> {
        let range = graph.edge_range(id);
        ServiceState {
            id,
            current_version: self.versions[id],
            watched: graph.watched(id),
            view: &self.views[range],
            ever_failed: self.ever_failed[id],
        }
    }

    /// Overwrites one view entry; intended for tests and scenario setup.
    pub fn set_view(&mut self, graph: &SubscriptionGraph, id: usize, target: u32, version: u32) {
        let range = graph.edge_range(id);
        let pos = graph
            .watched(id)
            .binary_search(&target)
            .unwrap_or_else(|_| panic!("service {id} does not watch {target}"));
        self.views[range.start + pos] = version;
    }

    pub fn heap_bytes(&self) -> usize {
        (self.versions.capacity() + self.views.capacity()) * std::mem::size_of::<u32>()
            + self.ever_failed.capacity()
    }
}

/// True iff every view entry of `id` matches the watched service's actual version.
pub fn is_consistent(graph: &SubscriptionGraph, states: &ServiceStates, id: usize) -> bool {
    let range = graph.edge_range(id);
    graph.targets()[range.clone()]
        .iter()
        .zip(&states.views[range])
        .all(|(&w, &seen)| states.versions[w as usize] == seen)
}

/// Applies a policy change. Returns `false` (and does nothing) for a
/// service that has already failed.
pub fn apply_change(states: &mut ServiceStates, id: usize, mode: ChangeMode) -> bool {
    if !states.is_alive(id) {
        return false;
    }
    match mode {
        ChangeMode::Fail => {
            states.versions[id] = FAILED;
            states.ever_failed[id] = true;
        }
        ChangeMode::Increment => states.versions[id] += 1,
    }
    true
}

/// Everything an update event touches.
pub struct UpdateContext<'a, R: Rng + ?Sized> {
    pub graph: &'a SubscriptionGraph,
    pub states: &'a mut ServiceStates,
    pub ledger: &'a mut LoadLedger,
    pub hierarchy: &'a HierarchySpec,
    pub cost_model: CostModel,
    pub rng: &'a mut R,
}

impl<R: Rng + ?Sized> UpdateContext<'_, R> {
    /// Runs one update of service `id` and returns the number of messages sent.
    /// The caller reschedules the event one poll interval later.
    pub fn on_update_event(&mut self, kind: ProtocolKind, id: usize) -> usize {
        if !self.states.is_alive(id) {
            return 0;
        }
        match kind {
            ProtocolKind::DirectPolling => self.poll_all(id),
            ProtocolKind::TransitiveP2P => {
                let degree = self.graph.out_degree(id);
                if degree == 0 {
                    return 0;
                }
                let pick = self.rng.random_range(0..degree);
                let peer = self.graph.watched(id)[pick] as usize;
                self.exchange(id, peer);
                1
            }
        }
    }

    /// Reads the actual version of every watched service, one message each.
    pub fn poll_all(&mut self, id: usize) -> usize {
        let range = self.graph.edge_range(id);
        let watched = &self.graph.targets()[range.clone()];
        for (&w, seen) in watched.iter().zip(&mut self.states.views[range]) {
            *seen = self.states.versions[w as usize];
            self.ledger
                .record_message(self.hierarchy, self.cost_model, id, w as usize);
        }
        watched.len()
    }

    /// One gossip message from `id` to the watched service `peer`.
    ///
    /// `id` learns `peer`'s actual version. If `peer` is alive, each side
    /// then adopts the other's view of every commonly watched service where
    /// that view carries a higher version. A failure (version 0) therefore
    /// never travels through the merge and is only learnt by direct contact.
    pub fn exchange(&mut self, id: usize, peer: usize) {
        let graph = self.graph;
        let own = graph.edge_range(id);
        let theirs = graph.edge_range(peer);
        let own_targets = &graph.targets()[own.clone()];
        let peer_pos = own_targets
            .binary_search(&(peer as u32))
            .expect("exchange partner must be a watched service");

        self.ledger
            .record_message(self.hierarchy, self.cost_model, id, peer);
        let views = &mut self.states.views;
        views[own.start + peer_pos] = self.states.versions[peer];
        if self.states.versions[peer] == FAILED {
            return;
        }

        let peer_targets = &graph.targets()[theirs.clone()];
        let (mut i, mut j) = (0, 0);
        while i < own_targets.len() && j < peer_targets.len() {
            match own_targets[i].cmp(&peer_targets[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    let (a, b) = (own.start + i, theirs.start + j);
                    if views[b] > views[a] {
                        views[a] = views[b];
                    } else if views[a] > views[b] {
                        views[b] = views[a];
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subscription::gen_regular;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        graph: SubscriptionGraph,
        states: ServiceStates,
        ledger: LoadLedger,
        spec: HierarchySpec,
        rng: ChaCha8Rng,
    }

    impl Fixture {
        fn new(graph: SubscriptionGraph, spec: HierarchySpec) -> Self {
            Fixture {
                states: ServiceStates::new(&graph),
                ledger: LoadLedger::new(&spec),
                graph,
                spec,
                rng: ChaCha8Rng::seed_from_u64(0),
            }
        }

        fn ctx(&mut self) -> UpdateContext<'_, ChaCha8Rng> {
            UpdateContext {
                graph: &self.graph,
                states: &mut self.states,
                ledger: &mut self.ledger,
                hierarchy: &self.spec,
                cost_model: CostModel::Tree,
                rng: &mut self.rng,
            }
        }

        fn consistent(&self, id: usize) -> bool {
            is_consistent(&self.graph, &self.states, id)
        }
    }

    // A = 0 watches {B, C}; B = 1 watches {C}; C = 2 watches nothing.
    fn triangle() -> Fixture {
        let g = SubscriptionGraph::from_adjacency(vec![vec![1, 2], vec![2], vec![]]).unwrap();
        Fixture::new(g, HierarchySpec::flat(3).unwrap())
    }

    #[test]
    fn consistency_predicate() {
        let mut f = triangle();
        assert!(f.consistent(0));
        apply_change(&mut f.states, 2, ChangeMode::Increment);
        assert!(!f.consistent(0));
        assert!(!f.consistent(1));
        assert!(f.consistent(2));
    }

    #[test]
    fn failed_target_is_inconsistent() {
        let mut f = triangle();
        apply_change(&mut f.states, 1, ChangeMode::Fail);
        assert!(!f.consistent(0));
    }

    #[test]
    fn change_modes() {
        let mut f = triangle();
        for _ in 0..2 {
            apply_change(&mut f.states, 0, ChangeMode::Increment);
        }
        assert_eq!(f.states.version(0), 3);
        assert!(apply_change(&mut f.states, 0, ChangeMode::Increment));
        assert_eq!(f.states.version(0), 4);
        assert!(apply_change(&mut f.states, 0, ChangeMode::Fail));
        assert_eq!(f.states.version(0), FAILED);
        assert!(f.states.ever_failed(0));
        assert!(!apply_change(&mut f.states, 0, ChangeMode::Increment));
        assert_eq!(f.states.version(0), FAILED);
    }

    #[test]
    fn failed_service_sends_nothing() {
        let mut f = triangle();
        apply_change(&mut f.states, 0, ChangeMode::Fail);
        apply_change(&mut f.states, 2, ChangeMode::Increment);
        for kind in [ProtocolKind::DirectPolling, ProtocolKind::TransitiveP2P] {
            assert_eq!(f.ctx().on_update_event(kind, 0), 0);
        }
        assert_eq!(f.ledger.grand_total(), 0);
        assert_eq!(f.states.get(&f.graph, 0).view, &[1, 1]);
    }

    #[test]
    fn direct_polling_restores_consistency() {
        let g = gen_regular(10, 4).unwrap();
        let mut f = Fixture::new(g, HierarchySpec::flat(10).unwrap());
        for id in [1, 2, 3] {
            apply_change(&mut f.states, id, ChangeMode::Increment);
        }
        assert!(!f.consistent(0));
        assert_eq!(f.ctx().on_update_event(ProtocolKind::DirectPolling, 0), 4);
        assert!(f.consistent(0));
        // same blade: one unit per message
        assert_eq!(f.ledger.grand_total(), 4);
        assert_eq!(f.ledger.service_count(0), 4);
    }

    #[test]
    fn transitive_relay_through_intermediary() {
        let mut f = triangle();
        apply_change(&mut f.states, 2, ChangeMode::Increment);
        f.ctx().exchange(1, 2);
        assert!(f.consistent(1));
        assert!(!f.consistent(0));
        f.ctx().exchange(0, 1);
        assert_eq!(f.states.get(&f.graph, 0).view, &[1, 2]);
        assert!(f.consistent(0));
        // two messages, neither from A to C
        assert_eq!(f.ledger.grand_total(), 2);
    }

    #[test]
    fn merge_is_bidirectional() {
        let mut f = triangle();
        apply_change(&mut f.states, 2, ChangeMode::Increment);
        apply_change(&mut f.states, 2, ChangeMode::Increment);
        f.states.set_view(&f.graph, 0, 2, 3);
        f.ctx().exchange(0, 1);
        assert_eq!(f.states.get(&f.graph, 1).view, &[3]);
    }

    #[test]
    fn failure_not_relayed_but_stale_values_are() {
        let mut f = triangle();
        apply_change(&mut f.states, 2, ChangeMode::Fail);
        // B learns of the failure directly, A still believes C is alive.
        f.ctx().exchange(1, 2);
        assert_eq!(f.states.get(&f.graph, 1).view, &[0]);
        f.ctx().exchange(0, 1);
        // A's stale 1 dominates B's correct 0 and re-infects B.
        assert_eq!(f.states.get(&f.graph, 0).view, &[1, 1]);
        assert_eq!(f.states.get(&f.graph, 1).view, &[1]);
        assert!(!f.consistent(1));
    }

    #[test]
    fn exchange_with_failed_peer_records_failure_only() {
        let mut f = triangle();
        apply_change(&mut f.states, 2, ChangeMode::Increment);
        f.ctx().exchange(1, 2);
        apply_change(&mut f.states, 1, ChangeMode::Fail);
        f.ctx().exchange(0, 1);
        assert_eq!(f.states.get(&f.graph, 0).view, &[0, 1]);
    }

    #[test]
    fn transitive_sends_one_message() {
        let g = gen_regular(20, 5).unwrap();
        let mut f = Fixture::new(g, HierarchySpec::flat(20).unwrap());
        for id in 0..20 {
            assert_eq!(f.ctx().on_update_event(ProtocolKind::TransitiveP2P, id), 1);
        }
        assert_eq!(f.ledger.grand_total(), 20);
    }

    #[test]
    fn views_never_decrease_without_failures() {
        use rand::Rng;
        let g = gen_regular(30, 6).unwrap();
        let mut f = Fixture::new(g, HierarchySpec::flat(30).unwrap());
        let mut driver = ChaCha8Rng::seed_from_u64(5);
        let mut prev = f.states.views.clone();
        for _ in 0..2000 {
            if driver.random_bool(0.2) {
                apply_change(
                    &mut f.states,
                    driver.random_range(0..30),
                    ChangeMode::Increment,
                );
            }
            let id = driver.random_range(0..30);
            f.ctx().on_update_event(ProtocolKind::TransitiveP2P, id);
            assert!(prev.iter().zip(&f.states.views).all(|(a, b)| b >= a));
            prev.clone_from(&f.states.views);
        }
    }

    #[test]
    fn names_round_trip() {
        for k in [ProtocolKind::DirectPolling, ProtocolKind::TransitiveP2P] {
            assert_eq!(k.to_string().parse::<ProtocolKind>().unwrap(), k);
        }
        for m in [ChangeMode::Fail, ChangeMode::Increment] {
            assert_eq!(m.to_string().parse::<ChangeMode>().unwrap(), m);
        }
        assert!("Gossip".parse::<ProtocolKind>().is_err());
    }
}
