//! Discrete-event simulation of policy-distribution consistency in
//! hierarchical data centres.
//!
//! Services sit at the leaves of an aisle/rack/chassis/blade tree, watch each
//! other through a subscription graph and exchange policy versions with an
//! update protocol. Periodic probes record how many services hold an
//! inconsistent view and how much tree-routed load the protocol generates.

pub mod cli;
pub mod config;
pub mod engine;
pub mod persist;
pub mod protocol;
pub mod queue;
pub mod subscription;
pub mod topology;

pub use config::{generate_sweep, parse_config, SimulationConfig, SweepRun};
pub use engine::{schedule_changes, EngineError, Step, World};
pub use persist::{merge_runs, summarize, ProbeRecord, RunSummary};
pub use protocol::{ChangeMode, ProtocolKind};
pub use queue::{Event, TwoTierQueue};
pub use subscription::{SubscriptionGraph, TopologyKind};
pub use topology::{CostModel, HierarchySpec, Level, LoadLedger};
