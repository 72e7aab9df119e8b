//! Deterministic, tick-driven simulator of a disaggregated radio access
//! network: gNodeBs own cells, cells own sectors, sectors carry UEs.
//!
//! Each simulated second the [`engine::Engine`] drains queued commands,
//! generates per-UE traffic, computes the sector/cell/gNB load hierarchy,
//! lets a pluggable handover strategy offload congested sectors and records
//! every KPI into an in-memory time-series store that exports line protocol.

pub mod engine;
pub mod handover;
pub mod live;
pub mod loadmetrics;
pub mod metrics;
pub mod placement;
pub mod presets;
pub mod rng;
pub mod topology;
pub mod traffic;

pub use engine::{
    run, Ack, AppliedCommand, Command, CommandError, CommandKind, CommandQueue, CommandResult,
    Engine, EngineError, Origin, RampMode, RunRecord, Scenario, Snapshot, TickOutcome,
    TimedCommand,
};
pub use handover::{
    HandoverEvent, HandoverKind, HandoverOutcome, HandoverPolicy, HandoverStats,
    HandoverStrategy, Softness, StrategyRegistry, ThresholdOffload,
};
pub use live::{Pacing, SimHandle, StreamEvent, StreamPayload};
pub use loadmetrics::{LoadReport, LoadWeights};
pub use metrics::{MetricPoint, MetricStore};
pub use placement::PlacementCursor;
pub use rng::{seeded_rng, SeededStream};
pub use topology::{
    build_network, load_config, ConfigError, Deployment, EntityKind, Network, NetworkConfig,
    TopologyError, Ue,
};
pub use traffic::{ServiceClass, TrafficProfile, TrafficSample};
