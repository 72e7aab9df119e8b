//! Simulation clock, command queue, scenarios and the per-tick pipeline.
//!
//! One tick is one simulated second and runs, in order:
//!
//! 1. scheduled scenario commands and ramp steps are queued, then the queue
//!    is drained (origin first, then arrival order) and applied;
//! 2. traffic is generated for every attached, active UE;
//! 3. the load report is computed;
//! 4. the handover strategy rebalances congested sectors;
//! 5. loads, UE KPIs and handovers are written to the metric store;
//! 6. the clock advances.
//!
//! Control surfaces never touch the network directly. They submit
//! [`CommandKind`]s to the shared [`CommandQueue`], which is only drained at
//! a tick boundary.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::handover::{
    self, HandoverEvent, HandoverPolicy, HandoverStats, HandoverStrategy, StrategyRegistry,
};
use crate::loadmetrics::{self, LoadReport, LoadWeights};
use crate::metrics::{MetricPoint, MetricStore};
use crate::placement::{self, PlacementCursor, PlacementError};
use crate::rng::{seeded_rng, SeededStream};
use crate::topology::{
    build_network, ConfigError, Network, NetworkConfig, TopologyError, Ue,
};
use crate::traffic::{self, ServiceClass, TrafficError, TrafficProfile, TrafficSample};

/// Samples kept per UE for `ue_log`.
pub const UE_LOG_DEPTH: usize = 20;

const DEFAULT_RAMP_STEP: f64 = 0.10;
/// Per-UE starting rate of a ramp, bytes/s.
pub const DEFAULT_RAMP_BASELINE: f64 = 8e6;
const DEFAULT_RAMP_MAX_STEPS: u32 = 100;

fn default_ramp_step() -> f64 {
    DEFAULT_RAMP_STEP
}

fn default_ramp_baseline() -> f64 {
    DEFAULT_RAMP_BASELINE
}

fn default_ramp_max_steps() -> u32 {
    DEFAULT_RAMP_MAX_STEPS
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("unknown handover strategy {0:?}")]
    UnknownStrategy(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommandError {
    #[error("invalid command: {0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
}

/// Who submitted a command. Declaration order is drain priority.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Console,
    Api,
    Scenario,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampMode {
    /// Each step multiplies the rate by `1 + step`.
    #[default]
    Multiplicative,
    /// Each step adds `step * baseline`.
    Additive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommandKind {
    AddUe {
        /// Assigned by the engine when omitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ue_id: Option<String>,
        service_class: ServiceClass,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profile: Option<TrafficProfile>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sector_id: Option<String>,
    },
    DelUe {
        ue_id: String,
    },
    StartUeTraffic {
        ue_id: String,
    },
    StopUeTraffic {
        ue_id: String,
    },
    SetUeThroughput {
        ue_id: String,
        /// Bytes per second.
        throughput: f64,
    },
    SetUeDelay {
        ue_id: String,
        /// Seconds.
        delay: f64,
    },
    SetProfile {
        ue_id: String,
        profile: TrafficProfile,
    },
    SetSectorCapacity {
        sector_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ue_capacity: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_throughput: Option<f64>,
    },
    /// Pins every UE of a sector to `baseline`, then raises the rate one
    /// step per tick until the sector load reaches `until` (the handover
    /// threshold when omitted).
    StartRamp {
        sector_id: String,
        #[serde(default)]
        mode: RampMode,
        #[serde(default = "default_ramp_step")]
        step: f64,
        #[serde(default = "default_ramp_baseline")]
        baseline: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        until: Option<f64>,
        #[serde(default = "default_ramp_max_steps")]
        max_steps: u32,
    },
    /// Schedules a scenario relative to the next tick.
    RunScenario {
        scenario: Scenario,
    },
    Pause,
    Resume,
    StepN {
        n: u64,
    },
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::AddUe { .. } => "add_ue",
            CommandKind::DelUe { .. } => "del_ue",
            CommandKind::StartUeTraffic { .. } => "start_ue_traffic",
            CommandKind::StopUeTraffic { .. } => "stop_ue_traffic",
            CommandKind::SetUeThroughput { .. } => "set_ue_throughput",
            CommandKind::SetUeDelay { .. } => "set_ue_delay",
            CommandKind::SetProfile { .. } => "set_profile",
            CommandKind::SetSectorCapacity { .. } => "set_sector_capacity",
            CommandKind::StartRamp { .. } => "start_ramp",
            CommandKind::RunScenario { .. } => "run_scenario",
            CommandKind::Pause => "pause",
            CommandKind::Resume => "resume",
            CommandKind::StepN { .. } => "step_n",
        }
    }

    /// Pause, resume and step act on the run loop rather than the network.
    pub fn is_control(&self) -> bool {
        matches!(self, CommandKind::Pause | CommandKind::Resume | CommandKind::StepN { .. })
    }

    /// Payload checks that need no simulation state.
    pub fn validate(&self) -> Result<(), CommandError> {
        let invalid = |m: String| Err(CommandError::Invalid(m));
        match self {
            CommandKind::AddUe { profile: Some(p), .. } | CommandKind::SetProfile { profile: p, .. } => {
                p.validate()?;
            }
            CommandKind::SetUeThroughput { throughput, .. } => {
                if !(throughput.is_finite() && *throughput >= 0.0) {
                    return Err(TrafficError::NegativeThroughput(*throughput).into());
                }
            }
            CommandKind::SetUeDelay { delay, .. } => {
                if !(delay.is_finite() && *delay >= 0.0) {
                    return Err(TrafficError::NegativeDelay(*delay).into());
                }
            }
            CommandKind::SetSectorCapacity {
                ue_capacity,
                max_throughput,
                ..
            } => {
                if ue_capacity.is_none() && max_throughput.is_none() {
                    return invalid("set_sector_capacity needs ue_capacity or max_throughput".into());
                }
                if *ue_capacity == Some(0) {
                    return invalid("ue_capacity must be positive".into());
                }
                if let Some(tp) = max_throughput {
                    if !(tp.is_finite() && *tp > 0.0) {
                        return invalid(format!("max_throughput must be positive, got {tp}"));
                    }
                }
            }
            CommandKind::StartRamp {
                step,
                baseline,
                until,
                ..
            } => {
                if !(step.is_finite() && *step > 0.0) {
                    return invalid(format!("ramp step must be positive, got {step}"));
                }
                if !(baseline.is_finite() && *baseline >= 0.0) {
                    return invalid(format!("ramp baseline must be non-negative, got {baseline}"));
                }
                if let Some(u) = until {
                    if !(*u > 0.0 && u.is_finite()) {
                        return invalid(format!("ramp target must be positive, got {u}"));
                    }
                }
            }
            CommandKind::RunScenario { scenario } => {
                scenario
                    .validate()
                    .map_err(|e| CommandError::Invalid(e.to_string()))?;
            }
            CommandKind::StepN { n: 0 } => return invalid("step count must be positive".into()),
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub seq: u64,
    pub origin: Origin,
    #[serde(flatten)]
    pub kind: CommandKind,
}

/// Returned on submission: the command's sequence number and the tick at
/// which it will be applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
    pub apply_tick: u64,
}

#[derive(Debug, Default)]
struct QueueState {
    pending: Vec<Command>,
    next_seq: u64,
    apply_tick: u64,
    fresh_ids: u64,
}

/// Thread-safe FIFO shared by every control surface and the engine.
#[derive(Clone, Debug, Default)]
pub struct CommandQueue {
    inner: Arc<Mutex<QueueState>>,
}

impl CommandQueue {
    pub fn new() -> Self {
        CommandQueue::default()
    }

    fn state(&self) -> std::sync::MutexGuard<'_, QueueState> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Validates and enqueues.
    pub fn submit(&self, origin: Origin, kind: CommandKind) -> Result<Ack, CommandError> {
        kind.validate()?;
        let mut st = self.state();
        let seq = st.next_seq;
        st.next_seq += 1;
        st.pending.push(Command { seq, origin, kind });
        Ok(Ack {
            seq,
            apply_tick: st.apply_tick,
        })
    }

    /// A UE id for commands that need to know it before they apply.
    pub fn fresh_ue_id(&self) -> String {
        let mut st = self.state();
        st.fresh_ids += 1;
        format!("dyn{}", st.fresh_ids)
    }

    /// The tick a command submitted now would apply at.
    pub fn apply_tick(&self) -> u64 {
        self.state().apply_tick
    }

    pub fn len(&self) -> usize {
        self.state().pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn set_apply_tick(&self, tick: u64) {
        self.state().apply_tick = tick;
    }

    /// Removes everything queued, ordered by origin then arrival, and moves
    /// the apply tick past `tick`.
    pub(crate) fn drain(&self, tick: u64) -> Vec<Command> {
        let mut st = self.state();
        st.apply_tick = tick + 1;
        let mut out = std::mem::take(&mut st.pending);
        out.sort_by_key(|c| (c.origin, c.seq));
        out
    }

    /// Removes only the run-loop control commands.
    pub fn take_control(&self) -> Vec<Command> {
        let mut st = self.state();
        let (control, rest) = std::mem::take(&mut st.pending)
            .into_iter()
            .partition(|c| c.kind.is_control());
        st.pending = rest;
        control
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandResult {
    Ok(String),
    Err(String),
}

impl CommandResult {
    pub fn is_ok(&self) -> bool {
        matches!(self, CommandResult::Ok(_))
    }

    pub fn message(&self) -> &str {
        match self {
            CommandResult::Ok(m) | CommandResult::Err(m) => m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppliedCommand {
    pub seq: u64,
    pub tick: u64,
    pub origin: Origin,
    pub command: CommandKind,
    pub result: CommandResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedCommand {
    pub tick: u64,
    #[serde(flatten)]
    pub command: CommandKind,
}

/// A named, timed command script. Command ticks are relative to the
/// scenario start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub duration: u64,
    #[serde(default)]
    pub commands: Vec<TimedCommand>,
}

pub const RUSH_HOUR: &str = "rush_hour";

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        let mut s: Scenario =
            serde_json::from_str(text).map_err(|e| EngineError::Scenario(e.to_string()))?;
        s.commands.sort_by_key(|c| c.tick);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !self.commands.windows(2).all(|w| w[0].tick <= w[1].tick) {
            return Err(EngineError::Scenario("commands are not sorted by tick".into()));
        }
        for c in &self.commands {
            if c.tick >= self.duration {
                return Err(EngineError::Scenario(format!(
                    "command {} at tick {} is outside duration {}",
                    c.command.name(),
                    c.tick,
                    self.duration
                )));
            }
            c.command
                .validate()
                .map_err(|e| EngineError::Scenario(e.to_string()))?;
        }
        Ok(())
    }

    /// Rush-hour surge: from `ramp_start`, the UEs of `sector_id` are
    /// pinned to 8 MB/s and raised 10% per tick until the sector reaches
    /// the handover threshold.
    pub fn rush_hour(sector_id: &str, ramp_start: u64, duration: u64, mode: RampMode) -> Self {
        Scenario {
            name: RUSH_HOUR.to_string(),
            duration,
            commands: vec![TimedCommand {
                tick: ramp_start,
                command: CommandKind::StartRamp {
                    sector_id: sector_id.to_string(),
                    mode,
                    step: DEFAULT_RAMP_STEP,
                    baseline: DEFAULT_RAMP_BASELINE,
                    until: None,
                    max_steps: DEFAULT_RAMP_MAX_STEPS,
                },
            }],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub sector_id: String,
    pub mode: RampMode,
    pub step: f64,
    pub baseline: f64,
    pub until: f64,
    pub max_steps: u32,
    pub steps: u32,
    pub started_tick: u64,
    pub finished_tick: Option<u64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    tick: u64,
}

impl SimClock {
    /// Ticks completed so far; also the index of the next tick to run.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    fn advance(&mut self) {
        self.tick += 1;
    }
}

/// Everything a single tick produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickOutcome {
    pub tick: u64,
    pub applied: Vec<AppliedCommand>,
    pub report: LoadReport,
    pub handovers: Vec<HandoverEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub scenario: String,
    pub ticks: u64,
    pub commands: Vec<AppliedCommand>,
    pub handover_events: Vec<HandoverEvent>,
    pub final_report: Option<LoadReport>,
    pub stats: HandoverStats,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run record serializes")
    }
}

/// Read-only view published at tick boundaries.
#[derive(Clone, Debug, Serialize)]
pub struct Snapshot {
    /// Ticks completed.
    pub tick: u64,
    pub paused: bool,
    pub network: Network,
    pub report: Option<LoadReport>,
    pub stats: HandoverStats,
    pub policy: HandoverPolicy,
    pub weights: LoadWeights,
    pub strategy: String,
    pub ramps: Vec<Ramp>,
    pub ue_logs: BTreeMap<String, Vec<TrafficSample>>,
}

pub type SharedMetrics = Arc<RwLock<MetricStore>>;

pub struct Engine {
    seed: u64,
    weights: LoadWeights,
    policy: HandoverPolicy,
    network: Network,
    cursor: PlacementCursor,
    clock: SimClock,
    queue: CommandQueue,
    strategy: Arc<dyn HandoverStrategy>,
    traffic_rng: SeededStream,
    qos_rng: SeededStream,
    failure_rng: SeededStream,
    metrics: SharedMetrics,
    events: Vec<HandoverEvent>,
    stats: HandoverStats,
    applied: Vec<AppliedCommand>,
    schedule: BTreeMap<u64, Vec<CommandKind>>,
    ramps: Vec<Ramp>,
    ue_logs: BTreeMap<String, VecDeque<TrafficSample>>,
    last_report: Option<LoadReport>,
    unplaced: Vec<String>,
    paused: bool,
    pending_steps: u64,
    auto_ids: u64,
}

impl Engine {
    pub fn new(cfg: NetworkConfig) -> Result<Self, EngineError> {
        Engine::with_registry(cfg, &StrategyRegistry::with_defaults())
    }

    pub fn with_registry(cfg: NetworkConfig, registry: &StrategyRegistry) -> Result<Self, EngineError> {
        cfg.validate()?;
        let strategy = registry
            .get(&cfg.handover_policy.strategy)
            .ok_or_else(|| EngineError::UnknownStrategy(cfg.handover_policy.strategy.clone()))?;
        let deployment = build_network(&cfg)?;
        if !deployment.unplaced.is_empty() {
            log::warn!("{} UEs did not fit and stay unattached", deployment.unplaced.len());
        }
        Ok(Engine {
            seed: cfg.seed,
            weights: cfg.weights,
            policy: cfg.handover_policy.clone(),
            network: deployment.network,
            cursor: deployment.cursor,
            clock: SimClock::default(),
            queue: CommandQueue::new(),
            strategy,
            traffic_rng: seeded_rng(cfg.seed, "traffic"),
            qos_rng: seeded_rng(cfg.seed, "qos"),
            failure_rng: seeded_rng(cfg.seed, "failure"),
            metrics: Arc::new(RwLock::new(MetricStore::new())),
            events: Vec::new(),
            stats: HandoverStats::default(),
            applied: Vec::new(),
            schedule: BTreeMap::new(),
            ramps: Vec::new(),
            ue_logs: BTreeMap::new(),
            last_report: None,
            unplaced: deployment.unplaced,
            paused: false,
            pending_steps: 0,
            auto_ids: 0,
        })
    }

    /// Replaces the metric store, e.g. to set an epoch or retention.
    pub fn with_metric_store(mut self, store: MetricStore) -> Self {
        self.metrics = Arc::new(RwLock::new(store));
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn weights(&self) -> &LoadWeights {
        &self.weights
    }

    pub fn policy(&self) -> &HandoverPolicy {
        &self.policy
    }

    pub fn queue(&self) -> &CommandQueue {
        &self.queue
    }

    pub fn last_report(&self) -> Option<&LoadReport> {
        self.last_report.as_ref()
    }

    pub fn stats(&self) -> &HandoverStats {
        &self.stats
    }

    pub fn events(&self) -> &[HandoverEvent] {
        &self.events
    }

    pub fn applied_commands(&self) -> &[AppliedCommand] {
        &self.applied
    }

    pub fn ramps(&self) -> &[Ramp] {
        &self.ramps
    }

    pub fn unplaced(&self) -> &[String] {
        &self.unplaced
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn pending_steps(&self) -> u64 {
        self.pending_steps
    }

    pub fn metrics(&self) -> RwLockReadGuard<'_, MetricStore> {
        self.metrics.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn shared_metrics(&self) -> SharedMetrics {
        Arc::clone(&self.metrics)
    }

    pub fn ue_log(&self, ue_id: &str) -> Option<Vec<TrafficSample>> {
        self.ue_logs.get(ue_id).map(|l| l.iter().cloned().collect())
    }

    /// Queues a scenario's commands relative to `offset`.
    pub fn schedule(&mut self, scenario: &Scenario, offset: u64) {
        for tc in &scenario.commands {
            self.schedule
                .entry(offset + tc.tick)
                .or_default()
                .push(tc.command.clone());
        }
    }

    /// Applies queued pause/resume/step commands right away. Used by run
    /// loops that must react while no tick is running.
    pub fn apply_control(&mut self) -> Vec<AppliedCommand> {
        let tick = self.clock.tick();
        self.queue
            .take_control()
            .into_iter()
            .map(|c| self.apply(c, tick))
            .collect()
    }

    /// Consumes one pending single-step request, if any.
    pub fn take_step(&mut self) -> bool {
        if self.pending_steps > 0 {
            self.pending_steps -= 1;
            true
        } else {
            false
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            tick: self.clock.tick(),
            paused: self.paused,
            network: self.network.clone(),
            report: self.last_report.clone(),
            stats: self.stats.clone(),
            policy: self.policy.clone(),
            weights: self.weights,
            strategy: self.strategy.name().to_string(),
            ramps: self.ramps.clone(),
            ue_logs: self
                .ue_logs
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().cloned().collect()))
                .collect(),
        }
    }

    pub fn tick(&mut self) -> TickOutcome {
        let tick = self.clock.tick();

        // 1. commands
        if let Some(cmds) = self.schedule.remove(&tick) {
            for c in cmds {
                self.enqueue_internal(c);
            }
        }
        self.queue_ramp_steps(tick);
        let applied: Vec<AppliedCommand> = self
            .queue
            .drain(tick)
            .into_iter()
            .map(|c| self.apply(c, tick))
            .collect();

        // 2. traffic
        self.generate_traffic(tick);

        // 3. loads
        let report = loadmetrics::load_report(&self.network, &self.weights, tick);
        for ramp in self.ramps.iter_mut().filter(|r| r.finished_tick.is_none()) {
            let reached = report.sector(&ramp.sector_id).is_some_and(|l| l >= ramp.until);
            if reached || ramp.steps >= ramp.max_steps {
                ramp.finished_tick = Some(tick);
            }
        }

        // 4. balance
        let handovers = handover::balance_step(
            &mut self.network,
            &report,
            &self.policy,
            &self.weights,
            self.strategy.as_ref(),
            &mut self.failure_rng,
            tick,
        );
        for ev in &handovers {
            self.stats.record(ev);
        }
        self.events.extend(handovers.iter().cloned());

        // 5. metrics
        self.record_metrics(tick, &report, &handovers);

        // 6. clock
        self.clock.advance();
        self.last_report = Some(report.clone());
        TickOutcome {
            tick,
            applied,
            report,
            handovers,
        }
    }

    pub fn run_ticks(&mut self, n: u64) -> Vec<TickOutcome> {
        (0..n).map(|_| self.tick()).collect()
    }

    /// Schedules `scenario` from the current tick and runs its full
    /// duration as fast as possible. Pause/resume are logged but ignored.
    pub fn run_scenario(&mut self, scenario: &Scenario) -> Result<RunRecord, EngineError> {
        scenario.validate()?;
        let start = self.clock.tick();
        self.schedule(scenario, start);
        for _ in 0..scenario.duration {
            self.tick();
        }
        Ok(self.record(&scenario.name))
    }

    pub fn record(&self, scenario: &str) -> RunRecord {
        RunRecord {
            seed: self.seed,
            scenario: scenario.to_string(),
            ticks: self.clock.tick(),
            commands: self.applied.clone(),
            handover_events: self.events.clone(),
            final_report: self.last_report.clone(),
            stats: self.stats.clone(),
        }
    }

    fn enqueue_internal(&mut self, kind: CommandKind) {
        if let Err(e) = self.queue.submit(Origin::Scenario, kind.clone()) {
            // keep the rejection visible in the record
            let tick = self.clock.tick();
            self.applied.push(AppliedCommand {
                seq: u64::MAX,
                tick,
                origin: Origin::Scenario,
                command: kind,
                result: CommandResult::Err(e.to_string()),
            });
        }
    }

    fn queue_ramp_steps(&mut self, tick: u64) {
        let mut steps = Vec::new();
        for ramp in self
            .ramps
            .iter_mut()
            .filter(|r| r.finished_tick.is_none() && r.started_tick < tick)
        {
            ramp.steps += 1;
            let Ok(sector) = self.network.sector(&ramp.sector_id) else {
                continue;
            };
            for id in sector.attached_ue_ids() {
                let current = self.network.ues()[id].current_throughput;
                let next = match ramp.mode {
                    RampMode::Multiplicative => current * (1.0 + ramp.step),
                    RampMode::Additive => current + ramp.step * ramp.baseline,
                };
                steps.push(CommandKind::SetUeThroughput {
                    ue_id: id.clone(),
                    throughput: next,
                });
            }
        }
        for s in steps {
            self.enqueue_internal(s);
        }
    }

    fn generate_traffic(&mut self, tick: u64) {
        let ids: Vec<String> = self
            .network
            .ues()
            .values()
            .filter(|u| u.sector_id().is_some())
            .map(|u| u.id.clone())
            .collect();
        for id in ids {
            let ue = self.network.ue_mut(&id).expect("listed above");
            if !ue.traffic_active {
                traffic::idle(ue);
                continue;
            }
            let sample = traffic::generate(ue, tick, &mut self.traffic_rng, &mut self.qos_rng);
            let log = self.ue_logs.entry(id).or_default();
            if log.len() == UE_LOG_DEPTH {
                log.pop_front();
            }
            log.push_back(sample);
        }
    }

    fn record_metrics(&mut self, tick: u64, report: &LoadReport, handovers: &[HandoverEvent]) {
        let mut store = self.metrics.write().unwrap_or_else(|e| e.into_inner());
        let ts = store.timestamp_for(tick);
        let net = &self.network;
        let mut points = Vec::new();
        for (id, load) in &report.per_sector {
            let sector = &net.sectors()[id];
            let gnb = &net.cells()[&sector.cell_id].gnb_id;
            points.push(
                MetricPoint::new("sector_load", ts)
                    .tag("gnb", gnb.as_str())
                    .tag("cell", sector.cell_id.as_str())
                    .tag("sector", id.as_str())
                    .field("load", *load),
            );
        }
        for (id, load) in &report.per_cell {
            points.push(
                MetricPoint::new("cell_load", ts)
                    .tag("gnb", net.cells()[id].gnb_id.as_str())
                    .tag("cell", id.as_str())
                    .field("load", *load),
            );
        }
        for (id, load) in &report.per_gnb {
            points.push(MetricPoint::new("gnb_load", ts).tag("gnb", id.as_str()).field("load", *load));
        }
        points.push(MetricPoint::new("network_load", ts).field("load", report.network_load));
        for ue in net.ues().values().filter(|u| u.traffic_active) {
            let Some(sector) = ue.sector_id() else {
                continue;
            };
            let cell = &net.sectors()[sector].cell_id;
            points.push(
                MetricPoint::new("ue_kpis", ts)
                    .tag("ue", ue.id.as_str())
                    .tag("class", ue.service_class.as_str())
                    .tag("gnb", net.cells()[cell].gnb_id.as_str())
                    .tag("cell", cell.as_str())
                    .tag("sector", sector)
                    .field("throughput", ue.current_throughput)
                    .field("delay", ue.qos.delay)
                    .field("jitter", ue.qos.jitter)
                    .field("packet_loss", ue.qos.packet_loss),
            );
        }
        for ev in handovers {
            points.push(
                MetricPoint::new("handover", ts)
                    .tag("ue", ev.ue_id.as_str())
                    .tag("source", ev.source_sector.as_str())
                    .tag("target", ev.target_sector.as_str())
                    .tag("kind", ev.kind.as_str())
                    .field("latency", ev.latency)
                    .field("outcome_code", f64::from(ev.outcome.code())),
            );
        }
        for p in points {
            if let Err(e) = store.record(p) {
                log::error!("dropping metric at tick {tick}: {e}");
            }
        }
    }

    fn apply(&mut self, cmd: Command, tick: u64) -> AppliedCommand {
        let result = match self.apply_kind(&cmd.kind, tick) {
            Ok(detail) => CommandResult::Ok(detail),
            Err(e) => CommandResult::Err(e.to_string()),
        };
        let applied = AppliedCommand {
            seq: cmd.seq,
            tick,
            origin: cmd.origin,
            command: cmd.kind,
            result,
        };
        self.applied.push(applied.clone());
        applied
    }

    fn next_auto_id(&mut self) -> String {
        loop {
            self.auto_ids += 1;
            let id = format!("ue-auto{}", self.auto_ids);
            if self.network.ue(&id).is_err() {
                return id;
            }
        }
    }

    fn apply_kind(&mut self, kind: &CommandKind, tick: u64) -> Result<String, CommandError> {
        kind.validate()?;
        match kind {
            CommandKind::AddUe {
                ue_id,
                service_class,
                profile,
                sector_id,
            } => {
                let id = match ue_id {
                    Some(id) => id.clone(),
                    None => self.next_auto_id(),
                };
                let profile = profile
                    .clone()
                    .unwrap_or_else(|| TrafficProfile::default_for(*service_class));
                self.network.add_ue(Ue::new(id.clone(), *service_class, profile))?;
                let sector = match sector_id {
                    Some(s) => match self.network.attach(&id, s) {
                        Ok(()) => s.clone(),
                        Err(e) => {
                            self.network.remove_ue(&id)?;
                            return Err(e.into());
                        }
                    },
                    // a full network leaves the UE unattached
                    None => placement::place_ue(&mut self.network, &mut self.cursor, &id)?,
                };
                Ok(format!("{id} -> {sector}"))
            }
            CommandKind::DelUe { ue_id } => {
                let ue = self.network.remove_ue(ue_id)?;
                self.ue_logs.remove(ue_id);
                Ok(format!("removed {}", ue.id))
            }
            CommandKind::StartUeTraffic { ue_id } => {
                traffic::start(self.network.ue_mut(ue_id)?);
                Ok(format!("{ue_id} traffic started"))
            }
            CommandKind::StopUeTraffic { ue_id } => {
                traffic::stop(self.network.ue_mut(ue_id)?);
                Ok(format!("{ue_id} traffic stopped"))
            }
            CommandKind::SetUeThroughput { ue_id, throughput } => {
                traffic::set_throughput(self.network.ue_mut(ue_id)?, *throughput)?;
                Ok(format!("{ue_id} throughput {throughput} B/s"))
            }
            CommandKind::SetUeDelay { ue_id, delay } => {
                traffic::set_delay(self.network.ue_mut(ue_id)?, *delay)?;
                Ok(format!("{ue_id} delay {delay} s"))
            }
            CommandKind::SetProfile { ue_id, profile } => {
                traffic::set_profile(self.network.ue_mut(ue_id)?, profile.clone())?;
                Ok(format!("{ue_id} profile {}", profile.kind))
            }
            CommandKind::SetSectorCapacity {
                sector_id,
                ue_capacity,
                max_throughput,
            } => {
                let sector = self.network.sector(sector_id)?;
                if let Some(cap) = ue_capacity {
                    if (*cap as usize) < sector.attached_count() {
                        return Err(TopologyError::CapacityBelowOccupancy {
                            sector: sector_id.clone(),
                            attached: sector.attached_count(),
                            requested: *cap,
                        }
                        .into());
                    }
                }
                if let Some(cap) = ue_capacity {
                    self.network.set_sector_capacity(sector_id, *cap)?;
                }
                if let Some(tp) = max_throughput {
                    self.network.set_sector_max_throughput(sector_id, *tp)?;
                }
                let s = self.network.sector(sector_id)?;
                Ok(format!(
                    "{sector_id} capacity {} UEs, {} B/s",
                    s.ue_capacity(),
                    s.max_throughput()
                ))
            }
            CommandKind::StartRamp {
                sector_id,
                mode,
                step,
                baseline,
                until,
                max_steps,
            } => {
                let ue_ids: Vec<String> = self
                    .network
                    .sector(sector_id)?
                    .attached_ue_ids()
                    .iter()
                    .cloned()
                    .collect();
                for id in &ue_ids {
                    traffic::set_throughput(self.network.ue_mut(id)?, *baseline)?;
                }
                self.ramps.retain(|r| r.sector_id != *sector_id);
                self.ramps.push(Ramp {
                    sector_id: sector_id.clone(),
                    mode: *mode,
                    step: *step,
                    baseline: *baseline,
                    until: until.unwrap_or(self.policy.threshold),
                    max_steps: *max_steps,
                    steps: 0,
                    started_tick: tick,
                    finished_tick: None,
                });
                Ok(format!("ramp on {sector_id}: {} UEs pinned at {baseline} B/s", ue_ids.len()))
            }
            CommandKind::RunScenario { scenario } => {
                self.schedule(scenario, tick + 1);
                Ok(format!("scenario {} scheduled from tick {}", scenario.name, tick + 1))
            }
            CommandKind::Pause => {
                self.paused = true;
                Ok("paused".into())
            }
            CommandKind::Resume => {
                self.paused = false;
                Ok("resumed".into())
            }
            CommandKind::StepN { n } => {
                self.pending_steps += n;
                Ok(format!("{n} step(s) requested"))
            }
        }
    }

    /// Makes the queue's apply tick agree with the clock, for engines whose
    /// queue was shared before the first tick.
    pub fn sync_queue(&self) {
        self.queue.set_apply_tick(self.clock.tick());
    }
}

/// Builds an engine for `config` with `seed` and runs `scenario` to
/// completion.
pub fn run(scenario: &Scenario, config: &NetworkConfig, seed: u64) -> Result<RunRecord, EngineError> {
    let mut cfg = config.clone();
    cfg.seed = seed;
    let mut engine = Engine::new(cfg)?;
    engine.run_scenario(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{CellConfig, GnbConfig, SectorConfig, UeConfig};

    fn small(ues: usize) -> NetworkConfig {
        NetworkConfig {
            gnbs: vec![GnbConfig { id: "g1".into(), latitude: 0.0, longitude: 0.0 }],
            cells: vec![CellConfig { id: "c1".into(), gnb_id: "g1".into() }],
            sectors: (1..=3)
                .map(|i| SectorConfig {
                    id: format!("s{i}"),
                    cell_id: "c1".into(),
                    ue_capacity: 15,
                    max_throughput: 100e6,
                })
                .collect(),
            ues: (0..ues)
                .map(|i| UeConfig {
                    id: format!("u{i:02}"),
                    service_class: ServiceClass::Voice,
                    profile: None,
                    sector_id: None,
                    traffic_active: true,
                })
                .collect(),
            weights: LoadWeights::default(),
            handover_policy: HandoverPolicy::default(),
            seed: 5,
        }
    }

    fn empty() -> NetworkConfig {
        NetworkConfig {
            gnbs: vec![],
            cells: vec![],
            sectors: vec![],
            ues: vec![],
            weights: LoadWeights::default(),
            handover_policy: HandoverPolicy::default(),
            seed: 0,
        }
    }

    #[test]
    fn empty_network_tick() {
        let mut e = Engine::new(empty()).unwrap();
        assert_eq!(e.clock().tick(), 0);
        let out = e.tick();
        assert_eq!(e.clock().tick(), 1);
        assert!(out.report.per_sector.is_empty());
        assert!(out.handovers.is_empty());
    }

    #[test]
    fn added_ue_generates_traffic_in_the_same_tick() {
        let mut e = Engine::new(small(0)).unwrap();
        e.queue()
            .submit(
                Origin::Api,
                CommandKind::AddUe {
                    ue_id: Some("x".into()),
                    service_class: ServiceClass::Voice,
                    profile: None,
                    sector_id: None,
                },
            )
            .unwrap();
        let out = e.tick();
        assert_eq!(out.applied[0].result, CommandResult::Ok("x -> s1".into()));
        let log = e.ue_log("x").unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].tick, 0);
        assert!(out.report.per_sector["s1"] > 0.0);
    }

    #[test]
    fn drain_orders_by_origin_then_arrival() {
        let q = CommandQueue::new();
        let stop = |id: &str| CommandKind::StopUeTraffic { ue_id: id.into() };
        q.submit(Origin::Scenario, stop("a")).unwrap();
        q.submit(Origin::Api, stop("b")).unwrap();
        q.submit(Origin::Console, stop("c")).unwrap();
        q.submit(Origin::Api, stop("d")).unwrap();
        let order: Vec<u64> = q.drain(0).iter().map(|c| c.seq).collect();
        assert_eq!(order, vec![2, 1, 3, 0]);
        assert_eq!(q.apply_tick(), 1);
    }

    #[test]
    fn ack_reports_apply_tick() {
        let mut e = Engine::new(small(3)).unwrap();
        let a = e.queue().submit(Origin::Api, CommandKind::StopUeTraffic { ue_id: "u00".into() }).unwrap();
        assert_eq!(a.apply_tick, 0);
        e.tick();
        let b = e.queue().submit(Origin::Api, CommandKind::StopUeTraffic { ue_id: "u01".into() }).unwrap();
        assert_eq!(b.apply_tick, 1);
        let out = e.tick();
        assert_eq!(out.applied[0].seq, b.seq);
        assert_eq!(out.applied[0].tick, 1);
    }

    #[test]
    fn invalid_payloads_are_rejected_before_enqueue() {
        let q = CommandQueue::new();
        assert!(q.submit(Origin::Api, CommandKind::SetUeThroughput { ue_id: "u".into(), throughput: -1.0 }).is_err());
        assert!(q.submit(Origin::Api, CommandKind::StepN { n: 0 }).is_err());
        assert!(q
            .submit(Origin::Api, CommandKind::SetSectorCapacity { sector_id: "s".into(), ue_capacity: None, max_throughput: None })
            .is_err());
        assert!(q.is_empty());
    }

    #[test]
    fn command_errors_do_not_abort_the_tick() {
        let mut e = Engine::new(small(3)).unwrap();
        e.queue().submit(Origin::Console, CommandKind::DelUe { ue_id: "ghost".into() }).unwrap();
        e.queue().submit(Origin::Console, CommandKind::DelUe { ue_id: "u00".into() }).unwrap();
        let out = e.tick();
        assert!(!out.applied[0].result.is_ok());
        assert!(out.applied[0].result.message().contains("ghost"));
        assert!(out.applied[1].result.is_ok());
        assert!(e.network().ue("u00").is_err());
    }

    #[test]
    fn pinned_throughput_feeds_loads_in_the_same_tick() {
        let mut e = Engine::new(small(3)).unwrap();
        e.tick();
        e.queue()
            .submit(Origin::Api, CommandKind::SetUeThroughput { ue_id: "u00".into(), throughput: 40.3e6 })
            .unwrap();
        let out = e.tick();
        let s1 = e.network().sector("s1").unwrap();
        let total = loadmetrics::sector_throughput(s1, e.network().ues());
        assert_eq!(total, 40.3e6);
        // one UE of 15 plus 40.3% throughput
        let expected = 0.5 * (100.0 / 15.0) + 0.5 * 40.3;
        assert!((out.report.per_sector["s1"] - expected).abs() < 1e-9);
    }

    #[test]
    fn sector_capacity_changes() {
        let mut e = Engine::new(small(6)).unwrap();
        let q = e.queue().clone();
        q.submit(Origin::Api, CommandKind::SetSectorCapacity { sector_id: "s1".into(), ue_capacity: Some(1), max_throughput: None })
            .unwrap();
        q.submit(Origin::Api, CommandKind::SetSectorCapacity { sector_id: "s2".into(), ue_capacity: Some(4), max_throughput: Some(5e7) })
            .unwrap();
        let out = e.tick();
        assert!(!out.applied[0].result.is_ok());
        assert!(out.applied[1].result.is_ok());
        assert_eq!(e.network().sector("s2").unwrap().max_throughput(), 5e7);
        assert_eq!(e.network().sector("s1").unwrap().ue_capacity(), 15);
    }

    #[test]
    fn stop_and_start_traffic() {
        let mut e = Engine::new(small(1)).unwrap();
        e.tick();
        assert!(e.network().ue("u00").unwrap().current_throughput > 0.0);
        e.queue().submit(Origin::Console, CommandKind::StopUeTraffic { ue_id: "u00".into() }).unwrap();
        let out = e.tick();
        assert_eq!(e.network().ue("u00").unwrap().current_throughput, 0.0);
        assert_eq!(out.report.per_sector["s1"], 0.5 * 100.0 / 15.0);
        e.queue().submit(Origin::Console, CommandKind::StartUeTraffic { ue_id: "u00".into() }).unwrap();
        e.tick();
        assert!(e.network().ue("u00").unwrap().current_throughput > 0.0);
    }

    #[test]
    fn ramp_stops_at_threshold_and_triggers_handover_same_tick() {
        let mut cfg = small(30);
        for u in &mut cfg.ues {
            u.service_class = ServiceClass::Iot;
        }
        let mut e = Engine::new(cfg).unwrap();
        let sc = Scenario::rush_hour("s1", 2, 12, RampMode::Multiplicative);
        let rec = e.run_scenario(&sc).unwrap();
        let ramp = &e.ramps()[0];
        let finished = ramp.finished_tick.unwrap();
        let first = &rec.handover_events[0];
        assert_eq!(first.start_tick, finished);
        assert_eq!(first.source_sector, "s1");
        let loads = e.metrics().query("sector_load", &[("sector", "s1")], ..);
        let crossing = loads.iter().find(|p| p.fields["load"] >= 80.0).unwrap();
        assert_eq!(e.metrics().tick_for(crossing.timestamp), finished);
    }

    #[test]
    fn additive_ramp_increments_by_baseline_fraction() {
        let mut e = Engine::new(small(3)).unwrap();
        e.queue()
            .submit(
                Origin::Scenario,
                CommandKind::StartRamp {
                    sector_id: "s1".into(),
                    mode: RampMode::Additive,
                    step: 0.1,
                    baseline: 1e6,
                    until: Some(99.0),
                    max_steps: 3,
                },
            )
            .unwrap();
        e.tick();
        assert_eq!(e.network().ue("u00").unwrap().current_throughput, 1e6);
        e.tick();
        assert!((e.network().ue("u00").unwrap().current_throughput - 1.1e6).abs() < 1e-6);
        e.run_ticks(5);
        let ramp = &e.ramps()[0];
        assert_eq!(ramp.steps, 3);
        assert!(ramp.finished_tick.is_some());
        assert!((e.network().ue("u00").unwrap().current_throughput - 1.3e6).abs() < 1e-6);
    }

    #[test]
    fn scenario_json() {
        let text = r#"{"name": "t", "duration": 5, "commands": [
            {"tick": 3, "kind": "stop_ue_traffic", "ue_id": "u00"},
            {"tick": 1, "kind": "set_ue_throughput", "ue_id": "u01", "throughput": 1000.0},
            {"tick": 2, "kind": "pause"}
        ]}"#;
        let sc = Scenario::from_json(text).unwrap();
        assert_eq!(sc.commands[0].tick, 1);
        let round: Scenario = serde_json::from_str(&serde_json::to_string(&sc).unwrap()).unwrap();
        assert_eq!(round, sc);

        assert!(Scenario::from_json(r#"{"name": "t", "duration": 2, "commands": [{"tick": 2, "kind": "pause"}]}"#).is_err());
        assert!(Scenario::from_json(r#"{"name": "t"}"#).is_err());

        let mut e = Engine::new(small(3)).unwrap();
        let rec = e.run_scenario(&sc).unwrap();
        assert_eq!(rec.ticks, 5);
        let kinds: Vec<(&str, u64)> = rec.commands.iter().map(|c| (c.command.name(), c.tick)).collect();
        assert_eq!(kinds, vec![("set_ue_throughput", 1), ("pause", 2), ("stop_ue_traffic", 3)]);
        assert!(rec.commands.iter().all(|c| c.origin == Origin::Scenario));
    }

    #[test]
    fn zero_duration_is_empty() {
        let sc = Scenario { name: "nothing".into(), duration: 0, commands: vec![] };
        let rec = run(&sc, &small(3), 1).unwrap();
        assert_eq!(rec.ticks, 0);
        assert!(rec.commands.is_empty() && rec.handover_events.is_empty());
        assert!(rec.final_report.is_none());
    }

    #[test]
    fn runs_are_reproducible() {
        let sc = Scenario::rush_hour("s1", 1, 20, RampMode::Multiplicative);
        let a = run(&sc, &small(9), 11).unwrap();
        let b = run(&sc, &small(9), 11).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn control_commands_update_run_state() {
        let mut e = Engine::new(small(1)).unwrap();
        let q = e.queue().clone();
        q.submit(Origin::Api, CommandKind::Pause).unwrap();
        q.submit(Origin::Api, CommandKind::StopUeTraffic { ue_id: "u00".into() }).unwrap();
        q.submit(Origin::Api, CommandKind::StepN { n: 2 }).unwrap();
        let applied = e.apply_control();
        assert_eq!(applied.len(), 2);
        assert!(e.is_paused());
        assert_eq!(e.pending_steps(), 2);
        assert!(e.take_step() && e.take_step() && !e.take_step());
        assert_eq!(q.len(), 1);
        q.submit(Origin::Api, CommandKind::Resume).unwrap();
        e.apply_control();
        assert!(!e.is_paused());
    }

    #[test]
    fn run_scenario_command_schedules_relative_to_next_tick() {
        let mut e = Engine::new(small(3)).unwrap();
        let inner = Scenario {
            name: "inner".into(),
            duration: 3,
            commands: vec![TimedCommand { tick: 1, command: CommandKind::StopUeTraffic { ue_id: "u01".into() } }],
        };
        e.tick();
        e.queue().submit(Origin::Api, CommandKind::RunScenario { scenario: inner }).unwrap();
        e.run_ticks(4);
        let stop = e.applied_commands().iter().find(|c| c.command.name() == "stop_ue_traffic").unwrap();
        // applied at tick 1, scheduled from 2, offset 1
        assert_eq!(stop.tick, 3);
    }

    #[test]
    fn unknown_strategy_is_a_config_error() {
        let mut cfg = small(0);
        cfg.handover_policy.strategy = "nope".into();
        assert!(matches!(Engine::new(cfg), Err(EngineError::UnknownStrategy(_))));
    }
}
