//! Congestion detection, target selection, handover execution with
//! rollback, and success/failure accounting.
//!
//! A sector is congested when its load reaches the policy threshold. The
//! default [`ThresholdOffload`] strategy walks congested sectors from the
//! most loaded down, picks the UE with the highest throughput and moves it
//! to the least loaded neighbour whose projected load stays under the
//! threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loadmetrics::{self, LoadReport, LoadWeights};
use crate::topology::{EntityKind, Network, TopologyError};

pub const DEFAULT_STRATEGY: &str = "threshold_offload";

fn default_strategy() -> String {
    DEFAULT_STRATEGY.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandoverPolicy {
    /// Percent; a sector at or above it is congested.
    pub threshold: f64,
    /// Seconds recorded on every event.
    pub latency: f64,
    /// Probability that an otherwise valid handover is declared failed.
    pub failure_injection: f64,
    pub max_ues_per_trigger: u32,
    #[serde(default = "default_strategy")]
    pub strategy: String,
}

impl Default for HandoverPolicy {
    fn default() -> Self {
        HandoverPolicy {
            threshold: 80.0,
            latency: 0.5,
            failure_injection: 0.0,
            max_ues_per_trigger: 1,
            strategy: default_strategy(),
        }
    }
}

impl HandoverPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.threshold > 0.0 && self.threshold <= 100.0) {
            return Err(format!("threshold must lie in (0, 100], got {}", self.threshold));
        }
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err("latency must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.failure_injection) {
            return Err("failure_injection must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoverKind {
    /// Source and target share a cell.
    IntraGnbDu,
    /// Different cells of the same gNB.
    InterGnbDuIntraGnbCu,
    /// Different gNBs.
    InterGnbCu,
}

impl HandoverKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HandoverKind::IntraGnbDu => "intra_gnb_du",
            HandoverKind::InterGnbDuIntraGnbCu => "inter_gnb_du_intra_gnb_cu",
            HandoverKind::InterGnbCu => "inter_gnb_cu",
        }
    }
}

impl fmt::Display for HandoverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Softness {
    Soft,
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoverOutcome {
    Success,
    /// The target refused the UE; it never left its source.
    Failed,
    /// The attach was declared failed and undone.
    RolledBack,
}

impl HandoverOutcome {
    /// Numeric field value used in metric exports.
    pub fn code(&self) -> u8 {
        match self {
            HandoverOutcome::Success => 0,
            HandoverOutcome::Failed => 1,
            HandoverOutcome::RolledBack => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandoverEvent {
    pub ue_id: String,
    pub source_sector: String,
    pub target_sector: String,
    pub kind: HandoverKind,
    pub softness: Softness,
    pub start_tick: u64,
    pub latency: f64,
    pub outcome: HandoverOutcome,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HandoverStats {
    pub attempts: u64,
    pub successes: u64,
    pub failures: u64,
    /// `None` until the first attempt.
    pub hsr: Option<f64>,
    pub hfr: Option<f64>,
    pub handover_count: u64,
}

impl HandoverStats {
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a HandoverEvent>) -> Self {
        let mut s = HandoverStats::default();
        for e in events {
            s.record(e);
        }
        s
    }

    pub fn record(&mut self, event: &HandoverEvent) {
        self.attempts += 1;
        if event.outcome == HandoverOutcome::Success {
            self.successes += 1;
        } else {
            self.failures += 1;
        }
        self.handover_count = self.successes;
        let attempts = self.attempts as f64;
        let hsr = self.successes as f64 / attempts;
        self.hsr = Some(hsr);
        // derived from hsr so the pair sums to exactly 1
        self.hfr = Some(1.0 - hsr);
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HandoverError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("source and target are both sector {0:?}")]
    SameSector(String),
    #[error("sector {0:?} has no attached UEs")]
    EmptySector(String),
}

/// One proposed handover.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub ue_id: String,
    pub source_sector: String,
    pub target_sector: String,
}

/// A pluggable handover decision algorithm. Strategies see read-only
/// state; the caller executes what they propose.
pub trait HandoverStrategy: Send + Sync {
    fn name(&self) -> &str;

    fn decide(
        &self,
        report: &LoadReport,
        network: &Network,
        policy: &HandoverPolicy,
        weights: &LoadWeights,
    ) -> Vec<Move>;
}

#[derive(Clone, Default)]
pub struct StrategyRegistry {
    strategies: BTreeMap<String, Arc<dyn HandoverStrategy>>,
}

impl StrategyRegistry {
    /// Registry holding the built-in strategies.
    pub fn with_defaults() -> Self {
        let mut r = StrategyRegistry::default();
        r.register(Arc::new(ThresholdOffload));
        r
    }

    pub fn register(&mut self, strategy: Arc<dyn HandoverStrategy>) {
        self.strategies.insert(strategy.name().to_string(), strategy);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn HandoverStrategy>> {
        self.strategies.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.strategies.keys().map(String::as_str)
    }
}

impl fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.strategies.keys()).finish()
    }
}

pub fn check_congestion(sector_load: f64, policy: &HandoverPolicy) -> bool {
    sector_load >= policy.threshold
}

/// The attached UE with the highest current throughput, lowest id first
/// on ties.
pub fn select_ue_to_move(network: &Network, source: &str) -> Result<String, HandoverError> {
    let sector = network.sector(source)?;
    let mut best: Option<(&str, f64)> = None;
    // ids iterate ascending, so strict > keeps the lowest id on ties
    for id in sector.attached_ue_ids() {
        let tp = network.ue(id)?.current_throughput;
        if best.is_none_or(|(_, b)| tp > b) {
            best = Some((id, tp));
        }
    }
    best.map(|(id, _)| id.to_string())
        .ok_or_else(|| HandoverError::EmptySector(source.to_string()))
}

/// Picks the least loaded neighbour of `source` that can take `ue_id` with
/// a projected load below the threshold. `sector_loads` holds the current
/// load of every sector.
pub fn select_target(
    network: &Network,
    sector_loads: &BTreeMap<String, f64>,
    source: &str,
    ue_id: &str,
    policy: &HandoverPolicy,
    weights: &LoadWeights,
) -> Result<Option<String>, HandoverError> {
    let moving = network.ue(ue_id)?.current_throughput;
    let mut best: Option<(String, f64)> = None;
    for candidate in network.neighbors(source)? {
        let sector = network.sector(&candidate)?;
        if !sector.has_free_capacity() {
            continue;
        }
        let projected = loadmetrics::projected_sector_load(sector, weights, network.ues(), moving);
        if projected >= policy.threshold {
            continue;
        }
        let current = sector_loads
            .get(&candidate)
            .copied()
            .unwrap_or_else(|| loadmetrics::sector_load(sector, weights, network.ues()));
        if best.as_ref().is_none_or(|(_, b)| current < *b) {
            best = Some((candidate, current));
        }
    }
    Ok(best.map(|(id, _)| id))
}

/// Topology relation between two distinct sectors.
pub fn classify(
    network: &Network,
    source: &str,
    target: &str,
) -> Result<(HandoverKind, Softness), HandoverError> {
    if source == target {
        return Err(HandoverError::SameSector(source.to_string()));
    }
    let s = network.sector(source)?;
    let t = network.sector(target)?;
    if s.cell_id == t.cell_id {
        return Ok((HandoverKind::IntraGnbDu, Softness::Soft));
    }
    if network.gnb_of(source)? == network.gnb_of(target)? {
        Ok((HandoverKind::InterGnbDuIntraGnbCu, Softness::Soft))
    } else {
        Ok((HandoverKind::InterGnbCu, Softness::Hard))
    }
}

/// Moves `ue_id` to `target`. With probability `failure_injection` the
/// attach is declared failed and the UE returns to its source; a full
/// target also leaves the UE where it was. Either way the attachment map
/// afterwards is identical to the one before.
pub fn execute_handover<R: Rng + ?Sized>(
    network: &mut Network,
    ue_id: &str,
    target: &str,
    policy: &HandoverPolicy,
    rng: &mut R,
    tick: u64,
) -> Result<HandoverEvent, HandoverError> {
    let source = network
        .ue(ue_id)?
        .sector_id()
        .ok_or_else(|| TopologyError::NotAttached(ue_id.to_string()))?
        .to_string();
    let (kind, softness) = classify(network, &source, target)?;
    let mut event = HandoverEvent {
        ue_id: ue_id.to_string(),
        source_sector: source.clone(),
        target_sector: target.to_string(),
        kind,
        softness,
        start_tick: tick,
        latency: policy.latency,
        outcome: HandoverOutcome::Success,
    };

    let inject_failure = rng.random::<f64>() < policy.failure_injection;
    network.detach(ue_id)?;
    match network.attach(ue_id, target) {
        Ok(()) => {
            if inject_failure {
                network.detach(ue_id)?;
                network.attach(ue_id, &source)?;
                event.outcome = HandoverOutcome::RolledBack;
            }
        }
        Err(TopologyError::CapacityExceeded { .. }) => {
            network.attach(ue_id, &source)?;
            event.outcome = HandoverOutcome::Failed;
        }
        Err(e) => {
            network.attach(ue_id, &source)?;
            return Err(e.into());
        }
    }
    Ok(event)
}

/// Runs one balancing round: asks the strategy for moves and executes
/// them in order. Malformed proposals are skipped.
pub fn balance_step<R: Rng + ?Sized>(
    network: &mut Network,
    report: &LoadReport,
    policy: &HandoverPolicy,
    weights: &LoadWeights,
    strategy: &dyn HandoverStrategy,
    rng: &mut R,
    tick: u64,
) -> Vec<HandoverEvent> {
    let moves = strategy.decide(report, network, policy, weights);
    let mut events = Vec::with_capacity(moves.len());
    for m in moves {
        let valid = m.source_sector != m.target_sector
            && network.sectors().contains_key(&m.target_sector)
            && network.ue(&m.ue_id).ok().and_then(|u| u.sector_id()) == Some(m.source_sector.as_str());
        if !valid {
            log::warn!("strategy {} proposed an invalid move {:?}", strategy.name(), m);
            continue;
        }
        match execute_handover(network, &m.ue_id, &m.target_sector, policy, rng, tick) {
            Ok(ev) => events.push(ev),
            Err(e) => log::warn!("handover of {} failed: {e}", m.ue_id),
        }
    }
    events
}

/// Default strategy: highest-throughput UE to least-loaded feasible
/// neighbour, at most `max_ues_per_trigger` moves per congested sector.
#[derive(Clone, Copy, Debug, Default)]
pub struct ThresholdOffload;

impl HandoverStrategy for ThresholdOffload {
    fn name(&self) -> &str {
        DEFAULT_STRATEGY
    }

    fn decide(
        &self,
        report: &LoadReport,
        network: &Network,
        policy: &HandoverPolicy,
        weights: &LoadWeights,
    ) -> Vec<Move> {
        let mut congested: Vec<(&String, f64)> = report
            .per_sector
            .iter()
            .filter(|(_, l)| check_congestion(**l, policy))
            .map(|(id, l)| (id, *l))
            .collect();
        if congested.is_empty() {
            return Vec::new();
        }
        congested.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        // projections run against a scratch copy with the moves applied
        let mut scratch = network.clone();
        let mut loads = report.per_sector.clone();
        let mut moved: BTreeSet<String> = BTreeSet::new();
        let mut moves = Vec::new();

        for (source, _) in congested {
            for _ in 0..policy.max_ues_per_trigger {
                if !check_congestion(loads[source], policy) {
                    break;
                }
                let Some(ue) = pick_unmoved(&scratch, source, &moved) else {
                    break;
                };
                let target = match select_target(&scratch, &loads, source, &ue, policy, weights) {
                    Ok(Some(t)) => t,
                    _ => break,
                };
                if scratch.detach(&ue).is_err() || scratch.attach(&ue, &target).is_err() {
                    break;
                }
                for id in [source.as_str(), target.as_str()] {
                    let s = &scratch.sectors()[id];
                    loads.insert(id.to_string(), loadmetrics::sector_load(s, weights, scratch.ues()));
                }
                moved.insert(ue.clone());
                moves.push(Move {
                    ue_id: ue,
                    source_sector: source.clone(),
                    target_sector: target,
                });
            }
        }
        moves
    }
}

fn pick_unmoved(network: &Network, source: &str, moved: &BTreeSet<String>) -> Option<String> {
    if moved.is_empty() {
        return select_ue_to_move(network, source).ok();
    }
    let sector = network.sector(source).ok()?;
    let mut best: Option<(&str, f64)> = None;
    for id in sector.attached_ue_ids().iter().filter(|id| !moved.contains(*id)) {
        let tp = network.ues()[id].current_throughput;
        if best.is_none_or(|(_, b)| tp > b) {
            best = Some((id, tp));
        }
    }
    best.map(|(id, _)| id.to_string())
}

/// Looks up a strategy by name, reporting unknown names as a topology-style
/// error so callers can surface the bad id.
pub fn resolve_strategy(
    registry: &StrategyRegistry,
    name: &str,
) -> Result<Arc<dyn HandoverStrategy>, TopologyError> {
    registry
        .get(name)
        .ok_or_else(|| TopologyError::unknown(EntityKind::Config, name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loadmetrics::load_report;
    use crate::rng::seeded_rng;
    use crate::topology::{build_network, CellConfig, GnbConfig, NetworkConfig, SectorConfig, UeConfig};
    use crate::traffic::{self, ServiceClass};

    /// (gnb, cell, sector, capacity) rows plus (ue, sector, throughput).
    fn net(rows: &[(&str, &str, &str, u32)], ues: &[(&str, &str, f64)]) -> Network {
        let mut cfg = NetworkConfig {
            gnbs: vec![],
            cells: vec![],
            sectors: vec![],
            ues: vec![],
            weights: LoadWeights::default(),
            handover_policy: HandoverPolicy::default(),
            seed: 0,
        };
        for (g, c, s, cap) in rows {
            if !cfg.gnbs.iter().any(|x| x.id == *g) {
                cfg.gnbs.push(GnbConfig { id: g.to_string(), latitude: 0.0, longitude: 0.0 });
            }
            if !cfg.cells.iter().any(|x| x.id == *c) {
                cfg.cells.push(CellConfig { id: c.to_string(), gnb_id: g.to_string() });
            }
            cfg.sectors.push(SectorConfig {
                id: s.to_string(),
                cell_id: c.to_string(),
                ue_capacity: *cap,
                max_throughput: 100e6,
            });
        }
        for (u, s, _) in ues {
            cfg.ues.push(UeConfig {
                id: u.to_string(),
                service_class: ServiceClass::Data,
                profile: None,
                sector_id: Some(s.to_string()),
                traffic_active: true,
            });
        }
        let mut n = build_network(&cfg).unwrap().network;
        for (u, _, tp) in ues {
            traffic::set_throughput(n.ue_mut(u).unwrap(), *tp).unwrap();
        }
        n
    }

    #[test]
    fn congestion_threshold_is_inclusive() {
        let p = HandoverPolicy::default();
        assert!(check_congestion(85.0, &p));
        assert!(check_congestion(80.0, &p));
        assert!(!check_congestion(0.0, &p));
        assert!(!check_congestion(79.999, &p));
    }

    #[test]
    fn ue_selection() {
        let n = net(&[("g", "c", "s1", 10)], &[("u1", "s1", 5.0), ("u2", "s1", 9.0)]);
        assert_eq!(select_ue_to_move(&n, "s1").unwrap(), "u2");
        let n = net(&[("g", "c", "s1", 10)], &[("u1", "s1", 5.0), ("u2", "s1", 5.0)]);
        assert_eq!(select_ue_to_move(&n, "s1").unwrap(), "u1");
        let n = net(&[("g", "c", "s1", 10)], &[("u7", "s1", 1.0)]);
        assert_eq!(select_ue_to_move(&n, "s1").unwrap(), "u7");
        let n = net(&[("g", "c", "s1", 10)], &[]);
        assert_eq!(select_ue_to_move(&n, "s1"), Err(HandoverError::EmptySector("s1".into())));
    }

    #[test]
    fn ue_selection_matches_brute_force() {
        let tps = [3.0, 9.0, 9.0, 1.0, 7.0];
        let ues: Vec<(String, f64)> = tps.iter().enumerate().map(|(i, t)| (format!("u{i}"), *t)).collect();
        let rows: Vec<(&str, &str, f64)> = ues.iter().map(|(id, t)| (id.as_str(), "s1", *t)).collect();
        let n = net(&[("g", "c", "s1", 10)], &rows);
        // brute force: max throughput, then min id
        let best = ues
            .iter()
            .filter(|(_, t)| *t == ues.iter().map(|(_, t)| *t).fold(f64::MIN, f64::max))
            .map(|(id, _)| id.clone())
            .min()
            .unwrap();
        assert_eq!(select_ue_to_move(&n, "s1").unwrap(), best);
    }

    fn loads(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn least_loaded_feasible_neighbor() {
        let n = net(
            &[("g", "c", "A", 20), ("g", "c", "B", 20), ("g", "c", "C", 20)],
            &[("u1", "A", 1e6)],
        );
        let p = HandoverPolicy::default();
        let w = LoadWeights::default();
        let l = loads(&[("A", 85.0), ("B", 70.0), ("C", 40.0)]);
        assert_eq!(select_target(&n, &l, "A", "u1", &p, &w).unwrap().as_deref(), Some("C"));

        // brute force over all candidates
        let best = ["B", "C"]
            .iter()
            .min_by(|a, b| l[**a].total_cmp(&l[**b]))
            .unwrap();
        assert_eq!(*best, "C");

        let l = loads(&[("A", 85.0), ("B", 70.0), ("C", 70.0)]);
        assert_eq!(select_target(&n, &l, "A", "u1", &p, &w).unwrap().as_deref(), Some("B"));
    }

    #[test]
    fn no_feasible_target() {
        // neighbours are full
        let n = net(
            &[("g", "c", "A", 2), ("g", "c", "B", 1)],
            &[("u1", "A", 1e6), ("u2", "B", 0.0)],
        );
        let l = loads(&[("A", 90.0), ("B", 50.0)]);
        let p = HandoverPolicy::default();
        let w = LoadWeights::default();
        assert_eq!(select_target(&n, &l, "A", "u1", &p, &w).unwrap(), None);

        // projection at or above threshold
        let tight = HandoverPolicy { threshold: 10.0, ..HandoverPolicy::default() };
        let n = net(&[("g", "c", "A", 2), ("g", "c", "B", 5)], &[("u1", "A", 1e6)]);
        let l = loads(&[("A", 90.0), ("B", 0.0)]);
        assert_eq!(select_target(&n, &l, "A", "u1", &tight, &w).unwrap(), None);
    }

    #[test]
    fn single_candidate_just_below_threshold() {
        let n = net(&[("g", "c", "A", 20), ("g", "c", "B", 20)], &[("u1", "A", 0.0)]);
        let l = loads(&[("A", 90.0), ("B", 79.0)]);
        let p = HandoverPolicy::default();
        let w = LoadWeights::default();
        assert_eq!(select_target(&n, &l, "A", "u1", &p, &w).unwrap().as_deref(), Some("B"));
    }

    #[test]
    fn classification() {
        let n = net(
            &[("g1", "c1", "s1", 5), ("g1", "c1", "s2", 5), ("g1", "c2", "s3", 5), ("g2", "c3", "s4", 5)],
            &[],
        );
        assert_eq!(classify(&n, "s1", "s2").unwrap(), (HandoverKind::IntraGnbDu, Softness::Soft));
        assert_eq!(classify(&n, "s1", "s3").unwrap(), (HandoverKind::InterGnbDuIntraGnbCu, Softness::Soft));
        assert_eq!(classify(&n, "s3", "s4").unwrap(), (HandoverKind::InterGnbCu, Softness::Hard));
        assert!(matches!(classify(&n, "s1", "s1"), Err(HandoverError::SameSector(_))));
        assert!(classify(&n, "s1", "zz").is_err());
    }

    #[test]
    fn successful_handover() {
        let mut n = net(&[("g", "c", "A", 5), ("g", "c", "B", 5)], &[("u1", "A", 1.0)]);
        let mut rng = seeded_rng(0, "failure");
        let ev = execute_handover(&mut n, "u1", "B", &HandoverPolicy::default(), &mut rng, 7).unwrap();
        assert_eq!(ev.outcome, HandoverOutcome::Success);
        assert_eq!(ev.start_tick, 7);
        assert_eq!(ev.latency, 0.5);
        assert_eq!(n.ue("u1").unwrap().sector_id(), Some("B"));
    }

    #[test]
    fn forced_failure_rolls_back_exactly() {
        let mut n = net(
            &[("g", "c", "A", 5), ("g", "c", "B", 5)],
            &[("u1", "A", 1.0), ("u2", "A", 2.0), ("u3", "B", 3.0)],
        );
        let before = n.clone();
        let always = HandoverPolicy { failure_injection: 1.0, ..HandoverPolicy::default() };
        let mut rng = seeded_rng(0, "failure");
        let ev = execute_handover(&mut n, "u2", "B", &always, &mut rng, 0).unwrap();
        assert_eq!(ev.outcome, HandoverOutcome::RolledBack);
        assert_eq!(n.attachment_map(), before.attachment_map());
        assert_eq!(n, before);
    }

    #[test]
    fn full_target_is_a_failure_without_movement() {
        let mut n = net(&[("g", "c", "A", 5), ("g", "c", "B", 1)], &[("u1", "A", 1.0), ("u2", "B", 1.0)]);
        let before = n.clone();
        let mut rng = seeded_rng(0, "failure");
        let ev = execute_handover(&mut n, "u1", "B", &HandoverPolicy::default(), &mut rng, 0).unwrap();
        assert_eq!(ev.outcome, HandoverOutcome::Failed);
        assert_eq!(n, before);
    }

    #[test]
    fn stats_arithmetic() {
        let ev = |outcome| HandoverEvent {
            ue_id: "u".into(),
            source_sector: "a".into(),
            target_sector: "b".into(),
            kind: HandoverKind::IntraGnbDu,
            softness: Softness::Soft,
            start_tick: 0,
            latency: 0.5,
            outcome,
        };
        let mut events: Vec<_> = (0..99).map(|_| ev(HandoverOutcome::Success)).collect();
        events.push(ev(HandoverOutcome::RolledBack));
        let s = HandoverStats::from_events(&events);
        assert_eq!((s.attempts, s.successes, s.failures), (100, 99, 1));
        assert!((s.hsr.unwrap() - 0.99).abs() < 1e-12);
        assert!((s.hfr.unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(s.hsr.unwrap() + s.hfr.unwrap(), 1.0);

        let empty = HandoverStats::from_events(&[]);
        assert_eq!(empty.hsr, None);
        assert_eq!(empty.hfr, None);

        let s = HandoverStats::from_events(&(0..98).map(|_| ev(HandoverOutcome::Success)).collect::<Vec<_>>());
        assert_eq!(s.handover_count, 98);
    }

    #[test]
    fn injected_failure_rate_concentrates() {
        let mut n = net(&[("g", "c", "A", 5), ("g", "c", "B", 5)], &[("u1", "A", 1.0)]);
        let p = HandoverPolicy { failure_injection: 0.1, ..HandoverPolicy::default() };
        let mut rng = seeded_rng(42, "failure");
        let mut events = Vec::new();
        for t in 0..1000 {
            let target = if n.ue("u1").unwrap().sector_id() == Some("A") { "B" } else { "A" };
            events.push(execute_handover(&mut n, "u1", target, &p, &mut rng, t).unwrap());
        }
        let s = HandoverStats::from_events(&events);
        let hfr = s.hfr.unwrap();
        assert!((0.07..=0.13).contains(&hfr), "hfr {hfr}");
    }

    fn congested_pair() -> Network {
        // A: 9 of 10 UEs at 9 MB/s -> 0.5*90 + 0.5*81 = 85.5; B empty
        let rows: Vec<(String, f64)> = (0..9).map(|i| (format!("u{i}"), 9e6)).collect();
        let ues: Vec<(&str, &str, f64)> = rows.iter().map(|(id, tp)| (id.as_str(), "A", *tp)).collect();
        net(&[("g", "c", "A", 10), ("g", "c", "B", 10)], &ues)
    }

    #[test]
    fn balance_moves_one_ue_and_relieves_source() {
        let mut n = congested_pair();
        let w = LoadWeights::default();
        let p = HandoverPolicy::default();
        let r = load_report(&n, &w, 0);
        assert!((r.per_sector["A"] - 85.5).abs() < 1e-9);
        let mut rng = seeded_rng(0, "failure");
        let events = balance_step(&mut n, &r, &p, &w, &ThresholdOffload, &mut rng, 0);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].target_sector, "B");
        let after = load_report(&n, &w, 0);
        // 8 UEs: 0.5*80 + 0.5*72 = 76
        assert!((after.per_sector["A"] - 76.0).abs() < 1e-9);
        assert!(after.per_sector["A"] < r.per_sector["A"]);
    }

    #[test]
    fn balance_is_quiet_without_congestion_or_targets() {
        let w = LoadWeights::default();
        let p = HandoverPolicy::default();
        let mut rng = seeded_rng(0, "failure");

        let mut calm = net(&[("g", "c", "A", 10), ("g", "c", "B", 10)], &[("u1", "A", 1e6)]);
        let r = load_report(&calm, &w, 0);
        assert!(balance_step(&mut calm, &r, &p, &w, &ThresholdOffload, &mut rng, 0).is_empty());

        let rows: Vec<(String, &str)> = (0..18).map(|i| (format!("u{i:02}"), if i < 9 { "A" } else { "B" })).collect();
        let ues: Vec<(&str, &str, f64)> = rows.iter().map(|(id, s)| (id.as_str(), *s, 9e6)).collect();
        let mut jammed = net(&[("g", "c", "A", 10), ("g", "c", "B", 10)], &ues);
        let r = load_report(&jammed, &w, 0);
        assert!(r.per_sector.values().all(|l| *l >= 80.0));
        assert!(balance_step(&mut jammed, &r, &p, &w, &ThresholdOffload, &mut rng, 0).is_empty());
    }

    #[test]
    fn multiple_moves_never_overshoot_target() {
        let rows: Vec<(String, f64)> = (0..10).map(|i| (format!("u{i}"), 10e6)).collect();
        let ues: Vec<(&str, &str, f64)> = rows.iter().map(|(id, tp)| (id.as_str(), "A", *tp)).collect();
        let mut n = net(&[("g", "c", "A", 10), ("g", "c", "B", 10)], &ues);
        let w = LoadWeights::default();
        let p = HandoverPolicy { max_ues_per_trigger: 10, ..HandoverPolicy::default() };
        let r = load_report(&n, &w, 0);
        let mut rng = seeded_rng(0, "failure");
        let events = balance_step(&mut n, &r, &p, &w, &ThresholdOffload, &mut rng, 0);
        assert!(!events.is_empty());
        let after = load_report(&n, &w, 0);
        assert!(after.per_sector["B"] < 80.0);
        assert!(after.per_sector["A"] < 80.0);
    }

    #[test]
    fn registry_lookup() {
        let r = StrategyRegistry::with_defaults();
        assert_eq!(r.names().collect::<Vec<_>>(), vec![DEFAULT_STRATEGY]);
        assert!(resolve_strategy(&r, "threshold_offload").is_ok());
        assert!(resolve_strategy(&r, "ml_magic").is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(HandoverPolicy::default().validate().is_ok());
        assert!(HandoverPolicy { threshold: 0.0, ..Default::default() }.validate().is_err());
        assert!(HandoverPolicy { threshold: 101.0, ..Default::default() }.validate().is_err());
        assert!(HandoverPolicy { latency: -1.0, ..Default::default() }.validate().is_err());
        assert!(HandoverPolicy { failure_injection: 1.1, ..Default::default() }.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rollback_restores_attachment(n_a in 1usize..6, n_b in 0usize..4, seed in any::<u64>()) {
                let mut rows = Vec::new();
                for i in 0..n_a { rows.push((format!("a{i}"), "A")); }
                for i in 0..n_b { rows.push((format!("b{i}"), "B")); }
                let ues: Vec<(&str, &str, f64)> = rows.iter().map(|(id, s)| (id.as_str(), *s, 1e6)).collect();
                let mut n = net(&[("g1", "c1", "A", 6), ("g2", "c2", "B", 6)], &ues);
                let before = n.attachment_map();
                let p = HandoverPolicy { failure_injection: 1.0, ..HandoverPolicy::default() };
                let mut rng = seeded_rng(seed, "failure");
                let ev = execute_handover(&mut n, "a0", "B", &p, &mut rng, 0).unwrap();
                prop_assert_ne!(ev.outcome, HandoverOutcome::Success);
                prop_assert_eq!(n.attachment_map(), before);
                prop_assert_eq!(ev.kind, HandoverKind::InterGnbCu);
                prop_assert_eq!(ev.softness, Softness::Hard);
            }

            #[test]
            fn stats_ratios_sum_to_one(outcomes in proptest::collection::vec(0u8..3, 1..200)) {
                let events: Vec<HandoverEvent> = outcomes.iter().map(|o| HandoverEvent {
                    ue_id: "u".into(), source_sector: "a".into(), target_sector: "b".into(),
                    kind: HandoverKind::IntraGnbDu, softness: Softness::Soft, start_tick: 0, latency: 0.5,
                    outcome: match o { 0 => HandoverOutcome::Success, 1 => HandoverOutcome::Failed, _ => HandoverOutcome::RolledBack },
                }).collect();
                let s = HandoverStats::from_events(&events);
                prop_assert_eq!(s.attempts, s.successes + s.failures);
                prop_assert_eq!(s.hsr.unwrap() + s.hfr.unwrap(), 1.0);
            }
        }
    }
}
