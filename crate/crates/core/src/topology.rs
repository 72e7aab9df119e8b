//! Network configuration documents and the canonical network state.
//!
//! A configuration is a single JSON document with the top-level keys
//! `gnbs`, `cells`, `sectors`, `ues`, `weights`, `handover_policy` and
//! `seed`. The four entity lists may also live in separate files, see
//! [`load_config_files`]; they are merged key-by-key before parsing.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::handover::HandoverPolicy;
use crate::loadmetrics::LoadWeights;
use crate::placement::{self, PlacementCursor};
use crate::traffic::{ServiceClass, TrafficProfile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Gnb,
    Cell,
    Sector,
    Ue,
    Config,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EntityKind::Gnb => "gNB",
            EntityKind::Cell => "cell",
            EntityKind::Sector => "sector",
            EntityKind::Ue => "UE",
            EntityKind::Config => "config",
        };
        f.write_str(s)
    }
}

/// Errors raised while reading or validating a configuration document.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed configuration document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: EntityKind, id: String },
    #[error("{kind} {id:?} references unknown {target_kind} {target:?}")]
    DanglingReference {
        kind: EntityKind,
        id: String,
        target_kind: EntityKind,
        target: String,
    },
    #[error("{kind} {id:?}: {reason}")]
    Invalid {
        kind: EntityKind,
        id: String,
        reason: String,
    },
}

impl ConfigError {
    pub(crate) fn invalid(kind: EntityKind, id: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            kind,
            id: id.into(),
            reason: reason.into(),
        }
    }
}

/// Errors raised by operations on a built [`Network`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("unknown {kind} {id:?}")]
    Unknown { kind: EntityKind, id: String },
    #[error("duplicate {kind} id {id:?}")]
    Duplicate { kind: EntityKind, id: String },
    #[error("sector {sector:?} is at capacity ({capacity} UEs)")]
    CapacityExceeded { sector: String, capacity: u32 },
    #[error("UE {ue:?} is already attached to sector {sector:?}")]
    AlreadyAttached { ue: String, sector: String },
    #[error("UE {0:?} is not attached to any sector")]
    NotAttached(String),
    #[error("sector {sector:?} holds {attached} UEs; capacity {requested} would evict")]
    CapacityBelowOccupancy {
        sector: String,
        attached: usize,
        requested: u32,
    },
    #[error("sector {sector:?}: {reason}")]
    InvalidSector { sector: String, reason: String },
}

impl TopologyError {
    pub(crate) fn unknown(kind: EntityKind, id: &str) -> Self {
        TopologyError::Unknown {
            kind,
            id: id.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnbConfig {
    pub id: String,
    #[serde(default)]
    pub latitude: f64,
    #[serde(default)]
    pub longitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub id: String,
    pub gnb_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorConfig {
    pub id: String,
    pub cell_id: String,
    pub ue_capacity: u32,
    /// Bytes per second.
    pub max_throughput: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UeConfig {
    pub id: String,
    pub service_class: ServiceClass,
    /// Falls back to the class default when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<TrafficProfile>,
    /// Pre-placement. Unpinned UEs go through round-robin placement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector_id: Option<String>,
    #[serde(default = "default_true")]
    pub traffic_active: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    #[serde(default)]
    pub gnbs: Vec<GnbConfig>,
    #[serde(default)]
    pub cells: Vec<CellConfig>,
    #[serde(default)]
    pub sectors: Vec<SectorConfig>,
    #[serde(default)]
    pub ues: Vec<UeConfig>,
    #[serde(default)]
    pub weights: LoadWeights,
    #[serde(default)]
    pub handover_policy: HandoverPolicy,
    #[serde(default)]
    pub seed: u64,
}

impl NetworkConfig {
    /// Checks uniqueness, cross-references and value ranges.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let gnb_ids = unique_ids(EntityKind::Gnb, self.gnbs.iter().map(|g| g.id.as_str()))?;
        let cell_ids = unique_ids(EntityKind::Cell, self.cells.iter().map(|c| c.id.as_str()))?;
        let sector_ids =
            unique_ids(EntityKind::Sector, self.sectors.iter().map(|s| s.id.as_str()))?;
        unique_ids(EntityKind::Ue, self.ues.iter().map(|u| u.id.as_str()))?;

        for g in &self.gnbs {
            if g.id.is_empty() {
                return Err(ConfigError::invalid(EntityKind::Gnb, "", "empty id"));
            }
            if !g.latitude.is_finite() || !g.longitude.is_finite() {
                return Err(ConfigError::invalid(EntityKind::Gnb, &g.id, "non-finite coordinates"));
            }
        }
        for c in &self.cells {
            if !gnb_ids.contains(c.gnb_id.as_str()) {
                return Err(ConfigError::DanglingReference {
                    kind: EntityKind::Cell,
                    id: c.id.clone(),
                    target_kind: EntityKind::Gnb,
                    target: c.gnb_id.clone(),
                });
            }
        }
        for s in &self.sectors {
            if !cell_ids.contains(s.cell_id.as_str()) {
                return Err(ConfigError::DanglingReference {
                    kind: EntityKind::Sector,
                    id: s.id.clone(),
                    target_kind: EntityKind::Cell,
                    target: s.cell_id.clone(),
                });
            }
            if s.ue_capacity == 0 {
                return Err(ConfigError::invalid(EntityKind::Sector, &s.id, "ue_capacity must be positive"));
            }
            if !(s.max_throughput.is_finite() && s.max_throughput > 0.0) {
                return Err(ConfigError::invalid(
                    EntityKind::Sector,
                    &s.id,
                    "max_throughput must be positive",
                ));
            }
        }
        for u in &self.ues {
            if let Some(sector) = &u.sector_id {
                if !sector_ids.contains(sector.as_str()) {
                    return Err(ConfigError::DanglingReference {
                        kind: EntityKind::Ue,
                        id: u.id.clone(),
                        target_kind: EntityKind::Sector,
                        target: sector.clone(),
                    });
                }
            }
            if let Some(p) = &u.profile {
                p.validate()
                    .map_err(|e| ConfigError::invalid(EntityKind::Ue, &u.id, e.to_string()))?;
            }
        }
        // every gNB needs a cell and every cell a sector
        for g in &self.gnbs {
            if !self.cells.iter().any(|c| c.gnb_id == g.id) {
                return Err(ConfigError::invalid(EntityKind::Gnb, &g.id, "gNB has no cells"));
            }
        }
        for c in &self.cells {
            if !self.sectors.iter().any(|s| s.cell_id == c.id) {
                return Err(ConfigError::invalid(EntityKind::Cell, &c.id, "cell has no sectors"));
            }
        }
        self.weights
            .validate()
            .map_err(|reason| ConfigError::invalid(EntityKind::Config, "weights", reason))?;
        self.handover_policy
            .validate()
            .map_err(|reason| ConfigError::invalid(EntityKind::Config, "handover_policy", reason))?;
        Ok(())
    }
}

fn unique_ids<'a>(
    kind: EntityKind,
    ids: impl Iterator<Item = &'a str>,
) -> Result<HashSet<&'a str>, ConfigError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(ConfigError::DuplicateId {
                kind,
                id: id.to_string(),
            });
        }
    }
    Ok(seen)
}

/// Parses and validates a merged configuration document.
pub fn load_config(document: &str) -> Result<NetworkConfig, ConfigError> {
    let cfg: NetworkConfig = serde_json::from_str(document)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads one merged document or several partial ones (for example one file
/// each for gNBs, cells, sectors and UEs). Top-level keys of later files
/// override earlier ones.
pub fn load_config_files<P: AsRef<Path>>(paths: &[P]) -> Result<NetworkConfig, ConfigError> {
    let mut merged = serde_json::Map::new();
    for path in paths {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value {
            serde_json::Value::Object(map) => merged.extend(map),
            _ => {
                return Err(ConfigError::invalid(
                    EntityKind::Config,
                    path.display().to_string(),
                    "top level must be an object",
                ))
            }
        }
    }
    let cfg: NetworkConfig = serde_json::from_value(serde_json::Value::Object(merged))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Gnb {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
    cell_ids: Vec<String>,
}

impl Gnb {
    pub fn cell_ids(&self) -> &[String] {
        &self.cell_ids
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub id: String,
    pub gnb_id: String,
    sector_ids: Vec<String>,
}

impl Cell {
    pub fn sector_ids(&self) -> &[String] {
        &self.sector_ids
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sector {
    pub id: String,
    pub cell_id: String,
    ue_capacity: u32,
    max_throughput: f64,
    attached_ue_ids: BTreeSet<String>,
}

impl Sector {
    pub fn ue_capacity(&self) -> u32 {
        self.ue_capacity
    }

    /// Bytes per second.
    pub fn max_throughput(&self) -> f64 {
        self.max_throughput
    }

    pub fn attached_ue_ids(&self) -> &BTreeSet<String> {
        &self.attached_ue_ids
    }

    pub fn attached_count(&self) -> usize {
        self.attached_ue_ids.len()
    }

    pub fn has_free_capacity(&self) -> bool {
        self.attached_ue_ids.len() < self.ue_capacity as usize
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UeQos {
    /// Seconds.
    pub delay: f64,
    /// Seconds.
    pub jitter: f64,
    /// Fraction in [0, 1].
    pub packet_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ue {
    pub id: String,
    pub service_class: ServiceClass,
    pub profile: TrafficProfile,
    sector_id: Option<String>,
    /// Bytes per second.
    pub current_throughput: f64,
    pub qos: UeQos,
    pub traffic_active: bool,
    /// Set by an external throughput override; traffic generation then
    /// leaves `current_throughput` alone.
    pub pinned: bool,
    /// Delay of the previous sample, used for inter-sample jitter.
    #[serde(skip)]
    pub(crate) last_delay: Option<f64>,
}

impl Ue {
    pub fn new(id: impl Into<String>, service_class: ServiceClass, profile: TrafficProfile) -> Self {
        Ue {
            id: id.into(),
            service_class,
            profile,
            sector_id: None,
            current_throughput: 0.0,
            qos: UeQos::default(),
            traffic_active: true,
            pinned: false,
            last_delay: None,
        }
    }

    pub fn sector_id(&self) -> Option<&str> {
        self.sector_id.as_deref()
    }
}

/// The topology tree plus the mutable UE attachment map.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Network {
    gnbs: BTreeMap<String, Gnb>,
    cells: BTreeMap<String, Cell>,
    sectors: BTreeMap<String, Sector>,
    ues: BTreeMap<String, Ue>,
}

/// Result of [`build_network`]: the network, the round-robin cursor left
/// behind by initial placement, and UEs that did not fit anywhere.
#[derive(Clone, Debug)]
pub struct Deployment {
    pub network: Network,
    pub cursor: PlacementCursor,
    pub unplaced: Vec<String>,
}

/// Materializes a validated configuration. Pinned UEs are attached first,
/// then the rest are placed round-robin in configuration order.
pub fn build_network(cfg: &NetworkConfig) -> Result<Deployment, TopologyError> {
    let mut network = Network::default();
    for g in &cfg.gnbs {
        network.gnbs.insert(
            g.id.clone(),
            Gnb {
                id: g.id.clone(),
                latitude: g.latitude,
                longitude: g.longitude,
                cell_ids: Vec::new(),
            },
        );
    }
    for c in &cfg.cells {
        let gnb = network
            .gnbs
            .get_mut(&c.gnb_id)
            .ok_or_else(|| TopologyError::unknown(EntityKind::Gnb, &c.gnb_id))?;
        gnb.cell_ids.push(c.id.clone());
        network.cells.insert(
            c.id.clone(),
            Cell {
                id: c.id.clone(),
                gnb_id: c.gnb_id.clone(),
                sector_ids: Vec::new(),
            },
        );
    }
    for s in &cfg.sectors {
        let cell = network
            .cells
            .get_mut(&s.cell_id)
            .ok_or_else(|| TopologyError::unknown(EntityKind::Cell, &s.cell_id))?;
        cell.sector_ids.push(s.id.clone());
        network.sectors.insert(
            s.id.clone(),
            Sector {
                id: s.id.clone(),
                cell_id: s.cell_id.clone(),
                ue_capacity: s.ue_capacity,
                max_throughput: s.max_throughput,
                attached_ue_ids: BTreeSet::new(),
            },
        );
    }
    for g in network.gnbs.values_mut() {
        g.cell_ids.sort();
    }
    for c in network.cells.values_mut() {
        c.sector_ids.sort();
    }

    let mut unpinned = Vec::new();
    for u in &cfg.ues {
        let profile = u
            .profile
            .clone()
            .unwrap_or_else(|| TrafficProfile::default_for(u.service_class));
        let mut ue = Ue::new(u.id.clone(), u.service_class, profile);
        ue.traffic_active = u.traffic_active;
        network.add_ue(ue)?;
        match &u.sector_id {
            Some(sector) => network.attach(&u.id, sector)?,
            None => unpinned.push(u.id.clone()),
        }
    }

    let mut cursor = PlacementCursor::default();
    let outcome = placement::place_all(&mut network, &mut cursor, &unpinned)
        .map_err(|e| match e {
            placement::PlacementError::Topology(t) => t,
            placement::PlacementError::NetworkFull { ue } => TopologyError::NotAttached(ue),
        })?;
    Ok(Deployment {
        network,
        cursor,
        unplaced: outcome.unplaced,
    })
}

impl Network {
    pub fn gnbs(&self) -> &BTreeMap<String, Gnb> {
        &self.gnbs
    }

    pub fn cells(&self) -> &BTreeMap<String, Cell> {
        &self.cells
    }

    pub fn sectors(&self) -> &BTreeMap<String, Sector> {
        &self.sectors
    }

    pub fn ues(&self) -> &BTreeMap<String, Ue> {
        &self.ues
    }

    pub fn gnb(&self, id: &str) -> Result<&Gnb, TopologyError> {
        self.gnbs
            .get(id)
            .ok_or_else(|| TopologyError::unknown(EntityKind::Gnb, id))
    }

    pub fn cell(&self, id: &str) -> Result<&Cell, TopologyError> {
        self.cells
            .get(id)
            .ok_or_else(|| TopologyError::unknown(EntityKind::Cell, id))
    }

    pub fn sector(&self, id: &str) -> Result<&Sector, TopologyError> {
        self.sectors
            .get(id)
            .ok_or_else(|| TopologyError::unknown(EntityKind::Sector, id))
    }

    pub fn ue(&self, id: &str) -> Result<&Ue, TopologyError> {
        self.ues
            .get(id)
            .ok_or_else(|| TopologyError::unknown(EntityKind::Ue, id))
    }

    /// Mutable access to a UE's traffic and QoS state. Attachment is only
    /// changed through [`Network::attach`] and [`Network::detach`].
    pub fn ue_mut(&mut self, id: &str) -> Result<&mut Ue, TopologyError> {
        self.ues
            .get_mut(id)
            .ok_or_else(|| TopologyError::unknown(EntityKind::Ue, id))
    }

    /// gNB id owning a sector.
    pub fn gnb_of(&self, sector_id: &str) -> Result<&str, TopologyError> {
        let sector = self.sector(sector_id)?;
        Ok(self.cell(&sector.cell_id)?.gnb_id.as_str())
    }

    /// Inserts an unattached UE.
    pub fn add_ue(&mut self, mut ue: Ue) -> Result<(), TopologyError> {
        if self.ues.contains_key(&ue.id) {
            return Err(TopologyError::Duplicate {
                kind: EntityKind::Ue,
                id: ue.id,
            });
        }
        ue.sector_id = None;
        self.ues.insert(ue.id.clone(), ue);
        Ok(())
    }

    /// Detaches and removes a UE.
    pub fn remove_ue(&mut self, id: &str) -> Result<Ue, TopologyError> {
        if let Some(sector) = self.ue(id)?.sector_id.clone() {
            if let Some(s) = self.sectors.get_mut(&sector) {
                s.attached_ue_ids.remove(id);
            }
        }
        let mut ue = self.ues.remove(id).expect("checked above");
        ue.sector_id = None;
        Ok(ue)
    }

    pub fn attach(&mut self, ue_id: &str, sector_id: &str) -> Result<(), TopologyError> {
        let ue = self.ue(ue_id)?;
        if let Some(current) = &ue.sector_id {
            return Err(TopologyError::AlreadyAttached {
                ue: ue_id.to_string(),
                sector: current.clone(),
            });
        }
        let sector = self
            .sectors
            .get_mut(sector_id)
            .ok_or_else(|| TopologyError::unknown(EntityKind::Sector, sector_id))?;
        if !sector.has_free_capacity() {
            return Err(TopologyError::CapacityExceeded {
                sector: sector_id.to_string(),
                capacity: sector.ue_capacity,
            });
        }
        sector.attached_ue_ids.insert(ue_id.to_string());
        self.ues.get_mut(ue_id).expect("checked above").sector_id = Some(sector_id.to_string());
        Ok(())
    }

    /// Detaches a UE and returns the sector it left.
    pub fn detach(&mut self, ue_id: &str) -> Result<String, TopologyError> {
        let ue = self
            .ues
            .get_mut(ue_id)
            .ok_or_else(|| TopologyError::unknown(EntityKind::Ue, ue_id))?;
        let sector_id = ue
            .sector_id
            .take()
            .ok_or_else(|| TopologyError::NotAttached(ue_id.to_string()))?;
        if let Some(s) = self.sectors.get_mut(&sector_id) {
            s.attached_ue_ids.remove(ue_id);
        }
        Ok(sector_id)
    }

    /// UE id to sector id for every attached UE.
    pub fn attachment_map(&self) -> BTreeMap<String, String> {
        self.ues
            .values()
            .filter_map(|u| u.sector_id.clone().map(|s| (u.id.clone(), s)))
            .collect()
    }

    pub fn set_sector_capacity(&mut self, sector_id: &str, capacity: u32) -> Result<(), TopologyError> {
        let sector = self
            .sectors
            .get_mut(sector_id)
            .ok_or_else(|| TopologyError::unknown(EntityKind::Sector, sector_id))?;
        if capacity == 0 {
            return Err(TopologyError::InvalidSector {
                sector: sector_id.to_string(),
                reason: "ue_capacity must be positive".into(),
            });
        }
        if (capacity as usize) < sector.attached_ue_ids.len() {
            return Err(TopologyError::CapacityBelowOccupancy {
                sector: sector_id.to_string(),
                attached: sector.attached_ue_ids.len(),
                requested: capacity,
            });
        }
        sector.ue_capacity = capacity;
        Ok(())
    }

    pub fn set_sector_max_throughput(&mut self, sector_id: &str, value: f64) -> Result<(), TopologyError> {
        let sector = self
            .sectors
            .get_mut(sector_id)
            .ok_or_else(|| TopologyError::unknown(EntityKind::Sector, sector_id))?;
        if !(value.is_finite() && value > 0.0) {
            return Err(TopologyError::InvalidSector {
                sector: sector_id.to_string(),
                reason: "max_throughput must be positive".into(),
            });
        }
        sector.max_throughput = value;
        Ok(())
    }

    /// Candidate sectors for offloading `sector_id`: siblings in the same
    /// cell, then the other sectors of the same gNB, then every sector of
    /// other gNBs. Each group is sorted by sector id.
    pub fn neighbors(&self, sector_id: &str) -> Result<Vec<String>, TopologyError> {
        let sector = self.sector(sector_id)?;
        let cell_id = sector.cell_id.as_str();
        let gnb_id = self.cell(cell_id)?.gnb_id.as_str();

        let mut same_cell = Vec::new();
        let mut same_gnb = Vec::new();
        let mut other = Vec::new();
        // BTreeMap iteration is already id-sorted
        for (id, s) in &self.sectors {
            if id == sector_id {
                continue;
            }
            if s.cell_id == cell_id {
                same_cell.push(id.clone());
            } else if self.cells[&s.cell_id].gnb_id == gnb_id {
                same_gnb.push(id.clone());
            } else {
                other.push(id.clone());
            }
        }
        same_cell.extend(same_gnb);
        same_cell.extend(other);
        Ok(same_cell)
    }
}
