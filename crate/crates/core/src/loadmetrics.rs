//! Sector, cell, gNB and network load percentages.
//!
//! Sector load blends a UE-count term and a throughput term:
//!
//! ```text
//! count_load      = attached / ue_capacity * 100
//! throughput_load = min(sum of UE throughput, max_throughput) / max_throughput * 100
//! sector_load     = count_weight * count_load + tp_weight * throughput_load
//! ```
//!
//! Cell load is the mean of its sector loads, gNB load the mean of its cell
//! loads and network load the mean of the gNB loads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::topology::{Cell, Gnb, Network, Sector, Ue};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadWeights {
    pub count_weight: f64,
    pub tp_weight: f64,
}

impl Default for LoadWeights {
    fn default() -> Self {
        LoadWeights {
            count_weight: 0.5,
            tp_weight: 0.5,
        }
    }
}

impl LoadWeights {
    pub fn new(count_weight: f64, tp_weight: f64) -> Result<Self, String> {
        let w = LoadWeights {
            count_weight,
            tp_weight,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.count_weight >= 0.0 && self.tp_weight >= 0.0) {
            return Err("weights must be non-negative".into());
        }
        if (self.count_weight + self.tp_weight - 1.0).abs() > 1e-12 {
            return Err(format!(
                "weights must sum to 1, got {} + {}",
                self.count_weight, self.tp_weight
            ));
        }
        Ok(())
    }
}

/// All load levels for one tick.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub tick: u64,
    pub per_sector: BTreeMap<String, f64>,
    pub per_cell: BTreeMap<String, f64>,
    pub per_gnb: BTreeMap<String, f64>,
    pub network_load: f64,
}

impl LoadReport {
    pub fn sector(&self, id: &str) -> Option<f64> {
        self.per_sector.get(id).copied()
    }
}

/// UE-count load of `attached` UEs against `capacity`. Not clamped.
pub fn count_load(attached: usize, capacity: u32) -> f64 {
    attached as f64 / capacity as f64 * 100.0
}

pub fn ue_count_load(sector: &Sector) -> f64 {
    count_load(sector.attached_count(), sector.ue_capacity())
}

/// Sum of the current throughput of every UE attached to `sector`.
pub fn sector_throughput(sector: &Sector, ues: &BTreeMap<String, Ue>) -> f64 {
    sector
        .attached_ue_ids()
        .iter()
        .filter_map(|id| ues.get(id))
        .map(|u| u.current_throughput)
        .sum()
}

fn capped_ratio(total: f64, max_throughput: f64) -> f64 {
    total.min(max_throughput) / max_throughput * 100.0
}

/// Aggregate throughput capped at the sector maximum, as a percentage.
pub fn throughput_load(sector: &Sector, ues: &BTreeMap<String, Ue>) -> f64 {
    capped_ratio(sector_throughput(sector, ues), sector.max_throughput())
}

pub fn sector_load(sector: &Sector, weights: &LoadWeights, ues: &BTreeMap<String, Ue>) -> f64 {
    weights.count_weight * ue_count_load(sector) + weights.tp_weight * throughput_load(sector, ues)
}

/// Sector load as it would be with one extra UE carrying `extra_throughput`.
pub fn projected_sector_load(
    sector: &Sector,
    weights: &LoadWeights,
    ues: &BTreeMap<String, Ue>,
    extra_throughput: f64,
) -> f64 {
    let count = count_load(sector.attached_count() + 1, sector.ue_capacity());
    let tp = capped_ratio(
        sector_throughput(sector, ues) + extra_throughput,
        sector.max_throughput(),
    );
    weights.count_weight * count + weights.tp_weight * tp
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn cell_load(cell: &Cell, network: &Network, weights: &LoadWeights) -> f64 {
    mean(cell.sector_ids().iter().map(|id| {
        let sector = &network.sectors()[id];
        sector_load(sector, weights, network.ues())
    }))
}

pub fn gnb_load(gnb: &Gnb, network: &Network, weights: &LoadWeights) -> f64 {
    mean(
        gnb.cell_ids()
            .iter()
            .map(|id| cell_load(&network.cells()[id], network, weights)),
    )
}

/// Computes every level in one pass. Network load is the mean of the gNB
/// loads (zero for an empty network).
pub fn load_report(network: &Network, weights: &LoadWeights, tick: u64) -> LoadReport {
    let per_sector: BTreeMap<String, f64> = network
        .sectors()
        .iter()
        .map(|(id, s)| (id.clone(), sector_load(s, weights, network.ues())))
        .collect();
    let per_cell: BTreeMap<String, f64> = network
        .cells()
        .iter()
        .map(|(id, c)| (id.clone(), mean(c.sector_ids().iter().map(|s| per_sector[s]))))
        .collect();
    let per_gnb: BTreeMap<String, f64> = network
        .gnbs()
        .iter()
        .map(|(id, g)| (id.clone(), mean(g.cell_ids().iter().map(|c| per_cell[c]))))
        .collect();
    let network_load = mean(per_gnb.values().copied());
    LoadReport {
        tick,
        per_sector,
        per_cell,
        per_gnb,
        network_load,
    }
}
