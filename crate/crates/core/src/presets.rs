//! Built-in topologies and scenarios.

use rand::seq::IndexedRandom;

use crate::engine::{RampMode, Scenario};
use crate::handover::HandoverPolicy;
use crate::loadmetrics::LoadWeights;
use crate::rng::seeded_rng;
use crate::topology::{CellConfig, GnbConfig, NetworkConfig, SectorConfig, UeConfig};
use crate::traffic::ServiceClass;

pub const GNBS: usize = 3;
pub const CELLS_PER_GNB: usize = 6;
pub const SECTORS_PER_CELL: usize = 3;
pub const UES_PER_SECTOR: usize = 10;
/// Room for a few handed-over UEs on top of the ten placed per sector.
pub const SECTOR_UE_CAPACITY: u32 = 15;
/// Bytes per second.
pub const SECTOR_MAX_THROUGHPUT: f64 = 100e6;
pub const INTERSITE_DISTANCE_M: f64 = 500.0;

/// The sector the rush-hour ramp targets.
pub const RUSH_HOUR_SECTOR: &str = "g1c1s1";
pub const RUSH_HOUR_RAMP_START: u64 = 60;
pub const RUSH_HOUR_DURATION: u64 = 300;

const METERS_PER_DEGREE: f64 = 111_320.0;
const ORIGIN: (f64, f64) = (48.8566, 2.3522);

/// Three gNBs on a triangle of the hex grid, six cells each, three sectors
/// per cell, ten UEs per sector with service classes drawn from `seed`.
pub fn hex_three_gnb(seed: u64) -> NetworkConfig {
    let offsets_m = [
        (0.0, 0.0),
        (0.0, INTERSITE_DISTANCE_M),
        (INTERSITE_DISTANCE_M * 3f64.sqrt() / 2.0, INTERSITE_DISTANCE_M / 2.0),
    ];
    let lat_scale = ORIGIN.0.to_radians().cos();
    let mut cfg = NetworkConfig {
        gnbs: Vec::new(),
        cells: Vec::new(),
        sectors: Vec::new(),
        ues: Vec::new(),
        weights: LoadWeights::default(),
        handover_policy: HandoverPolicy::default(),
        seed,
    };
    for (g, (north, east)) in offsets_m.iter().enumerate().take(GNBS) {
        let gnb_id = format!("g{}", g + 1);
        cfg.gnbs.push(GnbConfig {
            id: gnb_id.clone(),
            latitude: ORIGIN.0 + north / METERS_PER_DEGREE,
            longitude: ORIGIN.1 + east / (METERS_PER_DEGREE * lat_scale),
        });
        for c in 1..=CELLS_PER_GNB {
            let cell_id = format!("{gnb_id}c{c}");
            cfg.cells.push(CellConfig {
                id: cell_id.clone(),
                gnb_id: gnb_id.clone(),
            });
            for s in 1..=SECTORS_PER_CELL {
                cfg.sectors.push(SectorConfig {
                    id: format!("{cell_id}s{s}"),
                    cell_id: cell_id.clone(),
                    ue_capacity: SECTOR_UE_CAPACITY,
                    max_throughput: SECTOR_MAX_THROUGHPUT,
                });
            }
        }
    }
    let total = GNBS * CELLS_PER_GNB * SECTORS_PER_CELL * UES_PER_SECTOR;
    let mut rng = seeded_rng(seed, "classes");
    for i in 1..=total {
        let class = *ServiceClass::ALL.choose(&mut rng).expect("non-empty");
        cfg.ues.push(UeConfig {
            id: format!("u{i:03}"),
            service_class: class,
            profile: None,
            sector_id: None,
            traffic_active: true,
        });
    }
    cfg
}

pub fn rush_hour(mode: RampMode) -> Scenario {
    Scenario::rush_hour(RUSH_HOUR_SECTOR, RUSH_HOUR_RAMP_START, RUSH_HOUR_DURATION, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_network;

    #[test]
    fn ten_ues_per_sector_after_placement() {
        let cfg = hex_three_gnb(42);
        cfg.validate().unwrap();
        let dep = build_network(&cfg).unwrap();
        assert!(dep.unplaced.is_empty());
        assert_eq!(dep.network.sectors().len(), 54);
        assert!(dep.network.sectors().values().all(|s| s.attached_count() == UES_PER_SECTOR));
    }

    #[test]
    fn gnbs_are_one_intersite_distance_apart() {
        let cfg = hex_three_gnb(0);
        let lat_scale = ORIGIN.0.to_radians().cos();
        let pos: Vec<(f64, f64)> = cfg
            .gnbs
            .iter()
            .map(|g| {
                (
                    (g.latitude - ORIGIN.0) * METERS_PER_DEGREE,
                    (g.longitude - ORIGIN.1) * METERS_PER_DEGREE * lat_scale,
                )
            })
            .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                let d = ((pos[i].0 - pos[j].0).powi(2) + (pos[i].1 - pos[j].1).powi(2)).sqrt();
                assert!((d - INTERSITE_DISTANCE_M).abs() < 1e-6, "{d}");
            }
        }
    }

    #[test]
    fn classes_depend_on_seed() {
        let a: Vec<_> = hex_three_gnb(1).ues.iter().map(|u| u.service_class).collect();
        let b: Vec<_> = hex_three_gnb(1).ues.iter().map(|u| u.service_class).collect();
        let c: Vec<_> = hex_three_gnb(2).ues.iter().map(|u| u.service_class).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
