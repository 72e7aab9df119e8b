//! Round robin with fallback.
//!
//! The ring is the global id-sorted sector list. A placement tries the
//! sector under the cursor and, if it is full, scans forward cyclically for
//! at most one full turn. The cursor then moves past the chosen sector.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Network, TopologyError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlacementError {
    #[error("no sector has free capacity for UE {ue:?}")]
    NetworkFull { ue: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementCursor {
    next_index: usize,
}

impl PlacementCursor {
    pub fn next_index(&self) -> usize {
        self.next_index
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlacementOutcome {
    pub placed: BTreeMap<String, String>,
    pub unplaced: Vec<String>,
}

/// Attaches an unattached UE and returns the chosen sector id.
pub fn place_ue(
    network: &mut Network,
    cursor: &mut PlacementCursor,
    ue_id: &str,
) -> Result<String, PlacementError> {
    let ue = network.ue(ue_id)?;
    if let Some(sector) = ue.sector_id() {
        return Err(TopologyError::AlreadyAttached {
            ue: ue_id.to_string(),
            sector: sector.to_string(),
        }
        .into());
    }
    let ring: Vec<&str> = network.sectors().keys().map(String::as_str).collect();
    let n = ring.len();
    let start = if n == 0 { 0 } else { cursor.next_index % n };
    let chosen = (0..n)
        .map(|k| (start + k) % n)
        .find(|&idx| network.sectors()[ring[idx]].has_free_capacity());
    match chosen {
        Some(idx) => {
            let sector = ring[idx].to_string();
            network.attach(ue_id, &sector)?;
            cursor.next_index = (idx + 1) % n;
            Ok(sector)
        }
        None => Err(PlacementError::NetworkFull {
            ue: ue_id.to_string(),
        }),
    }
}

/// Places UEs in input order. Full-network failures are collected in
/// `unplaced`; any other error aborts.
pub fn place_all(
    network: &mut Network,
    cursor: &mut PlacementCursor,
    ue_ids: &[String],
) -> Result<PlacementOutcome, PlacementError> {
    let mut outcome = PlacementOutcome::default();
    for id in ue_ids {
        match place_ue(network, cursor, id) {
            Ok(sector) => {
                outcome.placed.insert(id.clone(), sector);
            }
            Err(PlacementError::NetworkFull { ue }) => outcome.unplaced.push(ue),
            Err(e) => return Err(e),
        }
    }
    Ok(outcome)
}
