//! Per-service-class traffic generation and QoS sampling.
//!
//! Traffic is rate-level: each 1 s tick a UE emits `floor(1 / interval)`
//! packets of `packet_size` bytes, some of which are lost. Delay is drawn
//! uniformly from `delay ± jitter_spread`; jitter is the absolute change in
//! delay from the previous sample.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Ue, UeQos};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceClass {
    Voice,
    Video,
    Gaming,
    Iot,
    Data,
}

impl ServiceClass {
    pub const ALL: [ServiceClass; 5] = [
        ServiceClass::Voice,
        ServiceClass::Video,
        ServiceClass::Gaming,
        ServiceClass::Iot,
        ServiceClass::Data,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ServiceClass::Voice => "voice",
            ServiceClass::Video => "video",
            ServiceClass::Gaming => "gaming",
            ServiceClass::Iot => "iot",
            ServiceClass::Data => "data",
        }
    }
}

impl fmt::Display for ServiceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ServiceClass {
    type Err = TrafficError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ServiceClass::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| TrafficError::UnknownClass(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrafficError {
    #[error("invalid traffic profile: {0}")]
    InvalidProfile(String),
    #[error("throughput must be a non-negative number, got {0}")]
    NegativeThroughput(f64),
    #[error("delay must be a non-negative number, got {0}")]
    NegativeDelay(f64),
    #[error("unknown service class {0:?}")]
    UnknownClass(String),
}

pub const DEFAULT_DELAY: f64 = 0.01;
// E|U1 - U2| = 2w/3 for U(-w, w): w = 0.15 ms gives 0.1 ms mean jitter
pub const DEFAULT_JITTER_SPREAD: f64 = 0.000_15;
pub const DEFAULT_LOSS_RATE: f64 = 0.002;

fn default_delay() -> f64 {
    DEFAULT_DELAY
}

fn default_jitter_spread() -> f64 {
    DEFAULT_JITTER_SPREAD
}

fn default_loss_rate() -> f64 {
    DEFAULT_LOSS_RATE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficProfile {
    pub kind: ServiceClass,
    /// Bytes.
    pub packet_size: u32,
    /// Seconds between packets.
    pub interval: f64,
    /// Bytes per second; must agree with `packet_size / interval` within 1%.
    pub bitrate: f64,
    /// Mean one-way delay in seconds.
    #[serde(default = "default_delay")]
    pub delay: f64,
    /// Half-width of the uniform delay window, seconds.
    #[serde(default = "default_jitter_spread")]
    pub jitter_spread: f64,
    #[serde(default = "default_loss_rate")]
    pub loss_rate: f64,
}

impl TrafficProfile {
    /// Profile with the bitrate derived from packet size and interval.
    pub fn new(kind: ServiceClass, packet_size: u32, interval: f64) -> Self {
        TrafficProfile {
            kind,
            packet_size,
            interval,
            bitrate: packet_size as f64 / interval,
            delay: DEFAULT_DELAY,
            jitter_spread: DEFAULT_JITTER_SPREAD,
            loss_rate: DEFAULT_LOSS_RATE,
        }
    }

    fn from_rate(kind: ServiceClass, packet_size: u32, bitrate: f64) -> Self {
        let mut p = TrafficProfile::new(kind, packet_size, packet_size as f64 / bitrate);
        p.bitrate = bitrate;
        p
    }

    pub fn default_for(kind: ServiceClass) -> Self {
        match kind {
            // 64 kbit/s
            ServiceClass::Voice => TrafficProfile::new(kind, 160, 0.02),
            ServiceClass::Video => TrafficProfile::from_rate(kind, 1200, 4e6),
            ServiceClass::Gaming => TrafficProfile::from_rate(kind, 512, 0.5e6),
            ServiceClass::Iot => TrafficProfile::from_rate(kind, 64, 2e3),
            ServiceClass::Data => TrafficProfile::from_rate(kind, 1500, 8e6),
        }
    }

    pub fn with_loss_rate(mut self, loss_rate: f64) -> Self {
        self.loss_rate = loss_rate;
        self
    }

    /// Same packets, sent `factor` times as often.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut p = self.clone();
        p.interval = self.interval / factor;
        p.bitrate = self.bitrate * factor;
        p
    }

    pub fn packets_per_tick(&self) -> u64 {
        // the epsilon absorbs representation error, e.g. 1 / 0.02
        (1.0 / self.interval + 1e-9).floor() as u64
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        let bad = |m: &str| Err(TrafficError::InvalidProfile(m.to_string()));
        if self.packet_size == 0 {
            return bad("packet_size must be positive");
        }
        if !(self.interval.is_finite() && self.interval > 0.0) {
            return bad("interval must be positive");
        }
        let implied = self.packet_size as f64 / self.interval;
        let off = (self.bitrate - implied).abs();
        if off.is_nan() || off > 0.01 * implied {
            return Err(TrafficError::InvalidProfile(format!(
                "bitrate {} disagrees with packet_size/interval = {implied}",
                self.bitrate
            )));
        }
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return bad("loss_rate must lie in [0, 1]");
        }
        if !(self.delay.is_finite() && self.delay >= 0.0) {
            return bad("delay must be non-negative");
        }
        if !(self.jitter_spread.is_finite() && self.jitter_spread >= 0.0) {
            return bad("jitter_spread must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficSample {
    pub ue_id: String,
    pub tick: u64,
    /// Delivered bytes this tick. Equals the pinned rate for pinned UEs.
    pub bytes_sent: f64,
    pub packets: u64,
    pub delay: f64,
    pub jitter: f64,
    pub packet_loss: f64,
}

/// Produces one tick of traffic for an active UE and updates its
/// throughput (unless pinned) and QoS.
pub fn generate<L: Rng + ?Sized, Q: Rng + ?Sized>(
    ue: &mut Ue,
    tick: u64,
    loss_rng: &mut L,
    qos_rng: &mut Q,
) -> TrafficSample {
    let p = &ue.profile;
    let packets = p.packets_per_tick();
    let lost = if packets == 0 || p.loss_rate <= 0.0 {
        0
    } else if p.loss_rate >= 1.0 {
        packets
    } else {
        Binomial::new(packets, p.loss_rate)
            .expect("loss_rate validated to [0, 1]")
            .sample(loss_rng)
    };
    let realized_loss = if packets == 0 {
        0.0
    } else {
        lost as f64 / packets as f64
    };

    let low = p.delay - p.jitter_spread;
    let high = p.delay + p.jitter_spread;
    let delay = if high > low {
        qos_rng.random_range(low..high).max(0.0)
    } else {
        p.delay
    };
    let jitter = ue.last_delay.map_or(0.0, |prev| (delay - prev).abs());
    ue.last_delay = Some(delay);

    let generated = ((packets - lost) * u64::from(p.packet_size)) as f64;
    let (bytes_sent, packets) = if ue.pinned {
        let pinned = ue.current_throughput;
        (pinned, (pinned / f64::from(p.packet_size)).floor() as u64)
    } else {
        ue.current_throughput = generated;
        (generated, packets)
    };
    ue.qos = UeQos {
        delay,
        jitter,
        packet_loss: realized_loss,
    };
    TrafficSample {
        ue_id: ue.id.clone(),
        tick,
        bytes_sent,
        packets,
        delay,
        jitter,
        packet_loss: realized_loss,
    }
}

/// Tick handling for an inactive UE: an unpinned UE stops contributing.
pub fn idle(ue: &mut Ue) {
    if !ue.pinned {
        ue.current_throughput = 0.0;
    }
}

pub fn set_profile(ue: &mut Ue, profile: TrafficProfile) -> Result<(), TrafficError> {
    profile.validate()?;
    ue.service_class = profile.kind;
    ue.profile = profile;
    Ok(())
}

/// Pins the UE's throughput (bytes/s) until traffic is restarted or stopped.
pub fn set_throughput(ue: &mut Ue, value: f64) -> Result<(), TrafficError> {
    if !(value.is_finite() && value >= 0.0) {
        return Err(TrafficError::NegativeThroughput(value));
    }
    ue.current_throughput = value;
    ue.pinned = true;
    Ok(())
}

/// Re-centres the UE's delay distribution.
pub fn set_delay(ue: &mut Ue, value: f64) -> Result<(), TrafficError> {
    if !(value.is_finite() && value >= 0.0) {
        return Err(TrafficError::NegativeDelay(value));
    }
    ue.profile.delay = value;
    ue.qos.delay = value;
    Ok(())
}

pub fn start(ue: &mut Ue) {
    ue.traffic_active = true;
    ue.pinned = false;
}

pub fn stop(ue: &mut Ue) {
    ue.traffic_active = false;
    ue.pinned = false;
    ue.current_throughput = 0.0;
}
