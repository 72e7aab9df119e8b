//! Runs an [`Engine`] on its own thread for interactive use.
//!
//! Readers get immutable [`Snapshot`]s published at tick boundaries and a
//! sequence-numbered event feed; writers go through the command queue. In
//! [`Pacing::Manual`] the engine only ticks when asked, which keeps scripted
//! sessions reproducible; [`Pacing::Realtime`] ticks on a wall clock.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::engine::{
    Ack, AppliedCommand, CommandError, CommandKind, CommandQueue, Engine, Origin, SharedMetrics,
    Snapshot, TickOutcome,
};
use crate::handover::HandoverEvent;
use crate::loadmetrics::LoadReport;

const HUB_CAPACITY: usize = 10_000;
const APPLIED_CAPACITY: usize = 10_000;
const IDLE_POLL: Duration = Duration::from_millis(20);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pacing {
    /// Ticks only on [`SimHandle::advance`] or a queued step.
    Manual,
    /// `speed` simulated seconds per wall-clock second.
    Realtime { speed: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamPayload {
    Handover(HandoverEvent),
    Command(AppliedCommand),
    Loads(LoadReport),
}

impl StreamPayload {
    pub fn name(&self) -> &'static str {
        match self {
            StreamPayload::Handover(_) => "handover",
            StreamPayload::Command(_) => "command",
            StreamPayload::Loads(_) => "loads",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreamEvent {
    /// Starts at 1 and increases by one per event.
    pub seq: u64,
    pub payload: StreamPayload,
}

#[derive(Debug, Default)]
struct HubState {
    events: VecDeque<StreamEvent>,
    last_seq: u64,
}

/// Bounded, replayable event log.
#[derive(Debug, Default)]
pub struct EventHub {
    state: Mutex<HubState>,
    cond: Condvar,
}

impl EventHub {
    fn lock(&self) -> MutexGuard<'_, HubState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn publish(&self, payload: StreamPayload) -> u64 {
        let mut st = self.lock();
        st.last_seq += 1;
        let seq = st.last_seq;
        if st.events.len() == HUB_CAPACITY {
            st.events.pop_front();
        }
        st.events.push_back(StreamEvent { seq, payload });
        self.cond.notify_all();
        seq
    }

    pub fn last_seq(&self) -> u64 {
        self.lock().last_seq
    }

    /// Events with a sequence number above `seq`, oldest first.
    pub fn since(&self, seq: u64) -> Vec<StreamEvent> {
        self.lock().events.iter().filter(|e| e.seq > seq).cloned().collect()
    }

    /// Like [`since`](Self::since) but blocks up to `timeout` for the first
    /// new event.
    pub fn wait_since(&self, seq: u64, timeout: Duration) -> Vec<StreamEvent> {
        let st = self.lock();
        let (st, _) = self
            .cond
            .wait_timeout_while(st, timeout, |s| s.last_seq <= seq)
            .unwrap_or_else(|e| e.into_inner());
        st.events.iter().filter(|e| e.seq > seq).cloned().collect()
    }
}

#[derive(Debug, Default)]
struct Control {
    advance: u64,
    ticks_done: u64,
    shutdown: bool,
}

#[derive(Default)]
struct Shared {
    control: Mutex<Control>,
    control_cond: Condvar,
    applied: Mutex<BTreeMap<u64, AppliedCommand>>,
    applied_cond: Condvar,
}

impl Shared {
    fn control(&self) -> MutexGuard<'_, Control> {
        self.control.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn applied(&self) -> MutexGuard<'_, BTreeMap<u64, AppliedCommand>> {
        self.applied.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Cloneable handle to a running engine.
#[derive(Clone)]
pub struct SimHandle {
    queue: CommandQueue,
    snapshot: Arc<RwLock<Arc<Snapshot>>>,
    metrics: SharedMetrics,
    hub: Arc<EventHub>,
    shared: Arc<Shared>,
    thread: Arc<Mutex<Option<JoinHandle<Engine>>>>,
    pacing: Pacing,
}

impl SimHandle {
    pub fn spawn(engine: Engine, pacing: Pacing) -> SimHandle {
        engine.sync_queue();
        let handle = SimHandle {
            queue: engine.queue().clone(),
            snapshot: Arc::new(RwLock::new(Arc::new(engine.snapshot()))),
            metrics: engine.shared_metrics(),
            hub: Arc::new(EventHub::default()),
            shared: Arc::new(Shared {
                control: Mutex::new(Control {
                    ticks_done: engine.clock().tick(),
                    ..Control::default()
                }),
                ..Shared::default()
            }),
            thread: Arc::new(Mutex::new(None)),
            pacing,
        };
        let runner = Runner {
            engine,
            handle: handle.clone(),
        };
        let join = std::thread::Builder::new()
            .name("ransim-engine".into())
            .spawn(move || runner.run())
            .expect("spawn engine thread");
        *handle.thread.lock().unwrap_or_else(|e| e.into_inner()) = Some(join);
        handle
    }

    pub fn pacing(&self) -> Pacing {
        self.pacing
    }

    pub fn queue(&self) -> &CommandQueue {
        &self.queue
    }

    pub fn submit(&self, origin: Origin, kind: CommandKind) -> Result<Ack, CommandError> {
        let ack = self.queue.submit(origin, kind)?;
        // wake a paused or manual runner so control commands apply promptly
        self.shared.control_cond.notify_all();
        Ok(ack)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.snapshot.read().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn metrics(&self) -> SharedMetrics {
        Arc::clone(&self.metrics)
    }

    pub fn hub(&self) -> Arc<EventHub> {
        Arc::clone(&self.hub)
    }

    /// Runs `n` ticks and waits for them. Returns the ticks completed.
    pub fn advance(&self, n: u64) -> u64 {
        let mut c = self.shared.control();
        let target = c.ticks_done + c.advance + n;
        c.advance += n;
        self.shared.control_cond.notify_all();
        let c = self
            .shared
            .control_cond
            .wait_while(c, |c| c.ticks_done < target && !c.shutdown)
            .unwrap_or_else(|e| e.into_inner());
        c.ticks_done
    }

    /// Waits until at least `ticks` ticks have completed.
    pub fn wait_ticks(&self, ticks: u64, timeout: Duration) -> bool {
        let c = self.shared.control();
        let (c, _) = self
            .shared
            .control_cond
            .wait_timeout_while(c, timeout, |c| c.ticks_done < ticks && !c.shutdown)
            .unwrap_or_else(|e| e.into_inner());
        c.ticks_done >= ticks
    }

    /// The result of command `seq`, once applied.
    pub fn wait_applied(&self, seq: u64, timeout: Duration) -> Option<AppliedCommand> {
        let m = self.shared.applied();
        let (m, _) = self
            .shared
            .applied_cond
            .wait_timeout_while(m, timeout, |m| !m.contains_key(&seq))
            .unwrap_or_else(|e| e.into_inner());
        m.get(&seq).cloned()
    }

    /// Stops the engine thread and returns the engine. Only the first
    /// caller gets it.
    pub fn shutdown(&self) -> Option<Engine> {
        self.shared.control().shutdown = true;
        self.shared.control_cond.notify_all();
        let join = self.thread.lock().unwrap_or_else(|e| e.into_inner()).take()?;
        join.join().ok()
    }
}

struct Runner {
    engine: Engine,
    handle: SimHandle,
}

impl Runner {
    fn run(mut self) -> Engine {
        let interval = match self.handle.pacing {
            Pacing::Realtime { speed } if speed > 0.0 && speed.is_finite() => {
                Some(Duration::from_secs_f64(1.0 / speed))
            }
            Pacing::Realtime { .. } => Some(Duration::ZERO),
            Pacing::Manual => None,
        };
        let mut deadline = Instant::now();
        loop {
            let control = self.engine.apply_control();
            if !control.is_empty() {
                self.publish_snapshot();
                self.publish_applied(&control);
            }

            let shared = Arc::clone(&self.handle.shared);
            let mut c = shared.control();
            if c.shutdown {
                break;
            }
            let due = if c.advance > 0 {
                c.advance -= 1;
                true
            } else if self.engine.take_step() {
                true
            } else if let (Some(iv), false) = (interval, self.engine.is_paused()) {
                let now = Instant::now();
                if now >= deadline {
                    deadline = deadline.max(now - iv) + iv;
                    true
                } else {
                    let wait = (deadline - now).min(IDLE_POLL);
                    drop(shared.control_cond.wait_timeout(c, wait));
                    continue;
                }
            } else {
                drop(shared.control_cond.wait_timeout(c, IDLE_POLL));
                continue;
            };
            drop(c);
            if due {
                let out = self.engine.tick();
                self.publish_tick(&out);
                let mut c = shared.control();
                c.ticks_done += 1;
                shared.control_cond.notify_all();
            }
        }
        self.engine
    }

    fn publish_applied(&self, applied: &[AppliedCommand]) {
        let hub = &self.handle.hub;
        {
            let mut m = self.handle.shared.applied();
            for a in applied {
                m.insert(a.seq, a.clone());
            }
            while m.len() > APPLIED_CAPACITY {
                m.pop_first();
            }
        }
        self.handle.shared.applied_cond.notify_all();
        for a in applied {
            hub.publish(StreamPayload::Command(a.clone()));
        }
    }

    fn publish_snapshot(&self) {
        let snap = Arc::new(self.engine.snapshot());
        *self.handle.snapshot.write().unwrap_or_else(|e| e.into_inner()) = snap;
    }

    fn publish_tick(&self, out: &TickOutcome) {
        // snapshot first so readers woken by the feed see this tick
        self.publish_snapshot();
        self.publish_applied(&out.applied);
        for ev in &out.handovers {
            self.handle.hub.publish(StreamPayload::Handover(ev.clone()));
        }
        self.handle.hub.publish(StreamPayload::Loads(out.report.clone()));
    }
}
