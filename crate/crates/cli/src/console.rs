//! Line-oriented command handler.
//!
//! Each input line is one verb plus positional arguments. Mutating verbs
//! become engine commands with console origin; read verbs look at the
//! latest snapshot. With [`Pacing::Manual`] every mutation advances the
//! simulation by exactly one tick before its result is printed, so a piped
//! script always produces the same output for the same seed.

use std::io::{self, BufRead, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use ransim_core::engine::{AppliedCommand, CommandResult};
use ransim_core::live::{Pacing, SimHandle};
use ransim_core::presets;
use ransim_core::{CommandKind, Origin, RampMode, Scenario, ServiceClass};

const APPLY_TIMEOUT: Duration = Duration::from_secs(30);
const DEFAULT_LOG_LINES: usize = 10;

/// Verb, argument synopsis, description. Menu numbers follow this order.
const VERBS: &[(&str, &str, &str)] = &[
    ("add_ue", "<class> [sector] [id]", "add a UE (voice, video, gaming, iot, data)"),
    ("del_ue", "<id>", "remove a UE"),
    ("start_ue_traffic", "<id>", "resume generated traffic"),
    ("stop_ue_traffic", "<id>", "silence a UE"),
    ("set_throughput", "<id> <bytes/s>", "pin a UE's throughput"),
    ("set_delay", "<id> <seconds>", "set a UE's base delay"),
    ("ue_log", "<id> [n]", "recent traffic samples and QoS"),
    ("loads", "[id]", "network, gNB and cell loads, or one entity"),
    ("handover_stats", "", "attempts, successes, HSR/HFR"),
    ("run_scenario", "<rush_hour [additive] [sector] | file.json>", "schedule a scenario"),
    ("pause", "", "stop the clock"),
    ("resume", "", "restart the clock"),
    ("step", "[n]", "run n ticks (default 1)"),
    ("export", "<path>", "write line-protocol metrics"),
    ("help", "", "show this list"),
    ("quit", "", "leave the console"),
];

pub struct Console {
    sim: SimHandle,
    interactive: bool,
}

enum Flow {
    Continue,
    Quit,
}

type Reply = Result<String, String>;

impl Console {
    pub fn new(sim: SimHandle, interactive: bool) -> Self {
        Console { sim, interactive }
    }

    fn manual(&self) -> bool {
        self.sim.pacing() == Pacing::Manual
    }

    /// Runs until `quit` or end of input.
    pub fn run<R: BufRead, W: Write>(&mut self, input: R, mut out: W) -> io::Result<()> {
        if self.interactive {
            write_menu(&mut out)?;
        }
        let mut lines = input.lines();
        loop {
            if self.interactive {
                write!(out, "> ")?;
                out.flush()?;
            }
            let Some(line) = lines.next() else { break };
            let line = line?;
            let words: Vec<&str> = line.split_whitespace().collect();
            if words.is_empty() || words[0].starts_with('#') {
                continue;
            }
            let verb = menu_verb(words[0]).unwrap_or(words[0]);
            let (reply, flow) = self.dispatch(verb, &words[1..], &mut out)?;
            match reply {
                Ok(text) if !text.is_empty() => writeln!(out, "{text}")?,
                Ok(_) => {}
                Err(e) => writeln!(out, "error: {e}")?,
            }
            out.flush()?;
            if let Flow::Quit = flow {
                break;
            }
        }
        Ok(())
    }

    fn dispatch<W: Write>(&mut self, verb: &str, args: &[&str], out: &mut W) -> io::Result<(Reply, Flow)> {
        let reply = match verb {
            "add_ue" => self.add_ue(args),
            "del_ue" => one_id(args, "del_ue").and_then(|id| self.mutate(CommandKind::DelUe { ue_id: id })),
            "start_ue_traffic" => one_id(args, verb)
                .and_then(|id| self.mutate(CommandKind::StartUeTraffic { ue_id: id })),
            "stop_ue_traffic" => one_id(args, verb)
                .and_then(|id| self.mutate(CommandKind::StopUeTraffic { ue_id: id })),
            "set_throughput" => id_and_number(args, verb)
                .and_then(|(id, v)| self.mutate(CommandKind::SetUeThroughput { ue_id: id, throughput: v })),
            "set_delay" => id_and_number(args, verb)
                .and_then(|(id, v)| self.mutate(CommandKind::SetUeDelay { ue_id: id, delay: v })),
            "ue_log" => self.ue_log(args),
            "loads" => self.loads(args),
            "handover_stats" => Ok(self.handover_stats()),
            "run_scenario" => self.run_scenario(args),
            "pause" => self.control(CommandKind::Pause),
            "resume" => self.control(CommandKind::Resume),
            "step" => self.step(args),
            "export" => self.export(args),
            "help" | "menu" => {
                write_menu(out)?;
                Ok(String::new())
            }
            "quit" | "exit" => return Ok((Ok("bye".into()), Flow::Quit)),
            other => Err(format!("unknown command {other:?}; type help for the list")),
        };
        Ok((reply, Flow::Continue))
    }

    /// Submits a network mutation and reports how it applied.
    fn mutate(&self, kind: CommandKind) -> Reply {
        let ack = self.sim.submit(Origin::Console, kind).map_err(|e| e.to_string())?;
        if self.manual() {
            self.sim.advance(1);
        } else if self.sim.snapshot().paused {
            return Ok(format!("queued as #{} for tick {} (paused)", ack.seq, ack.apply_tick));
        }
        let applied = self
            .sim
            .wait_applied(ack.seq, APPLY_TIMEOUT)
            .ok_or_else(|| format!("command #{} not applied yet", ack.seq))?;
        describe(&applied)
    }

    /// Pause/resume/step act on the run loop and apply without a tick.
    fn control(&self, kind: CommandKind) -> Reply {
        let ack = self.sim.submit(Origin::Console, kind).map_err(|e| e.to_string())?;
        let applied = self
            .sim
            .wait_applied(ack.seq, APPLY_TIMEOUT)
            .ok_or_else(|| format!("command #{} not applied yet", ack.seq))?;
        describe(&applied)
    }

    fn add_ue(&self, args: &[&str]) -> Reply {
        let [class, rest @ ..] = args else {
            return Err(usage("add_ue"));
        };
        if rest.len() > 2 {
            return Err(usage("add_ue"));
        }
        let class = ServiceClass::from_str(class).map_err(|e| e.to_string())?;
        let sector_id = rest.first().map(|s| s.to_string());
        let ue_id = match rest.get(1) {
            Some(id) => id.to_string(),
            None => self.sim.queue().fresh_ue_id(),
        };
        let applied_msg = self.mutate(CommandKind::AddUe {
            ue_id: Some(ue_id.clone()),
            service_class: class,
            profile: None,
            sector_id,
        })?;
        match self.sim.snapshot().network.ue(&ue_id).ok().and_then(|u| u.sector_id().map(str::to_string)) {
            Some(sector) => Ok(format!("{applied_msg}\nue {ue_id} attached to sector {sector}")),
            None => Ok(applied_msg),
        }
    }

    fn ue_log(&self, args: &[&str]) -> Reply {
        let (id, n) = match args {
            [id] => (*id, DEFAULT_LOG_LINES),
            [id, n] => (*id, n.parse().map_err(|_| usage("ue_log"))?),
            _ => return Err(usage("ue_log")),
        };
        let snap = self.sim.snapshot();
        let ue = snap.network.ue(id).map_err(|e| e.to_string())?;
        let samples = snap.ue_logs.get(id).map(Vec::as_slice).unwrap_or_default();
        let mut s = format!(
            "ue {id} class {} sector {} traffic {}",
            ue.service_class,
            ue.sector_id().unwrap_or("-"),
            if ue.traffic_active { "on" } else { "off" }
        );
        if samples.is_empty() {
            s.push_str(&format!("\nno traffic samples for {id}"));
            return Ok(s);
        }
        s.push_str("\n tick        bytes  packets   delay_ms  jitter_ms  loss");
        for t in &samples[samples.len().saturating_sub(n)..] {
            s.push_str(&format!(
                "\n{:>5} {:>12.0} {:>8} {:>10.3} {:>10.3} {:>5.3}",
                t.tick,
                t.bytes_sent,
                t.packets,
                t.delay * 1e3,
                t.jitter * 1e3,
                t.packet_loss
            ));
        }
        Ok(s)
    }

    fn loads(&self, args: &[&str]) -> Reply {
        let snap = self.sim.snapshot();
        let report = snap.report.as_ref().ok_or("no tick has run yet")?;
        match args {
            [] => {
                let mut s = format!("tick {} network load {:.2}", report.tick, report.network_load);
                for (g, l) in &report.per_gnb {
                    s.push_str(&format!("\n  gnb {g} {l:.2}"));
                    let gnb = snap.network.gnb(g).map_err(|e| e.to_string())?;
                    for c in gnb.cell_ids() {
                        s.push_str(&format!("\n    cell {c} {:.2}", report.per_cell[c]));
                    }
                }
                Ok(s)
            }
            [id] => {
                let (kind, value) = if let Some(v) = report.per_sector.get(*id) {
                    ("sector", v)
                } else if let Some(v) = report.per_cell.get(*id) {
                    ("cell", v)
                } else if let Some(v) = report.per_gnb.get(*id) {
                    ("gnb", v)
                } else {
                    return Err(format!("no sector, cell or gNB named {id:?}"));
                };
                Ok(format!("tick {} {kind} {id} load {value:.2}", report.tick))
            }
            _ => Err(usage("loads")),
        }
    }

    fn handover_stats(&self) -> String {
        let st = &self.sim.snapshot().stats;
        let rate = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        format!(
            "attempts {} successes {} failures {} hsr {} hfr {}",
            st.attempts,
            st.successes,
            st.failures,
            rate(st.hsr),
            rate(st.hfr)
        )
    }

    fn run_scenario(&self, args: &[&str]) -> Reply {
        let [name, rest @ ..] = args else {
            return Err(usage("run_scenario"));
        };
        let scenario = if *name == ransim_core::engine::RUSH_HOUR {
            let mut mode = RampMode::Multiplicative;
            let mut sector = presets::RUSH_HOUR_SECTOR.to_string();
            for a in rest {
                match *a {
                    "additive" => mode = RampMode::Additive,
                    "multiplicative" => mode = RampMode::Multiplicative,
                    s => sector = s.to_string(),
                }
            }
            Scenario::rush_hour(&sector, 0, presets::RUSH_HOUR_DURATION, mode)
        } else {
            let text = std::fs::read_to_string(name).map_err(|e| format!("{name}: {e}"))?;
            Scenario::from_json(&text).map_err(|e| e.to_string())?
        };
        self.mutate(CommandKind::RunScenario { scenario })
    }

    fn step(&self, args: &[&str]) -> Reply {
        let n = match args {
            [] => 1,
            [n] => n.parse().map_err(|_| usage("step"))?,
            _ => return Err(usage("step")),
        };
        let ack = self
            .sim
            .submit(Origin::Console, CommandKind::StepN { n })
            .map_err(|e| e.to_string())?;
        let applied = self
            .sim
            .wait_applied(ack.seq, APPLY_TIMEOUT)
            .ok_or("step request not applied")?;
        if !self.sim.wait_ticks(applied.tick + n, APPLY_TIMEOUT) {
            return Err("timed out waiting for ticks".into());
        }
        let snap = self.sim.snapshot();
        let report = snap.report.as_ref().ok_or("no tick has run yet")?;
        Ok(format!("tick {} network load {:.2}", report.tick, report.network_load))
    }

    fn export(&self, args: &[&str]) -> Reply {
        let [path] = args else {
            return Err(usage("export"));
        };
        let n = export_metrics(&self.sim, Path::new(path)).map_err(|e| format!("{path}: {e}"))?;
        Ok(format!("wrote {n} lines to {path}"))
    }
}

/// Writes the full line-protocol export; returns the line count.
pub fn export_metrics(sim: &SimHandle, path: &Path) -> io::Result<usize> {
    let text = sim
        .metrics()
        .read()
        .unwrap_or_else(|e| e.into_inner())
        .export_line_protocol(..);
    std::fs::write(path, &text)?;
    Ok(text.lines().count())
}

fn describe(a: &AppliedCommand) -> Reply {
    match &a.result {
        CommandResult::Ok(m) => Ok(format!("tick {}: {m}", a.tick)),
        CommandResult::Err(m) => Err(format!("tick {}: {m}", a.tick)),
    }
}

fn usage(verb: &str) -> String {
    let (_, args, _) = VERBS.iter().find(|(v, _, _)| *v == verb).expect("known verb");
    format!("usage: {verb} {args}")
}

fn one_id(args: &[&str], verb: &str) -> Result<String, String> {
    match args {
        [id] => Ok(id.to_string()),
        _ => Err(usage(verb)),
    }
}

fn id_and_number(args: &[&str], verb: &str) -> Result<(String, f64), String> {
    match args {
        [id, v] => Ok((id.to_string(), v.parse().map_err(|_| usage(verb))?)),
        _ => Err(usage(verb)),
    }
}

fn menu_verb(word: &str) -> Option<&'static str> {
    let n: usize = word.parse().ok()?;
    VERBS.get(n.checked_sub(1)?).map(|(v, _, _)| *v)
}

fn write_menu<W: Write>(out: &mut W) -> io::Result<()> {
    for (i, (verb, args, help)) in VERBS.iter().enumerate() {
        writeln!(out, "{:>2}) {verb} {args:<12} {help}", i + 1)?;
    }
    writeln!(out, "Type a verb or its number followed by arguments.")
}
