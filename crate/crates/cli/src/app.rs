//! Command-line entry point: batch runs, the console and the HTTP gateway.

use std::io::{self, IsTerminal};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Parser;

use ransim_core::live::{Pacing, SimHandle};
use ransim_core::presets;
use ransim_core::topology::load_config_files;
use ransim_core::{Engine, NetworkConfig, RampMode, Scenario};

use crate::console::Console;

pub const DEFAULT_SEED: u64 = 42;
/// Batch length when neither --ticks nor a scenario says otherwise.
pub const DEFAULT_TICKS: u64 = 300;

#[derive(Debug, Parser)]
#[command(name = "ransim", version, about = "Deterministic RAN load-balancing and handover simulator")]
pub struct Args {
    /// Network configuration (JSON). Repeat to merge documents; later
    /// files override top-level keys. Defaults to the built-in 3-gNB grid.
    #[arg(long, value_name = "PATH")]
    pub config: Vec<PathBuf>,

    /// Scenario file, or `rush_hour` for the built-in ramp.
    #[arg(long, value_name = "PATH|rush_hour")]
    pub scenario: Option<String>,

    /// Use the additive reading of the rush-hour ramp.
    #[arg(long)]
    pub additive_ramp: bool,

    /// Run seed; overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Ticks to run. Batch runs default to the scenario duration.
    #[arg(long)]
    pub ticks: Option<u64>,

    /// Serve the HTTP gateway on this address (port overridable through
    /// RANSIM_API_PORT).
    #[arg(long, value_name = "ADDR", num_args = 0..=1, default_missing_value = ransim_gateway::DEFAULT_BIND)]
    pub api_bind: Option<SocketAddr>,

    /// No console. Without --api-bind this is a batch run.
    #[arg(long)]
    pub headless: bool,

    /// Write line-protocol metrics here when the run ends.
    #[arg(long, value_name = "PATH")]
    pub export: Option<PathBuf>,

    /// Write the run record (JSON) here when the run ends.
    #[arg(long, value_name = "PATH")]
    pub record: Option<PathBuf>,

    /// Simulated seconds per wall-clock second when ticking in real time.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
}

pub fn load_network(args: &Args) -> Result<NetworkConfig> {
    let mut cfg = if args.config.is_empty() {
        presets::hex_three_gnb(args.seed.unwrap_or(DEFAULT_SEED))
    } else {
        load_config_files(&args.config).context("loading configuration")?
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

pub fn load_scenario(args: &Args) -> Result<Option<Scenario>> {
    let mode = if args.additive_ramp {
        RampMode::Additive
    } else {
        RampMode::Multiplicative
    };
    match args.scenario.as_deref() {
        None => Ok(None),
        Some(ransim_core::engine::RUSH_HOUR) => Ok(Some(presets::rush_hour(mode))),
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading scenario {path}"))?;
            Ok(Some(Scenario::from_json(&text).with_context(|| format!("scenario {path}"))?))
        }
    }
}

pub fn run(args: Args) -> Result<()> {
    let cfg = load_network(&args)?;
    let scenario = load_scenario(&args)?;
    let mut engine = Engine::new(cfg).context("building the network")?;
    if !engine.unplaced().is_empty() {
        eprintln!("warning: {} UEs did not fit and stay unattached", engine.unplaced().len());
    }
    if let Some(s) = &scenario {
        engine.schedule(s, 0);
    }
    let name = scenario.as_ref().map_or("interactive", |s| s.name.as_str()).to_string();

    if args.headless && args.api_bind.is_none() {
        let ticks = args
            .ticks
            .or(scenario.as_ref().map(|s| s.duration))
            .unwrap_or(DEFAULT_TICKS);
        engine.run_ticks(ticks);
        print_summary(&engine, &name);
        return finish(&engine, &name, &args);
    }

    if !(args.speed > 0.0 && args.speed.is_finite()) {
        bail!("--speed must be positive");
    }
    let pacing = if args.api_bind.is_some() {
        Pacing::Realtime { speed: args.speed }
    } else {
        Pacing::Manual
    };
    let sim = SimHandle::spawn(engine, pacing);
    let stop = Arc::new(AtomicBool::new(false));
    let server = match args.api_bind {
        Some(addr) => Some(start_gateway(sim.clone(), addr, Arc::clone(&stop))?),
        None => None,
    };

    if args.headless {
        wait_headless(&sim, args.ticks, &stop);
    } else {
        let stdin = io::stdin();
        let interactive = stdin.is_terminal();
        Console::new(sim.clone(), interactive)
            .run(stdin.lock(), io::stdout().lock())
            .context("console i/o")?;
    }

    stop.store(true, Ordering::SeqCst);
    if let Some(server) = server {
        if let Ok(Err(e)) = server.join() {
            log::error!("gateway: {e}");
        }
    }
    let engine = sim.shutdown().context("engine thread panicked")?;
    if args.headless {
        print_summary(&engine, &name);
    }
    finish(&engine, &name, &args)
}

fn start_gateway(
    sim: SimHandle,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
) -> Result<std::thread::JoinHandle<Result<(), ransim_gateway::GatewayError>>> {
    let addr = ransim_gateway::resolve_bind(addr)?;
    let listener = std::net::TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    eprintln!("gateway listening on http://{}", listener.local_addr()?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting the async runtime")?;
    Ok(std::thread::spawn(move || {
        runtime.block_on(async move {
            let shutdown = async move {
                while !stop.load(Ordering::SeqCst) {
                    tokio::time::sleep(Duration::from_millis(100)).await;
                }
            };
            ransim_gateway::serve_std(sim, listener, shutdown).await
        })
    }))
}

/// Blocks until `ticks` have run (if given) or the process is interrupted.
fn wait_headless(sim: &SimHandle, ticks: Option<u64>, stop: &Arc<AtomicBool>) {
    let interrupted = Arc::new(AtomicBool::new(false));
    {
        let interrupted = Arc::clone(&interrupted);
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build();
            if let Ok(rt) = rt {
                if rt.block_on(tokio::signal::ctrl_c()).is_ok() {
                    interrupted.store(true, Ordering::SeqCst);
                }
            }
        });
    }
    loop {
        if interrupted.load(Ordering::SeqCst) || stop.load(Ordering::SeqCst) {
            break;
        }
        if let Some(n) = ticks {
            if sim.wait_ticks(n, Duration::from_millis(100)) {
                break;
            }
        } else {
            std::thread::sleep(Duration::from_millis(100));
        }
    }
}

fn print_summary(engine: &Engine, name: &str) {
    let st = engine.stats();
    println!("ran {} ticks (seed {}, scenario {name})", engine.clock().tick(), engine.seed());
    let hsr = st.hsr.map_or("n/a".into(), |v| format!("{v:.3}"));
    println!("handovers: {} attempts, {} successes, hsr {hsr}", st.attempts, st.successes);
    if let Some(r) = engine.last_report() {
        println!("network load at tick {}: {:.2}", r.tick, r.network_load);
    }
}

fn finish(engine: &Engine, name: &str, args: &Args) -> Result<()> {
    if let Some(path) = &args.export {
        let text = engine.metrics().export_line_protocol(..);
        write(path, &text)?;
        eprintln!("exported {} lines to {}", text.lines().count(), path.display());
    }
    if let Some(path) = &args.record {
        write(path, &engine.record(name).to_json())?;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

