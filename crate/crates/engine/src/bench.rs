//! End-to-end latency benchmark against an in-process simulated device.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use myo_core::io_out::{OutputKind, OutputTarget, SenderStats};
use myo_core::kinematics::Catalog;
use myo_core::session::{train_session, TrainConfig};
use myo_simdev::{scripted_session, Drive, ScriptEntry, Script, ServeOptions, SessionScript, SimServer, Source, SyntheticModel};
use serde::Serialize;

use crate::config::EngineConfig;
use crate::latency::LatencySummary;
use crate::orchestrator::{Command, Engine};

#[derive(Debug, Clone, Serialize)]
pub struct BenchOptions {
    pub duration_s: f64,
    /// Excluded from the rate so the first full buffer does not count.
    pub warmup_s: f64,
    pub movements: Vec<String>,
    pub train_seconds: f64,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            duration_s: 10.0,
            warmup_s: 1.0,
            movements: ["thumb", "index", "middle"].map(String::from).to_vec(),
            train_seconds: 30.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub duration_s: f64,
    pub frames: u64,
    pub windows: u64,
    pub windows_per_s: f64,
    pub seq_gaps: u64,
    pub window_latency: LatencySummary,
    pub ingest_latency: LatencySummary,
    pub prediction_sender: Option<SenderStats>,
    pub train_time_s: f64,
}

/// Trains on a synthetic session, then streams the same synthetic source in
/// real time through a full engine with a null output.
pub fn run(opts: &BenchOptions) -> anyhow::Result<BenchReport> {
    let catalog = Catalog::standard();
    let movements: Vec<&str> = opts.movements.iter().map(String::as_str).collect();
    let model = SyntheticModel::standard(&catalog, opts.seed)?;
    let rec = scripted_session(&model, &catalog, &SessionScript::new(&movements, opts.train_seconds))?;
    let trained = train_session(&rec, &TrainConfig::default())?;
    let train_time_s = trained.total_time.as_secs_f64();

    let script = Script {
        entries: movements
            .iter()
            .map(|m| ScriptEntry {
                movement: (*m).to_owned(),
                repetitions: 2,
            })
            .collect(),
        looped: true,
        ..Script::default()
    };
    let server = SimServer::bind(SocketAddr::from(([127, 0, 0, 1], 0)))?;
    let dev_addr = server.local_addr();
    let dev = server.spawn(
        Source::Synth {
            model,
            drive: Drive::Script(script),
        },
        ServeOptions {
            realtime: true,
            max_frames: None,
        },
    )?;

    let dir = std::env::temp_dir().join(format!("myo-bench-{}", std::process::id()));
    let mut cfg = EngineConfig::default();
    cfg.device.addr = dev_addr.to_string();
    cfg.output = OutputTarget {
        kind: OutputKind::Null,
        addr: None,
        ..OutputTarget::default()
    };
    cfg.guide.targets = Vec::new();
    cfg.data_dir = dir.clone();
    let engine = Engine::start(cfg)?;
    engine.install_model(Arc::new(trained.saved)).map_err(anyhow::Error::from)?;
    engine.command(Command::ConnectDevice { addr: None }).map_err(anyhow::Error::from)?;

    thread::sleep(Duration::from_secs_f64(opts.warmup_s));
    let shared = engine.shared().clone();
    shared.window_latency.reset();
    shared.ingest_latency.reset();
    let w0 = engine.stats().decoded_windows;
    let f0 = engine.stats().frames_received;
    let t0 = Instant::now();
    thread::sleep(Duration::from_secs_f64(opts.duration_s));
    let stats = engine.stats();
    let elapsed = t0.elapsed().as_secs_f64();
    let windows = stats.decoded_windows - w0;

    engine.shutdown();
    dev.stop();
    let _ = std::fs::remove_dir_all(dir);
    Ok(BenchReport {
        duration_s: elapsed,
        frames: stats.frames_received - f0,
        windows,
        windows_per_s: windows as f64 / elapsed,
        seq_gaps: stats.seq_gaps,
        window_latency: stats.window_latency,
        ingest_latency: stats.ingest_latency,
        prediction_sender: stats.prediction_sender,
        train_time_s,
    })
}
