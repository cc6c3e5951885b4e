use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::{Parser, Subcommand};
use myo_core::decoder::{load_model, save_model};
use myo_core::session::{replay_validation, train_session, Phase, SessionRecording, TrainConfig};
use myo::bench::{self, BenchOptions};
use myo::{Command, CommandError, Engine, EngineConfig};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "myo", version, about = "EMG decoding engine")]
struct Cli {
    /// Config file (TOML or JSON); defaults to $MYO_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Amplifier address, overriding the config.
    #[arg(long, global = true)]
    device: Option<String>,
    /// Data directory, overriding the config.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run the engine with the HTTP/WebSocket API.
    Serve {
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
    },
    /// Connect and print state and counters once per second.
    Monitor {
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
    },
    /// Connect and record each movement in turn.
    Record {
        #[arg(long, value_delimiter = ',', required = true)]
        movements: Vec<String>,
        #[arg(long)]
        seconds: Option<f64>,
    },
    /// Train a model from a recorded session.
    Train {
        #[arg(long)]
        recording: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Connect, load a model and run a live validation.
    Validate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        movements: Option<Vec<String>>,
        #[arg(long)]
        reps: Option<u32>,
        #[arg(long)]
        window_s: Option<f64>,
        #[arg(long)]
        conformal: Option<bool>,
    },
    /// Train on a session and report naive and conformal accuracy on a
    /// recording replayed offline.
    ReplayEval {
        #[arg(long)]
        session: PathBuf,
        /// Recording to score; defaults to the held-out rows of `--session`.
        #[arg(long)]
        validation: Option<PathBuf>,
        /// Use this model instead of training one.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Stream a simulated device through the engine and report latencies.
    Bench {
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
    },
    /// Execute a JSON list of API commands in order, waiting for each
    /// recording, training or validation to finish.
    Run {
        #[arg(long)]
        script: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(v) => {
            if !v.is_null() {
                let mut out = std::io::stdout().lock();
                let _ = writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e
                .downcast_ref::<CommandError>()
                .map(|c| c.code.clone())
                .unwrap_or_else(|| "error".into());
            eprintln!("{}", json!({ "error": { "kind": kind, "message": format!("{e:#}") } }));
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<EngineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::from_env()?,
    };
    if let Some(d) = &cli.device {
        cfg.device.addr = d.clone();
    }
    if let Some(d) = &cli.data_dir {
        cfg.data_dir = d.clone();
    }
    Ok(cfg)
}

fn cmd(engine: &Engine, c: Command) -> anyhow::Result<Value> {
    Ok(engine.command(c)?)
}

fn busy(phase: &Phase) -> bool {
    matches!(phase, Phase::Recording { .. } | Phase::Training | Phase::Validating { .. })
}

fn wait_idle(engine: &Engine) -> anyhow::Result<()> {
    if !engine.wait_for(Duration::from_secs(24 * 3600), |s| !busy(&s.phase)) {
        anyhow::bail!("timed out waiting for the engine");
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<Value> {
    let mut cfg = load_config(&cli)?;
    match cli.cmd {
        Cmd::Serve { bind } => {
            if let Some(b) = bind {
                cfg.gateway.bind = b;
            }
            let bind = cfg.gateway.bind;
            let engine = Arc::new(Engine::start(cfg)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(bind)
                    .await
                    .with_context(|| format!("binding {bind}"))?;
                log::info!("api listening on {}", listener.local_addr()?);
                myo::gateway::serve(engine, listener, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
                anyhow::Ok(())
            })?;
            Ok(Value::Null)
        }
        Cmd::Monitor { seconds } => {
            let engine = Engine::start(cfg)?;
            cmd(&engine, Command::ConnectDevice { addr: None })?;
            let end = Instant::now() + Duration::from_secs_f64(seconds);
            while Instant::now() < end {
                std::thread::sleep(Duration::from_secs(1).min(end.saturating_duration_since(Instant::now())));
                println!("{}", json!({ "state": engine.state(), "stats": engine.stats() }));
            }
            Ok(Value::Null)
        }
        Cmd::Record { movements, seconds } => {
            let engine = Engine::start(cfg.clone())?;
            cmd(&engine, Command::ConnectDevice { addr: None })?;
            let mut out = Vec::new();
            for m in movements {
                cmd(
                    &engine,
                    Command::StartRecording {
                        movement: m,
                        duration_s: seconds,
                    },
                )?;
                wait_idle(&engine)?;
                out.push(json!({ "state": engine.state(), "stats": engine.stats() }));
            }
            Ok(json!({ "session": cfg.session_path(), "recordings": out }))
        }
        Cmd::Train {
            recording,
            out,
            rounds,
            depth,
        } => {
            let path = recording.unwrap_or_else(|| cfg.session_path());
            let rec = SessionRecording::load(&path).with_context(|| format!("loading {}", path.display()))?;
            let mut tc = TrainConfig {
                gbdt: cfg.train.gbdt.clone(),
                raps: cfg.train.raps,
                ..TrainConfig::default()
            };
            if let Some(r) = rounds {
                tc.gbdt.n_rounds = r;
            }
            if let Some(d) = depth {
                tc.gbdt.max_depth = d;
            }
            let outcome = train_session(&rec, &tc)?;
            let out = out.unwrap_or_else(|| cfg.model_path());
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            save_model(&out, &outcome.saved)?;
            Ok(json!({
                "model": out,
                "classes": outcome.saved.classes,
                "samples": outcome.dataset.len(),
                "fit_time_s": outcome.fit_time.as_secs_f64(),
                "total_time_s": outcome.total_time.as_secs_f64(),
                "q_hat": outcome.saved.calibration.as_ref().map(|c| c.q_hat),
            }))
        }
        Cmd::Validate {
            model,
            movements,
            reps,
            window_s,
            conformal,
        } => {
            let engine = Engine::start(cfg)?;
            cmd(&engine, Command::LoadModel { path: model })?;
            cmd(&engine, Command::ConnectDevice { addr: None })?;
            cmd(
                &engine,
                Command::StartValidation {
                    movements,
                    reps,
                    window_s,
                    conformal,
                },
            )?;
            wait_idle(&engine)?;
            let report = engine.report().context("validation produced no report")?;
            Ok(serde_json::to_value(report)?)
        }
        Cmd::ReplayEval {
            session,
            validation,
            model,
            rounds,
        } => {
            let rec = SessionRecording::load(&session).with_context(|| format!("loading {}", session.display()))?;
            let mut tc = TrainConfig {
                gbdt: cfg.train.gbdt.clone(),
                raps: cfg.train.raps,
                ..TrainConfig::default()
            };
            if let Some(r) = rounds {
                tc.gbdt.n_rounds = r;
            }
            match (validation, model) {
                (Some(v), model) => {
                    let saved = match model {
                        Some(p) => load_model(&p)?,
                        None => train_session(&rec, &tc)?.saved,
                    };
                    let vrec = SessionRecording::load(&v).with_context(|| format!("loading {}", v.display()))?;
                    let saved = Arc::new(saved);
                    let naive = replay_validation(&vrec, saved.clone(), false)?;
                    let conformal = replay_validation(&vrec, saved, true)?;
                    Ok(json!({ "naive": naive, "conformal": conformal }))
                }
                (None, Some(_)) => anyhow::bail!("--model needs --validation: held-out rows exist only for a fresh training"),
                (None, None) => {
                    let out = train_session(&rec, &tc)?;
                    let test = out.dataset.split.test.clone();
                    let naive = myo_core::session::evaluate_rows(&out.dataset, test.clone(), &out.saved, false)?;
                    let conformal = myo_core::session::evaluate_rows(&out.dataset, test, &out.saved, true)?;
                    Ok(json!({ "naive": naive, "conformal": conformal }))
                }
            }
        }
        Cmd::Bench { seconds } => {
            let report = bench::run(&BenchOptions {
                duration_s: seconds,
                ..BenchOptions::default()
            })?;
            Ok(serde_json::to_value(report)?)
        }
        Cmd::Run { script } => {
            let text = std::fs::read_to_string(&script).with_context(|| format!("reading {}", script.display()))?;
            let commands: Vec<Command> = serde_json::from_str(&text)?;
            let engine = Engine::start(cfg)?;
            let mut replies = Vec::new();
            for c in commands {
                let r = cmd(&engine, c)?;
                wait_idle(&engine)?;
                replies.push(r);
            }
            Ok(json!({ "replies": replies, "state": engine.state(), "report": engine.report() }))
        }
    }
}
