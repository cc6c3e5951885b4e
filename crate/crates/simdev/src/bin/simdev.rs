use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use myo_core::kinematics::Catalog;
use myo_core::session::SessionRecording;
use myo_simdev::{
    scripted_session, Drive, GuideFollower, ServeOptions, SessionScript, SimServer, Source, SyntheticModel,
};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Synth,
    Replay,
}

/// Simulated 32-channel EMG amplifier.
#[derive(Debug, Parser)]
#[command(name = "simdev", version)]
struct Args {
    #[arg(long, default_value_t = 5566)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, value_enum, default_value_t = Mode::Synth)]
    mode: Mode,
    /// Movement script (JSON) driving the synthetic participant.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Session file to replay.
    #[arg(long)]
    recording: Option<PathBuf>,
    /// Pace frames at the amplifier rate instead of as fast as possible.
    #[arg(long)]
    realtime: bool,
    /// Imitate guide-hand datagrams received on this UDP port.
    #[arg(long)]
    follow_port: Option<u16>,
    /// Movement catalog (JSON); defaults to the built-in nine movements.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, default_value_t = myo_simdev::model::DEFAULT_SNR)]
    snr: f64,
    #[arg(long, default_value_t = myo_simdev::model::DEFAULT_NOISE_FLOOR)]
    noise_floor: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Lift the electrodes of channels 1 and 17 off the skin.
    #[arg(long)]
    no_contact: bool,
    /// Close each connection after this many frames.
    #[arg(long)]
    frames: Option<u64>,
    /// Write a synthetic session with these movements (comma separated) and exit.
    #[arg(long, value_delimiter = ',', requires = "out")]
    generate: Vec<String>,
    #[arg(long, default_value_t = 30.0)]
    seconds: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let catalog = match &args.catalog {
        Some(p) => Catalog::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Catalog::standard(),
    };
    let mut model = SyntheticModel::standard(&catalog, args.seed)?
        .with_snr(args.snr)
        .with_noise_floor(args.noise_floor);
    model.no_contact = [args.no_contact; 2];

    if let Some(out) = &args.out {
        let movements: Vec<&str> = args.generate.iter().map(String::as_str).collect();
        let rec = scripted_session(&model, &catalog, &SessionScript::new(&movements, args.seconds))?;
        rec.save(out)?;
        println!("{}", serde_json::json!({"written": out, "frames": rec.frame_count()}));
        return Ok(());
    }

    let mut _follower = None;
    let source = match args.mode {
        Mode::Replay => {
            let Some(path) = &args.recording else {
                bail!("--mode replay needs --recording");
            };
            Source::replay(&SessionRecording::load(path).with_context(|| format!("loading {}", path.display()))?)
        }
        Mode::Synth => {
            let drive = match (&args.script, args.follow_port) {
                (Some(p), _) => Drive::Script(myo_simdev::Script::load(p)?),
                (None, Some(port)) => {
                    let f = GuideFollower::bind(SocketAddr::new(args.host, port), catalog.clone())?;
                    log::info!("following guide datagrams on {}", f.local_addr());
                    let d = Drive::Shared(f.source());
                    _follower = Some(f);
                    d
                }
                (None, None) => Drive::Rest,
            };
            Source::Synth { model, drive }
        }
    };
    let server = SimServer::bind(SocketAddr::new(args.host, args.port))?;
    log::info!("serving on {}", server.local_addr());
    let handle = server.spawn(
        source,
        ServeOptions {
            realtime: args.realtime,
            max_frames: args.frames,
        },
    )?;
    handle.join();
    Ok(())
}
