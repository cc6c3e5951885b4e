#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use myo::{Engine, EngineConfig};
use myo_core::io_out::{OutputKind, OutputTarget};
use myo_core::kinematics::{Catalog, GuideTiming};
use myo_simdev::{Drive, GuideFollower, ServeOptions, ServerHandle, SimServer, Source, SyntheticModel};
use tempfile::TempDir;

pub fn localhost() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

/// Simulated participant following the guide, a realtime device and an
/// engine wired to both.
pub struct Rig {
    pub engine: Arc<Engine>,
    pub device: Option<ServerHandle>,
    pub follower: GuideFollower,
    pub dir: TempDir,
}

pub fn config(device: SocketAddr, guide: SocketAddr, dir: &TempDir) -> EngineConfig {
    let mut cfg = EngineConfig::default();
    cfg.device.addr = device.to_string();
    cfg.guide.targets = vec![guide];
    cfg.output = OutputTarget {
        kind: OutputKind::Null,
        addr: None,
        ..OutputTarget::default()
    };
    cfg.recording.duration_s = 6.0;
    cfg.recording.timing = GuideTiming::new(0.5, 0.75).unwrap();
    cfg.train.gbdt.n_rounds = 150;
    cfg.data_dir = dir.path().to_path_buf();
    cfg
}

pub fn rig_with(tweak: impl FnOnce(&mut EngineConfig)) -> Rig {
    rig_with_model(SyntheticModel::standard(&Catalog::standard(), 3).unwrap(), tweak)
}

pub fn rig_with_model(model: SyntheticModel, tweak: impl FnOnce(&mut EngineConfig)) -> Rig {
    let catalog = Catalog::standard();
    let follower = GuideFollower::bind(localhost(), catalog.clone()).unwrap();
    let server = SimServer::bind(localhost()).unwrap();
    let dev_addr = server.local_addr();
    let device = server
        .spawn(
            Source::Synth {
                model,
                drive: Drive::Shared(follower.source()),
            },
            ServeOptions::default(),
        )
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dev_addr, follower.local_addr(), &dir);
    tweak(&mut cfg);
    let engine = Arc::new(Engine::start(cfg).unwrap());
    Rig {
        engine,
        device: Some(device),
        follower,
        dir,
    }
}

pub fn rig() -> Rig {
    rig_with(|_| {})
}

pub const LONG: Duration = Duration::from_secs(120);
