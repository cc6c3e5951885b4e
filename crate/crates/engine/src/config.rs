//! Engine configuration, read from the file named by `MYO_CONFIG`.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Files ending in `.toml` are parsed as TOML, anything else as JSON.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use myo_core::conformal::RapsParams;
use myo_core::decoder::GbdtParams;
use myo_core::io_out::{OutputTarget, GUIDE_RATE_HZ};
use myo_core::kinematics::GuideTiming;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_ENV: &str = "MYO_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub addr: String,
    pub connect_timeout_ms: u64,
    /// Silence longer than this counts as a lost device.
    pub read_timeout_ms: u64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:5566".into(),
            connect_timeout_ms: 2000,
            read_timeout_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub bind: SocketAddr,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuideConfig {
    /// Every guide datagram goes to all of these.
    pub targets: Vec<SocketAddr>,
    pub rate_hz: f64,
}

impl Default for GuideConfig {
    fn default() -> Self {
        Self {
            targets: vec![SocketAddr::from(([127, 0, 0, 1], 5578))],
            rate_hz: GUIDE_RATE_HZ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordingConfig {
    pub duration_s: f64,
    pub timing: GuideTiming,
}

impl Default for RecordingConfig {
    fn default() -> Self {
        Self {
            duration_s: 30.0,
            timing: GuideTiming::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub reps: u32,
    pub window_s: f64,
    pub conformal: bool,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            reps: 6,
            window_s: 45.0,
            conformal: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub gbdt: GbdtParams,
    pub raps: RapsParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    pub max_rate_hz: f64,
    /// Chunks buffered between ingestion and the plot stream.
    pub queue: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            max_rate_hz: 30.0,
            queue: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub device: DeviceConfig,
    pub gateway: GatewayConfig,
    /// Prediction output.
    pub output: OutputTarget,
    pub guide: GuideConfig,
    pub recording: RecordingConfig,
    pub validation: ValidationConfig,
    pub train: TrainSettings,
    pub plot: PlotConfig,
    /// Session, model and report files live here.
    pub data_dir: PathBuf,
    /// Movement catalog (JSON); the built-in catalog when unset.
    pub catalog: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            device: DeviceConfig::default(),
            gateway: GatewayConfig::default(),
            output: OutputTarget::default(),
            guide: GuideConfig::default(),
            recording: RecordingConfig::default(),
            validation: ValidationConfig::default(),
            train: TrainSettings::default(),
            plot: PlotConfig::default(),
            data_dir: PathBuf::from("myo-data"),
            catalog: None,
        }
    }
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let parse_err = |message: String| ConfigError::Parse {
            path: path.to_owned(),
            message,
        };
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The file named by `MYO_CONFIG`, or defaults when it is unset.
    pub fn from_env() -> Result<Self, ConfigError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) => Self::load(Path::new(&p)),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.output.rate_hz > 0.0) {
            return bad(format!("output.rate_hz = {}", self.output.rate_hz));
        }
        if !(self.guide.rate_hz > 0.0) {
            return bad(format!("guide.rate_hz = {}", self.guide.rate_hz));
        }
        if !(self.plot.max_rate_hz > 0.0) || self.plot.queue == 0 {
            return bad("plot.max_rate_hz and plot.queue must be positive".into());
        }
        if !(self.recording.duration_s > 0.0) {
            return bad(format!("recording.duration_s = {}", self.recording.duration_s));
        }
        if self.validation.reps == 0 || !(self.validation.window_s > 0.0) {
            return bad("validation.reps and validation.window_s must be positive".into());
        }
        GuideTiming::new(self.recording.timing.hold_s, self.recording.timing.ramp_s)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.raps.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn session_path(&self) -> PathBuf {
        self.data_dir.join("session.mgr")
    }

    pub fn model_path(&self) -> PathBuf {
        self.data_dir.join("model.mgd")
    }

    pub fn validation_path(&self) -> PathBuf {
        self.data_dir.join("validation.mgr")
    }

    pub fn report_path(&self) -> PathBuf {
        self.data_dir.join("report.json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_files_give_defaults() {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in [("a.toml", ""), ("b.json", "{}")] {
            let p = dir.path().join(name);
            std::fs::write(&p, body).unwrap();
            assert_eq!(EngineConfig::load(&p).unwrap(), EngineConfig::default());
        }
    }

    #[test]
    fn toml_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(
            &p,
            r#"
data_dir = "/tmp/x"
[device]
addr = "10.0.0.2:5566"
[output]
kind = "cursor_2d"
rate_hz = 32.0
[train.gbdt]
n_rounds = 50
"#,
        )
        .unwrap();
        let c = EngineConfig::load(&p).unwrap();
        assert_eq!(c.device.addr, "10.0.0.2:5566");
        assert_eq!(c.output.kind, myo_core::io_out::OutputKind::Cursor2d);
        assert_eq!(c.train.gbdt.n_rounds, 50);
        assert_eq!(c.train.gbdt.max_depth, GbdtParams::default().max_depth);
        assert_eq!(c.model_path(), PathBuf::from("/tmp/x/model.mgd"));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        std::fs::write(&p, r#"{"output": {"rate_hz": 0}}"#).unwrap();
        assert!(matches!(EngineConfig::load(&p), Err(ConfigError::Invalid(_))));
        std::fs::write(&p, r#"{"bogus": 1}"#).unwrap();
        assert!(matches!(EngineConfig::load(&p), Err(ConfigError::Parse { .. })));
    }
}
