//! Workflow state machine: connect, monitor, record, train, validate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{Catalog, REST_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Phase {
    Disconnected,
    /// Session data is available but the device is not streaming.
    Idle,
    Monitoring,
    Recording { movement: String, t_remaining_s: f64 },
    Training,
    Validating { movement: String, rep: u32 },
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Disconnected => "disconnected",
            Phase::Idle => "idle",
            Phase::Monitoring => "monitoring",
            Phase::Recording { .. } => "recording",
            Phase::Training => "training",
            Phase::Validating { .. } => "validating",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceStatus {
    Disconnected,
    Connected,
    /// The link dropped and has not come back.
    Lost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelStatus {
    None,
    Training,
    Ready { classes: Vec<String> },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("cannot {action} while {phase}")]
    InvalidTransition { phase: &'static str, action: &'static str },
    #[error("device is not connected")]
    DeviceLost,
    #[error("no trained model")]
    NoModel,
    #[error("nothing has been recorded")]
    NoRecordings,
    #[error("unknown movement: {0}")]
    UnknownMovement(String),
}

/// Current phase plus device and model status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: Phase,
    pub device: DeviceStatus,
    pub model: ModelStatus,
    /// Movements with a stored segment, in recording order.
    pub recorded: Vec<String>,
    /// Phase to return to when training ends.
    #[serde(skip)]
    resume: Option<Phase>,
}

impl Default for SessionState {
    fn default() -> Self {
        Self {
            phase: Phase::Disconnected,
            device: DeviceStatus::Disconnected,
            model: ModelStatus::None,
            recorded: Vec::new(),
            resume: None,
        }
    }
}

impl SessionState {
    fn invalid(&self, action: &'static str) -> SessionError {
        SessionError::InvalidTransition {
            phase: self.phase.name(),
            action,
        }
    }

    pub fn device_connected(&mut self) {
        self.device = DeviceStatus::Connected;
        if matches!(self.phase, Phase::Disconnected | Phase::Idle) {
            self.phase = Phase::Monitoring;
        }
    }

    /// Link dropped: a running recording or live validation is abandoned.
    pub fn device_lost(&mut self) {
        self.device = DeviceStatus::Lost;
        if matches!(self.phase, Phase::Recording { .. } | Phase::Validating { .. }) {
            self.phase = Phase::Monitoring;
        }
    }

    /// Operator disconnect; keeps recordings and model.
    pub fn disconnect(&mut self) -> Result<(), SessionError> {
        match self.phase {
            Phase::Training => Err(self.invalid("disconnect")),
            _ => {
                self.device = DeviceStatus::Disconnected;
                self.phase = if self.recorded.is_empty() {
                    Phase::Disconnected
                } else {
                    Phase::Idle
                };
                Ok(())
            }
        }
    }

    /// A session file was loaded without a live device.
    pub fn session_loaded(&mut self, movements: Vec<String>) -> Result<(), SessionError> {
        match self.phase {
            Phase::Disconnected | Phase::Idle | Phase::Monitoring => {
                self.recorded = movements;
                if self.phase == Phase::Disconnected {
                    self.phase = Phase::Idle;
                }
                Ok(())
            }
            _ => Err(self.invalid("load a session")),
        }
    }

    pub fn begin_recording(&mut self, movement: &str, duration_s: f64, catalog: &Catalog) -> Result<(), SessionError> {
        if movement == REST_ID || catalog.get(movement).is_err() {
            return Err(SessionError::UnknownMovement(movement.to_owned()));
        }
        if self.phase != Phase::Monitoring {
            return Err(self.invalid("record"));
        }
        if self.device != DeviceStatus::Connected {
            return Err(SessionError::DeviceLost);
        }
        self.phase = Phase::Recording {
            movement: movement.to_owned(),
            t_remaining_s: duration_s,
        };
        Ok(())
    }

    pub fn recording_progress(&mut self, remaining_s: f64) {
        if let Phase::Recording { t_remaining_s, .. } = &mut self.phase {
            *t_remaining_s = remaining_s.max(0.0);
        }
    }

    /// The segment was stored; re-recording a movement keeps a single entry.
    pub fn finish_recording(&mut self) -> Result<String, SessionError> {
        let Phase::Recording { movement, .. } = &self.phase else {
            return Err(self.invalid("finish recording"));
        };
        let movement = movement.clone();
        self.recorded.retain(|m| *m != movement);
        self.recorded.push(movement.clone());
        self.phase = Phase::Monitoring;
        Ok(movement)
    }

    /// Recording aborted; the segment is discarded.
    pub fn abort_recording(&mut self) {
        if matches!(self.phase, Phase::Recording { .. }) {
            self.phase = Phase::Monitoring;
        }
    }

    pub fn begin_training(&mut self) -> Result<(), SessionError> {
        if !matches!(self.phase, Phase::Idle | Phase::Monitoring) {
            return Err(self.invalid("train"));
        }
        if self.recorded.is_empty() {
            return Err(SessionError::NoRecordings);
        }
        self.resume = Some(self.phase.clone());
        self.phase = Phase::Training;
        self.model = ModelStatus::Training;
        Ok(())
    }

    pub fn finish_training(&mut self, result: Result<Vec<String>, String>) -> Result<(), SessionError> {
        if self.phase != Phase::Training {
            return Err(self.invalid("finish training"));
        }
        self.model = match result {
            Ok(classes) => ModelStatus::Ready { classes },
            Err(error) => ModelStatus::Failed { error },
        };
        self.phase = match self.resume.take() {
            Some(Phase::Monitoring) if self.device == DeviceStatus::Connected => Phase::Monitoring,
            Some(Phase::Monitoring) | Some(Phase::Idle) | None => {
                if self.device == DeviceStatus::Connected {
                    Phase::Monitoring
                } else {
                    Phase::Idle
                }
            }
            Some(other) => other,
        };
        Ok(())
    }

    pub fn model_loaded(&mut self, classes: Vec<String>) -> Result<(), SessionError> {
        if matches!(self.phase, Phase::Training | Phase::Validating { .. }) {
            return Err(self.invalid("load a model"));
        }
        self.model = ModelStatus::Ready { classes };
        Ok(())
    }

    pub fn begin_validation(&mut self, movement: &str, catalog: &Catalog) -> Result<(), SessionError> {
        if catalog.get(movement).is_err() {
            return Err(SessionError::UnknownMovement(movement.to_owned()));
        }
        if !matches!(self.model, ModelStatus::Ready { .. }) {
            return Err(SessionError::NoModel);
        }
        if !matches!(self.phase, Phase::Monitoring | Phase::Validating { .. }) {
            return Err(self.invalid("validate"));
        }
        if self.device != DeviceStatus::Connected {
            return Err(SessionError::DeviceLost);
        }
        self.phase = Phase::Validating {
            movement: movement.to_owned(),
            rep: 0,
        };
        Ok(())
    }

    pub fn validation_rep(&mut self, n: u32) {
        if let Phase::Validating { rep, .. } = &mut self.phase {
            *rep = n;
        }
    }

    pub fn finish_validation(&mut self) -> Result<(), SessionError> {
        if !matches!(self.phase, Phase::Validating { .. }) {
            return Err(self.invalid("finish validation"));
        }
        self.phase = Phase::Monitoring;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monitoring() -> SessionState {
        let mut s = SessionState::default();
        s.device_connected();
        s
    }

    #[test]
    fn happy_path() {
        let cat = Catalog::standard();
        let mut s = monitoring();
        assert_eq!(s.phase, Phase::Monitoring);
        for m in ["thumb", "index", "thumb"] {
            s.begin_recording(m, 30.0, &cat).unwrap();
            s.recording_progress(12.5);
            assert_eq!(
                s.phase,
                Phase::Recording {
                    movement: m.into(),
                    t_remaining_s: 12.5
                }
            );
            s.finish_recording().unwrap();
        }
        assert_eq!(s.recorded, ["index", "thumb"]);
        s.begin_training().unwrap();
        assert_eq!(s.begin_recording("thumb", 30.0, &cat), Err(s.invalid("record")));
        s.finish_training(Ok(vec!["rest".into(), "index".into(), "thumb".into()])).unwrap();
        assert_eq!(s.phase, Phase::Monitoring);
        s.begin_validation("index", &cat).unwrap();
        s.validation_rep(3);
        s.finish_validation().unwrap();
        assert_eq!(s.phase, Phase::Monitoring);
    }

    #[test]
    fn guards() {
        let cat = Catalog::standard();
        let mut s = SessionState::default();
        assert!(matches!(s.begin_recording("thumb", 30.0, &cat), Err(SessionError::InvalidTransition { .. })));
        assert_eq!(s.begin_training(), Err(s.invalid("train")));
        let mut s = monitoring();
        assert_eq!(s.begin_training(), Err(SessionError::NoRecordings));
        assert_eq!(s.begin_validation("thumb", &cat), Err(SessionError::NoModel));
        assert_eq!(
            s.begin_recording("rest", 30.0, &cat),
            Err(SessionError::UnknownMovement("rest".into()))
        );
        assert_eq!(
            s.begin_recording("wave", 30.0, &cat),
            Err(SessionError::UnknownMovement("wave".into()))
        );
    }

    #[test]
    fn device_loss_discards_recording() {
        let cat = Catalog::standard();
        let mut s = monitoring();
        s.begin_recording("thumb", 30.0, &cat).unwrap();
        s.device_lost();
        assert_eq!(s.phase, Phase::Monitoring);
        assert!(s.recorded.is_empty());
        assert_eq!(s.begin_recording("thumb", 30.0, &cat), Err(SessionError::DeviceLost));
        s.device_connected();
        s.begin_recording("thumb", 30.0, &cat).unwrap();
    }

    #[test]
    fn offline_training_returns_to_idle() {
        let mut s = SessionState::default();
        s.session_loaded(vec!["thumb".into()]).unwrap();
        assert_eq!(s.phase, Phase::Idle);
        s.begin_training().unwrap();
        s.finish_training(Err("DegenerateClass".into())).unwrap();
        assert_eq!(s.phase, Phase::Idle);
        assert!(matches!(s.model, ModelStatus::Failed { .. }));
    }

    #[test]
    fn state_serializes_for_clients() {
        let s = monitoring();
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["phase"]["kind"], "monitoring");
        assert_eq!(v["device"], "connected");
        assert_eq!(v["model"]["kind"], "none");
    }
}
