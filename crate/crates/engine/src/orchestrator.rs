//! The single task that owns the session: it serializes operator commands,
//! device events and training results through one queue.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use myo_core::decoder::{load_model, save_model, DecoderError, SavedModel};
use myo_core::io_out::OutputTarget;
use myo_core::kinematics::{class_to_state, Catalog, GuideTiming, HandState, REST_ID};
use myo_core::pipeline::LiveDecoder;
use myo_core::proto::{StreamConfig, DEFAULT_BUFFER_FRAMES};
use myo_core::session::{
    replay_segment, train_session, MovementResult, Phase, RecordingHeader, Segment, SessionError, SessionRecording,
    SessionState, TrainConfig, TrainOutcome, ValidationReport,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::EngineConfig;
use crate::ingest::{resolve, ActiveModel, DeviceLink, LinkLost};
use crate::outputs::{spawn_guide_sender, spawn_prediction_sender};
use crate::recorder::Recorder;
use crate::shared::{GuideProgram, Shared};

/// Operator commands, as carried in API envelopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Command {
    ConnectDevice {
        addr: Option<String>,
    },
    Disconnect {},
    StartRecording {
        movement: String,
        duration_s: Option<f64>,
    },
    /// Ends the running recording early and keeps it.
    StopRecording {},
    Train {},
    StartValidation {
        movements: Option<Vec<String>>,
        reps: Option<u32>,
        window_s: Option<f64>,
        conformal: Option<bool>,
    },
    /// Abandons any running recording or validation. Always succeeds.
    Stop {},
    SetConfig {
        conformal: Option<bool>,
        output: Option<OutputTarget>,
        guide_targets: Option<Vec<SocketAddr>>,
        recording_duration_s: Option<f64>,
    },
    ListCatalog {},
    RemapDisplay {
        id: String,
        display_id: String,
    },
    LoadSession {
        path: Option<PathBuf>,
    },
    LoadModel {
        path: Option<PathBuf>,
    },
    GetState {},
}

impl Command {
    /// Parses `{"type": ..., "payload": {...}}`; a missing payload means `{}`.
    pub fn from_parts(kind: &str, payload: Option<Value>) -> Result<Self, CommandError> {
        let payload = match payload {
            None | Some(Value::Null) => json!({}),
            Some(p) => p,
        };
        serde_json::from_value(json!({"type": kind, "payload": payload}))
            .map_err(|e| CommandError::new("bad_request", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandError {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
}

impl CommandError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_owned(),
            message: message.into(),
            phase: None,
        }
    }
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CommandError {}

impl From<SessionError> for CommandError {
    fn from(e: SessionError) -> Self {
        let (code, phase) = match &e {
            SessionError::InvalidTransition { phase, .. } => ("invalid_transition", Some((*phase).to_owned())),
            SessionError::DeviceLost => ("device_lost", None),
            SessionError::NoModel => ("no_model", None),
            SessionError::NoRecordings => ("no_recordings", None),
            SessionError::UnknownMovement(_) => ("unknown_movement", None),
        };
        Self {
            code: code.to_owned(),
            message: e.to_string(),
            phase,
        }
    }
}

impl From<DecoderError> for CommandError {
    fn from(e: DecoderError) -> Self {
        Self::new("model_error", e.to_string())
    }
}

pub type Reply = Result<Value, CommandError>;

#[derive(Debug)]
pub enum Event {
    DeviceLost(LinkLost),
    TrainingDone(Box<Result<TrainOutcome, DecoderError>>),
}

#[derive(Debug)]
pub enum Msg {
    Command(Command, Sender<Reply>),
    InstallModel(Arc<SavedModel>, Sender<Reply>),
    Session(Sender<SessionRecording>),
    Event(Event),
    Shutdown,
}

struct ActiveRecording {
    movement: String,
    duration_s: f64,
    started: Instant,
    recorder: Recorder,
}

struct ActiveValidation {
    movements: Vec<String>,
    index: usize,
    reps: u32,
    window_s: f64,
    timing: GuideTiming,
    conformal: bool,
    started: Instant,
    recorder: Recorder,
    results: Vec<MovementResult>,
    recording: SessionRecording,
}

enum Job {
    Recording(ActiveRecording),
    Validation(ActiveValidation),
}

const TICK: Duration = Duration::from_millis(10);
const PROGRESS_EVERY: Duration = Duration::from_millis(250);

pub struct Orchestrator {
    cfg: EngineConfig,
    shared: Arc<Shared>,
    tx: Sender<Msg>,
    catalog: Catalog,
    session: SessionRecording,
    model: Option<Arc<SavedModel>>,
    link: Option<DeviceLink>,
    next_link: u64,
    job: Option<Job>,
    training: Option<JoinHandle<()>>,
    phase_durations: BTreeMap<String, f64>,
    last_progress: Instant,
}

impl Orchestrator {
    pub fn new(cfg: EngineConfig, catalog: Catalog, shared: Arc<Shared>, tx: Sender<Msg>) -> Self {
        let mut header = RecordingHeader::new(session_id(), catalog.clone(), cfg.recording.timing);
        header.stream = StreamConfig::default();
        Self {
            cfg,
            shared,
            tx,
            catalog,
            session: SessionRecording::new(header),
            model: None,
            link: None,
            next_link: 0,
            job: None,
            training: None,
            phase_durations: BTreeMap::new(),
            last_progress: Instant::now(),
        }
    }

    pub fn restart_senders(&self) -> Result<(), CommandError> {
        let io = |e: myo_core::io_out::IoError| CommandError::new("bad_request", e.to_string());
        let mut s = self.shared.senders.lock().expect("senders lock");
        // Stop the old threads before their replacements start.
        s.prediction = None;
        s.guide = None;
        s.prediction = Some(spawn_prediction_sender(&self.cfg.output, self.shared.clone()).map_err(io)?);
        s.guide = Some(
            spawn_guide_sender(self.cfg.guide.rate_hz, self.cfg.guide.targets.clone(), self.shared.clone())
                .map_err(io)?,
        );
        Ok(())
    }

    pub fn run(mut self, rx: Receiver<Msg>) {
        self.publish_state();
        loop {
            match rx.recv_timeout(TICK) {
                Ok(Msg::Command(cmd, reply)) => {
                    let r = self.handle(cmd);
                    let _ = reply.send(r);
                }
                Ok(Msg::InstallModel(saved, reply)) => {
                    let r = self.install_model(saved);
                    let _ = reply.send(r);
                }
                Ok(Msg::Session(reply)) => {
                    let _ = reply.send(self.session.clone());
                }
                Ok(Msg::Event(ev)) => self.on_event(ev),
                Ok(Msg::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
                Err(RecvTimeoutError::Timeout) => {}
            }
            self.tick();
        }
        self.abort_job();
        if let Some(link) = self.link.take() {
            link.close();
        }
        if let Some(t) = self.training.take() {
            let _ = t.join();
        }
        let mut s = self.shared.senders.lock().expect("senders lock");
        s.prediction = None;
        s.guide = None;
    }

    fn state_mut<R>(&self, f: impl FnOnce(&mut SessionState) -> R) -> R {
        let mut s = self.shared.state.lock().expect("state lock");
        f(&mut s)
    }

    fn publish_state(&self) {
        let s = self.shared.state();
        self.shared.notify("state", &s);
    }

    fn handle(&mut self, cmd: Command) -> Reply {
        let r = match cmd {
            Command::ConnectDevice { addr } => self.connect(addr),
            Command::Disconnect {} => self.disconnect(),
            Command::StartRecording { movement, duration_s } => self.start_recording(&movement, duration_s),
            Command::StopRecording {} => self.stop_recording(),
            Command::Train {} => self.train(),
            Command::StartValidation {
                movements,
                reps,
                window_s,
                conformal,
            } => self.start_validation(movements, reps, window_s, conformal),
            Command::Stop {} => {
                let stopped = self.job.is_some();
                self.abort_job();
                Ok(json!({ "stopped": stopped }))
            }
            Command::SetConfig {
                conformal,
                output,
                guide_targets,
                recording_duration_s,
            } => self.set_config(conformal, output, guide_targets, recording_duration_s),
            Command::ListCatalog {} => Ok(json!({ "templates": self.catalog.templates() })),
            Command::RemapDisplay { id, display_id } => self.remap(&id, &display_id),
            Command::LoadSession { path } => self.load_session(path),
            Command::LoadModel { path } => self.load_model(path),
            Command::GetState {} => Ok(json!({ "state": self.shared.state(), "stats": self.shared.stats() })),
        };
        self.publish_state();
        r
    }

    fn connect(&mut self, addr: Option<String>) -> Reply {
        if let Some(link) = &self.link {
            return Ok(json!({ "addr": link.addr.to_string(), "already_connected": true }));
        }
        let addr = addr.unwrap_or_else(|| self.cfg.device.addr.clone());
        let sock = resolve(&addr).map_err(|e| CommandError::new("device_error", e.to_string()))?;
        self.next_link += 1;
        let id = self.next_link;
        let tx = self.tx.clone();
        let link = DeviceLink::connect(
            id,
            sock,
            Duration::from_millis(self.cfg.device.connect_timeout_ms),
            Duration::from_millis(self.cfg.device.read_timeout_ms),
            self.shared.clone(),
            move |lost| {
                let _ = tx.send(Msg::Event(Event::DeviceLost(lost)));
            },
        )
        .map_err(|e| CommandError::new("device_error", format!("{addr}: {e}")))?;
        link.set_model(self.active_model(self.cfg.validation.conformal));
        self.link = Some(link);
        self.state_mut(SessionState::device_connected);
        log::info!("device connected at {sock}");
        Ok(json!({ "addr": sock.to_string() }))
    }

    fn disconnect(&mut self) -> Reply {
        self.state_mut(SessionState::disconnect)?;
        self.abort_job();
        if let Some(link) = self.link.take() {
            link.close();
        }
        *self.shared.last_frame.lock().expect("last frame lock") = None;
        Ok(json!({}))
    }

    fn active_model(&self, conformal: bool) -> Option<ActiveModel> {
        let saved = self.model.clone()?;
        let states = saved
            .classes
            .iter()
            .map(|c| class_to_state(c, &self.catalog).unwrap_or(HandState::REST))
            .collect();
        let mut decoder = LiveDecoder::new(saved);
        decoder.set_conformal(conformal);
        Some(ActiveModel { decoder, states })
    }

    fn install_model(&mut self, saved: Arc<SavedModel>) -> Reply {
        self.state_mut(|s| s.model_loaded(saved.classes.clone()))?;
        *self.shared.classes.write().expect("classes lock") = saved.classes.clone();
        self.model = Some(saved.clone());
        if let Some(link) = &self.link {
            link.set_model(self.active_model(self.cfg.validation.conformal));
        }
        self.publish_state();
        Ok(json!({ "classes": saved.classes, "calibrated": saved.calibration.is_some() }))
    }

    /// Starts the guide program and the recording writer for `movement`.
    fn begin_capture(&self, movement: &str, timing: GuideTiming) -> Result<(Recorder, Instant), CommandError> {
        // Right after connecting, the first frame may still be in flight.
        let deadline = Instant::now() + Duration::from_millis(self.cfg.device.read_timeout_ms);
        let origin_t_us = loop {
            if let Some(t) = self.shared.frame_clock_now() {
                break t;
            }
            if Instant::now() >= deadline {
                return Err(CommandError::new("device_lost", "no frames received from the device"));
            }
            thread::sleep(Duration::from_millis(5));
        };
        let index = self
            .catalog
            .index_of(movement)
            .map_err(|_| CommandError::new("unknown_movement", movement))?;
        let display = self
            .catalog
            .display_template(movement)
            .map_err(|_| CommandError::new("unknown_movement", movement))?
            .clone();
        let recorder = Recorder::start(Segment::new(movement, timing, origin_t_us));
        let origin = Instant::now();
        *self.shared.guide.lock().expect("guide lock") = Some(GuideProgram {
            movement: movement.to_owned(),
            movement_index: index as u8,
            display,
            timing,
            origin,
            origin_t_us,
            record: Some(recorder.sender()),
        });
        *self.shared.recorder_tap.lock().expect("tap lock") = Some(recorder.sender());
        Ok((recorder, origin))
    }

    fn end_capture(&self, recorder: Recorder) -> Segment {
        *self.shared.recorder_tap.lock().expect("tap lock") = None;
        *self.shared.guide.lock().expect("guide lock") = None;
        recorder.finish()
    }

    fn start_recording(&mut self, movement: &str, duration_s: Option<f64>) -> Reply {
        let duration_s = duration_s.unwrap_or(self.cfg.recording.duration_s);
        if !(duration_s > 0.0 && duration_s.is_finite()) {
            return Err(CommandError::new("bad_request", format!("duration_s = {duration_s}")));
        }
        self.state_mut(|s| s.begin_recording(movement, duration_s, &self.catalog))?;
        match self.begin_capture(movement, self.cfg.recording.timing) {
            Ok((recorder, started)) => {
                self.job = Some(Job::Recording(ActiveRecording {
                    movement: movement.to_owned(),
                    duration_s,
                    started,
                    recorder,
                }));
                Ok(json!({ "movement": movement, "duration_s": duration_s }))
            }
            Err(e) => {
                self.state_mut(SessionState::abort_recording);
                Err(e)
            }
        }
    }

    fn stop_recording(&mut self) -> Reply {
        match self.job.take() {
            Some(Job::Recording(r)) => self.finish_recording(r),
            other => {
                self.job = other;
                let phase = self.shared.state().phase.name();
                Err(SessionError::InvalidTransition {
                    phase,
                    action: "stop recording",
                }
                .into())
            }
        }
    }

    fn finish_recording(&mut self, r: ActiveRecording) -> Reply {
        let seg = self.end_capture(r.recorder);
        let elapsed = r.started.elapsed().as_secs_f64();
        *self.phase_durations.entry("recording".into()).or_default() += elapsed;
        let frames = seg.frames.len();
        if frames < 2 * DEFAULT_BUFFER_FRAMES {
            self.state_mut(SessionState::abort_recording);
            return Err(CommandError::new(
                "too_short",
                format!("{} captured only {frames} frames", r.movement),
            ));
        }
        let gaps = seg.seq_gaps().len();
        let guide = seg.guide.len();
        self.session.put_segment(seg);
        self.save_session();
        self.state_mut(SessionState::finish_recording)?;
        let summary = json!({ "movement": r.movement, "frames": frames, "guide": guide, "seq_gaps": gaps, "duration_s": elapsed });
        self.shared.notify("recorded", &summary);
        Ok(summary)
    }

    fn save_session(&self) {
        let path = self.cfg.session_path();
        let r = std::fs::create_dir_all(&self.cfg.data_dir)
            .map_err(|e| e.to_string())
            .and_then(|_| self.session.save(&path).map_err(|e| e.to_string()));
        if let Err(e) = r {
            log::error!("saving {}: {e}", path.display());
            self.shared.notify("error", &CommandError::new("io_error", e));
        }
    }

    fn train(&mut self) -> Reply {
        self.state_mut(SessionState::begin_training)?;
        self.shared.classes.write().expect("classes lock").clear();
        let rec = self.session.clone();
        let cfg = TrainConfig {
            gbdt: self.cfg.train.gbdt.clone(),
            raps: self.cfg.train.raps,
            ..TrainConfig::default()
        };
        let tx = self.tx.clone();
        if let Some(t) = self.training.take() {
            let _ = t.join();
        }
        self.training = Some(
            thread::Builder::new()
                .name("myo-train".into())
                .spawn(move || {
                    let r = train_session(&rec, &cfg);
                    let _ = tx.send(Msg::Event(Event::TrainingDone(Box::new(r))));
                })
                .map_err(|e| CommandError::new("io_error", e.to_string()))?,
        );
        Ok(json!({ "movements": self.session.header.movements }))
    }

    fn on_training_done(&mut self, r: Result<TrainOutcome, DecoderError>) {
        match r {
            Ok(out) => {
                let saved = Arc::new(out.saved);
                let path = self.cfg.model_path();
                if let Err(e) = std::fs::create_dir_all(&self.cfg.data_dir)
                    .map_err(DecoderError::from)
                    .and_then(|_| save_model(&path, &saved))
                {
                    log::error!("saving {}: {e}", path.display());
                }
                *self.phase_durations.entry("training".into()).or_default() += out.total_time.as_secs_f64();
                let _ = self.state_mut(|s| s.finish_training(Ok(saved.classes.clone())));
                *self.shared.classes.write().expect("classes lock") = saved.classes.clone();
                self.model = Some(saved.clone());
                if let Some(link) = &self.link {
                    link.set_model(self.active_model(self.cfg.validation.conformal));
                }
                let summary = json!({
                    "classes": saved.classes,
                    "samples": out.dataset.len(),
                    "fit_time_s": out.fit_time.as_secs_f64(),
                    "total_time_s": out.total_time.as_secs_f64(),
                    "final_loss": out.trace.loss.last(),
                    "q_hat": saved.calibration.as_ref().map(|c| c.q_hat),
                });
                log::info!("training done: {summary}");
                self.shared.notify("trained", &summary);
            }
            Err(e) => {
                log::error!("training failed: {e}");
                let _ = self.state_mut(|s| s.finish_training(Err(e.to_string())));
                if let Some(m) = &self.model {
                    *self.shared.classes.write().expect("classes lock") = m.classes.clone();
                }
                self.shared.notify("error", &CommandError::from(e));
            }
        }
        self.publish_state();
    }

    fn start_validation(
        &mut self,
        movements: Option<Vec<String>>,
        reps: Option<u32>,
        window_s: Option<f64>,
        conformal: Option<bool>,
    ) -> Reply {
        let Some(model) = self.model.clone() else {
            return Err(SessionError::NoModel.into());
        };
        let movements =
            movements.unwrap_or_else(|| model.classes.iter().filter(|c| *c != REST_ID).cloned().collect());
        let Some(first) = movements.first().cloned() else {
            return Err(CommandError::new("bad_request", "no movements to validate"));
        };
        if let Some(m) = movements.iter().find(|m| !model.classes.contains(m) || *m == REST_ID) {
            return Err(CommandError::new("unknown_movement", format!("{m} is not a trained movement")));
        }
        let reps = reps.unwrap_or(self.cfg.validation.reps);
        let window_s = window_s.unwrap_or(self.cfg.validation.window_s);
        if reps == 0 || !(window_s > 0.0) {
            return Err(CommandError::new("bad_request", "reps and window_s must be positive"));
        }
        // The default shape scaled to the repetition period: holds take a fifth.
        let period = window_s / f64::from(reps);
        let timing =
            GuideTiming::from_period(period, 0.2 * period).map_err(|e| CommandError::new("bad_request", e.to_string()))?;
        let conformal = conformal.unwrap_or(self.cfg.validation.conformal);
        self.state_mut(|s| s.begin_validation(&first, &self.catalog))?;
        let (recorder, started) = match self.begin_capture(&first, timing) {
            Ok(x) => x,
            Err(e) => {
                let _ = self.state_mut(SessionState::finish_validation);
                return Err(e);
            }
        };
        *self.shared.report.lock().expect("report lock") = None;
        let mut header = RecordingHeader::new(format!("{}-validation", session_id()), self.catalog.clone(), timing);
        header.stream = StreamConfig::default();
        self.job = Some(Job::Validation(ActiveValidation {
            movements: movements.clone(),
            index: 0,
            reps,
            window_s,
            timing,
            conformal,
            started,
            recorder,
            results: Vec::new(),
            recording: SessionRecording::new(header),
        }));
        Ok(json!({ "movements": movements, "reps": reps, "window_s": window_s, "conformal": conformal }))
    }

    /// Scores the finished movement; starts the next one or completes.
    fn advance_validation(&mut self, mut v: ActiveValidation) {
        let seg = self.end_capture(v.recorder);
        let movement = v.movements[v.index].clone();
        *self.phase_durations.entry("validation".into()).or_default() += v.started.elapsed().as_secs_f64();
        let model = self.model.clone().expect("validation needs a model");
        let mut decoder = LiveDecoder::new(model);
        decoder.set_conformal(v.conformal);
        let conformal_on = decoder.conformal();
        let period = StreamConfig::default().frame_period_us();
        match replay_segment(&seg, &mut decoder, &self.catalog, period) {
            Ok((preds, certain)) => v.results.push(MovementResult::from_predictions(&movement, &preds, certain)),
            Err(e) => {
                log::error!("scoring {movement}: {e}");
                self.shared.notify("error", &CommandError::from(e));
            }
        }
        v.recording.put_segment(seg);
        let mut report = ValidationReport::new(v.results.clone(), conformal_on);
        report.phase_durations_s = self.phase_durations.clone();
        *self.shared.report.lock().expect("report lock") = Some(report.clone());

        v.index += 1;
        let done = v.index >= v.movements.len();
        self.shared.notify("report", &json!({ "complete": done, "report": report }));
        if done {
            self.save_validation(&v.recording, &report);
            let _ = self.state_mut(SessionState::finish_validation);
            return;
        }
        let next = v.movements[v.index].clone();
        let started = self
            .state_mut(|s| s.begin_validation(&next, &self.catalog))
            .map_err(CommandError::from)
            .and_then(|_| self.begin_capture(&next, v.timing));
        match started {
            Ok((recorder, started)) => {
                v.recorder = recorder;
                v.started = started;
                self.job = Some(Job::Validation(v));
            }
            Err(e) => {
                log::error!("validation of {next} could not start: {e}");
                let _ = self.state_mut(SessionState::finish_validation);
                self.shared.notify("error", &e);
            }
        }
    }

    fn save_validation(&self, rec: &SessionRecording, report: &ValidationReport) {
        let r = std::fs::create_dir_all(&self.cfg.data_dir)
            .map_err(|e| e.to_string())
            .and_then(|_| rec.save(&self.cfg.validation_path()).map_err(|e| e.to_string()))
            .and_then(|_| std::fs::write(self.cfg.report_path(), report.to_json()).map_err(|e| e.to_string()));
        if let Err(e) = r {
            log::error!("saving validation results: {e}");
        }
    }

    fn abort_job(&mut self) {
        match self.job.take() {
            Some(Job::Recording(r)) => {
                drop(self.end_capture(r.recorder));
                self.state_mut(SessionState::abort_recording);
            }
            Some(Job::Validation(v)) => {
                drop(self.end_capture(v.recorder));
                let _ = self.state_mut(SessionState::finish_validation);
            }
            None => {}
        }
    }

    fn set_config(
        &mut self,
        conformal: Option<bool>,
        output: Option<OutputTarget>,
        guide_targets: Option<Vec<SocketAddr>>,
        recording_duration_s: Option<f64>,
    ) -> Reply {
        let mut cfg = self.cfg.clone();
        if let Some(c) = conformal {
            cfg.validation.conformal = c;
        }
        if let Some(o) = output.clone() {
            cfg.output = o;
        }
        if let Some(g) = guide_targets.clone() {
            cfg.guide.targets = g;
        }
        if let Some(d) = recording_duration_s {
            cfg.recording.duration_s = d;
        }
        cfg.validate().map_err(|e| CommandError::new("bad_request", e.to_string()))?;
        self.cfg = cfg;
        if output.is_some() || guide_targets.is_some() {
            self.restart_senders()?;
        }
        if conformal.is_some() {
            if let Some(link) = &self.link {
                link.set_model(self.active_model(self.cfg.validation.conformal));
            }
        }
        Ok(json!({
            "conformal": self.cfg.validation.conformal,
            "output": self.cfg.output,
            "guide_targets": self.cfg.guide.targets,
            "recording_duration_s": self.cfg.recording.duration_s,
        }))
    }

    fn remap(&mut self, id: &str, display_id: &str) -> Reply {
        if matches!(self.shared.state().phase, Phase::Recording { .. } | Phase::Validating { .. }) {
            let phase = self.shared.state().phase.name();
            return Err(SessionError::InvalidTransition {
                phase,
                action: "remap display",
            }
            .into());
        }
        if self.session.segments().iter().any(|s| s.movement == id) {
            return Err(CommandError::new(
                "bad_request",
                format!("{id} is already recorded with its current display"),
            ));
        }
        self.catalog
            .remap_display(id, display_id)
            .map_err(|e| CommandError::new("unknown_movement", e.to_string()))?;
        self.session.header.catalog = self.catalog.clone();
        Ok(json!({ "id": id, "display_id": display_id }))
    }

    fn load_session(&mut self, path: Option<PathBuf>) -> Reply {
        let path = path.unwrap_or_else(|| self.cfg.session_path());
        let rec = SessionRecording::load(&path).map_err(|e| CommandError::new("io_error", e.to_string()))?;
        self.state_mut(|s| s.session_loaded(rec.header.movements.clone()))?;
        self.catalog = rec.header.catalog.clone();
        let movements = rec.header.movements.clone();
        self.session = rec;
        Ok(json!({ "path": path, "movements": movements }))
    }

    fn load_model(&mut self, path: Option<PathBuf>) -> Reply {
        let path = path.unwrap_or_else(|| self.cfg.model_path());
        let saved = load_model(&path)?;
        let warning = saved.check_catalog(&self.catalog).err().map(|e| {
            log::warn!("{}: {e}", path.display());
            e.to_string()
        });
        let mut reply = self.install_model(Arc::new(saved))?;
        if let Some(w) = warning {
            reply["catalog_warning"] = Value::String(w);
        }
        Ok(reply)
    }

    fn on_event(&mut self, ev: Event) {
        match ev {
            Event::DeviceLost(lost) => {
                if self.link.as_ref().is_some_and(|l| l.id == lost.link) {
                    log::warn!("device lost: {}", lost.reason);
                    self.abort_job();
                    if let Some(link) = self.link.take() {
                        link.close();
                    }
                    self.state_mut(SessionState::device_lost);
                    self.shared.notify("error", &CommandError::new("device_lost", lost.reason));
                    self.publish_state();
                }
            }
            Event::TrainingDone(r) => self.on_training_done(*r),
        }
    }

    fn tick(&mut self) {
        let progress_due = self.last_progress.elapsed() >= PROGRESS_EVERY;
        match self.job.take() {
            Some(Job::Recording(r)) => {
                let elapsed = r.started.elapsed().as_secs_f64();
                if elapsed >= r.duration_s {
                    if let Err(e) = self.finish_recording(r) {
                        self.shared.notify("error", &e);
                    }
                    self.publish_state();
                } else {
                    if progress_due {
                        self.state_mut(|s| s.recording_progress(r.duration_s - elapsed));
                        self.publish_state();
                        self.last_progress = Instant::now();
                    }
                    self.job = Some(Job::Recording(r));
                }
            }
            Some(Job::Validation(v)) => {
                let elapsed = v.started.elapsed().as_secs_f64();
                if elapsed >= v.window_s {
                    self.advance_validation(v);
                    self.publish_state();
                } else {
                    if progress_due {
                        let rep = ((elapsed / v.timing.period_s()) as u32 + 1).min(v.reps);
                        self.state_mut(|s| s.validation_rep(rep));
                        self.publish_state();
                        self.last_progress = Instant::now();
                    }
                    self.job = Some(Job::Validation(v));
                }
            }
            None => {}
        }
    }
}

fn session_id() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("session-{secs}")
}

/// Handle to a running engine: orchestrator, plot stream and output senders.
pub struct Engine {
    tx: Sender<Msg>,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

const REPLY_TIMEOUT: Duration = Duration::from_secs(30);

impl Engine {
    pub fn start(cfg: EngineConfig) -> anyhow::Result<Self> {
        cfg.validate()?;
        let catalog = match &cfg.catalog {
            Some(p) => Catalog::load(p)?,
            None => Catalog::standard(),
        };
        let (plot_tx, plot_rx) = bounded(cfg.plot.queue);
        let shared = Shared::new(plot_tx);
        let (tx, rx) = unbounded();
        let orch = Orchestrator::new(cfg.clone(), catalog, shared.clone(), tx.clone());
        orch.restart_senders()?;
        let plot = crate::plot::spawn_plot_stream(plot_rx, cfg.plot.max_rate_hz, shared.clone())?;
        let main = thread::Builder::new().name("myo-orchestrator".into()).spawn(move || orch.run(rx))?;
        Ok(Self {
            tx,
            shared,
            threads: vec![main, plot],
        })
    }

    fn call(&self, make: impl FnOnce(Sender<Reply>) -> Msg) -> Reply {
        let (reply_tx, reply_rx) = bounded(1);
        self.tx
            .send(make(reply_tx))
            .map_err(|_| CommandError::new("shutdown", "engine stopped"))?;
        reply_rx
            .recv_timeout(REPLY_TIMEOUT)
            .map_err(|_| CommandError::new("timeout", "no reply from orchestrator"))?
    }

    pub fn command(&self, cmd: Command) -> Reply {
        self.call(|r| Msg::Command(cmd, r))
    }

    pub fn install_model(&self, saved: Arc<SavedModel>) -> Reply {
        self.call(|r| Msg::InstallModel(saved, r))
    }

    pub fn session(&self) -> Option<SessionRecording> {
        let (tx, rx) = bounded(1);
        self.tx.send(Msg::Session(tx)).ok()?;
        rx.recv_timeout(REPLY_TIMEOUT).ok()
    }

    pub fn shared(&self) -> &Arc<Shared> {
        &self.shared
    }

    pub fn state(&self) -> SessionState {
        self.shared.state()
    }

    pub fn stats(&self) -> crate::shared::EngineStats {
        self.shared.stats()
    }

    pub fn report(&self) -> Option<ValidationReport> {
        self.shared.report.lock().expect("report lock").clone()
    }

    /// Polls the session state until `pred` holds or `timeout` passes.
    pub fn wait_for(&self, timeout: Duration, pred: impl Fn(&SessionState) -> bool) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if pred(&self.state()) {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(5));
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.shutdown.store(true, std::sync::atomic::Ordering::Relaxed);
        let _ = self.tx.send(Msg::Shutdown);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.stop();
    }
}
