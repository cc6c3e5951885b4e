//! State shared between the orchestrator, the device thread, the output
//! senders and the API.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use crossbeam_channel::Sender;
use myo_core::io_out::{LatestCell, SenderHandle, SenderStats};
use myo_core::kinematics::{GuideTiming, MovementTemplate};
use myo_core::session::{SessionState, ValidationReport};
use serde::Serialize;
use tokio::sync::broadcast;

use crate::latency::{LatencyStats, LatencySummary};
use crate::plot::PlotChunk;
use crate::recorder::RecMsg;

/// Serialized `{type, seq, payload}` message, shared by all subscribers.
pub type Envelope = Arc<str>;

const EVENT_CAPACITY: usize = 1024;
const PLOT_CAPACITY: usize = 16;

#[derive(Debug, Default)]
pub struct Counters {
    pub frames_received: AtomicU64,
    pub seq_gaps: AtomicU64,
    /// Frames handed to the recording writer.
    pub recorded_frames: AtomicU64,
    pub decoded_windows: AtomicU64,
    pub plot_chunks: AtomicU64,
    /// Chunks dropped because the plot stream was behind.
    pub plot_dropped: AtomicU64,
    /// Plot batches skipped by API clients that fell behind.
    pub plot_client_lagged: AtomicU64,
}

/// What the guide hand is currently showing.
#[derive(Debug, Clone)]
pub struct GuideProgram {
    /// Executed movement.
    pub movement: String,
    pub movement_index: u8,
    pub display: MovementTemplate,
    pub timing: GuideTiming,
    pub origin: Instant,
    /// Frame-clock time of `origin`.
    pub origin_t_us: u64,
    pub record: Option<Sender<RecMsg>>,
}

#[derive(Debug, Default)]
pub struct Senders {
    pub prediction: Option<SenderHandle>,
    pub guide: Option<SenderHandle>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EngineStats {
    pub frames_received: u64,
    pub seq_gaps: u64,
    pub recorded_frames: u64,
    pub decoded_windows: u64,
    pub plot_chunks: u64,
    pub plot_dropped: u64,
    pub plot_client_lagged: u64,
    /// Per-frame time from parse to the end of all processing.
    pub ingest_latency: LatencySummary,
    /// Decoder time per window: buffer, features, classifier, prediction set, solver.
    pub window_latency: LatencySummary,
    pub prediction_sender: Option<SenderStats>,
    pub guide_sender: Option<SenderStats>,
}

#[derive(Debug)]
pub struct Shared {
    pub cell: LatestCell,
    pub counters: Counters,
    pub ingest_latency: LatencyStats,
    pub window_latency: LatencyStats,
    /// Newest frame timestamp and its arrival time.
    pub last_frame: Mutex<Option<(u64, Instant)>>,
    pub recorder_tap: Mutex<Option<Sender<RecMsg>>>,
    pub guide: Mutex<Option<GuideProgram>>,
    /// Class names of the active model, by index.
    pub classes: RwLock<Vec<String>>,
    pub state: Mutex<SessionState>,
    pub report: Mutex<Option<ValidationReport>>,
    pub senders: Mutex<Senders>,
    pub plot_queue: Sender<PlotChunk>,
    /// Set once the engine is stopping.
    pub shutdown: AtomicBool,
    events: broadcast::Sender<Envelope>,
    plots: broadcast::Sender<Envelope>,
    seq: AtomicU64,
}

impl Shared {
    pub fn new(plot_queue: Sender<PlotChunk>) -> Arc<Self> {
        Arc::new(Self {
            cell: LatestCell::new(),
            counters: Counters::default(),
            ingest_latency: LatencyStats::default(),
            window_latency: LatencyStats::default(),
            last_frame: Mutex::new(None),
            recorder_tap: Mutex::new(None),
            guide: Mutex::new(None),
            classes: RwLock::new(Vec::new()),
            state: Mutex::new(SessionState::default()),
            report: Mutex::new(None),
            senders: Mutex::new(Senders::default()),
            plot_queue,
            shutdown: AtomicBool::new(false),
            events: broadcast::channel(EVENT_CAPACITY).0,
            plots: broadcast::channel(PLOT_CAPACITY).0,
            seq: AtomicU64::new(0),
        })
    }

    fn envelope(&self, kind: &str, payload: &impl Serialize) -> Envelope {
        let seq = self.seq.fetch_add(1, Ordering::Relaxed) + 1;
        let v = serde_json::json!({"type": kind, "seq": seq, "payload": payload});
        Arc::from(v.to_string())
    }

    /// Broadcasts to every API subscriber; a message nobody hears is dropped.
    pub fn notify(&self, kind: &str, payload: &impl Serialize) {
        if self.events.receiver_count() > 0 {
            let _ = self.events.send(self.envelope(kind, payload));
        }
    }

    pub fn notify_plot(&self, payload: &impl Serialize) {
        if self.plots.receiver_count() > 0 {
            let _ = self.plots.send(self.envelope("plot", payload));
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Envelope> {
        self.events.subscribe()
    }

    pub fn subscribe_plot(&self) -> broadcast::Receiver<Envelope> {
        self.plots.subscribe()
    }

    pub fn state(&self) -> SessionState {
        self.state.lock().expect("state lock").clone()
    }

    /// Frame-clock time now, extrapolated from the newest frame.
    pub fn frame_clock_now(&self) -> Option<u64> {
        let lf = *self.last_frame.lock().expect("last frame lock");
        lf.map(|(t, at)| t + at.elapsed().as_micros() as u64)
    }

    pub fn stats(&self) -> EngineStats {
        let c = &self.counters;
        let senders = self.senders.lock().expect("senders lock");
        EngineStats {
            frames_received: c.frames_received.load(Ordering::Relaxed),
            seq_gaps: c.seq_gaps.load(Ordering::Relaxed),
            recorded_frames: c.recorded_frames.load(Ordering::Relaxed),
            decoded_windows: c.decoded_windows.load(Ordering::Relaxed),
            plot_chunks: c.plot_chunks.load(Ordering::Relaxed),
            plot_dropped: c.plot_dropped.load(Ordering::Relaxed),
            plot_client_lagged: c.plot_client_lagged.load(Ordering::Relaxed),
            ingest_latency: self.ingest_latency.summary(),
            window_latency: self.window_latency.summary(),
            prediction_sender: senders.prediction.as_ref().map(SenderHandle::stats),
            guide_sender: senders.guide.as_ref().map(SenderHandle::stats),
        }
    }
}
