//! Drive timelines and fully synthetic recording sessions.

use std::path::Path;

use myo_core::kinematics::{guide_trajectory, Catalog, GuideTiming, REST_ID};
use myo_core::proto::StreamConfig;
use myo_core::session::{GuideSample, RecordingHeader, Segment, SessionRecording, GUIDE_RATE_HZ};
use serde::{Deserialize, Serialize};

use crate::model::{synth_frame, DriveSignal, SyntheticModel};
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub movement: String,
    pub repetitions: u32,
}

/// A sequence of guided movements separated by rest, as read from JSON:
///
/// ```json
/// {"timing": {"hold_s": 1.5, "ramp_s": 2.25}, "rest_s": 3.0,
///  "entries": [{"movement": "thumb", "repetitions": 4}], "loop": false}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Script {
    pub timing: GuideTiming,
    /// Rest before each entry.
    pub rest_s: f64,
    pub entries: Vec<ScriptEntry>,
    /// Start over after the last entry instead of resting forever.
    #[serde(rename = "loop")]
    pub looped: bool,
}

impl Default for Script {
    fn default() -> Self {
        Self {
            timing: GuideTiming::default(),
            rest_s: 3.0,
            entries: Vec::new(),
            looped: false,
        }
    }
}

impl Script {
    pub fn from_json(json: &str) -> Result<Self, SimError> {
        let s: Self = serde_json::from_str(json).map_err(|e| SimError::Script(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), SimError> {
        GuideTiming::new(self.timing.hold_s, self.timing.ramp_s).map_err(|e| SimError::Script(e.to_string()))?;
        if !(self.rest_s >= 0.0 && self.rest_s.is_finite()) {
            return Err(SimError::Script(format!("rest_s {}", self.rest_s)));
        }
        Ok(())
    }

    fn entry_span_s(&self, e: &ScriptEntry) -> f64 {
        self.rest_s + f64::from(e.repetitions) * self.timing.period_s()
    }

    /// Total length of one pass.
    pub fn duration_s(&self) -> f64 {
        self.entries.iter().map(|e| self.entry_span_s(e)).sum()
    }

    /// Drive at `t` seconds after the script started.
    pub fn drive_at(&self, t: f64) -> DriveSignal {
        let total = self.duration_s();
        let mut t = t.max(0.0);
        if self.looped && total > 0.0 {
            t %= total;
        }
        for e in &self.entries {
            let span = self.entry_span_s(e);
            if t < span {
                let into = t - self.rest_s;
                if into < 0.0 {
                    return DriveSignal::rest();
                }
                return DriveSignal {
                    movement: e.movement.clone(),
                    activation: self.timing.activation(into),
                };
            }
            t -= span;
        }
        DriveSignal::rest()
    }
}

/// Parameters of a synthetic recording session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionScript {
    pub movements: Vec<String>,
    pub seconds_per_movement: f64,
    pub timing: GuideTiming,
    /// Idle time between consecutive segments on the frame clock.
    pub gap_s: f64,
}

impl SessionScript {
    pub fn new(movements: &[&str], seconds_per_movement: f64) -> Self {
        Self {
            movements: movements.iter().map(|m| (*m).to_owned()).collect(),
            seconds_per_movement,
            timing: GuideTiming::default(),
            gap_s: 2.0,
        }
    }
}

/// Builds a complete recording without any I/O or pacing: for each movement,
/// frames driven by the guide activation and the 60 Hz guide itself.
///
/// Frame and guide clocks share an origin; frame `k` of the stream starts at
/// `k` frame periods. The drive of a frame is the guide activation at its
/// center. An empty movement list yields a recording without segments.
pub fn scripted_session(
    model: &SyntheticModel,
    catalog: &Catalog,
    script: &SessionScript,
) -> Result<SessionRecording, SimError> {
    let stream = StreamConfig::default();
    let period = stream.frame_period_us();
    let mut header = RecordingHeader::new(format!("synthetic-{}", model.seed), catalog.clone(), script.timing);
    header.stream = stream;
    let mut rec = SessionRecording::new(header);

    let n_frames = (script.seconds_per_movement * stream.frame_rate_hz()).round() as u64;
    let gap_frames = (script.gap_s * stream.frame_rate_hz()).round() as u64;
    let guide_period_us = 1e6 / GUIDE_RATE_HZ;
    let mut seq = 0u64;
    for movement in &script.movements {
        if movement == REST_ID {
            return Err(SimError::Script("rest is recorded implicitly".into()));
        }
        let idx = catalog
            .index_of(movement)
            .map_err(|_| SimError::UnknownMovement(movement.clone()))?;
        let display = catalog
            .display_template(movement)
            .map_err(|_| SimError::UnknownMovement(movement.clone()))?;
        let start = seq * period;
        let mut seg = Segment::new(movement.clone(), script.timing, start);
        for k in 0..n_frames {
            let t = (seq + k) * period;
            let rel = (t + period / 2 - start) as f64 / 1e6;
            let drive = DriveSignal {
                movement: movement.clone(),
                activation: script.timing.activation(rel),
            };
            seg.frames.push(synth_frame(model, &drive, (seq + k) as u32, t)?);
        }
        let end = start + n_frames * period;
        let mut g = 0u64;
        loop {
            let t = start + (g as f64 * guide_period_us).round() as u64;
            let (state, _) = guide_trajectory(display, &script.timing, (t - start) as f64 / 1e6);
            seg.guide.push(GuideSample::new(t, state, idx as u8));
            if t >= end {
                break;
            }
            g += 1;
        }
        rec.put_segment(seg);
        seq += n_frames + gap_frames;
    }
    Ok(rec)
}
