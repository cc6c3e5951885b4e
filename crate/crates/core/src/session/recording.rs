//! Session recordings and the `.mgr` container.
//!
//! ```text
//! "MGR1" | u32 header_len | header JSON
//! chunk* : u8 kind | u32 payload_len | payload
//!   0x01 segment  JSON {movement, timing, start_t_us}
//!   0x02 frame    1165 bytes, wire encoding
//!   0x03 guide    u64 t_us | 9 x f32 | u8 movement index     (45 bytes)
//!   0x7F end      u64 frames | u64 guide samples | sha256 of all preceding bytes
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kinematics::{Catalog, GuideTiming, HandState, HAND_DOF};
use crate::proto::{EmgFrame, StreamConfig, FRAME_LEN};

pub const SESSION_MAGIC: &[u8; 4] = b"MGR1";
pub const SCHEMA_VERSION: u32 = 1;
/// Guide stream rate, Hz.
pub const GUIDE_RATE_HZ: f64 = 60.0;

const CHUNK_SEGMENT: u8 = 0x01;
const CHUNK_FRAME: u8 = 0x02;
const CHUNK_GUIDE: u8 = 0x03;
const CHUNK_END: u8 = 0x7F;
const GUIDE_LEN: usize = 8 + 4 * HAND_DOF + 1;
const END_LEN: usize = 8 + 8 + 32;

#[derive(Debug, Error)]
pub enum SessionFileError {
    #[error("corrupt session file: {0}")]
    CorruptFile(String),
    #[error("session schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn corrupt(msg: impl Into<String>) -> SessionFileError {
    SessionFileError::CorruptFile(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingHeader {
    pub schema_version: u32,
    pub session_id: String,
    pub catalog: Catalog,
    pub stream: StreamConfig,
    pub guide_timing: GuideTiming,
    /// Recorded movements, in segment order.
    pub movements: Vec<String>,
    /// RFC 3339 creation time.
    pub created_at: String,
}

impl RecordingHeader {
    pub fn new(session_id: impl Into<String>, catalog: Catalog, guide_timing: GuideTiming) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            session_id: session_id.into(),
            catalog,
            stream: StreamConfig::default(),
            guide_timing,
            movements: Vec::new(),
            created_at: String::new(),
        }
    }
}

/// One sample of the 60 Hz guide stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuideSample {
    pub t_us: u64,
    pub state: HandState,
    /// Catalog index of the executed movement.
    pub movement: u8,
}

impl GuideSample {
    /// Rounds the state to `f32` precision so the sample survives persistence unchanged.
    pub fn new(t_us: u64, state: HandState, movement: u8) -> Self {
        Self {
            t_us,
            state: HandState::from_f32(state.to_f32()),
            movement,
        }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.t_us.to_le_bytes());
        for v in self.state.to_f32() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.movement);
    }

    fn decode(b: &[u8]) -> Self {
        let t_us = u64::from_le_bytes(b[0..8].try_into().expect("8 bytes"));
        let mut v = [0f32; HAND_DOF];
        for (i, x) in v.iter_mut().enumerate() {
            let o = 8 + 4 * i;
            *x = f32::from_le_bytes(b[o..o + 4].try_into().expect("4 bytes"));
        }
        Self {
            t_us,
            state: HandState::from_f32(v),
            movement: b[8 + 4 * HAND_DOF],
        }
    }
}

#[derive(Serialize)]
struct SegmentMeta<'a> {
    movement: &'a str,
    timing: GuideTiming,
    start_t_us: u64,
}

#[derive(Deserialize)]
struct OwnedSegmentMeta {
    movement: String,
    timing: GuideTiming,
    start_t_us: u64,
}

/// Frames and guide samples captured while one movement was displayed.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Executed movement id.
    pub movement: String,
    pub timing: GuideTiming,
    /// Guide time zero, on the frame clock.
    pub start_t_us: u64,
    pub frames: Vec<EmgFrame>,
    pub guide: Vec<GuideSample>,
}

impl Segment {
    pub fn new(movement: impl Into<String>, timing: GuideTiming, start_t_us: u64) -> Self {
        Self {
            movement: movement.into(),
            timing,
            start_t_us,
            frames: Vec::new(),
            guide: Vec::new(),
        }
    }

    /// Sequence discontinuities among the frames, as `(expected, got)` pairs.
    pub fn seq_gaps(&self) -> Vec<(u32, u32)> {
        self.frames
            .windows(2)
            .filter(|w| w[1].seq != w[0].seq.wrapping_add(1))
            .map(|w| (w[0].seq.wrapping_add(1), w[1].seq))
            .collect()
    }

    pub fn duration_s(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => (b.t_us - a.t_us) as f64 / 1e6,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecording {
    pub header: RecordingHeader,
    segments: Vec<Segment>,
}

impl SessionRecording {
    pub fn new(header: RecordingHeader) -> Self {
        Self {
            header,
            segments: Vec::new(),
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Stores a segment, replacing any earlier segment of the same movement.
    pub fn put_segment(&mut self, segment: Segment) {
        self.segments.retain(|s| s.movement != segment.movement);
        self.segments.push(segment);
        self.header.movements = self.segments.iter().map(|s| s.movement.clone()).collect();
    }

    pub fn remove_segment(&mut self, movement: &str) -> Option<Segment> {
        let i = self.segments.iter().position(|s| s.movement == movement)?;
        let seg = self.segments.remove(i);
        self.header.movements = self.segments.iter().map(|s| s.movement.clone()).collect();
        Some(seg)
    }

    pub fn frame_count(&self) -> usize {
        self.segments.iter().map(|s| s.frames.len()).sum()
    }

    pub fn guide_count(&self) -> usize {
        self.segments.iter().map(|s| s.guide.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.frame_count() * (FRAME_LEN + 5));
        out.extend_from_slice(SESSION_MAGIC);
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);

        let mut guide_buf = Vec::with_capacity(GUIDE_LEN);
        for seg in &self.segments {
            let meta = serde_json::to_vec(&SegmentMeta {
                movement: &seg.movement,
                timing: seg.timing,
                start_t_us: seg.start_t_us,
            })
            .expect("segment meta serializes");
            push_chunk(&mut out, CHUNK_SEGMENT, &meta);
            for f in &seg.frames {
                push_chunk(&mut out, CHUNK_FRAME, &f.encode());
            }
            for g in &seg.guide {
                guide_buf.clear();
                g.encode(&mut guide_buf);
                push_chunk(&mut out, CHUNK_GUIDE, &guide_buf);
            }
        }
        let digest = Sha256::digest(&out);
        let mut end = Vec::with_capacity(END_LEN);
        end.extend_from_slice(&(self.frame_count() as u64).to_le_bytes());
        end.extend_from_slice(&(self.guide_count() as u64).to_le_bytes());
        end.extend_from_slice(&digest);
        push_chunk(&mut out, CHUNK_END, &end);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SessionFileError> {
        if bytes.len() < 8 || &bytes[..4] != SESSION_MAGIC {
            return Err(corrupt("missing MGR1 magic"));
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let header_bytes = bytes
            .get(8..8 + header_len)
            .ok_or_else(|| corrupt("header truncated"))?;
        let raw: serde_json::Value =
            serde_json::from_slice(header_bytes).map_err(|e| corrupt(format!("header: {e}")))?;
        let found = raw
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| corrupt("header lacks schema_version"))?;
        if found != u64::from(SCHEMA_VERSION) {
            return Err(SessionFileError::SchemaVersionMismatch {
                found: found as u32,
                expected: SCHEMA_VERSION,
            });
        }
        let header: RecordingHeader =
            serde_json::from_value(raw).map_err(|e| corrupt(format!("header: {e}")))?;

        let mut rec = SessionRecording::new(header.clone());
        let mut current: Option<Segment> = None;
        let mut pos = 8 + header_len;
        loop {
            let kind = *bytes.get(pos).ok_or_else(|| corrupt("missing end chunk"))?;
            let len = bytes
                .get(pos + 1..pos + 5)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
                .ok_or_else(|| corrupt("chunk header truncated"))?;
            let payload = bytes
                .get(pos + 5..pos + 5 + len)
                .ok_or_else(|| corrupt("chunk payload truncated"))?;
            match kind {
                CHUNK_SEGMENT => {
                    if let Some(seg) = current.take() {
                        rec.segments.push(seg);
                    }
                    let meta: OwnedSegmentMeta = serde_json::from_slice(payload)
                        .map_err(|e| corrupt(format!("segment meta: {e}")))?;
                    current = Some(Segment::new(meta.movement, meta.timing, meta.start_t_us));
                }
                CHUNK_FRAME | CHUNK_GUIDE => {
                    let seg = current
                        .as_mut()
                        .ok_or_else(|| corrupt("data chunk before first segment"))?;
                    if kind == CHUNK_FRAME {
                        if len != FRAME_LEN {
                            return Err(corrupt("frame chunk has wrong length"));
                        }
                        let frame = EmgFrame::decode(payload)
                            .map_err(|e| corrupt(format!("frame: {e}")))?;
                        seg.frames.push(frame);
                    } else {
                        if len != GUIDE_LEN {
                            return Err(corrupt("guide chunk has wrong length"));
                        }
                        seg.guide.push(GuideSample::decode(payload));
                    }
                }
                CHUNK_END => {
                    if len != END_LEN {
                        return Err(corrupt("end chunk has wrong length"));
                    }
                    if let Some(seg) = current.take() {
                        rec.segments.push(seg);
                    }
                    let frames = u64::from_le_bytes(payload[0..8].try_into().expect("8 bytes"));
                    let guides = u64::from_le_bytes(payload[8..16].try_into().expect("8 bytes"));
                    if frames != rec.frame_count() as u64 || guides != rec.guide_count() as u64 {
                        return Err(corrupt("chunk counts disagree with end marker"));
                    }
                    if Sha256::digest(&bytes[..pos]).as_slice() != &payload[16..48] {
                        return Err(corrupt("checksum mismatch"));
                    }
                    if pos + 5 + len != bytes.len() {
                        return Err(corrupt("trailing bytes after end chunk"));
                    }
                    rec.header = header;
                    return Ok(rec);
                }
                other => return Err(corrupt(format!("unknown chunk kind 0x{other:02x}"))),
            }
            pos += 5 + len;
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), SessionFileError> {
        let tmp = path.with_extension("mgr.partial");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SessionFileError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn push_chunk(out: &mut Vec<u8>, kind: u8, payload: &[u8]) {
    out.push(kind);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> SessionRecording {
        let catalog = Catalog::standard();
        let timing = GuideTiming::default();
        let mut rec = SessionRecording::new(RecordingHeader::new("s-1", catalog.clone(), timing));
        let mut seq = 0u32;
        for movement in ["thumb", "index", "middle"] {
            let idx = catalog.index_of(movement).unwrap() as u8;
            let target = catalog.get(movement).unwrap().target;
            let start = u64::from(seq) * 9000;
            let mut seg = Segment::new(movement, timing, start);
            for _ in 0..50 {
                let s = seq;
                seg.frames.push(EmgFrame::from_fn(s, u64::from(s) * 9000, |c, k| {
                    (c as i16 * 7 - k as i16 * 3).wrapping_mul(s as i16)
                }));
                seq += 1;
            }
            for k in 0..27u64 {
                let a = timing.activation(k as f64 / 60.0);
                seg.guide.push(GuideSample::new(start + k * 16_667, target.scaled(a), idx));
            }
            rec.put_segment(seg);
        }
        rec
    }

    #[test]
    fn round_trip_is_exact() {
        let rec = fixture();
        let back = SessionRecording::from_bytes(&rec.to_bytes()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.header.movements, ["thumb", "index", "middle"]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.mgr");
        let rec = fixture();
        rec.save(&path).unwrap();
        assert_eq!(SessionRecording::load(&path).unwrap(), rec);
    }

    #[test]
    fn header_only_truncation_is_corrupt() {
        let bytes = fixture().to_bytes();
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let err = SessionRecording::from_bytes(&bytes[..8 + header_len]).unwrap_err();
        assert!(matches!(err, SessionFileError::CorruptFile(_)), "{err}");
        for cut in [3, 8 + header_len / 2, bytes.len() - 1] {
            assert!(matches!(
                SessionRecording::from_bytes(&bytes[..cut]),
                Err(SessionFileError::CorruptFile(_))
            ));
        }
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let mut bytes = fixture().to_bytes();
        let n = bytes.len();
        bytes[n / 2] ^= 0x01;
        assert!(SessionRecording::from_bytes(&bytes).is_err());
    }

    #[test]
    fn bumped_schema_version_is_rejected() {
        let mut rec = fixture();
        rec.header.schema_version = 2;
        let err = SessionRecording::from_bytes(&rec.to_bytes()).unwrap_err();
        assert!(matches!(
            err,
            SessionFileError::SchemaVersionMismatch {
                found: 2,
                expected: 1
            }
        ));
    }

    #[test]
    fn re_recording_replaces_segment() {
        let mut rec = fixture();
        let timing = GuideTiming::default();
        rec.put_segment(Segment::new("thumb", timing, 1_000_000));
        let thumbs: Vec<_> = rec.segments().iter().filter(|s| s.movement == "thumb").collect();
        assert_eq!(thumbs.len(), 1);
        assert_eq!(thumbs[0].start_t_us, 1_000_000);
        assert_eq!(rec.header.movements, ["index", "middle", "thumb"]);
    }

    #[test]
    fn seq_audit_finds_gaps() {
        let mut rec = fixture();
        assert!(rec.segments().iter().all(|s| s.seq_gaps().is_empty()));
        let mut seg = rec.segments()[0].clone();
        seg.frames.remove(10);
        let (expected, got) = seg.seq_gaps()[0];
        assert_eq!(got, expected + 1);
        rec.put_segment(seg);
    }
}
