//! Amplifier wire protocol and the rolling ingestion buffer.
//!
//! Every amplifier emission is one fixed-size frame:
//!
//! ```text
//! offset  size  field
//! 0       1     magic (0xE7)
//! 1       4     seq, u32 little-endian
//! 5       8     t_us, u64 little-endian
//! 13      1152  32 channels x 18 samples, i16 little-endian, channel-major
//! ```
//!
//! The magic byte lets a reader resynchronize after a partial read.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHANNELS: usize = 32;
pub const SAMPLES_PER_FRAME: usize = 18;
pub const FRAME_MAGIC: u8 = 0xE7;
pub const FRAME_HEADER_LEN: usize = 13;
pub const FRAME_LEN: usize = FRAME_HEADER_LEN + CHANNELS * SAMPLES_PER_FRAME * 2;
/// Frames held by the feature window.
pub const DEFAULT_BUFFER_FRAMES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ProtoError {
    #[error("bad magic byte 0x{0:02x}; stream out of sync")]
    BadMagic(u8),
    #[error("truncated frame: have {have} of {need} bytes")]
    Truncated { have: usize, need: usize },
    #[error("frame buffer not full: {have} of {need} frames")]
    NotFull { have: usize, need: usize },
}

/// Acquisition parameters of the amplifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub sample_rate_hz: u32,
    pub channels: u32,
    pub samples_per_frame: u32,
    pub adc_bits: u32,
    pub gain: u32,
    /// Allowed deviation of consecutive frame timestamps from the nominal period.
    pub jitter_tolerance_us: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 2000,
            channels: CHANNELS as u32,
            samples_per_frame: SAMPLES_PER_FRAME as u32,
            adc_bits: 16,
            gain: 4,
            jitter_tolerance_us: 3000,
        }
    }
}

impl StreamConfig {
    pub fn frame_rate_hz(&self) -> f64 {
        f64::from(self.sample_rate_hz) / f64::from(self.samples_per_frame)
    }

    /// Nominal frame period, 9000 us at 2 kHz / 18 samples.
    pub fn frame_period_us(&self) -> u64 {
        u64::from(self.samples_per_frame) * 1_000_000 / u64::from(self.sample_rate_hz)
    }
}

/// One amplifier emission: 32 channels x 18 samples of raw ADC counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmgFrame {
    pub seq: u32,
    /// Capture time of the first sample, microseconds since session start.
    pub t_us: u64,
    /// Channel-major samples, `samples[channel][sample]`.
    pub samples: Box<[[i16; SAMPLES_PER_FRAME]; CHANNELS]>,
}

impl EmgFrame {
    pub fn zeroed(seq: u32, t_us: u64) -> Self {
        Self {
            seq,
            t_us,
            samples: Box::new([[0; SAMPLES_PER_FRAME]; CHANNELS]),
        }
    }

    pub fn from_fn(seq: u32, t_us: u64, mut f: impl FnMut(usize, usize) -> i16) -> Self {
        let mut frame = Self::zeroed(seq, t_us);
        for (ch, row) in frame.samples.iter_mut().enumerate() {
            for (s, v) in row.iter_mut().enumerate() {
                *v = f(ch, s);
            }
        }
        frame
    }

    pub fn encode(&self) -> [u8; FRAME_LEN] {
        let mut out = [0u8; FRAME_LEN];
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut [u8; FRAME_LEN]) {
        out[0] = FRAME_MAGIC;
        out[1..5].copy_from_slice(&self.seq.to_le_bytes());
        out[5..13].copy_from_slice(&self.t_us.to_le_bytes());
        let payload = &mut out[FRAME_HEADER_LEN..];
        for (i, v) in self.samples.iter().flatten().enumerate() {
            payload[2 * i..2 * i + 2].copy_from_slice(&v.to_le_bytes());
        }
    }

    /// Decodes one frame from the front of `bytes`; trailing bytes are ignored.
    pub fn decode(bytes: &[u8]) -> Result<Self, ProtoError> {
        if let Some(&b) = bytes.first() {
            if b != FRAME_MAGIC {
                return Err(ProtoError::BadMagic(b));
            }
        }
        if bytes.len() < FRAME_LEN {
            return Err(ProtoError::Truncated {
                have: bytes.len(),
                need: FRAME_LEN,
            });
        }
        let seq = u32::from_le_bytes(bytes[1..5].try_into().expect("4 bytes"));
        let t_us = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes"));
        let payload = &bytes[FRAME_HEADER_LEN..FRAME_LEN];
        let mut frame = Self::zeroed(seq, t_us);
        for (i, v) in frame.samples.iter_mut().flatten().enumerate() {
            *v = i16::from_le_bytes([payload[2 * i], payload[2 * i + 1]]);
        }
        Ok(frame)
    }
}

/// Incremental frame parser for a TCP byte stream.
///
/// Bytes may arrive split at any position. On a bad magic byte the parser
/// discards input up to the next 0xE7 and counts the skipped bytes.
#[derive(Debug, Default)]
pub struct FrameParser {
    pending: Vec<u8>,
    start: usize,
    skipped_bytes: u64,
}

impl FrameParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        if self.start > 0 && self.start == self.pending.len() {
            self.pending.clear();
            self.start = 0;
        }
        self.pending.extend_from_slice(bytes);
    }

    /// Next complete frame, or `None` when more bytes are needed.
    pub fn next_frame(&mut self) -> Option<EmgFrame> {
        loop {
            let avail = &self.pending[self.start..];
            match EmgFrame::decode(avail) {
                Ok(frame) => {
                    self.start += FRAME_LEN;
                    self.compact();
                    return Some(frame);
                }
                Err(ProtoError::BadMagic(_)) => {
                    let skip = avail
                        .iter()
                        .position(|&b| b == FRAME_MAGIC)
                        .unwrap_or(avail.len());
                    self.skipped_bytes += skip as u64;
                    self.start += skip;
                }
                Err(_) => {
                    self.compact();
                    return None;
                }
            }
        }
    }

    /// Bytes discarded while resynchronizing.
    pub fn skipped_bytes(&self) -> u64 {
        self.skipped_bytes
    }

    pub fn buffered_len(&self) -> usize {
        self.pending.len() - self.start
    }

    fn compact(&mut self) {
        if self.start >= 64 * FRAME_LEN || self.start == self.pending.len() {
            self.pending.drain(..self.start);
            self.start = 0;
        }
    }
}

/// Result of pushing a frame into a [`FrameBuffer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushOutcome {
    Appended,
    /// The oldest frame was evicted to make room.
    Evicted,
    /// A sequence discontinuity flushed the buffer before appending.
    GapFlushed { expected: u32, got: u32 },
}

/// Rolling window of the most recent contiguous frames, oldest first.
#[derive(Debug, Clone)]
pub struct FrameBuffer {
    capacity: usize,
    frames: VecDeque<EmgFrame>,
    gaps: u64,
}

impl Default for FrameBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_BUFFER_FRAMES)
    }
}

impl FrameBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "frame buffer capacity must be positive");
        Self {
            capacity,
            frames: VecDeque::with_capacity(capacity + 1),
            gaps: 0,
        }
    }

    pub fn push(&mut self, frame: EmgFrame) -> PushOutcome {
        let mut outcome = PushOutcome::Appended;
        if let Some(last) = self.frames.back() {
            let expected = last.seq.wrapping_add(1);
            if frame.seq != expected {
                log::warn!(
                    "frame sequence gap: expected {expected}, got {}; flushing buffer",
                    frame.seq
                );
                self.frames.clear();
                self.gaps += 1;
                outcome = PushOutcome::GapFlushed {
                    expected,
                    got: frame.seq,
                };
            }
        }
        self.frames.push_back(frame);
        if self.frames.len() > self.capacity {
            self.frames.pop_front();
            outcome = PushOutcome::Evicted;
        }
        outcome
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() == self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of sequence gaps seen since construction.
    pub fn gaps(&self) -> u64 {
        self.gaps
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &EmgFrame> {
        self.frames.iter()
    }

    pub fn newest(&self) -> Option<&EmgFrame> {
        self.frames.back()
    }

    pub fn oldest(&self) -> Option<&EmgFrame> {
        self.frames.front()
    }

    /// Total samples per channel currently held.
    pub fn samples_per_channel(&self) -> usize {
        self.frames.len() * SAMPLES_PER_FRAME
    }

    /// Concatenates the full buffer into a channel-major signal matrix.
    pub fn concat(&self) -> Result<SignalMatrix, ProtoError> {
        if !self.is_full() {
            return Err(ProtoError::NotFull {
                have: self.frames.len(),
                need: self.capacity,
            });
        }
        let len = self.samples_per_channel();
        let mut data = vec![0.0; CHANNELS * len];
        for (fi, frame) in self.frames.iter().enumerate() {
            let offset = fi * SAMPLES_PER_FRAME;
            for (ch, row) in frame.samples.iter().enumerate() {
                let dst = &mut data[ch * len + offset..ch * len + offset + SAMPLES_PER_FRAME];
                for (d, &s) in dst.iter_mut().zip(row) {
                    *d = f64::from(s);
                }
            }
        }
        Ok(SignalMatrix {
            channels: CHANNELS,
            len,
            data,
        })
    }
}

/// Channel-major real-valued signal, `channels` rows of `len` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    channels: usize,
    len: usize,
    data: Vec<f64>,
}

impl SignalMatrix {
    pub fn new(channels: usize, len: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == channels * len).then_some(Self {
            channels,
            len,
            data,
        })
    }

    pub fn zeros(channels: usize, len: usize) -> Self {
        Self {
            channels,
            len,
            data: vec![0.0; channels * len],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.data[ch * self.len..(ch + 1) * self.len]
    }

    pub fn channel_mut(&mut self, ch: usize) -> &mut [f64] {
        &mut self.data[ch * self.len..(ch + 1) * self.len]
    }

    pub fn get(&self, ch: usize, t: usize) -> f64 {
        self.data[ch * self.len + t]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame_with(seq: u32, value: i16) -> EmgFrame {
        EmgFrame::from_fn(seq, u64::from(seq) * 9000, |_, _| value)
    }

    #[test]
    fn frame_length_is_1165() {
        assert_eq!(FRAME_LEN, 1165);
        let bytes = EmgFrame::zeroed(0, 0).encode();
        assert_eq!(bytes.len(), 1165);
        assert_eq!(bytes[0], 0xE7);
        assert!(bytes[13..].iter().all(|&b| b == 0));
    }

    #[test]
    fn first_sample_is_little_endian_at_offset_13() {
        let mut frame = EmgFrame::zeroed(0, 0);
        frame.samples[0][0] = 1;
        let bytes = frame.encode();
        assert_eq!(bytes[13], 0x01);
        assert_eq!(bytes[14], 0x00);
    }

    #[test]
    fn header_fields_are_little_endian() {
        let frame = EmgFrame::zeroed(0x0102_0304, 0x0A0B_0C0D_0E0F_1011);
        let bytes = frame.encode();
        assert_eq!(&bytes[1..5], &[0x04, 0x03, 0x02, 0x01]);
        assert_eq!(&bytes[5..13], &[0x11, 0x10, 0x0F, 0x0E, 0x0D, 0x0C, 0x0B, 0x0A]);
    }

    #[test]
    fn decode_rejects_bad_magic_and_short_input() {
        let mut bytes = EmgFrame::zeroed(3, 27_000).encode();
        assert_eq!(
            EmgFrame::decode(&bytes[..1164]),
            Err(ProtoError::Truncated {
                have: 1164,
                need: 1165
            })
        );
        bytes[0] = 0x00;
        assert_eq!(EmgFrame::decode(&bytes), Err(ProtoError::BadMagic(0)));
    }

    #[test]
    fn parser_resyncs_after_garbage() {
        let a = frame_with(1, 5);
        let b = frame_with(2, -5);
        let mut stream = vec![0x00, 0x11, 0x22];
        stream.extend_from_slice(&a.encode());
        stream.extend_from_slice(&[0x42; 7]);
        stream.extend_from_slice(&b.encode());
        let mut parser = FrameParser::new();
        parser.feed(&stream);
        assert_eq!(parser.next_frame(), Some(a));
        assert_eq!(parser.next_frame(), Some(b));
        assert_eq!(parser.next_frame(), None);
        assert_eq!(parser.skipped_bytes(), 10);
    }

    #[test]
    fn buffer_fills_to_360_samples_and_evicts() {
        let mut buf = FrameBuffer::default();
        for seq in 0..20 {
            assert_eq!(buf.push(frame_with(seq, 1)), PushOutcome::Appended);
        }
        assert!(buf.is_full());
        assert_eq!(buf.samples_per_channel(), 360);
        assert_eq!(buf.push(frame_with(20, 1)), PushOutcome::Evicted);
        assert_eq!(buf.oldest().unwrap().seq, 1);
        assert_eq!(buf.newest().unwrap().seq, 20);
    }

    #[test]
    fn sequence_gap_flushes_buffer() {
        let mut buf = FrameBuffer::default();
        for seq in 0..=5 {
            buf.push(frame_with(seq, 0));
        }
        let outcome = buf.push(frame_with(7, 0));
        assert_eq!(outcome, PushOutcome::GapFlushed { expected: 6, got: 7 });
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.gaps(), 1);
        // No window until 20 contiguous frames re-accumulate.
        for seq in 8..26 {
            buf.push(frame_with(seq, 0));
            assert!(buf.concat().is_err());
        }
        buf.push(frame_with(26, 0));
        assert!(buf.concat().is_ok());
    }

    #[test]
    fn concat_requires_full_buffer() {
        let mut buf = FrameBuffer::default();
        buf.push(frame_with(0, 0));
        assert_eq!(buf.concat(), Err(ProtoError::NotFull { have: 1, need: 20 }));
    }

    #[test]
    fn concat_of_ones_and_block_order() {
        let mut ones = FrameBuffer::default();
        let mut ordered = FrameBuffer::default();
        for seq in 1..=20 {
            ones.push(frame_with(seq, 1));
            ordered.push(frame_with(seq, seq as i16));
        }
        let m = ones.concat().unwrap();
        assert_eq!((m.channels(), m.len()), (32, 360));
        assert!(m.as_slice().iter().all(|&v| v == 1.0));

        let m = ordered.concat().unwrap();
        for ch in 0..CHANNELS {
            for (block, chunk) in m.channel(ch).chunks(SAMPLES_PER_FRAME).enumerate() {
                assert!(chunk.iter().all(|&v| v == (block + 1) as f64));
            }
        }
    }

    fn arb_frame() -> impl Strategy<Value = EmgFrame> {
        (
            any::<u32>(),
            any::<u64>(),
            prop::collection::vec(any::<i16>(), CHANNELS * SAMPLES_PER_FRAME),
        )
            .prop_map(|(seq, t_us, flat)| {
                EmgFrame::from_fn(seq, t_us, |ch, s| flat[ch * SAMPLES_PER_FRAME + s])
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn encode_decode_round_trip(frame in arb_frame()) {
            let bytes = frame.encode();
            prop_assert_eq!(EmgFrame::decode(&bytes).unwrap(), frame);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fragmentation_does_not_change_parsed_frames(
            frames in prop::collection::vec(arb_frame(), 1..6),
            cuts in prop::collection::vec(1usize..700, 0..40),
        ) {
            let stream: Vec<u8> = frames.iter().flat_map(|f| f.encode()).collect();
            let mut parser = FrameParser::new();
            let mut out = Vec::new();
            let mut pos: usize = 0;
            for cut in cuts.iter().copied().chain(std::iter::once(usize::MAX)) {
                let end = pos.saturating_add(cut).min(stream.len());
                parser.feed(&stream[pos..end]);
                while let Some(f) = parser.next_frame() {
                    out.push(f);
                }
                pos = end;
                if pos == stream.len() {
                    break;
                }
            }
            prop_assert_eq!(out, frames);
            prop_assert_eq!(parser.skipped_bytes(), 0);
        }

        #[test]
        fn concat_matches_naive_loop(frames in prop::collection::vec(arb_frame(), 20)) {
            let mut buf = FrameBuffer::default();
            let mut seq = 100u32;
            for mut f in frames.clone() {
                f.seq = seq;
                seq += 1;
                buf.push(f);
            }
            let m = buf.concat().unwrap();
            for ch in 0..CHANNELS {
                let mut naive = Vec::new();
                for f in &frames {
                    for s in 0..SAMPLES_PER_FRAME {
                        naive.push(f64::from(f.samples[ch][s]));
                    }
                }
                prop_assert_eq!(m.channel(ch), naive.as_slice());
            }
        }
    }
}
