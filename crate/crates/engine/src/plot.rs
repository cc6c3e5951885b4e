//! Peak-keeping decimation of frames for the live channel display.

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError};
use myo_core::proto::{EmgFrame, CHANNELS, SAMPLES_PER_FRAME};
use serde::Serialize;

use crate::shared::Shared;

/// Values kept per channel and frame: a (min, max) pair for each half frame.
pub const PLOT_K: usize = 4;
const BIN: usize = SAMPLES_PER_FRAME / 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotChunk {
    pub seq: u32,
    pub t_us: u64,
    /// `channels[c]` holds `PLOT_K` values in time order.
    pub channels: Vec<[f32; PLOT_K]>,
}

/// Chunks coalesced into one plot message, plus the running drop count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotBatch {
    pub chunks: Vec<PlotChunk>,
    pub dropped: u64,
}

/// Each half frame contributes its minimum and maximum, in the order they
/// occurred, so spikes survive and the trace keeps its shape.
pub fn decimate_for_plot(frame: &EmgFrame) -> PlotChunk {
    let channels = frame
        .samples
        .iter()
        .map(|row| {
            let mut out = [0f32; PLOT_K];
            for (b, bin) in row.chunks_exact(BIN).enumerate() {
                let (mut lo, mut hi) = (0, 0);
                for (i, v) in bin.iter().enumerate() {
                    if *v < bin[lo] {
                        lo = i;
                    }
                    if *v > bin[hi] {
                        hi = i;
                    }
                }
                let (first, second) = if lo <= hi { (lo, hi) } else { (hi, lo) };
                out[2 * b] = f32::from(bin[first]);
                out[2 * b + 1] = f32::from(bin[second]);
            }
            out
        })
        .collect::<Vec<_>>();
    debug_assert_eq!(channels.len(), CHANNELS);
    PlotChunk {
        seq: frame.seq,
        t_us: frame.t_us,
        channels,
    }
}

/// Coalesces queued chunks into at most `max_rate_hz` batches per second.
/// Ends when the engine shuts down.
pub fn spawn_plot_stream(rx: Receiver<PlotChunk>, max_rate_hz: f64, shared: Arc<Shared>) -> std::io::Result<JoinHandle<()>> {
    let interval = Duration::from_secs_f64(1.0 / max_rate_hz);
    thread::Builder::new().name("myo-plot".into()).spawn(move || {
        let mut next = Instant::now() + interval;
        let mut chunks = Vec::new();
        loop {
            match rx.recv_timeout(next.saturating_duration_since(Instant::now())) {
                Ok(c) => {
                    chunks.push(c);
                    continue;
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return,
            }
            if shared.shutdown.load(Ordering::Relaxed) {
                return;
            }
            next += interval;
            let now = Instant::now();
            if next < now {
                next = now + interval;
            }
            if chunks.is_empty() {
                continue;
            }
            shared.counters.plot_chunks.fetch_add(chunks.len() as u64, Ordering::Relaxed);
            let batch = PlotBatch {
                chunks: std::mem::take(&mut chunks),
                dropped: shared.counters.plot_dropped.load(Ordering::Relaxed),
            };
            shared.notify_plot(&batch);
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_frame() {
        let f = EmgFrame::from_fn(0, 0, |_, _| -17);
        let c = decimate_for_plot(&f);
        assert_eq!(c.channels.len(), 32);
        assert!(c.channels.iter().flatten().all(|&v| v == -17.0));
    }

    #[test]
    fn spikes_survive() {
        for pos in 0..SAMPLES_PER_FRAME {
            let f = EmgFrame::from_fn(0, 0, |ch, s| if ch == 5 && s == pos { 9000 } else { 0 });
            let c = decimate_for_plot(&f);
            assert!(c.channels[5].contains(&9000.0), "spike at {pos}");
            let g = EmgFrame::from_fn(0, 0, |ch, s| if ch == 5 && s == pos { -9000 } else { 3 });
            assert!(decimate_for_plot(&g).channels[5].contains(&-9000.0));
        }
    }

    #[test]
    fn sine_envelope() {
        // 500 Hz at 2 kHz: four samples per period, phase offset keeps every
        // sample off the peak.
        let amp = 1000.0;
        let f = EmgFrame::from_fn(0, 0, |_, s| {
            (amp * (std::f64::consts::FRAC_PI_2 * s as f64 + 0.3).sin()).round() as i16
        });
        let sampled = (0..SAMPLES_PER_FRAME)
            .map(|s| (amp * (std::f64::consts::FRAC_PI_2 * s as f64 + 0.3).sin()).round())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let c = decimate_for_plot(&f);
        let env = c.channels[0].iter().fold(0f32, |m, v| m.max(v.abs())) as f64;
        assert!((env - sampled).abs() <= 0.05 * sampled);
        let hi = c.channels[0].iter().copied().fold(f32::MIN, f32::max) as f64;
        let lo = c.channels[0].iter().copied().fold(f32::MAX, f32::min) as f64;
        assert!(((hi - lo) / 2.0 - sampled).abs() <= 0.05 * sampled);
        // Against the continuous signal as well: the samples miss the crest
        // by 0.3 rad at most.
        assert!((env - amp).abs() <= 0.05 * amp, "{env}");
        assert!(((hi - lo) / 2.0 - amp).abs() <= 0.05 * amp);
    }

    #[test]
    fn order_is_preserved() {
        let f = EmgFrame::from_fn(0, 0, |_, s| match s {
            2 => 50,
            6 => -50,
            10 => -20,
            15 => 20,
            _ => 0,
        });
        assert_eq!(decimate_for_plot(&f).channels[0], [50.0, -50.0, -20.0, 20.0]);
    }
}
