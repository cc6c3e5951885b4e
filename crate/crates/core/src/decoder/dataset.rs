use std::ops::Range;

use crate::dsp::{extract_features, ChannelMap};
use crate::kinematics::{HandState, ACTIVATION_BOUNDARY, REST_ID};
use crate::proto::{FrameBuffer, CHANNELS, DEFAULT_BUFFER_FRAMES};
use crate::session::SessionRecording;

use super::DecoderError;

/// Temporal partition: train, then calibration, then test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub calibration: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    /// First 80% for training (its last eighth held out for calibration), last 20% for test.
    pub fn temporal(n: usize) -> Self {
        let fit_end = n * 4 / 5;
        let cal_start = fit_end - fit_end / 8;
        Self {
            train: 0..cal_start,
            calibration: cal_start..fit_end,
            test: fit_end..n,
        }
    }
}

/// Labeled RMS features, one row per window.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Class names by index; index 0 is rest.
    pub classes: Vec<String>,
    n_features: usize,
    x: Vec<f64>,
    pub y: Vec<usize>,
    /// Mean guide state over each window.
    pub guide: Vec<HandState>,
    /// Newest-frame timestamp of each window.
    pub t_us: Vec<u64>,
    /// Index of the source segment of each window.
    pub segment: Vec<usize>,
    /// Executed movement of each segment.
    pub segment_movements: Vec<String>,
    pub split: Split,
}

impl Dataset {
    /// Builds a dataset from already-computed rows; the split is temporal.
    pub fn from_rows(
        classes: Vec<String>,
        n_features: usize,
        x: Vec<f64>,
        y: Vec<usize>,
        guide: Vec<HandState>,
    ) -> Self {
        let n = y.len();
        assert_eq!(x.len(), n * n_features, "feature matrix shape");
        assert_eq!(guide.len(), n, "guide length");
        Self {
            classes,
            n_features,
            x,
            y,
            guide,
            t_us: vec![0; n],
            segment: vec![0; n],
            segment_movements: vec![String::new()],
            split: Split::temporal(n),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Contiguous row-major block of rows.
    pub fn rows(&self, range: Range<usize>) -> &[f64] {
        &self.x[range.start * self.n_features..range.end * self.n_features]
    }

    pub fn class_counts(&self, range: Range<usize>) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &c in &self.y[range] {
            counts[c] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone)]
pub struct AssembleOptions {
    pub buffer_frames: usize,
    pub channel_map: ChannelMap,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            buffer_frames: DEFAULT_BUFFER_FRAMES,
            channel_map: ChannelMap::default(),
        }
    }
}

/// Slides the feature window over every segment, one sample per new frame.
///
/// The temporal split is applied within each segment; rows are then ordered
/// as all train parts, all calibration parts, all test parts, each in
/// segment order, so `Dataset::split` stays contiguous.
///
/// Each sample is labeled from the mean guide state over the window's time
/// span under the 50% rule: the segment's movement at or above the boundary,
/// rest below. Rest is never recorded on its own; it comes from the low
/// phases of every segment.
pub fn assemble(rec: &SessionRecording, opts: &AssembleOptions) -> Result<Dataset, DecoderError> {
    let catalog = &rec.header.catalog;
    let period = rec.header.stream.frame_period_us();
    let mut classes = vec![REST_ID.to_owned()];
    for seg in rec.segments() {
        if seg.movement != REST_ID && !classes.contains(&seg.movement) {
            classes.push(seg.movement.clone());
        }
    }

    let mut parts = Vec::new();
    for (si, seg) in rec.segments().iter().enumerate() {
        let need = 2 * opts.buffer_frames;
        if seg.frames.len() < need {
            return Err(DecoderError::TooShort {
                movement: seg.movement.clone(),
                frames: seg.frames.len(),
                need,
            });
        }
        let display = catalog
            .display_template(&seg.movement)
            .map_err(|_| DecoderError::UnknownMovement(seg.movement.clone()))?;
        let class = classes.iter().position(|c| *c == seg.movement).unwrap_or(0);

        let mut part = Dataset::from_rows(classes.clone(), CHANNELS, Vec::new(), Vec::new(), Vec::new());
        let mut buf = FrameBuffer::new(opts.buffer_frames);
        for frame in &seg.frames {
            buf.push(frame.clone());
            if !buf.is_full() {
                continue;
            }
            let fv = extract_features(&buf, &opts.channel_map).expect("buffer is full");
            let start = buf.oldest().expect("full").t_us;
            let end = fv.t_us + period;
            let lo = seg.guide.partition_point(|g| g.t_us < start);
            let hi = seg.guide.partition_point(|g| g.t_us < end);
            let mean = HandState::mean(seg.guide[lo..hi].iter().map(|g| &g.state)).ok_or_else(
                || DecoderError::MissingGuide {
                    movement: seg.movement.clone(),
                    t_us: fv.t_us,
                },
            )?;
            let active = display.activation(&mean) >= ACTIVATION_BOUNDARY;
            part.x.extend_from_slice(&fv.rms);
            part.y.push(if active { class } else { 0 });
            part.guide.push(mean);
            part.t_us.push(fv.t_us);
            part.segment.push(si);
        }
        part.split = Split::temporal(part.len());
        parts.push(part);
    }

    // Concatenate the train parts of all segments, then calibration, then test.
    let mut ds = Dataset::from_rows(classes, CHANNELS, Vec::new(), Vec::new(), Vec::new());
    let mut bounds = [0; 3];
    for (b, pick) in [
        (|s: &Split| s.train.clone()) as fn(&Split) -> Range<usize>,
        |s| s.calibration.clone(),
        |s| s.test.clone(),
    ]
    .into_iter()
    .enumerate()
    {
        for part in &parts {
            let r = pick(&part.split);
            ds.x.extend_from_slice(part.rows(r.clone()));
            ds.y.extend_from_slice(&part.y[r.clone()]);
            ds.guide.extend_from_slice(&part.guide[r.clone()]);
            ds.t_us.extend_from_slice(&part.t_us[r.clone()]);
            ds.segment.extend_from_slice(&part.segment[r]);
        }
        bounds[b] = ds.len();
    }
    ds.segment_movements = rec.segments().iter().map(|s| s.movement.clone()).collect();
    ds.split = Split {
        train: 0..bounds[0],
        calibration: bounds[0]..bounds[1],
        test: bounds[1]..bounds[2],
    };
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Catalog, GuideTiming};
    use crate::proto::EmgFrame;
    use crate::session::{GuideSample, RecordingHeader, Segment};

    /// Frames whose amplitude on one channel tracks the guide activation.
    fn segment(movement: &str, catalog: &Catalog, first_seq: u32, frames: u32) -> Segment {
        let timing = GuideTiming::default();
        let start = u64::from(first_seq) * 9000;
        let idx = catalog.index_of(movement).unwrap() as u8;
        let target = catalog.display_template(movement).unwrap().target;
        let mut seg = Segment::new(movement, timing, start);
        for k in 0..frames {
            let t = u64::from(k) * 9000;
            let a = timing.activation(t as f64 / 1e6);
            let amp = (100.0 * (1.0 + 5.0 * a)) as i16;
            seg.frames.push(EmgFrame::from_fn(first_seq + k, start + t, |ch, s| {
                if ch == usize::from(idx) && s % 2 == 0 {
                    amp
                } else if ch == usize::from(idx) {
                    -amp
                } else {
                    0
                }
            }));
        }
        let span = u64::from(frames) * 9000;
        let mut t = 0;
        while t < span {
            let a = timing.activation(t as f64 / 1e6);
            seg.guide.push(GuideSample::new(start + t, target.scaled(a), idx));
            t += 16_667;
        }
        seg
    }

    fn recording(movements: &[&str], frames: u32) -> SessionRecording {
        let catalog = Catalog::standard();
        let mut rec = SessionRecording::new(RecordingHeader::new(
            "t",
            catalog.clone(),
            GuideTiming::default(),
        ));
        let mut seq = 0;
        for m in movements {
            rec.put_segment(segment(m, &catalog, seq, frames));
            seq += frames;
        }
        rec
    }

    #[test]
    fn one_sample_per_frame_after_warmup() {
        let rec = recording(&["thumb"], 3333);
        let ds = assemble(&rec, &AssembleOptions::default()).unwrap();
        assert_eq!(ds.len(), 3333 - 19);
        assert_eq!(ds.classes, ["rest", "thumb"]);
    }

    #[test]
    fn three_movements_give_rest_three_times_each_class() {
        let rec = recording(&["thumb", "index", "middle"], 3333);
        let ds = assemble(&rec, &AssembleOptions::default()).unwrap();
        let counts = ds.class_counts(0..ds.len());
        assert_eq!(ds.classes.len(), 4);
        for &c in &counts[1..] {
            let ratio = counts[0] as f64 / c as f64;
            assert!((ratio - 3.0).abs() < 0.15, "rest/movement ratio {ratio}");
        }
    }

    #[test]
    fn labels_form_contiguous_blocks() {
        let rec = recording(&["index"], 1700);
        let ds = assemble(&rec, &AssembleOptions::default()).unwrap();
        let transitions = ds.y.windows(2).filter(|w| w[0] != w[1]).count();
        // 1700 frames = 15.3 s: two full cycles plus the start of a third.
        assert_eq!(transitions, 4);
        for (g, &c) in ds.guide.iter().zip(&ds.y) {
            let a = Catalog::standard().get("index").unwrap().activation(g);
            assert_eq!(c == 1, a >= 0.5);
        }
    }

    #[test]
    fn every_segment_is_split_by_time() {
        let rec = recording(&["thumb", "index"], 1000);
        let ds = assemble(&rec, &AssembleOptions::default()).unwrap();
        for seg in 0..2 {
            let rows = |r: Range<usize>| -> Vec<u64> {
                r.filter(|&i| ds.segment[i] == seg).map(|i| ds.t_us[i]).collect()
            };
            let (train, cal, test) = (
                rows(ds.split.train.clone()),
                rows(ds.split.calibration.clone()),
                rows(ds.split.test.clone()),
            );
            assert_eq!(train.len() + cal.len() + test.len(), 981);
            assert_eq!(test.len(), 981 - 981 * 4 / 5);
            assert!(train.last() < cal.first() && cal.last() < test.first());
        }
        assert_eq!(ds.split.test.end, ds.len());
    }

    #[test]
    fn split_is_temporal_and_exhaustive() {
        let s = Split::temporal(1000);
        assert_eq!(s.train, 0..700);
        assert_eq!(s.calibration, 700..800);
        assert_eq!(s.test, 800..1000);
    }

    #[test]
    fn short_segment_and_missing_guide_are_errors() {
        let rec = recording(&["thumb"], 39);
        assert!(matches!(
            assemble(&rec, &AssembleOptions::default()),
            Err(DecoderError::TooShort { frames: 39, need: 40, .. })
        ));
        let mut rec = recording(&["thumb"], 100);
        let mut seg = rec.segments()[0].clone();
        seg.guide.clear();
        rec.put_segment(seg);
        assert!(matches!(
            assemble(&rec, &AssembleOptions::default()),
            Err(DecoderError::MissingGuide { .. })
        ));
    }
}
