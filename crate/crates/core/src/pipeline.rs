//! Frame-to-decision chain: buffer, features, classifier, prediction set, solver.

use std::sync::Arc;

use crate::conformal::{predict_set, PredictionSet, SolverWindow};
use crate::decoder::{predict, DecoderError, SavedModel, SoftmaxOutput};
use crate::dsp::{extract_features, ChannelMap, FeatureVector};
use crate::proto::{EmgFrame, FrameBuffer, PushOutcome, DEFAULT_BUFFER_FRAMES};

/// Output of one decoded window.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub seq: u32,
    /// Newest frame's timestamp.
    pub t_us: u64,
    pub features: FeatureVector,
    pub set: PredictionSet,
    /// Argmax class.
    pub naive: usize,
    /// Solver output, or the argmax class when conformal prediction is off.
    pub class: usize,
}

impl Decoded {
    pub fn probs(&self) -> &SoftmaxOutput {
        &self.set.probs
    }
}

/// Stateful decoder fed one frame at a time.
#[derive(Debug, Clone)]
pub struct LiveDecoder {
    saved: Arc<SavedModel>,
    map: ChannelMap,
    buffer: FrameBuffer,
    solver: SolverWindow,
    conformal: bool,
}

impl LiveDecoder {
    /// Conformal prediction is on when the model carries a calibration.
    pub fn new(saved: Arc<SavedModel>) -> Self {
        let conformal = saved.calibration.is_some();
        Self {
            saved,
            map: ChannelMap::default(),
            buffer: FrameBuffer::new(DEFAULT_BUFFER_FRAMES),
            solver: SolverWindow::default(),
            conformal,
        }
    }

    pub fn with_buffer_frames(mut self, frames: usize) -> Self {
        self.buffer = FrameBuffer::new(frames);
        self
    }

    pub fn with_channel_map(mut self, map: ChannelMap) -> Self {
        self.map = map;
        self
    }

    /// Has no effect without a calibration.
    pub fn set_conformal(&mut self, on: bool) {
        self.conformal = on && self.saved.calibration.is_some();
    }

    pub fn conformal(&self) -> bool {
        self.conformal
    }

    pub fn model(&self) -> &Arc<SavedModel> {
        &self.saved
    }

    pub fn buffer_frames(&self) -> usize {
        self.buffer.capacity()
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
        self.solver.clear();
    }

    /// Adds a frame; returns a decision once the buffer is full.
    pub fn push(&mut self, frame: EmgFrame) -> Result<Option<Decoded>, DecoderError> {
        if let PushOutcome::GapFlushed { .. } = self.buffer.push(frame) {
            self.solver.clear();
        }
        if !self.buffer.is_full() {
            return Ok(None);
        }
        self.decode_full_buffer().map(Some)
    }

    fn decode_full_buffer(&mut self) -> Result<Decoded, DecoderError> {
        let features = extract_features(&self.buffer, &self.map).expect("buffer is full");
        let seq = self.buffer.newest().expect("full").seq;
        let probs = predict(&self.saved.model, &self.saved.normalizer, &features.rms)?;
        let naive = probs.argmax();
        let (set, class) = match (&self.saved.calibration, self.conformal) {
            (Some(cal), true) => {
                let set = predict_set(probs, cal);
                let class = self.solver.solve(set.clone());
                (set, class)
            }
            _ => (PredictionSet::argmax(probs), naive),
        };
        Ok(Decoded {
            seq,
            t_us: features.t_us,
            features,
            set,
            naive,
            class,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::RapsCalibration;
    use crate::decoder::{GbdtModel, Normalizer};

    fn saved(calibration: Option<RapsCalibration>) -> Arc<SavedModel> {
        Arc::new(SavedModel {
            model: GbdtModel::zero(32, 3, 2),
            normalizer: Normalizer {
                mean: vec![0.0; 32],
                std: vec![1.0; 32],
            },
            classes: vec!["rest".into(), "a".into(), "b".into()],
            catalog_hash: String::new(),
            calibration,
        })
    }

    #[test]
    fn decides_once_buffer_is_full() {
        let mut d = LiveDecoder::new(saved(None));
        for k in 0..19 {
            assert!(d.push(EmgFrame::zeroed(k, u64::from(k) * 9000)).unwrap().is_none());
        }
        let out = d.push(EmgFrame::zeroed(19, 171_000)).unwrap().unwrap();
        assert_eq!((out.seq, out.t_us), (19, 171_000));
        assert_eq!(out.naive, 0);
        assert_eq!(out.class, 0);
        assert!(out.set.certain);
    }

    #[test]
    fn gap_restarts_warmup() {
        let mut d = LiveDecoder::new(saved(None));
        for k in 0..20 {
            d.push(EmgFrame::zeroed(k, u64::from(k) * 9000)).unwrap();
        }
        assert!(d.push(EmgFrame::zeroed(25, 225_000)).unwrap().is_none());
    }

    #[test]
    fn conformal_toggle_needs_calibration() {
        let mut d = LiveDecoder::new(saved(None));
        d.set_conformal(true);
        assert!(!d.conformal());
        let cal = RapsCalibration::new(0.1, 0.01, 1, 0.7).unwrap();
        let mut d = LiveDecoder::new(saved(Some(cal)));
        assert!(d.conformal());
        for k in 0..20 {
            let out = d.push(EmgFrame::zeroed(k, u64::from(k) * 9000)).unwrap();
            if let Some(out) = out {
                // Uniform probs with q_hat 0.7: two classes in the set.
                assert_eq!(out.set.labels, vec![0, 1]);
                assert_eq!(out.class, 0);
            }
        }
    }
}
