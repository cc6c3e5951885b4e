//! Offline evaluation of a trained model against recorded data.

use std::sync::Arc;

use super::report::{guide_class, nearest_guide, prediction_instant, MovementResult, PairedPrediction, ValidationReport};
use super::{Segment, SessionRecording};
use crate::conformal::{predict_set, PredictionSet, SolverWindow};
use crate::decoder::{Classifier, Dataset, DecoderError, SavedModel};
use crate::kinematics::Catalog;
use crate::pipeline::LiveDecoder;

/// Replays a segment's frames through the live chain and pairs every
/// decision with the nearest guide sample at the window center.
pub fn replay_segment(
    seg: &Segment,
    decoder: &mut LiveDecoder,
    catalog: &Catalog,
    period_us: u64,
) -> Result<(Vec<PairedPrediction>, usize), DecoderError> {
    let classes = decoder.model().classes.clone();
    if !classes.contains(&seg.movement) {
        return Err(DecoderError::UnknownMovement(seg.movement.clone()));
    }
    decoder.reset();
    let buffer_frames = decoder.buffer_frames();
    let mut preds = Vec::new();
    let mut certain = 0;
    for frame in &seg.frames {
        let Some(out) = decoder.push(frame.clone())? else {
            continue;
        };
        let t = prediction_instant(out.t_us, period_us, buffer_frames);
        let Some(g) = nearest_guide(&seg.guide, t) else {
            return Err(DecoderError::MissingGuide {
                movement: seg.movement.clone(),
                t_us: t,
            });
        };
        certain += usize::from(out.set.certain);
        preds.push(PairedPrediction {
            t_us: t,
            truth: guide_class(g, &seg.movement, catalog, &classes),
            naive: out.naive,
            conformal: out.class,
        });
    }
    Ok((preds, certain))
}

/// Replays every segment of a recording; one report row per movement.
pub fn replay_validation(
    rec: &SessionRecording,
    saved: Arc<SavedModel>,
    conformal: bool,
) -> Result<ValidationReport, DecoderError> {
    let mut decoder = LiveDecoder::new(saved);
    decoder.set_conformal(conformal);
    let period = rec.header.stream.frame_period_us();
    let mut results = Vec::new();
    for seg in rec.segments() {
        let (preds, certain) = replay_segment(seg, &mut decoder, &rec.header.catalog, period)?;
        results.push(MovementResult::from_predictions(&seg.movement, &preds, certain));
    }
    Ok(ValidationReport::new(results, decoder.conformal()))
}

/// Scores dataset rows in order against their window labels.
///
/// The solver restarts at every segment boundary. Rows are grouped into
/// report entries by the movement of their source segment.
pub fn evaluate_rows(
    ds: &Dataset,
    rows: std::ops::Range<usize>,
    saved: &SavedModel,
    conformal: bool,
) -> Result<ValidationReport, DecoderError> {
    let cal = saved.calibration.as_ref().filter(|_| conformal);
    let mut solver = SolverWindow::default();
    let mut groups: Vec<(String, Vec<PairedPrediction>, usize)> = Vec::new();
    let mut prev_segment = None;
    for i in rows {
        let seg = ds.segment[i];
        if prev_segment != Some(seg) {
            solver.clear();
            prev_segment = Some(seg);
        }
        let name = ds.segment_movements.get(seg).cloned().unwrap_or_default();
        let x = saved.normalizer.apply(ds.row(i))?;
        let probs = saved.model.predict_proba(&x)?;
        let naive = probs.argmax();
        let set = match cal {
            Some(cal) => predict_set(probs, cal),
            None => PredictionSet::argmax(probs),
        };
        let certain = usize::from(set.certain);
        let class = if cal.is_some() { solver.solve(set) } else { naive };
        let pred = PairedPrediction {
            t_us: ds.t_us[i],
            truth: ds.y[i],
            naive,
            conformal: class,
        };
        match groups.iter_mut().find(|g| g.0 == name) {
            Some(g) => {
                g.1.push(pred);
                g.2 += certain;
            }
            None => groups.push((name, vec![pred], certain)),
        }
    }
    let results = groups
        .iter()
        .map(|(name, preds, certain)| MovementResult::from_predictions(name, preds, *certain))
        .collect();
    Ok(ValidationReport::new(results, cal.is_some()))
}
