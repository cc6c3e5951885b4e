//! Session workflow: recordings, the orchestration state machine, training,
//! and validation metrics.

mod machine;
mod recording;
mod report;
mod validate;

use std::time::{Duration, Instant};

pub use machine::{DeviceStatus, ModelStatus, Phase, SessionError, SessionState};
pub use recording::{
    GuideSample, RecordingHeader, Segment, SessionFileError, SessionRecording, GUIDE_RATE_HZ, SCHEMA_VERSION,
    SESSION_MAGIC,
};
pub use report::{
    guide_class, mean_std, nearest_guide, prediction_instant, MovementResult, PairedPrediction, ValidationReport,
};
pub use validate::{evaluate_rows, replay_segment, replay_validation};

use crate::conformal::{calibrate, RapsParams};
use crate::decoder::{
    assemble, predict, train_gbdt, AssembleOptions, Dataset, DecoderError, GbdtParams, SavedModel, TrainTrace,
};

/// Everything `train_session` needs besides the data.
#[derive(Debug, Clone, Default)]
pub struct TrainConfig {
    pub gbdt: GbdtParams,
    pub raps: RapsParams,
    pub assemble: AssembleOptions,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub saved: SavedModel,
    pub dataset: Dataset,
    pub trace: TrainTrace,
    /// Wall time of tree fitting alone.
    pub fit_time: Duration,
    /// Wall time of assembly, fitting and calibration.
    pub total_time: Duration,
}

/// Assembles the dataset, trains the classifier and calibrates RAPS on the
/// calibration split.
pub fn train_session(rec: &SessionRecording, cfg: &TrainConfig) -> Result<TrainOutcome, DecoderError> {
    let start = Instant::now();
    let dataset = assemble(rec, &cfg.assemble)?;
    let fit_start = Instant::now();
    let (model, normalizer, trace) = train_gbdt(&dataset, &cfg.gbdt)?;
    let fit_time = fit_start.elapsed();

    let cal_rows = dataset.split.calibration.clone();
    let calibration = if cal_rows.is_empty() {
        None
    } else {
        let probs = cal_rows
            .clone()
            .map(|i| predict(&model, &normalizer, dataset.row(i)))
            .collect::<Result<Vec<_>, _>>()?;
        let samples = probs.iter().zip(&dataset.y[cal_rows]).map(|(p, &y)| (p, y));
        Some(calibrate(samples, &cfg.raps).map_err(|e| DecoderError::Calibration(e.to_string()))?)
    };
    let saved = SavedModel {
        model,
        normalizer,
        classes: dataset.classes.clone(),
        catalog_hash: rec.header.catalog.content_hash(),
        calibration,
    };
    Ok(TrainOutcome {
        saved,
        dataset,
        trace,
        fit_time,
        total_time: start.elapsed(),
    })
}
