//! The two timed output streams: predictions (with smoothing) and the guide.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use myo_core::io_out::{
    encode_cursor, encode_hand, map_cursor, spawn_sender, CursorState, Interpolator, IoError, OutputKind,
    OutputTarget, SenderHandle,
};
use myo_core::kinematics::{guide_trajectory, HandState, REST_ID};
use myo_core::session::GuideSample;
use serde::Serialize;

use crate::recorder::RecMsg;
use crate::shared::Shared;

#[derive(Debug, Serialize)]
struct PredictionMsg<'a> {
    t_us: u64,
    class: &'a str,
    state: [f64; 9],
    cursor: Option<CursorState>,
}

#[derive(Debug, Serialize)]
struct GuideMsg<'a> {
    t_us: Option<u64>,
    movement: &'a str,
    activation: f64,
    state: [f64; 9],
}

/// Samples the latest decision at `target.rate_hz`, eases toward it and
/// emits it in the configured format. Runs even without a model, so the
/// consumer sees a steady rest stream.
pub fn spawn_prediction_sender(target: &OutputTarget, shared: Arc<Shared>) -> Result<SenderHandle, IoError> {
    let addrs: Vec<SocketAddr> = match target.kind {
        OutputKind::Null => Vec::new(),
        _ => target.addr.into_iter().collect(),
    };
    let kind = target.kind;
    let mut interp = Interpolator::new(HandState::REST, target.interp_s);
    let mut seen = shared.cell.version();
    let mut warned = false;
    spawn_sender("myo-prediction", target.rate_hz, addrs, move |_, dt| {
        let p = shared.cell.read();
        let version = shared.cell.version();
        let fresh = version != seen;
        seen = version;
        interp.set_target(p.state);
        let state = interp.step(dt);
        let class = {
            let classes = shared.classes.read().expect("classes lock");
            classes.get(p.class as usize).cloned().unwrap_or_else(|| REST_ID.to_owned())
        };
        let cursor = match kind {
            OutputKind::Cursor2d => Some(map_cursor(&class, p.activation).unwrap_or_else(|e| {
                if !warned {
                    log::warn!("{e}; cursor stays centered");
                    warned = true;
                }
                CursorState { x: 0.0, y: 0.0 }
            })),
            _ => None,
        };
        if fresh {
            shared.notify(
                "prediction",
                &PredictionMsg {
                    t_us: p.t_us,
                    class: &class,
                    state: *state.values(),
                    cursor,
                },
            );
        }
        Some(match cursor {
            Some(c) => encode_cursor(&c, p.t_us).to_vec(),
            None => encode_hand(&state, p.t_us).to_vec(),
        })
    })
}

/// Emits the guide hand at `rate_hz`; while a program with a recording is
/// active, every emitted state is also stored.
pub fn spawn_guide_sender(rate_hz: f64, targets: Vec<SocketAddr>, shared: Arc<Shared>) -> Result<SenderHandle, IoError> {
    spawn_sender("myo-guide", rate_hz, targets, move |_, _| {
        let now = Instant::now();
        let guide = shared.guide.lock().expect("guide lock");
        let (state, activation, t_us, movement) = match guide.as_ref() {
            Some(p) => {
                let elapsed = now.saturating_duration_since(p.origin);
                let (state, a) = guide_trajectory(&p.display, &p.timing, elapsed.as_secs_f64());
                let t_us = p.origin_t_us + elapsed.as_micros() as u64;
                if let Some(tx) = &p.record {
                    let _ = tx.send(RecMsg::Guide(GuideSample::new(t_us, state, p.movement_index)));
                }
                (state, a, Some(t_us), p.movement.clone())
            }
            None => (HandState::REST, 0.0, None, REST_ID.to_owned()),
        };
        drop(guide);
        shared.notify(
            "guide",
            &GuideMsg {
                t_us,
                movement: &movement,
                activation,
                state: *state.values(),
            },
        );
        Some(encode_hand(&state, t_us.unwrap_or(0)).to_vec())
    })
}
