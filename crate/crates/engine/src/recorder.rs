//! Writer thread collecting one segment; its queue blocks producers instead
//! of dropping.

use std::thread::{self, JoinHandle};

use crossbeam_channel::{bounded, Sender};
use myo_core::proto::EmgFrame;
use myo_core::session::{GuideSample, Segment};

pub const RECORDER_QUEUE: usize = 4096;

#[derive(Debug)]
pub enum RecMsg {
    Frame(EmgFrame),
    Guide(GuideSample),
}

#[derive(Debug)]
pub struct Recorder {
    tx: Sender<RecMsg>,
    thread: JoinHandle<Segment>,
}

impl Recorder {
    pub fn start(mut segment: Segment) -> Self {
        let (tx, rx) = bounded::<RecMsg>(RECORDER_QUEUE);
        let thread = thread::Builder::new()
            .name("myo-recorder".into())
            .spawn(move || {
                for msg in rx {
                    match msg {
                        RecMsg::Frame(f) => segment.frames.push(f),
                        RecMsg::Guide(g) => segment.guide.push(g),
                    }
                }
                segment
            })
            .expect("spawn recorder thread");
        Self { tx, thread }
    }

    pub fn sender(&self) -> Sender<RecMsg> {
        self.tx.clone()
    }

    /// Waits until every other sender is gone and the queue is drained.
    pub fn finish(self) -> Segment {
        drop(self.tx);
        self.thread.join().expect("recorder thread panicked")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use myo_core::kinematics::{GuideTiming, HandState};

    #[test]
    fn keeps_everything_in_order() {
        let r = Recorder::start(Segment::new("thumb", GuideTiming::default(), 0));
        let tx = r.sender();
        let producer = thread::spawn(move || {
            for k in 0..20_000u32 {
                tx.send(RecMsg::Frame(EmgFrame::zeroed(k, u64::from(k) * 9000))).unwrap();
            }
        });
        r.sender().send(RecMsg::Guide(GuideSample::new(5, HandState::REST, 1))).unwrap();
        producer.join().unwrap();
        let seg = r.finish();
        assert_eq!(seg.frames.len(), 20_000);
        assert!(seg.seq_gaps().is_empty());
        assert_eq!(seg.guide.len(), 1);
    }
}
