//! Device connection and the per-frame hot path.
//!
//! Every frame is, in order: counted, handed to the plot queue (dropped if
//! full), forwarded to an active recording (blocking), and decoded when a
//! model is installed. The decoder result goes to the latest-state cell.

use std::io::{ErrorKind, Read};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender, TrySendError};
use myo_core::io_out::Published;
use myo_core::kinematics::HandState;
use myo_core::pipeline::LiveDecoder;
use myo_core::proto::{EmgFrame, FrameParser};

use crate::plot::decimate_for_plot;
use crate::recorder::RecMsg;
use crate::shared::Shared;

/// Decoder installed in the device thread, with the hand state per class.
#[derive(Debug, Clone)]
pub struct ActiveModel {
    pub decoder: LiveDecoder,
    pub states: Vec<HandState>,
}

#[derive(Debug)]
pub enum IngestCtl {
    Model(Option<ActiveModel>),
}

/// Why a device thread ended on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkLost {
    pub link: u64,
    pub reason: String,
}

#[derive(Debug)]
pub struct DeviceLink {
    pub id: u64,
    pub addr: SocketAddr,
    ctl: Sender<IngestCtl>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

pub fn resolve(addr: &str) -> std::io::Result<SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| std::io::Error::new(ErrorKind::NotFound, format!("cannot resolve {addr}")))
}

impl DeviceLink {
    pub fn connect(
        id: u64,
        addr: SocketAddr,
        connect_timeout: Duration,
        read_timeout: Duration,
        shared: Arc<Shared>,
        on_lost: impl FnOnce(LinkLost) + Send + 'static,
    ) -> std::io::Result<Self> {
        let stream = TcpStream::connect_timeout(&addr, connect_timeout)?;
        stream.set_nodelay(true)?;
        // Short reads so a stop request is noticed quickly; silence is
        // measured separately against `read_timeout`.
        stream.set_read_timeout(Some(Duration::from_millis(50)))?;
        let (ctl, ctl_rx) = unbounded();
        let stop = Arc::new(AtomicBool::new(false));
        let stop2 = stop.clone();
        let thread = thread::Builder::new().name("myo-ingest".into()).spawn(move || {
            let reason = ingest_loop(stream, read_timeout, &shared, &ctl_rx, &stop2);
            if let Some(reason) = reason {
                on_lost(LinkLost { link: id, reason });
            }
        })?;
        Ok(Self {
            id,
            addr,
            ctl,
            stop,
            thread: Some(thread),
        })
    }

    pub fn set_model(&self, model: Option<ActiveModel>) {
        let _ = self.ctl.send(IngestCtl::Model(model));
    }

    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for DeviceLink {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Returns the loss reason, or `None` when stopped on request.
fn ingest_loop(
    mut stream: TcpStream,
    read_timeout: Duration,
    shared: &Shared,
    ctl: &Receiver<IngestCtl>,
    stop: &AtomicBool,
) -> Option<String> {
    let mut parser = FrameParser::new();
    let mut buf = vec![0u8; 64 * 1024];
    let mut model: Option<ActiveModel> = None;
    let mut prev_seq: Option<u32> = None;
    let mut last_data = Instant::now();
    loop {
        if stop.load(Ordering::Relaxed) {
            return None;
        }
        while let Ok(IngestCtl::Model(m)) = ctl.try_recv() {
            model = m;
        }
        let n = match stream.read(&mut buf) {
            Ok(0) => return Some("device closed the connection".into()),
            Ok(n) => n,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {
                if last_data.elapsed() > read_timeout {
                    return Some(format!("no data for {} ms", read_timeout.as_millis()));
                }
                continue;
            }
            Err(e) => return Some(e.to_string()),
        };
        last_data = Instant::now();
        parser.feed(&buf[..n]);
        loop {
            let t0 = Instant::now();
            let Some(frame) = parser.next_frame() else {
                break;
            };
            process(frame, t0, shared, &mut model, &mut prev_seq);
            shared.ingest_latency.record(t0.elapsed());
        }
    }
}

fn process(frame: EmgFrame, arrived: Instant, shared: &Shared, model: &mut Option<ActiveModel>, prev: &mut Option<u32>) {
    let c = &shared.counters;
    c.frames_received.fetch_add(1, Ordering::Relaxed);
    if prev.is_some_and(|p| frame.seq != p.wrapping_add(1)) {
        c.seq_gaps.fetch_add(1, Ordering::Relaxed);
    }
    *prev = Some(frame.seq);
    *shared.last_frame.lock().expect("last frame lock") = Some((frame.t_us, arrived));

    match shared.plot_queue.try_send(decimate_for_plot(&frame)) {
        Ok(()) => {}
        Err(TrySendError::Full(_)) => {
            c.plot_dropped.fetch_add(1, Ordering::Relaxed);
        }
        Err(TrySendError::Disconnected(_)) => {}
    }

    {
        let tap = shared.recorder_tap.lock().expect("tap lock");
        if let Some(tx) = tap.as_ref() {
            if tx.send(RecMsg::Frame(frame.clone())).is_ok() {
                c.recorded_frames.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    if let Some(m) = model.as_mut() {
        let t0 = Instant::now();
        let out = m.decoder.push(frame);
        let elapsed = t0.elapsed();
        match out {
            Ok(Some(d)) => {
                shared.window_latency.record(elapsed);
                c.decoded_windows.fetch_add(1, Ordering::Relaxed);
                shared.cell.write(&Published {
                    t_us: d.t_us,
                    class: d.class as u32,
                    activation: 1.0,
                    state: m.states.get(d.class).copied().unwrap_or(HandState::REST),
                });
            }
            Ok(None) => {}
            Err(e) => log::warn!("decoding failed: {e}"),
        }
    }
}
