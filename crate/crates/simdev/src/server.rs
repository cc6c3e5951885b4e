//! TCP service emitting wire frames to one client at a time.

use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use myo_core::proto::{EmgFrame, StreamConfig, FRAME_LEN};
use myo_core::session::SessionRecording;

use crate::model::{synth_frame, DriveSignal, SyntheticModel};
use crate::script::Script;
use crate::SimError;

/// Where a synthetic stream takes its drive from.
#[derive(Debug, Clone)]
pub enum Drive {
    Rest,
    Script(Script),
    /// Shared latest drive, e.g. from a [`crate::GuideFollower`].
    Shared(Arc<Mutex<DriveSignal>>),
}

impl Drive {
    fn at(&self, t_s: f64) -> DriveSignal {
        match self {
            Drive::Rest => DriveSignal::rest(),
            Drive::Script(s) => s.drive_at(t_s),
            Drive::Shared(d) => d.lock().expect("drive lock").clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Source {
    Synth { model: SyntheticModel, drive: Drive },
    /// Frames are sent verbatim, in order.
    Replay(Arc<Vec<EmgFrame>>),
}

impl Source {
    pub fn replay(rec: &SessionRecording) -> Self {
        Source::Replay(Arc::new(rec.segments().iter().flat_map(|s| s.frames.iter().cloned()).collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    /// Pace frames on the wall clock; otherwise send as fast as the client reads.
    pub realtime: bool,
    /// Close each connection after this many frames.
    pub max_frames: Option<u64>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            realtime: true,
            max_frames: None,
        }
    }
}

/// A bound listener, not yet serving.
#[derive(Debug)]
pub struct SimServer {
    listener: TcpListener,
}

impl SimServer {
    pub fn bind(addr: SocketAddr) -> Result<Self, SimError> {
        let listener = TcpListener::bind(addr).map_err(|e| SimError::bind(addr, e))?;
        Ok(Self { listener })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    pub fn spawn(self, source: Source, opts: ServeOptions) -> Result<ServerHandle, SimError> {
        self.listener.set_nonblocking(true)?;
        let addr = self.local_addr();
        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(ServerCounters::default());
        let (stop2, stats2) = (stop.clone(), stats.clone());
        let thread = thread::Builder::new()
            .name("simdev-serve".into())
            .spawn(move || accept_loop(self.listener, source, opts, &stop2, &stats2))?;
        Ok(ServerHandle {
            addr,
            stop,
            stats,
            thread: Some(thread),
        })
    }
}

#[derive(Debug, Default)]
struct ServerCounters {
    frames: AtomicU64,
    clients: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerStats {
    pub frames_sent: u64,
    pub clients_served: u64,
}

/// Running server; stops on drop.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    stats: Arc<ServerCounters>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> ServerStats {
        ServerStats {
            frames_sent: self.stats.frames.load(Ordering::Relaxed),
            clients_served: self.stats.clients.load(Ordering::Relaxed),
        }
    }

    pub fn stop(mut self) -> ServerStats {
        self.shutdown();
        self.stats()
    }

    /// Blocks until the server stops by itself (never, unless the thread panics).
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, source: Source, opts: ServeOptions, stop: &AtomicBool, stats: &ServerCounters) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::info!("client {peer} connected");
                stats.clients.fetch_add(1, Ordering::Relaxed);
                match serve_client(stream, &source, opts, stop, stats) {
                    Ok(n) => log::info!("client {peer} done after {n} frames"),
                    Err(e) => log::info!("client {peer} disconnected: {e}"),
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn serve_client(
    mut stream: TcpStream,
    source: &Source,
    opts: ServeOptions,
    stop: &AtomicBool,
    stats: &ServerCounters,
) -> io::Result<u64> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_write_timeout(Some(Duration::from_millis(200)))?;
    let period = StreamConfig::default().frame_period_us();
    let limit = match source {
        Source::Replay(frames) => opts.max_frames.map_or(frames.len() as u64, |m| m.min(frames.len() as u64)),
        Source::Synth { .. } => opts.max_frames.unwrap_or(u64::MAX),
    };
    let start = Instant::now();
    let mut bytes = [0u8; FRAME_LEN];
    let mut k = 0u64;
    while k < limit {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        if opts.realtime {
            let deadline = start + Duration::from_micros(k * period);
            let now = Instant::now();
            if deadline > now {
                thread::sleep(deadline - now);
            }
        }
        match source {
            Source::Replay(frames) => frames[k as usize].encode_into(&mut bytes),
            Source::Synth { model, drive } => {
                let t_us = k * period;
                let d = drive.at((t_us + period / 2) as f64 / 1e6);
                let frame = synth_frame(model, &d, k as u32, t_us)
                    .or_else(|e| {
                        log::warn!("{e}; sending rest");
                        synth_frame(model, &DriveSignal::rest(), k as u32, t_us)
                    })
                    .expect("rest is always valid");
                frame.encode_into(&mut bytes);
            }
        }
        write_all_interruptible(&mut stream, &bytes, stop)?;
        stats.frames.fetch_add(1, Ordering::Relaxed);
        k += 1;
    }
    let _ = stream.flush();
    Ok(k)
}

/// `write_all` that gives up once `stop` is raised, so a stalled client
/// cannot pin the server.
fn write_all_interruptible(stream: &mut TcpStream, mut buf: &[u8], stop: &AtomicBool) -> io::Result<()> {
    while !buf.is_empty() {
        match stream.write(buf) {
            Ok(0) => return Err(io::ErrorKind::WriteZero.into()),
            Ok(n) => buf = &buf[n..],
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted) => {
                if stop.load(Ordering::Relaxed) {
                    return Err(io::ErrorKind::ConnectionAborted.into());
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}
