//! Follow mode: the simulated participant imitates the guide hand it is
//! shown, which arrives as hand datagrams over UDP.

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use myo_core::io_out::decode_hand;
use myo_core::kinematics::{Catalog, HandState, HAND_DOF, REST_ID};

use crate::model::DriveSignal;
use crate::SimError;

/// Below this peak component a guide state counts as rest.
const REST_EPSILON: f64 = 1e-3;

/// Explains a guide state as one template scaled by an activation, choosing
/// the template with the smallest residual (lowest catalog index on ties).
///
/// With a remapped display the result names the displayed template, which is
/// all the guide reveals.
pub fn explain_guide(catalog: &Catalog, state: &HandState) -> DriveSignal {
    let g = state.values();
    if g.iter().all(|&v| v < REST_EPSILON) {
        return DriveSignal::rest();
    }
    let mut best: Option<(f64, &str, f64)> = None;
    for t in catalog.templates().iter().filter(|t| t.id != REST_ID) {
        let tv = t.target.values();
        let tt: f64 = tv.iter().map(|v| v * v).sum();
        if tt == 0.0 {
            continue;
        }
        let a = ((0..HAND_DOF).map(|i| g[i] * tv[i]).sum::<f64>() / tt).clamp(0.0, 1.0);
        let resid: f64 = (0..HAND_DOF).map(|i| (g[i] - a * tv[i]).powi(2)).sum();
        if best.is_none_or(|(r, _, _)| resid < r - 1e-12) {
            best = Some((resid, &t.id, a));
        }
    }
    match best {
        Some((_, id, a)) => DriveSignal {
            movement: id.to_owned(),
            activation: a,
        },
        None => DriveSignal::rest(),
    }
}

/// Latest drive decoded from incoming guide datagrams.
#[derive(Debug)]
pub struct GuideFollower {
    latest: Arc<Mutex<DriveSignal>>,
    received: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
    local: SocketAddr,
    thread: Option<JoinHandle<()>>,
}

impl GuideFollower {
    pub fn bind(addr: SocketAddr, catalog: Catalog) -> Result<Self, SimError> {
        let socket = UdpSocket::bind(addr).map_err(|e| SimError::bind(addr, e))?;
        socket.set_read_timeout(Some(Duration::from_millis(50)))?;
        let local = socket.local_addr()?;
        let latest = Arc::new(Mutex::new(DriveSignal::rest()));
        let received = Arc::new(AtomicU64::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let (l2, r2, s2) = (latest.clone(), received.clone(), stop.clone());
        let thread = thread::Builder::new()
            .name("simdev-follow".into())
            .spawn(move || {
                let mut buf = [0u8; 256];
                while !s2.load(Ordering::Relaxed) {
                    let n = match socket.recv(&mut buf) {
                        Ok(n) => n,
                        Err(_) => continue,
                    };
                    match decode_hand(&buf[..n]) {
                        Ok(d) => {
                            *l2.lock().expect("drive lock") = explain_guide(&catalog, &d.state());
                            r2.fetch_add(1, Ordering::Relaxed);
                        }
                        Err(e) => log::debug!("ignoring datagram: {e}"),
                    }
                }
            })?;
        Ok(Self {
            latest,
            received,
            stop,
            local,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn received(&self) -> u64 {
        self.received.load(Ordering::Relaxed)
    }

    pub fn drive(&self) -> DriveSignal {
        self.latest.lock().expect("drive lock").clone()
    }

    /// A cheap handle for the serving thread.
    pub fn source(&self) -> Arc<Mutex<DriveSignal>> {
        self.latest.clone()
    }
}

impl Drop for GuideFollower {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use myo_core::io_out::encode_hand;
    use std::time::Instant;

    #[test]
    fn explains_scaled_templates() {
        let c = Catalog::standard();
        for t in c.templates().iter().skip(1) {
            for a in [0.1, 0.5, 1.0] {
                let d = explain_guide(&c, &t.target.scaled(a));
                assert_eq!(d.movement, t.id);
                assert!((d.activation - a).abs() < 1e-12);
            }
        }
        assert_eq!(explain_guide(&c, &HandState::REST), DriveSignal::rest());
    }

    #[test]
    fn follows_datagrams() {
        let c = Catalog::standard();
        let f = GuideFollower::bind("127.0.0.1:0".parse().unwrap(), c.clone()).unwrap();
        let tx = UdpSocket::bind("127.0.0.1:0").unwrap();
        let state = c.get("pinch3").unwrap().target.scaled(0.75);
        let deadline = Instant::now() + Duration::from_secs(2);
        while f.received() == 0 && Instant::now() < deadline {
            tx.send_to(&encode_hand(&state, 1), f.local_addr()).unwrap();
            thread::sleep(Duration::from_millis(10));
        }
        let d = f.drive();
        assert_eq!(d.movement, "pinch3");
        assert!((d.activation - 0.75).abs() < 1e-6);
    }
}
