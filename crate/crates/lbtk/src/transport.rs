//! In-process transport: one mpsc channel per ring edge and direction.
//!
//! Rank threads use this as their [`HaloLink`]. A frame travelling
//! `ToRight` flows from rank `i` to rank `(i + 1) % n`, so receiving a
//! `ToRight` frame means reading from the left neighbour's channel. With
//! one rank both edges loop back onto the same thread and the exchange
//! still moves every frame through a real channel.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::Duration;

use lbtk_core::exchange::{Direction, ExchangeError, HaloLink};

/// How long a blocked receive waits before re-checking the abort flag.
/// Neighbouring ranks drift by at most one step (each step consumes the
/// previous step's frames before posting new ones), so this only matters
/// when another rank has halted and will never send again.
const POLL_INTERVAL: Duration = Duration::from_millis(25);

pub struct MpscRing {
    tx_to_left: Sender<Vec<u8>>,
    tx_to_right: Sender<Vec<u8>>,
    rx_from_left: Receiver<Vec<u8>>,
    rx_from_right: Receiver<Vec<u8>>,
    abort: Arc<AtomicBool>,
}

impl MpscRing {
    fn recv_polling(&self, rx: &Receiver<Vec<u8>>) -> Result<Vec<u8>, ExchangeError> {
        loop {
            match rx.recv_timeout(POLL_INTERVAL) {
                Ok(frame) => return Ok(frame),
                Err(RecvTimeoutError::Timeout) => {
                    if self.abort.load(Ordering::Relaxed) {
                        return Err(ExchangeError::LinkClosed);
                    }
                }
                Err(RecvTimeoutError::Disconnected) => return Err(ExchangeError::LinkClosed),
            }
        }
    }
}

impl HaloLink for MpscRing {
    fn send(&mut self, dir: Direction, frame: Vec<u8>) -> Result<(), ExchangeError> {
        let tx = match dir {
            Direction::ToLeft => &self.tx_to_left,
            Direction::ToRight => &self.tx_to_right,
        };
        tx.send(frame).map_err(|_| ExchangeError::LinkClosed)
    }

    fn recv(&mut self, dir: Direction) -> Result<Vec<u8>, ExchangeError> {
        // A frame travelling right was sent by the left neighbour.
        let rx = match dir {
            Direction::ToRight => &self.rx_from_left,
            Direction::ToLeft => &self.rx_from_right,
        };
        self.recv_polling(rx)
    }
}

/// Build the links for an `n`-rank ring. Element `i` of the result is
/// rank `i`'s endpoint. The shared `abort` flag unblocks receivers when
/// some rank halts early (e.g. on a numerical blow-up).
pub fn mpsc_ring(n: usize, abort: Arc<AtomicBool>) -> Vec<MpscRing> {
    assert!(n >= 1, "ring needs at least one rank");
    // rightward[i]: rank i -> rank (i+1) % n; leftward[i]: rank i -> rank (i-1+n) % n.
    let mut rightward: Vec<(Option<Sender<Vec<u8>>>, Option<Receiver<Vec<u8>>>)> = (0..n)
        .map(|_| {
            let (tx, rx) = std::sync::mpsc::channel();
            (Some(tx), Some(rx))
        })
        .collect();
    let mut leftward: Vec<(Option<Sender<Vec<u8>>>, Option<Receiver<Vec<u8>>>)> = (0..n)
        .map(|_| {
            let (tx, rx) = std::sync::mpsc::channel();
            (Some(tx), Some(rx))
        })
        .collect();

    (0..n)
        .map(|i| {
            let left = (i + n - 1) % n;
            let right = (i + 1) % n;
            let tx_to_right = rightward[i].0.take().expect("sender consumed once");
            let tx_to_left = leftward[i].0.take().expect("sender consumed once");
            let rx_from_left = rightward[left].1.take().expect("receiver consumed once");
            let rx_from_right = leftward[right].1.take().expect("receiver consumed once");
            MpscRing {
                tx_to_left,
                tx_to_right,
                rx_from_left,
                rx_from_right,
                abort: Arc::clone(&abort),
            }
        })
        .collect()
}
