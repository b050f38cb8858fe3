//! In-process device/server link. Every message crosses it as an encoded
//! byte frame, so nothing is shared between the two ends by reference.

use std::sync::mpsc::{channel, Receiver, Sender};

use serde::{Deserialize, Serialize};

use super::workload::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Frame {
    /// Step 2: cut-layer activations and labels, device to server.
    Activations {
        device: usize,
        round: usize,
        activations: Matrix,
        labels: Matrix,
    },
    /// Step 4: cut-layer gradients, server to device.
    CutGradients {
        device: usize,
        round: usize,
        gradients: Matrix,
    },
}

impl Frame {
    pub fn encode(&self) -> Result<Vec<u8>> {
        bincode::serialize(self).map_err(|e| Error::Channel(e.to_string()))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        bincode::deserialize(bytes).map_err(|e| Error::Channel(e.to_string()))
    }
}

/// One end of a bidirectional link.
pub struct Endpoint {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    sent_bytes: usize,
}

impl Endpoint {
    pub fn send(&mut self, frame: &Frame) -> Result<()> {
        let bytes = frame.encode()?;
        self.sent_bytes += bytes.len();
        self.tx
            .send(bytes)
            .map_err(|_| Error::Channel("peer hung up".into()))
    }

    pub fn recv(&self) -> Result<Frame> {
        let bytes = self
            .rx
            .recv()
            .map_err(|_| Error::Channel("peer hung up".into()))?;
        Frame::decode(&bytes)
    }

    pub fn sent_bytes(&self) -> usize {
        self.sent_bytes
    }
}

/// A connected (device, server) pair of endpoints.
pub fn link() -> (Endpoint, Endpoint) {
    let (up_tx, up_rx) = channel();
    let (down_tx, down_rx) = channel();
    (
        Endpoint {
            tx: up_tx,
            rx: down_rx,
            sent_bytes: 0,
        },
        Endpoint {
            tx: down_tx,
            rx: up_rx,
            sent_bytes: 0,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_cross_the_link_bit_exact() {
        let (mut dev, srv) = link();
        let m = Matrix {
            rows: 1,
            cols: 3,
            data: vec![0.1, -1e-300, f64::MAX],
        };
        let f = Frame::Activations {
            device: 4,
            round: 2,
            activations: m.clone(),
            labels: m,
        };
        dev.send(&f).unwrap();
        assert_eq!(srv.recv().unwrap(), f);
        assert!(dev.sent_bytes() > 0);
    }

    #[test]
    fn hung_up_peer_is_an_error() {
        let (dev, srv) = link();
        drop(srv);
        assert!(dev.recv().is_err());
    }
}
