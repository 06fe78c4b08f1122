//! Device-to-device link latency and the ring all-reduce.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwdesc::LinkParameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectiveSpec {
    /// Bytes held by each participant.
    pub payload_bytes: u64,
    pub participants: u32,
}

impl CollectiveSpec {
    pub fn new(payload_bytes: u64, participants: u32) -> Result<Self> {
        if participants == 0 {
            return Err(Error::invariant("netsim", "collective needs at least one participant"));
        }
        Ok(CollectiveSpec {
            payload_bytes,
            participants,
        })
    }
}

/// Bytes on the wire for an `n`-byte message: one flit header per packet.
pub fn wire_bytes(n: u64, link: &LinkParameters) -> u64 {
    let packets = if link.max_payload_bytes == 0 {
        0
    } else {
        n.div_ceil(link.max_payload_bytes)
    };
    packets * link.flit_size_bytes + n
}

/// `L + O + n̂ / B`.
pub fn link_transfer_latency(n: u64, link: &LinkParameters) -> f64 {
    let wire = wire_bytes(n, link) as f64;
    let transfer = if wire == 0.0 {
        0.0
    } else {
        wire / link.bandwidth_bytes_per_s
    };
    link.latency_s + link.overhead_s + transfer
}

/// Point-to-point send between pipeline stages.
pub fn p2p_latency(n: u64, link: &LinkParameters) -> f64 {
    link_transfer_latency(n, link)
}

/// Reduce-scatter then all-gather, `2(p − 1)` serialized steps of one chunk each.
pub fn ring_allreduce_latency(c: &CollectiveSpec, link: &LinkParameters) -> f64 {
    let p = c.participants as u64;
    if p <= 1 {
        return 0.0;
    }
    let chunk = c.payload_bytes.div_ceil(p);
    (2 * (p - 1)) as f64 * link_transfer_latency(chunk, link)
}
