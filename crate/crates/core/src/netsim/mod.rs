//! Packet-level simulation of web traffic sharing a switch with droppable
//! learning traffic.
//!
//! Servers attach to one output-queued switch. Every message crosses two
//! ports: the sender's uplink and the switch port facing the receiver.
//! Web messages are never dropped. Learning packets are tail-dropped when
//! the port's buffer limit is reached, which is the knob that trades
//! learning loss for web latency.

mod sim;
mod sweep;

pub use sim::{run_colocation_sim, PortEvent, SimReport};
pub use sweep::{sustainable_lambda, sweep_priority, sweep_sustainable, PriorityRow, SustainRow};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Topology {
    pub servers: usize,
    /// Bits per second on every link.
    pub link_rate: f64,
    pub packet_bytes: u32,
}

impl Default for Topology {
    fn default() -> Self {
        Self { servers: 16, link_rate: 1e9, packet_bytes: 1500 }
    }
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        if self.servers < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 servers, got {}", self.servers)));
        }
        if !(self.link_rate > 0.0 && self.link_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("link rate must be > 0, got {}", self.link_rate)));
        }
        if self.packet_bytes == 0 {
            return Err(Error::InvalidParameter("packet size must be > 0".into()));
        }
        Ok(())
    }

    /// Serialization time of `bytes` in seconds.
    pub fn tx_time(&self, bytes: u64) -> f64 {
        bytes as f64 * 8.0 / self.link_rate
    }

    /// Completion time of one message on an idle network. The second hop
    /// runs at the same rate one packet behind the first.
    pub fn idle_completion(&self, message_bytes: u64) -> f64 {
        let first = message_bytes.min(self.packet_bytes as u64);
        self.tx_time(message_bytes) + self.tx_time(first)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficModel {
    /// Web messages per second, summed over all senders.
    pub web_rate: f64,
    pub web_message_bytes: u64,
    /// Offered learning load in bits per second, summed over all senders.
    pub learning_load: f64,
    /// Learning packets sent back to back per update; 1 gives an evenly
    /// paced stream.
    pub learning_burst: u32,
}

impl Default for TrafficModel {
    fn default() -> Self {
        Self { web_rate: 5000.0, web_message_bytes: 100_000, learning_load: 2.4e9, learning_burst: 1 }
    }
}

impl TrafficModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.web_rate >= 0.0 && self.web_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("web rate must be >= 0, got {}", self.web_rate)));
        }
        if !(self.learning_load >= 0.0 && self.learning_load.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning load must be >= 0, got {}", self.learning_load)));
        }
        if self.learning_burst == 0 {
            return Err(Error::InvalidParameter("learning burst must be >= 1 packet".into()));
        }
        if self.web_message_bytes == 0 {
            return Err(Error::InvalidParameter("web message size must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheduling {
    /// One FIFO per port; the buffer limit applies to the whole backlog, so
    /// a learning packet is dropped whenever the port is congested.
    #[default]
    SharedFifo,
    /// Non-preemptive strict priority of web over learning; the buffer limit
    /// applies to the learning queue alone.
    StrictPriority,
}

impl std::str::FromStr for Scheduling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared-fifo" | "fifo" => Ok(Self::SharedFifo),
            "strict-priority" | "strict" => Ok(Self::StrictPriority),
            other => Err(Error::Config(format!("unknown scheduling '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scheduling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SharedFifo => "shared-fifo",
            Self::StrictPriority => "strict-priority",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PriorityConfig {
    pub scheduling: Scheduling,
    /// Learning buffer limit in bytes; `None` never drops.
    pub learning_buffer_bytes: Option<u64>,
    /// Record every dequeue and idle transition.
    pub log_ports: bool,
}

impl PriorityConfig {
    pub fn with_buffer(scheduling: Scheduling, learning_buffer_bytes: Option<u64>) -> Self {
        Self { scheduling, learning_buffer_bytes, log_ports: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Web,
    Learning,
}
