//! Packet arrivals, backlog recursion, retransmission bookkeeping and an
//! empirical stability test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Concern};

pub const MIN_TRACE: usize = 1000;
pub const DEFAULT_DRIFT_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ArrivalProcess {
    /// At most one packet per slot with probability `rate`.
    Bernoulli { rate: f64 },
    /// Explicit per-slot counts; slots past the end see no arrivals.
    Trace { counts: Vec<u32> },
}

impl ArrivalProcess {
    pub fn validate(&self, path: &str) -> Result<()> {
        if let ArrivalProcess::Bernoulli { rate } = self {
            if !(0.0..=1.0).contains(rate) {
                return Err(Error::invalid(format!("{path}.rate"), "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn arrivals(&self, seed: u64, slot: u64, node: usize) -> u32 {
        match self {
            ArrivalProcess::Bernoulli { rate } => {
                (rng::uniform(seed, Concern::Arrival, slot, node as u64, 0) < *rate) as u32
            }
            ArrivalProcess::Trace { counts } => counts.get(slot as usize).copied().unwrap_or(0),
        }
    }

    /// Mean arrivals per slot.
    pub fn mean_rate(&self) -> f64 {
        match self {
            ArrivalProcess::Bernoulli { rate } => *rate,
            ArrivalProcess::Trace { counts } if counts.is_empty() => 0.0,
            ArrivalProcess::Trace { counts } => {
                counts.iter().map(|&c| c as f64).sum::<f64>() / counts.len() as f64
            }
        }
    }
}

/// Maximum number of transmissions per packet; `None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RetxPolicy {
    pub max_transmissions: Option<u32>,
}

impl RetxPolicy {
    pub const UNBOUNDED: RetxPolicy = RetxPolicy {
        max_transmissions: None,
    };

    pub fn bounded(m: u32) -> Self {
        RetxPolicy {
            max_transmissions: Some(m),
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.max_transmissions == Some(0) {
            return Err(Error::invalid(path, "must be >= 1 or null (unbounded)"));
        }
        Ok(())
    }

    /// Ordering key: bounded limits ascending, unbounded last.
    pub fn rank(&self) -> u64 {
        self.max_transmissions.map_or(u64::MAX, u64::from)
    }
}

/// `max(backlog − served, 0) + arrived`.
pub fn queue_step(backlog: u64, served: u64, arrived: u64) -> u64 {
    backlog.saturating_sub(served) + arrived
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub backlog: u64,
    /// Transmissions already spent on the head-of-line packet.
    pub hol_attempts: u32,
    pub delivered: u64,
    pub lost: u64,
    pub arrived: u64,
    /// Packets present at slot 0; they count as arrivals for conservation.
    pub initial: u64,
    #[serde(skip)]
    pub backlog_trace: Vec<u64>,
}

/// Result of a transmission attempt on the head packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Departure {
    Delivered,
    Retained,
    Lost,
}

impl QueueState {
    pub fn with_backlog(initial: u64) -> Self {
        QueueState {
            backlog: initial,
            initial,
            ..Default::default()
        }
    }

    pub fn has_packet(&self) -> bool {
        self.backlog > 0
    }

    /// Appends arrivals at the end of a slot.
    pub fn enqueue(&mut self, arrived: u32) {
        self.backlog = queue_step(self.backlog, 0, arrived as u64);
        self.arrived += arrived as u64;
    }

    /// Applies ACK/NACK feedback for the head packet of `node`.
    pub fn on_transmission_result(
        &mut self,
        node: usize,
        success: bool,
        policy: RetxPolicy,
    ) -> Result<Departure> {
        if self.backlog == 0 {
            return Err(Error::EmptyQueue { node });
        }
        if success {
            self.backlog = queue_step(self.backlog, 1, 0);
            self.delivered += 1;
            self.hol_attempts = 0;
            return Ok(Departure::Delivered);
        }
        self.hol_attempts += 1;
        match policy.max_transmissions {
            Some(m) if self.hol_attempts >= m => {
                self.backlog = queue_step(self.backlog, 1, 0);
                self.lost += 1;
                self.hol_attempts = 0;
                Ok(Departure::Lost)
            }
            _ => Ok(Departure::Retained),
        }
    }

    pub fn record(&mut self) {
        self.backlog_trace.push(self.backlog);
    }

    /// `arrived + initial == delivered + lost + backlog`.
    pub fn conserved(&self) -> bool {
        self.arrived + self.initial == self.delivered + self.lost + self.backlog
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    /// Least-squares backlog slope over the second half, packets/slot.
    pub drift: f64,
}

/// Stability decided by the backlog drift over the second half of `trace`.
pub fn stability_verdict(trace: &[u64], drift_tolerance: f64) -> Result<StabilityVerdict> {
    if trace.len() < MIN_TRACE {
        return Err(Error::TraceTooShort {
            required: MIN_TRACE,
            actual: trace.len(),
        });
    }
    let tail = &trace[trace.len() / 2..];
    let n = tail.len() as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = tail.iter().map(|&q| q as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &q) in tail.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (q as f64 - mean_y);
        sxx += dx * dx;
    }
    let drift = sxy / sxx;
    Ok(StabilityVerdict {
        stable: drift <= drift_tolerance,
        drift,
    })
}
