//! Per-slot medium access: slotted ALOHA, slotted CSMA and distributed
//! time division.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsmaParams {
    /// Sensed power above which the channel counts as busy.
    pub threshold: f64,
    /// Back-off is drawn uniformly from `1..=backoff_window` slots.
    pub backoff_window: u32,
    /// Busy senses tolerated before the head packet is given up on.
    pub max_attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdmaParams {
    pub groups: u32,
    /// Explicit node → group map. When absent a node uses `id mod groups`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<BTreeMap<usize, u32>>,
}

impl TdmaParams {
    pub fn modulo(groups: u32) -> Self {
        TdmaParams {
            groups,
            assignment: None,
        }
    }

    pub fn group_of(&self, node: usize) -> Result<u32> {
        match &self.assignment {
            None => Ok((node % self.groups as usize) as u32),
            Some(map) => map.get(&node).copied().ok_or(Error::Unassigned { node }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MacPolicy {
    Aloha { p: f64 },
    Csma(CsmaParams),
    Tdma(TdmaParams),
}

impl MacPolicy {
    pub fn validate(&self, path: &str) -> Result<()> {
        match self {
            MacPolicy::Aloha { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::invalid(format!("{path}.p"), "must lie in [0, 1]"));
                }
            }
            MacPolicy::Csma(c) => {
                if !(c.threshold.is_finite() && c.threshold >= 0.0) {
                    return Err(Error::invalid(
                        format!("{path}.threshold"),
                        "must be finite and >= 0",
                    ));
                }
                if c.backoff_window < 1 {
                    return Err(Error::invalid(format!("{path}.backoff_window"), "must be >= 1"));
                }
            }
            MacPolicy::Tdma(t) => {
                if t.groups < 1 {
                    return Err(Error::invalid(format!("{path}.groups"), "must be >= 1"));
                }
                if let Some(map) = &t.assignment {
                    if let Some((node, g)) = map.iter().find(|(_, &g)| g >= t.groups) {
                        return Err(Error::invalid(
                            format!("{path}.assignment.{node}"),
                            format!("group {g} outside [0, {})", t.groups),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Long-run fraction of slots a backlogged node may transmit in, where
    /// the policy fixes it.
    pub fn access_fraction(&self) -> Option<f64> {
        match self {
            MacPolicy::Aloha { p } => Some(*p),
            MacPolicy::Tdma(t) => Some(1.0 / t.groups as f64),
            MacPolicy::Csma(_) => None,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            MacPolicy::Aloha { .. } => "aloha",
            MacPolicy::Csma(_) => "csma",
            MacPolicy::Tdma(_) => "tdma",
        }
    }
}

pub fn aloha_decide(p: f64, has_packet: bool, draw: f64) -> bool {
    has_packet && draw < p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsmaDecision {
    Transmit,
    Backoff(u32),
    GiveUp,
}

/// Carrier-sense decision at slot start. `attempts_so_far` counts busy
/// senses already spent on the head packet.
pub fn csma_decide(
    sensed_power: f64,
    params: &CsmaParams,
    attempts_so_far: u32,
    draw: f64,
) -> CsmaDecision {
    if sensed_power <= params.threshold {
        CsmaDecision::Transmit
    } else if attempts_so_far < params.max_attempts {
        let w = params.backoff_window.max(1);
        let slots = ((draw * w as f64) as u32).min(w - 1) + 1;
        CsmaDecision::Backoff(slots)
    } else {
        CsmaDecision::GiveUp
    }
}

pub fn tdma_active(node: usize, params: &TdmaParams, slot: u64) -> Result<bool> {
    let group = params.group_of(node)?;
    Ok(slot % params.groups as u64 == group as u64)
}
