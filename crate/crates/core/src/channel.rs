//! Received powers from distance-dependent path loss and optional Rayleigh
//! fading. All powers are relative to a unit noise floor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Topology;
use crate::rng::{self, Concern};

/// Noise power at every receiver. Powers elsewhere are expressed relative to it.
pub const NOISE_POWER: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fading {
    None,
    /// Unit-mean exponential power gain drawn independently per (rx, tx, slot).
    RayleighPerSlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub path_loss_exponent: f64,
    /// Distances below this are clamped, keeping the path loss bounded.
    pub min_distance: f64,
    pub fading: Fading,
    /// Common transmit power constraint Q.
    pub tx_power: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            path_loss_exponent: 4.0,
            min_distance: 1.0,
            fading: Fading::None,
            tx_power: 1.0,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.path_loss_exponent.is_finite() && self.path_loss_exponent > 2.0) {
            return Err(Error::invalid(
                "channel.path_loss_exponent",
                "must be finite and > 2",
            ));
        }
        if !(self.min_distance.is_finite() && self.min_distance > 0.0) {
            return Err(Error::invalid("channel.min_distance", "must be finite and > 0"));
        }
        if !(self.tx_power.is_finite() && self.tx_power > 0.0) {
            return Err(Error::invalid("channel.tx_power", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Mean received power at distance `d` (no fading).
    pub fn mean_power(&self, d: f64) -> f64 {
        self.tx_power * d.max(self.min_distance).powf(-self.path_loss_exponent)
    }
}

/// `Q · fade · max(d, d₀)^(−α)`. With `Fading::None` the draw is ignored.
pub fn received_power(model: &ChannelModel, d: f64, fade_draw: f64) -> f64 {
    let fade = match model.fading {
        Fading::None => 1.0,
        Fading::RayleighPerSlot => fade_draw,
    };
    fade * model.mean_power(d)
}

fn fade(model: &ChannelModel, seed: u64, slot: u64, rx: usize, tx: usize) -> f64 {
    match model.fading {
        Fading::None => 1.0,
        Fading::RayleighPerSlot => {
            rng::unit_exponential(seed, Concern::Fading, slot, rx as u64, tx as u64)
        }
    }
}

/// Dense `n × n` matrix of received powers, row = receiver, column = transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    n: usize,
    data: Vec<f64>,
}

impl GainMatrix {
    pub fn zeros(n: usize) -> Self {
        GainMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "gain matrix must be square");
        GainMatrix {
            n,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, rx: usize, tx: usize) -> f64 {
        self.data[rx * self.n + tx]
    }

    pub fn set(&mut self, rx: usize, tx: usize, p: f64) {
        self.data[rx * self.n + tx] = p;
    }

    pub fn row(&self, rx: usize) -> &[f64] {
        &self.data[rx * self.n..(rx + 1) * self.n]
    }
}

/// Fills `out` (length = number of links) with the power received at RX
/// `rx` from every TX in `active`; all other entries are zero.
pub fn gain_row(
    model: &ChannelModel,
    topology: &Topology,
    rx: usize,
    active: &[usize],
    slot: u64,
    seed: u64,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for &tx in active {
        let d = topology.tx_rx_distance(tx, rx);
        out[tx] = model.mean_power(d) * fade(model, seed, slot, rx, tx);
    }
}

/// Received powers at every RX of `topology` from the TXs in `active`.
/// Entries are a pure function of `(seed, slot, rx, tx)`.
pub fn gain_matrix(
    model: &ChannelModel,
    topology: &Topology,
    active: &[usize],
    slot: u64,
    seed: u64,
) -> GainMatrix {
    let n = topology.len();
    let mut g = GainMatrix::zeros(n);
    for rx in 0..n {
        let start = rx * n;
        gain_row(model, topology, rx, active, slot, seed, &mut g.data[start..start + n]);
    }
    g
}

/// Aggregate power sensed at the TX of `node` from the transmitters in
/// `sources` (the node itself is skipped).
pub fn sensed_power(
    model: &ChannelModel,
    topology: &Topology,
    node: usize,
    sources: &[usize],
    slot: u64,
    seed: u64,
) -> f64 {
    sources
        .iter()
        .filter(|&&j| j != node && j < topology.len())
        .map(|&j| {
            let d = topology.tx_tx_distance(node, j);
            let f = match model.fading {
                Fading::None => 1.0,
                Fading::RayleighPerSlot => rng::unit_exponential(
                    seed,
                    Concern::Sensing,
                    slot,
                    node as u64,
                    j as u64,
                ),
            };
            model.mean_power(d) * f
        })
        .sum()
}
