//! Per-node design-setting controller.
//!
//! Each node estimates its surroundings from local observations, narrows the
//! candidate settings with a rule table keyed on mobility, density, traffic
//! and a minimum-rate requirement, and then picks the feasible candidate
//! with the largest predicted spatial throughput, assuming every peer adopts
//! the same setting.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::f64::consts::PI;

use crate::channel::{ChannelModel, Fading, NOISE_POWER};
use crate::error::{Error, Result};
use crate::geometry::{MobilityKind, Topology};
use crate::mac::{CsmaParams, MacPolicy, TdmaParams};
use crate::rates::{self, Decoder, RateTuple};
use crate::traffic::RetxPolicy;

/// Minimum observation window for estimation.
pub const MIN_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSetting {
    pub coding_rate: f64,
    pub decoder: Decoder,
    pub mac: MacPolicy,
    /// Maximum transmissions per packet; `null` for unbounded.
    #[serde(default)]
    pub retx: RetxPolicy,
}

impl DesignSetting {
    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.coding_rate.is_finite() && self.coding_rate >= 0.0) {
            return Err(Error::invalid(
                format!("{path}.coding_rate"),
                "must be finite and >= 0",
            ));
        }
        self.mac.validate(&format!("{path}.mac"))?;
        self.retx.validate(&format!("{path}.retx"))
    }
}

/// Internal pressures of a node. The transmit power cap is the channel's
/// `tx_power`, shared by every node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSet {
    #[serde(default = "default_plr_bound")]
    pub plr_bound: f64,
    #[serde(default)]
    pub min_rate: Option<f64>,
    #[serde(default = "default_drift_tolerance")]
    pub drift_tolerance: f64,
}

fn default_plr_bound() -> f64 {
    0.1
}

fn default_drift_tolerance() -> f64 {
    crate::traffic::DEFAULT_DRIFT_TOLERANCE
}

impl Default for ConstraintSet {
    fn default() -> Self {
        ConstraintSet {
            plr_bound: default_plr_bound(),
            min_rate: None,
            drift_tolerance: default_drift_tolerance(),
        }
    }
}

impl ConstraintSet {
    pub fn validate(&self, path: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.plr_bound) {
            return Err(Error::invalid(format!("{path}.plr_bound"), "must lie in [0, 1]"));
        }
        if let Some(r) = self.min_rate {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::invalid(format!("{path}.min_rate"), "must be finite and >= 0"));
            }
        }
        if !(self.drift_tolerance.is_finite() && self.drift_tolerance >= 0.0) {
            return Err(Error::invalid(
                format!("{path}.drift_tolerance"),
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchGrid {
    pub access_probs: Vec<f64>,
    pub rates: Vec<f64>,
    pub max_transmissions: Vec<RetxPolicy>,
    pub tdma_groups: Vec<u32>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        let (lo, hi, n) = (0.05f64, 8.0f64, 32);
        SearchGrid {
            access_probs: (1..=10).map(|i| i as f64 / 10.0).collect(),
            rates: (0..n)
                .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
                .collect(),
            max_transmissions: vec![
                RetxPolicy::bounded(1),
                RetxPolicy::bounded(2),
                RetxPolicy::bounded(4),
                RetxPolicy::bounded(8),
                RetxPolicy::UNBOUNDED,
            ],
            tdma_groups: vec![1, 2, 4],
        }
    }
}

impl SearchGrid {
    pub fn validate(&self, path: &str) -> Result<()> {
        let nonempty = [
            (self.access_probs.is_empty(), "access_probs"),
            (self.rates.is_empty(), "rates"),
            (self.max_transmissions.is_empty(), "max_transmissions"),
            (self.tdma_groups.is_empty(), "tdma_groups"),
        ];
        if let Some((_, key)) = nonempty.iter().find(|(empty, _)| *empty) {
            return Err(Error::invalid(format!("{path}.{key}"), "must not be empty"));
        }
        if self.access_probs.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::invalid(format!("{path}.access_probs"), "entries must lie in (0, 1]"));
        }
        if self.rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid(format!("{path}.rates"), "entries must be finite and > 0"));
        }
        if self.max_transmissions.iter().any(|m| m.max_transmissions == Some(0)) {
            return Err(Error::invalid(format!("{path}.max_transmissions"), "entries must be >= 1"));
        }
        if self.tdma_groups.contains(&0) {
            return Err(Error::invalid(format!("{path}.tdma_groups"), "entries must be >= 1"));
        }
        Ok(())
    }

    fn min_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// How an estimate is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    /// From the node's own sensing history.
    Sensed,
    /// Taken from the scenario's ground truth.
    Genie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default)]
    pub grid: SearchGrid,
    /// Parameters of CSMA candidates.
    #[serde(default = "default_csma")]
    pub csma: CsmaParams,
    /// A network is dense when at least one interferer is expected within
    /// this multiple of the link distance.
    #[serde(default = "default_dense_factor")]
    pub dense_radius_factor: f64,
    /// Traffic is heavy above this fraction of the best service rate.
    #[serde(default = "default_heavy_fraction")]
    pub heavy_traffic_fraction: f64,
    #[serde(default = "default_cv_threshold")]
    pub mobility_cv_threshold: f64,
    #[serde(default = "default_sensed")]
    pub density_estimator: EstimatorMode,
    #[serde(default = "default_sensed")]
    pub mobility_estimator: EstimatorMode,
    #[serde(default = "default_search_limit")]
    pub search_limit: usize,
}

fn default_csma() -> CsmaParams {
    CsmaParams {
        threshold: 1e-3,
        backoff_window: 8,
        max_attempts: 4,
    }
}
fn default_dense_factor() -> f64 {
    3.0
}
fn default_heavy_fraction() -> f64 {
    0.5
}
fn default_cv_threshold() -> f64 {
    0.1
}
fn default_sensed() -> EstimatorMode {
    EstimatorMode::Sensed
}
fn default_search_limit() -> usize {
    rates::DEFAULT_SEARCH_LIMIT
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            grid: SearchGrid::default(),
            csma: default_csma(),
            dense_radius_factor: default_dense_factor(),
            heavy_traffic_fraction: default_heavy_fraction(),
            mobility_cv_threshold: default_cv_threshold(),
            density_estimator: EstimatorMode::Sensed,
            mobility_estimator: EstimatorMode::Sensed,
            search_limit: default_search_limit(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        self.grid.validate(&format!("{path}.grid"))?;
        MacPolicy::Csma(self.csma.clone()).validate(&format!("{path}.csma"))?;
        for (v, key) in [
            (self.dense_radius_factor, "dense_radius_factor"),
            (self.heavy_traffic_fraction, "heavy_traffic_fraction"),
            (self.mobility_cv_threshold, "mobility_cv_threshold"),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{path}.{key}"), "must be finite and > 0"));
            }
        }
        if self.search_limit < 1 {
            return Err(Error::invalid(format!("{path}.search_limit"), "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfererDistance {
    pub node: usize,
    /// From this interferer's TX to the estimating node's RX, meters.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub node: usize,
    pub density_hat: f64,
    pub arrival_rate_hat: f64,
    pub mobility_class: MobilityKind,
    /// Ranged distances to the other transmitters (quasi-static only).
    pub interferer_distances: Vec<InterfererDistance>,
    pub own_link_distance: f64,
}

/// One node's local history over an estimation window, plus the side
/// information it may use.
#[derive(Debug, Clone)]
pub struct Observations<'a> {
    pub node: usize,
    pub arrivals: &'a [u32],
    /// Aggregate power sensed at the node's TX at each slot start.
    pub sensed_power: &'a [f64],
    /// Slots in which the node itself transmitted.
    pub transmitted: &'a [bool],
    /// Lag between comparable sensing samples (the node's time-division period).
    pub sensing_lag: usize,
    pub own_link_distance: f64,
    pub interferer_distances: Vec<InterfererDistance>,
    pub true_density: f64,
    pub true_mobility: MobilityKind,
}

/// Mean aggregate power per unit density of active transmitters, for a
/// planar Poisson field with bounded path loss.
fn mean_field_power(model: &ChannelModel) -> f64 {
    let (a, d0) = (model.path_loss_exponent, model.min_distance);
    model.tx_power * PI * d0.powf(2.0 - a) * a / (a - 2.0)
}

/// Classifies the network from slot-to-slot sensed-power variation:
/// quasi-static iff `rms(s[t] − s[t−lag]) / mean(s) < cv_threshold`.
pub fn mobility_classify(trace: &[f64], lag: usize, cv_threshold: f64) -> Result<MobilityKind> {
    if trace.len() < MIN_WINDOW {
        return Err(Error::TraceTooShort {
            required: MIN_WINDOW,
            actual: trace.len(),
        });
    }
    let lag = lag.clamp(1, trace.len() - 1);
    let mean = trace.iter().sum::<f64>() / trace.len() as f64;
    if mean <= 0.0 {
        return Ok(MobilityKind::QuasiStatic);
    }
    let diffs = trace.len() - lag;
    let rms = (trace
        .windows(lag + 1)
        .map(|w| (w[lag] - w[0]).powi(2))
        .sum::<f64>()
        / diffs as f64)
        .sqrt();
    Ok(if rms / mean < cv_threshold {
        MobilityKind::QuasiStatic
    } else {
        MobilityKind::HighlyMobile
    })
}

pub fn estimate_state(
    obs: &Observations,
    config: &ControllerConfig,
    model: &ChannelModel,
) -> Result<Estimates> {
    let window = obs.arrivals.len();
    if window < MIN_WINDOW {
        return Err(Error::TraceTooShort {
            required: MIN_WINDOW,
            actual: window,
        });
    }
    let arrival_rate_hat =
        (obs.arrivals.iter().map(|&a| a as f64).sum::<f64>() / window as f64).clamp(0.0, 1.0);

    let density_hat = match config.density_estimator {
        EstimatorMode::Genie => obs.true_density,
        EstimatorMode::Sensed => {
            let n = obs.sensed_power.len().max(1) as f64;
            let mean_sensed = obs.sensed_power.iter().sum::<f64>() / n;
            // peers are assumed to transmit as often as this node does
            let activity =
                obs.transmitted.iter().filter(|&&t| t).count() as f64 / obs.transmitted.len().max(1) as f64;
            if mean_sensed <= 0.0 || activity <= 0.0 {
                0.0
            } else {
                mean_sensed / (activity * mean_field_power(model))
            }
        }
    };

    let mobility_class = match config.mobility_estimator {
        EstimatorMode::Genie => obs.true_mobility,
        EstimatorMode::Sensed => {
            mobility_classify(obs.sensed_power, obs.sensing_lag, config.mobility_cv_threshold)?
        }
    };

    Ok(Estimates {
        node: obs.node,
        density_hat,
        arrival_rate_hat,
        mobility_class,
        interferer_distances: match mobility_class {
            MobilityKind::QuasiStatic => obs.interferer_distances.clone(),
            MobilityKind::HighlyMobile => Vec::new(),
        },
        own_link_distance: obs.own_link_distance,
    })
}

/// `Γ(1 + 2/α) Γ(1 − 2/α)` via the reflection formula.
pub fn gamma_product(alpha: f64) -> f64 {
    let x = 2.0 / alpha;
    PI * x / (PI * x).sin()
}

/// Outage threshold `2^R − 1` on the SINR.
pub fn sinr_threshold(rate: f64) -> f64 {
    rate.exp2() - 1.0
}

/// Success probability of a typical link in a planar Poisson field of
/// active transmitters with Rayleigh fading and interference treated as
/// noise. The noise term vanishes as the transmit power grows.
pub fn poisson_success_probability(
    active_density: f64,
    link_distance: f64,
    rate: f64,
    model: &ChannelModel,
) -> f64 {
    let theta = sinr_threshold(rate);
    let alpha = model.path_loss_exponent;
    let noise = (-theta * NOISE_POWER / model.mean_power(link_distance)).exp();
    let field = active_density
        * PI
        * link_distance.powi(2)
        * theta.powf(2.0 / alpha)
        * gamma_product(alpha);
    noise * (-field).exp()
}

/// `∫_{r_s}^∞ 2πr · c / (r^α + c) dr` with `c = θ d^α`: the interference
/// exponent of a Poisson field thinned to lie outside radius `r_s`.
fn guarded_interference(theta: f64, d: f64, alpha: f64, r_s: f64) -> f64 {
    let c = theta * d.powf(alpha);
    if c <= 0.0 {
        return 0.0;
    }
    let scale = 2.0 * PI * c.powf(2.0 / alpha);
    let f = |u: f64| u / (1.0 + u.powf(alpha));
    let total = (PI / alpha) / (2.0 * PI / alpha).sin();
    let u_s = r_s / c.powf(1.0 / alpha);
    let tail = if u_s > 50.0 {
        u_s.powf(2.0 - alpha) / (alpha - 2.0) - u_s.powf(2.0 - 2.0 * alpha) / (2.0 * alpha - 2.0)
    } else {
        let n = 2000;
        let h = u_s / n as f64;
        let inner = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * f(i as f64 * h)
            })
            .sum::<f64>()
            * h
            / 3.0;
        (total - inner).max(0.0)
    };
    scale * tail
}

/// Predicted access probability and success probability of CSMA with a
/// sensing radius set by the busy threshold, in a Poisson network.
fn csma_prediction(density: f64, d: f64, rate: f64, params: &CsmaParams, model: &ChannelModel) -> (f64, f64) {
    if params.threshold <= 0.0 {
        return (0.0, 0.0);
    }
    let alpha = model.path_loss_exponent;
    let r_s = (model.tx_power / params.threshold).powf(1.0 / alpha);
    let a = density * PI * r_s * r_s;
    // q = exp(−a q): fraction of nodes that sense an idle channel
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid - (-a * mid).exp() < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    let theta = sinr_threshold(rate);
    let noise = (-theta * NOISE_POWER / model.mean_power(d)).exp();
    let success = noise * (-density * q * guarded_interference(theta, d, alpha, r_s)).exp();
    (q, success)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Fraction of slots a backlogged node transmits in.
    pub access: f64,
    /// Per-attempt success probability.
    pub success: f64,
    /// bits/s/Hz/m².
    pub spatial_throughput: f64,
}

/// Interferers sharing the node's time-division group, or all of them.
fn co_scheduled<'a>(est: &'a Estimates, mac: &'a MacPolicy) -> Result<Vec<&'a InterfererDistance>> {
    match mac {
        MacPolicy::Tdma(t) => {
            let own = t.group_of(est.node)?;
            let mut out = Vec::new();
            for i in &est.interferer_distances {
                if t.group_of(i.node)? == own {
                    out.push(i);
                }
            }
            Ok(out)
        }
        _ => Ok(est.interferer_distances.iter().collect()),
    }
}

/// Success probability for the quasi-static, fixed-topology view.
fn quasi_static_success(
    est: &Estimates,
    candidate: &DesignSetting,
    model: &ChannelModel,
    search_limit: usize,
) -> Result<f64> {
    let rate = candidate.coding_rate;
    let peers = co_scheduled(est, &candidate.mac)?;
    let own = model.mean_power(est.own_link_distance);
    let peer_access = match &candidate.mac {
        MacPolicy::Tdma(_) => 1.0,
        MacPolicy::Aloha { p } => *p,
        MacPolicy::Csma(_) => {
            return Err(Error::Unsupported("CSMA prediction needs a Poisson network".into()))
        }
    };
    match (model.fading, candidate.decoder) {
        (Fading::RayleighPerSlot, Decoder::Ian) => {
            let theta = sinr_threshold(rate);
            let noise = (-theta * NOISE_POWER / own).exp();
            Ok(peers.iter().fold(noise, |acc, i| {
                let ratio = model.mean_power(i.distance) / own;
                acc * (1.0 - peer_access + peer_access / (1.0 + theta * ratio))
            }))
        }
        (Fading::RayleighPerSlot, Decoder::Opt) => Err(Error::Unsupported(
            "OPT decoding is only predicted without fading".into(),
        )),
        (Fading::None, decoder) => {
            if peer_access >= 1.0 {
                let mut row = vec![own];
                row.extend(peers.iter().map(|i| model.mean_power(i.distance)));
                let active: Vec<usize> = (0..row.len()).collect();
                let others = RateTuple::uniform(row.len(), rate);
                let out = rates::outage(0, rate, &row, &active, decoder, &others, search_limit);
                Ok(if out { 0.0 } else { 1.0 })
            } else if decoder == Decoder::Opt {
                Err(Error::Unsupported(
                    "OPT decoding is only predicted under time division".into(),
                ))
            } else {
                Ok(aloha_deterministic_success(own, &peers, peer_access, rate, model))
            }
        }
    }
}

/// Exact over the 12 strongest interferers' on/off patterns; weaker ones
/// enter through their mean power.
fn aloha_deterministic_success(
    own: f64,
    peers: &[&InterfererDistance],
    p: f64,
    rate: f64,
    model: &ChannelModel,
) -> f64 {
    let mut powers: Vec<f64> = peers.iter().map(|i| model.mean_power(i.distance)).collect();
    powers.sort_by(|a, b| b.total_cmp(a));
    let exact = powers.len().min(12);
    let background: f64 = p * powers[exact..].iter().sum::<f64>();
    let budget = own / sinr_threshold(rate) - NOISE_POWER - background;
    let mut success = 0.0;
    for mask in 0u32..(1 << exact) {
        let on = mask.count_ones() as i32;
        let interference: f64 = (0..exact).filter(|b| mask >> b & 1 == 1).map(|b| powers[b]).sum();
        if rates::within(interference, budget) {
            success += p.powi(on) * (1.0 - p).powi(exact as i32 - on);
        }
    }
    success
}

/// Access fraction, per-attempt success and spatial throughput predicted
/// for `candidate`, assuming every peer uses it too.
pub fn predict(
    est: &Estimates,
    candidate: &DesignSetting,
    model: &ChannelModel,
    search_limit: usize,
) -> Result<Prediction> {
    model.validate()?;
    let rate = candidate.coding_rate;
    let (access, success) = match est.mobility_class {
        MobilityKind::HighlyMobile => {
            if model.fading != Fading::RayleighPerSlot {
                return Err(Error::Unsupported(
                    "highly mobile prediction assumes Rayleigh fading".into(),
                ));
            }
            if candidate.decoder == Decoder::Opt {
                return Err(Error::Unsupported(
                    "OPT decoding is not predicted for highly mobile networks".into(),
                ));
            }
            let d = est.own_link_distance;
            match &candidate.mac {
                MacPolicy::Aloha { p } => {
                    (*p, poisson_success_probability(est.density_hat * p, d, rate, model))
                }
                MacPolicy::Csma(c) => csma_prediction(est.density_hat, d, rate, c, model),
                MacPolicy::Tdma(_) => {
                    return Err(Error::Unsupported(
                        "time division is not predicted for highly mobile networks".into(),
                    ))
                }
            }
        }
        MobilityKind::QuasiStatic => {
            let access = candidate.mac.access_fraction().ok_or_else(|| {
                Error::Unsupported("CSMA prediction needs a Poisson network".into())
            })?;
            (access, quasi_static_success(est, candidate, model, search_limit)?)
        }
    };
    let spatial_throughput = if rate > 0.0 && access > 0.0 {
        est.density_hat * access * rate * success
    } else {
        0.0
    };
    Ok(Prediction {
        access,
        success,
        spatial_throughput,
    })
}

pub fn predicted_spatial_throughput(
    est: &Estimates,
    candidate: &DesignSetting,
    model: &ChannelModel,
) -> Result<f64> {
    Ok(predict(est, candidate, model, rates::DEFAULT_SEARCH_LIMIT)?.spatial_throughput)
}

/// Packets delivered per slot by a backlogged node. Drops are not service:
/// stability is judged on successful deliveries alone, so a tighter loss
/// bound can never make an otherwise unstable setting look stable.
pub fn service_rate(access: f64, success: f64) -> f64 {
    access * success
}

/// Long-run fraction of packets dropped after exhausting the retransmissions.
pub fn predicted_plr(success: f64, retx: RetxPolicy) -> f64 {
    match retx.max_transmissions {
        None if success > 0.0 => 0.0,
        None => 1.0,
        Some(m) => (1.0 - success).powi(m as i32),
    }
}

/// Which branch of the rule table produced a setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// Achievable rates, no minimum rate: no access control, no retransmission.
    QuasiStaticUncontrolled,
    /// The minimum rate is out of reach in a single group: time division.
    QuasiStaticMinRate,
    /// Dense quasi-static network: time-division and decoder search.
    QuasiStaticDense,
    /// Heavy traffic: (groups, rate) for stability, then bounded retransmissions.
    QuasiStaticHeavy,
    QuasiStaticSearch,
    MobileSparseCsma,
    MobileDenseLightAloha,
    MobileDenseHeavyAloha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub setting: DesignSetting,
    pub rule: Rule,
    pub predicted: Prediction,
    pub predicted_plr: f64,
    /// Deliveries per slot while backlogged.
    pub predicted_service: f64,
    /// False when no candidate met every constraint and the stability-first
    /// fallback was returned.
    pub feasible: bool,
    pub dense: bool,
    pub heavy_traffic: bool,
}

#[derive(Debug, Clone)]
struct Scored {
    setting: DesignSetting,
    prediction: Prediction,
    plr: f64,
    service: f64,
}

impl Scored {
    fn feasible(&self, est: &Estimates, constraints: &ConstraintSet) -> bool {
        let stable = est.arrival_rate_hat <= 0.0 || est.arrival_rate_hat < self.service;
        let rate_ok = constraints
            .min_rate
            .is_none_or(|r| rates::within(r, self.setting.coding_rate));
        stable && rate_ok && self.plr <= constraints.plr_bound
    }

    /// Higher spatial throughput first; ties go to lower access, then lower
    /// rate, then fewer transmissions, then IAN.
    fn better_than(&self, other: &Scored) -> bool {
        let key = |s: &Scored| {
            (
                s.prediction.access,
                s.setting.coding_rate,
                s.setting.retx.rank(),
                s.setting.decoder == Decoder::Opt,
            )
        };
        match self
            .prediction
            .spatial_throughput
            .total_cmp(&other.prediction.spatial_throughput)
        {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => {
                let (a, b) = (key(self), key(other));
                a.0.total_cmp(&b.0)
                    .then(a.1.total_cmp(&b.1))
                    .then(a.2.cmp(&b.2))
                    .then(a.3.cmp(&b.3))
                    == Ordering::Less
            }
        }
    }
}

struct Search<'a> {
    est: &'a Estimates,
    constraints: &'a ConstraintSet,
    config: &'a ControllerConfig,
    model: &'a ChannelModel,
}

impl Search<'_> {
    fn score(&self, setting: DesignSetting) -> Option<Scored> {
        let prediction = predict(self.est, &setting, self.model, self.config.search_limit).ok()?;
        Some(Scored {
            plr: predicted_plr(prediction.success, setting.retx),
            service: service_rate(prediction.access, prediction.success),
            setting,
            prediction,
        })
    }

    fn best<I>(&self, candidates: I) -> Option<Scored>
    where
        I: IntoIterator<Item = DesignSetting>,
    {
        let mut best: Option<Scored> = None;
        for c in candidates {
            if let Some(s) = self.score(c) {
                if s.feasible(self.est, self.constraints)
                    && best.as_ref().is_none_or(|b| s.better_than(b))
                {
                    best = Some(s);
                }
            }
        }
        best
    }

    /// Rates to try for a given MAC and decoder: the grid plus, for a fixed
    /// topology without fading, the exact largest achievable common rate.
    fn rates_for(&self, mac: &MacPolicy, decoder: Decoder) -> Vec<f64> {
        let mut out = self.config.grid.rates.clone();
        if let Some(r) = self.exact_rate(mac, decoder) {
            if r > 0.0 {
                out.push(r);
            }
        }
        out
    }

    fn exact_rate(&self, mac: &MacPolicy, decoder: Decoder) -> Option<f64> {
        if self.est.mobility_class != MobilityKind::QuasiStatic || self.model.fading != Fading::None {
            return None;
        }
        let MacPolicy::Tdma(_) = mac else { return None };
        let peers = co_scheduled(self.est, mac).ok()?;
        let mut row = vec![self.model.mean_power(self.est.own_link_distance)];
        row.extend(peers.iter().map(|i| self.model.mean_power(i.distance)));
        let active: Vec<usize> = (0..row.len()).collect();
        Some(rates::symmetric_rate(0, &row, &active, decoder, self.config.search_limit))
    }

    fn candidates(
        &self,
        macs: &[MacPolicy],
        decoders: &[Decoder],
        retx: &[RetxPolicy],
    ) -> Vec<DesignSetting> {
        let mut out = Vec::new();
        for mac in macs {
            for &decoder in decoders {
                for rate in self.rates_for(mac, decoder) {
                    for &r in retx {
                        out.push(DesignSetting {
                            coding_rate: rate,
                            decoder,
                            mac: mac.clone(),
                            retx: r,
                        });
                    }
                }
            }
        }
        out
    }
}

fn tdma(groups: u32) -> MacPolicy {
    MacPolicy::Tdma(TdmaParams::modulo(groups))
}

/// Chooses a design setting for one node from its estimates.
pub fn select_setting(
    est: &Estimates,
    constraints: &ConstraintSet,
    config: &ControllerConfig,
    model: &ChannelModel,
) -> Result<Selection> {
    if !(est.density_hat.is_finite() && est.density_hat >= 0.0) {
        return Err(Error::invalid("estimates.density_hat", "must be finite and >= 0"));
    }
    if !(0.0..=1.0).contains(&est.arrival_rate_hat) {
        return Err(Error::invalid("estimates.arrival_rate_hat", "must lie in [0, 1]"));
    }
    constraints.validate("constraints")?;
    config.validate("controller")?;
    model.validate()?;

    let search = Search {
        est,
        constraints,
        config,
        model,
    };
    let grid = &config.grid;
    let d = est.own_link_distance;
    let reach = config.dense_radius_factor * d;
    let unbounded = [RetxPolicy::UNBOUNDED];

    let (rule, dense, heavy, best) = match est.mobility_class {
        MobilityKind::QuasiStatic => {
            let dense = est.interferer_distances.iter().any(|i| i.distance <= reach);
            let one_group = [tdma(1)];
            let ian_only = [Decoder::Ian];
            let service = search
                .candidates(&one_group, &ian_only, &unbounded)
                .into_iter()
                .filter_map(|c| search.score(c))
                .map(|s| s.service)
                .fold(0.0, f64::max);
            let heavy = est.arrival_rate_hat > config.heavy_traffic_fraction * service;

            let decoders: Vec<Decoder> = if dense && model.fading == Fading::None {
                vec![Decoder::Ian, Decoder::Opt]
            } else {
                vec![Decoder::Ian]
            };

            if constraints.min_rate.is_none() && !dense && !heavy && model.fading == Fading::None {
                let rate = search.exact_rate(&one_group[0], Decoder::Ian).unwrap_or(0.0);
                let setting = DesignSetting {
                    coding_rate: rate,
                    decoder: Decoder::Ian,
                    mac: tdma(1),
                    retx: RetxPolicy::bounded(1),
                };
                let scored = search.score(setting);
                let ok = scored.as_ref().is_some_and(|s| s.feasible(est, constraints));
                (Rule::QuasiStaticUncontrolled, dense, heavy, scored.filter(|_| ok))
            } else {
                let single_ok = constraints.min_rate.is_none()
                    || search
                        .best(search.candidates(&one_group, &decoders, &grid.max_transmissions))
                        .is_some();
                let (rule, groups): (Rule, Vec<u32>) = if !single_ok {
                    let more: Vec<u32> = grid.tdma_groups.iter().copied().filter(|&m| m >= 2).collect();
                    let more = if more.is_empty() { vec![2] } else { more };
                    (Rule::QuasiStaticMinRate, more)
                } else if dense {
                    (Rule::QuasiStaticDense, grid.tdma_groups.clone())
                } else if heavy {
                    (Rule::QuasiStaticHeavy, grid.tdma_groups.clone())
                } else {
                    (Rule::QuasiStaticSearch, vec![1])
                };
                let macs: Vec<MacPolicy> = groups.into_iter().map(tdma).collect();
                let best = if heavy {
                    search
                        .best(search.candidates(&macs, &decoders, &unbounded))
                        .or_else(|| search.best(search.candidates(&macs, &decoders, &grid.max_transmissions)))
                } else {
                    search.best(search.candidates(&macs, &decoders, &grid.max_transmissions))
                };
                (rule, dense, heavy, best)
            }
        }
        MobilityKind::HighlyMobile => {
            let expected = est.density_hat * PI * reach * reach;
            let dense = expected >= 1.0;
            let ian_only = [Decoder::Ian];
            let service = grid
                .rates
                .iter()
                .map(|&r| poisson_success_probability(est.density_hat, d, r, model))
                .fold(0.0, f64::max);
            let heavy = est.arrival_rate_hat > config.heavy_traffic_fraction * service;
            let (rule, macs): (Rule, Vec<MacPolicy>) = if !dense {
                (Rule::MobileSparseCsma, vec![MacPolicy::Csma(config.csma.clone())])
            } else {
                let alohas = grid.access_probs.iter().map(|&p| MacPolicy::Aloha { p }).collect();
                if heavy {
                    (Rule::MobileDenseHeavyAloha, alohas)
                } else {
                    (Rule::MobileDenseLightAloha, alohas)
                }
            };
            let best = search.best(search.candidates(&macs, &ian_only, &grid.max_transmissions));
            (rule, dense, heavy, best)
        }
    };

    let feasible = best.is_some();
    let chosen = match best {
        Some(s) => s,
        None => {
            // stability first: lowest rate, sparsest access, drop after one try
            let mac = match (est.mobility_class, rule) {
                (MobilityKind::QuasiStatic, _) => {
                    tdma(grid.tdma_groups.iter().copied().max().unwrap_or(1))
                }
                (MobilityKind::HighlyMobile, Rule::MobileSparseCsma) => MacPolicy::Csma(config.csma.clone()),
                (MobilityKind::HighlyMobile, _) => MacPolicy::Aloha {
                    p: grid.access_probs.iter().copied().fold(1.0, f64::min),
                },
            };
            let setting = DesignSetting {
                coding_rate: grid.min_rate(),
                decoder: Decoder::Ian,
                mac,
                retx: RetxPolicy::bounded(1),
            };
            search.score(setting.clone()).unwrap_or(Scored {
                setting,
                prediction: Prediction {
                    access: 0.0,
                    success: 0.0,
                    spatial_throughput: 0.0,
                },
                plr: 1.0,
                service: 0.0,
            })
        }
    };

    Ok(Selection {
        setting: chosen.setting,
        rule,
        predicted: chosen.prediction,
        predicted_plr: chosen.plr,
        predicted_service: chosen.service,
        feasible,
        dense,
        heavy_traffic: heavy,
    })
}

/// Mean received powers of a fixed topology: `own[k]` from TX k at RX k,
/// `cross[k][j]` from TX j at RX k.
#[derive(Debug, Clone)]
pub struct FiniteNetwork {
    pub own: Vec<f64>,
    pub cross: Vec<Vec<f64>>,
    pub area: f64,
}

impl FiniteNetwork {
    pub fn from_topology(topology: &Topology, model: &ChannelModel) -> Self {
        let n = topology.len();
        let own = (0..n).map(|k| model.mean_power(topology.tx_rx_distance(k, k))).collect();
        let cross = (0..n)
            .map(|k| {
                (0..n)
                    .map(|j| if j == k { 0.0 } else { model.mean_power(topology.tx_rx_distance(j, k)) })
                    .collect()
            })
            .collect();
        FiniteNetwork {
            own,
            cross,
            area: topology.area(),
        }
    }

    pub fn len(&self) -> usize {
        self.own.len()
    }

    pub fn is_empty(&self) -> bool {
        self.own.is_empty()
    }

    /// Per-attempt success of link `k` at `rate` under Rayleigh fading and
    /// IAN when every other link `j` transmits independently w.p. `access[j]`.
    pub fn aloha_success(&self, k: usize, rate: f64, access: &[f64]) -> f64 {
        let theta = sinr_threshold(rate);
        let own = self.own[k];
        let noise = (-theta * NOISE_POWER / own).exp();
        (0..self.len()).filter(|&j| j != k).fold(noise, |acc, j| {
            let a = access[j];
            acc * (1.0 - a + a / (1.0 + theta * self.cross[k][j] / own))
        })
    }

    /// Link `k`'s own long-run throughput: access × rate × success.
    pub fn link_throughput(&self, k: usize, settings: &[(f64, f64)]) -> f64 {
        let access: Vec<f64> = settings.iter().map(|s| s.0).collect();
        let (p, r) = settings[k];
        p * r * self.aloha_success(k, r, &access)
    }

    pub fn spatial_throughput(&self, settings: &[(f64, f64)]) -> f64 {
        (0..self.len()).map(|k| self.link_throughput(k, settings)).sum::<f64>() / self.area
    }

    /// Common `(p, R)` maximizing spatial throughput when all links use it.
    pub fn network_optimal(&self, grid: &SearchGrid) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, (grid.access_probs[0], grid.rates[0]));
        for &p in &grid.access_probs {
            for &r in &grid.rates {
                let s = self.spatial_throughput(&vec![(p, r); self.len()]);
                if s > best.0 {
                    best = (s, (p, r));
                }
            }
        }
        best.1
    }

    /// Iterated best response where every link maximizes its own throughput
    /// given the others' current settings. Returns the fixed point, or the
    /// last iterate after `max_rounds`.
    pub fn selfish_equilibrium(
        &self,
        grid: &SearchGrid,
        start: (f64, f64),
        max_rounds: usize,
    ) -> (Vec<(f64, f64)>, bool) {
        let mut settings = vec![start; self.len()];
        for _ in 0..max_rounds {
            let next: Vec<(f64, f64)> = (0..self.len())
                .map(|k| {
                    let mut best = (f64::NEG_INFINITY, settings[k]);
                    for &p in &grid.access_probs {
                        for &r in &grid.rates {
                            let mut trial = settings.clone();
                            trial[k] = (p, r);
                            let t = self.link_throughput(k, &trial);
                            if t > best.0 {
                                best = (t, (p, r));
                            }
                        }
                    }
                    best.1
                })
                .collect();
            if next == settings {
                return (settings, true);
            }
            settings = next;
        }
        (settings, false)
    }
}
