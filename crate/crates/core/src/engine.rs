//! The slotted simulation loop.
//!
//! Every slot runs the same phases in order: topology and sensing update,
//! arrivals, access decisions, outage evaluation, feedback and queue update,
//! bookkeeping, and (at epoch boundaries) per-node adaptation. Within a
//! phase nodes only read state written in earlier phases, so the node
//! iteration order never matters.

use serde::{Deserialize, Serialize};

use crate::adapt::{self, DesignSetting, Estimates, InterfererDistance, Observations, Prediction, Rule};
use crate::channel::{gain_row, sensed_power};
use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::geometry::{advance, MobilityKind, Topology};
use crate::mac::{aloha_decide, csma_decide, tdma_active, CsmaDecision, MacPolicy};
use crate::metrics::{effective_link_throughput, packet_loss_rate, spatial_throughput, LinkWindowRecord};
use crate::rates::{self, RateTuple};
use crate::rng::{self, Concern};
use crate::traffic::{stability_verdict, Departure, QueueState, StabilityVerdict, MIN_TRACE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub index: u64,
    pub start_slot: u64,
    /// Exclusive.
    pub end_slot: u64,
    pub records: Vec<LinkWindowRecord>,
    pub spatial_throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSummary {
    pub link: usize,
    pub totals: LinkWindowRecord,
    pub effective_throughput: Option<f64>,
    pub packet_loss_rate: Option<f64>,
    /// Absent when the backlog trace is shorter than the drift test needs.
    pub stability: Option<StabilityVerdict>,
    pub delivered: u64,
    pub lost: u64,
    pub final_backlog: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationRecord {
    pub epoch: u64,
    /// The decision takes effect from this slot on.
    pub slot: u64,
    pub node: usize,
    pub estimates: Estimates,
    pub setting: DesignSetting,
    pub rule: Rule,
    pub predicted: Prediction,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub total_slots: u64,
    pub window_slots: u64,
    pub area: f64,
    pub windows: Vec<WindowReport>,
    pub links: Vec<LinkSummary>,
    /// Outages over attempts, pooled across every link and slot.
    pub pooled_outage: Option<f64>,
    pub adaptation: Vec<AdaptationRecord>,
    pub final_settings: Vec<DesignSetting>,
    #[serde(skip)]
    pub backlog_traces: Vec<Vec<u64>>,
    #[serde(skip)]
    pub trace_stride: u64,
    #[serde(skip)]
    pub final_topology: Option<Topology>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Node {
    setting: DesignSetting,
    queue: QueueState,
    backoff: u32,
    busy_senses: u32,
    window: LinkWindowRecord,
    totals: LinkWindowRecord,
    seen_arrivals: Vec<u32>,
    seen_sensed: Vec<f64>,
    seen_tx: Vec<bool>,
}

impl Node {
    fn new(id: usize, config: &ScenarioConfig) -> Self {
        let setting = config.setting_for(id).clone();
        Node {
            window: LinkWindowRecord::new(id, setting.coding_rate),
            totals: LinkWindowRecord::new(id, setting.coding_rate),
            setting,
            queue: QueueState::with_backlog(config.initial_backlog),
            backoff: 0,
            busy_senses: 0,
            seen_arrivals: Vec::new(),
            seen_sensed: Vec::new(),
            seen_tx: Vec::new(),
        }
    }
}

enum Access {
    Idle,
    Transmit,
    GiveUp,
}

/// Runs a scenario to completion. The config is validated first; identical
/// configs give identical reports.
pub fn run(config: &ScenarioConfig) -> Result<RunReport> {
    config.validate()?;
    let config = config.clone().resolved()?;
    let seed = config.seed;
    let model = config.channel;
    let mobility = config.mobility.model();
    let search_limit = config
        .adaptation
        .as_ref()
        .map_or(rates::DEFAULT_SEARCH_LIMIT, |a| a.controller.search_limit);

    let mut topology = config.initial_topology();
    let area = topology.area();
    let mut nodes: Vec<Node> = (0..topology.len()).map(|k| Node::new(k, &config)).collect();
    let mut windows = Vec::new();
    let mut adaptation_log = Vec::new();
    let mut window_start = 0u64;
    let mut previous_tx: Vec<usize> = Vec::new();
    let mut row = Vec::new();

    for slot in 0..config.total_slots {
        // (1) topology, fading and carrier sensing of last slot's transmitters
        if let (MobilityKind::HighlyMobile, Some(m)) = (config.mobility.kind, mobility) {
            topology = advance(&topology, &m, slot, seed)?;
        }
        let present = topology.len();
        while nodes.len() < present {
            let id = nodes.len();
            let mut node = Node::new(id, &config);
            node.window.slots_in_window = 0;
            nodes.push(node);
        }
        let sensed: Vec<f64> = (0..present)
            .map(|k| sensed_power(&model, &topology, k, &previous_tx, slot, seed))
            .collect();

        // (2) arrivals, enqueued after service
        let arrivals: Vec<u32> = (0..nodes.len())
            .map(|k| if k < present { config.arrivals.arrivals(seed, slot, k) } else { 0 })
            .collect();

        // (3) access decisions
        let mut access = Vec::with_capacity(present);
        for (k, node) in nodes.iter_mut().enumerate().take(present) {
            let decision = if !node.queue.has_packet() {
                Access::Idle
            } else {
                match &node.setting.mac {
                    MacPolicy::Aloha { p } => {
                        let draw = rng::uniform(seed, Concern::Access, slot, k as u64, 0);
                        if aloha_decide(*p, true, draw) { Access::Transmit } else { Access::Idle }
                    }
                    MacPolicy::Tdma(t) => {
                        if tdma_active(k, t, slot)? { Access::Transmit } else { Access::Idle }
                    }
                    MacPolicy::Csma(c) => {
                        if node.backoff > 0 {
                            node.backoff -= 1;
                            Access::Idle
                        } else {
                            let draw = rng::uniform(seed, Concern::Backoff, slot, k as u64, 0);
                            match csma_decide(sensed[k], c, node.busy_senses, draw) {
                                CsmaDecision::Transmit => {
                                    node.busy_senses = 0;
                                    Access::Transmit
                                }
                                CsmaDecision::Backoff(s) => {
                                    node.busy_senses += 1;
                                    node.backoff = s;
                                    Access::Idle
                                }
                                CsmaDecision::GiveUp => {
                                    node.busy_senses = 0;
                                    Access::GiveUp
                                }
                            }
                        }
                    }
                }
            };
            access.push(decision);
        }
        let active: Vec<usize> = (0..present)
            .filter(|&k| matches!(access[k], Access::Transmit))
            .collect();

        // (4) per-receiver outage with the realized powers
        let coding = RateTuple((0..present).map(|k| nodes[k].setting.coding_rate).collect());
        row.resize(present, 0.0);
        let outcomes: Vec<bool> = active
            .iter()
            .map(|&k| {
                gain_row(&model, &topology, k, &active, slot, seed, &mut row);
                let s = &nodes[k].setting;
                !rates::outage(k, s.coding_rate, &row, &active, s.decoder, &coding, search_limit)
            })
            .collect();

        // (5–6) feedback and queue update
        for (&k, &success) in active.iter().zip(&outcomes) {
            let node = &mut nodes[k];
            node.window.slots_active += 1;
            if success {
                node.window.successes += 1;
            } else {
                node.window.outages += 1;
            }
            if node.queue.on_transmission_result(k, success, node.setting.retx)? == Departure::Lost {
                node.window.losses += 1;
            }
        }
        for (k, decision) in access.iter().enumerate() {
            if let Access::GiveUp = decision {
                let node = &mut nodes[k];
                if node.queue.on_transmission_result(k, false, node.setting.retx)? == Departure::Lost {
                    node.window.losses += 1;
                }
            }
        }
        for (node, &a) in nodes.iter_mut().zip(&arrivals) {
            node.queue.enqueue(a);
            node.window.arrivals += a as u64;
        }

        // (7) bookkeeping
        let transmitted = {
            let mut t = vec![false; nodes.len()];
            active.iter().for_each(|&k| t[k] = true);
            t
        };
        for (k, node) in nodes.iter_mut().enumerate() {
            node.window.slots_in_window += 1;
            if slot % config.trace_stride == 0 {
                node.queue.record();
            }
            if config.adaptation.is_some() {
                node.seen_arrivals.push(arrivals[k]);
                node.seen_sensed.push(sensed.get(k).copied().unwrap_or(0.0));
                node.seen_tx.push(transmitted[k]);
            }
        }
        let end = slot + 1;
        if end - window_start == config.window_slots || end == config.total_slots {
            let records: Vec<LinkWindowRecord> = nodes
                .iter_mut()
                .map(|n| {
                    let done = n.window.clone();
                    n.totals.absorb(&done);
                    n.window = LinkWindowRecord::new(done.link, n.setting.coding_rate);
                    done
                })
                .collect();
            let span = end - window_start;
            windows.push(WindowReport {
                index: windows.len() as u64,
                start_slot: window_start,
                end_slot: end,
                spatial_throughput: spatial_throughput(&records, area, span),
                records,
            });
            window_start = end;
        }

        // (8) adaptation, from each node's own observations
        if let Some(a) = &config.adaptation {
            if end % a.epoch_slots == 0 && end < config.total_slots {
                let epoch = end / a.epoch_slots - 1;
                for k in 0..nodes.len() {
                    // late joiners keep their setting until they have seen enough
                    if nodes[k].seen_arrivals.len() < adapt::MIN_WINDOW {
                        continue;
                    }
                    let selection = {
                        let node = &nodes[k];
                        let quasi = config.mobility.kind == MobilityKind::QuasiStatic;
                        let obs = Observations {
                            node: k,
                            arrivals: &node.seen_arrivals,
                            sensed_power: &node.seen_sensed,
                            transmitted: &node.seen_tx,
                            sensing_lag: match &node.setting.mac {
                                MacPolicy::Tdma(t) => t.groups as usize,
                                _ => 1,
                            },
                            own_link_distance: match (quasi, mobility) {
                                (true, _) => topology.tx_rx_distance(k, k),
                                (false, Some(m)) => m.link_distance,
                                (false, None) => 0.0,
                            },
                            interferer_distances: if quasi {
                                (0..topology.len())
                                    .filter(|&j| j != k)
                                    .map(|j| InterfererDistance {
                                        node: j,
                                        distance: topology.tx_rx_distance(j, k),
                                    })
                                    .collect()
                            } else {
                                Vec::new()
                            },
                            true_density: match (quasi, mobility) {
                                (false, Some(m)) => m.density,
                                _ => topology.len() as f64 / area,
                            },
                            true_mobility: config.mobility.kind,
                        };
                        let est = adapt::estimate_state(&obs, &a.controller, &model)?;
                        let sel = adapt::select_setting(&est, &config.constraints, &a.controller, &model)?;
                        (est, sel)
                    };
                    let (estimates, sel) = selection;
                    let node = &mut nodes[k];
                    if node.setting.mac != sel.setting.mac {
                        node.backoff = 0;
                        node.busy_senses = 0;
                    }
                    node.setting = sel.setting.clone();
                    node.window.coding_rate = sel.setting.coding_rate;
                    node.seen_arrivals.clear();
                    node.seen_sensed.clear();
                    node.seen_tx.clear();
                    adaptation_log.push(AdaptationRecord {
                        epoch,
                        slot: end,
                        node: k,
                        estimates,
                        setting: sel.setting,
                        rule: sel.rule,
                        predicted: sel.predicted,
                        feasible: sel.feasible,
                    });
                }
            }
        }

        previous_tx = active;
    }

    let mut attempts = 0u64;
    let mut outages = 0u64;
    let mut links = Vec::with_capacity(nodes.len());
    let mut traces = Vec::with_capacity(nodes.len());
    for (k, node) in nodes.iter_mut().enumerate() {
        attempts += node.totals.attempts();
        outages += node.totals.outages;
        let trace = std::mem::take(&mut node.queue.backlog_trace);
        let stability = if trace.len() >= MIN_TRACE {
            let stride = config.trace_stride as f64;
            let v = stability_verdict(&trace, config.constraints.drift_tolerance * stride)?;
            Some(StabilityVerdict {
                stable: v.stable,
                drift: v.drift / stride,
            })
        } else {
            None
        };
        links.push(LinkSummary {
            link: k,
            effective_throughput: effective_link_throughput(&node.totals),
            packet_loss_rate: packet_loss_rate(&node.totals),
            totals: node.totals.clone(),
            stability,
            delivered: node.queue.delivered,
            lost: node.queue.lost,
            final_backlog: node.queue.backlog,
        });
        traces.push(trace);
    }

    Ok(RunReport {
        seed,
        total_slots: config.total_slots,
        window_slots: config.window_slots,
        area,
        windows,
        links,
        pooled_outage: (attempts > 0).then(|| outages as f64 / attempts as f64),
        adaptation: adaptation_log,
        final_settings: nodes.iter().map(|n| n.setting.clone()).collect(),
        backlog_traces: traces,
        trace_stride: config.trace_stride,
        final_topology: Some(topology),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_and_validate;

    fn single_link(extra: &str) -> ScenarioConfig {
        parse_and_validate(&format!(
            r#"{{
                "seed": 11, "total_slots": 5000, "area": {{"width": 100, "height": 100}},
                "channel": {{"tx_power": 1000}},
                "links": [{{"id": 0, "tx": [0, 0], "rx": [3, 0]}}]
                {extra}
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn lone_link_below_capacity_never_fails() {
        // SNR = 1000 / 81 ≈ 12.3, capacity ≈ 3.74
        let c = single_link(
            r#", "setting": {"coding_rate": 2.0, "decoder": "ian", "mac": {"kind": "aloha", "p": 1.0}},
                 "arrivals": {"kind": "bernoulli", "rate": 0.5}"#,
        );
        let r = run(&c).unwrap();
        let l = &r.links[0];
        assert_eq!(l.totals.outages, 0);
        assert_eq!(l.packet_loss_rate, Some(0.0));
        assert_eq!(l.effective_throughput, Some(2.0));
        // it transmits exactly in the slots where it holds a packet
        let busy = r.backlog_traces[0].iter().filter(|&&q| q > 0).count() as u64;
        assert!(l.totals.slots_active.abs_diff(busy) <= 1);
        let s: f64 = r.windows.iter().map(|w| w.spatial_throughput * 1000.0).sum::<f64>() / 5000.0;
        let expected = 2.0 * l.totals.slots_active as f64 / 5000.0 / 1e4;
        assert!((s - expected).abs() < 1e-12);
    }

    #[test]
    fn one_slot_gives_one_slot_of_records() {
        let mut c = single_link("");
        c.total_slots = 1;
        let r = run(&c).unwrap();
        assert_eq!(r.windows.len(), 1);
        assert_eq!((r.windows[0].start_slot, r.windows[0].end_slot), (0, 1));
        assert_eq!(r.windows[0].records[0].slots_in_window, 1);
        c.total_slots = 0;
        assert!(run(&c).is_err());
    }

    #[test]
    fn windows_tile_the_run() {
        let mut c = single_link("");
        c.total_slots = 2500;
        let r = run(&c).unwrap();
        let spans: Vec<(u64, u64)> = r.windows.iter().map(|w| (w.start_slot, w.end_slot)).collect();
        assert_eq!(spans, vec![(0, 1000), (1000, 2000), (2000, 2500)]);
    }

    #[test]
    fn conservation_at_the_end() {
        let c = single_link(
            r#", "setting": {"coding_rate": 5.0, "decoder": "ian", "mac": {"kind": "aloha", "p": 0.5}, "retx": 2},
                 "initial_backlog": 3"#,
        );
        let r = run(&c).unwrap();
        let l = &r.links[0];
        assert_eq!(l.totals.arrivals + 3, l.delivered + l.lost + l.final_backlog);
        assert_eq!(l.lost, l.totals.losses);
    }

    #[test]
    fn reports_are_reproducible() {
        let mut c = single_link(r#", "arrivals": {"kind": "bernoulli", "rate": 0.9}"#);
        c.channel.fading = crate::channel::Fading::RayleighPerSlot;
        c.channel.tx_power = 20.0;
        assert_eq!(run(&c).unwrap().to_json(), run(&c).unwrap().to_json());
    }
}
