//! Per-link and network-wide measures over an observation window.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkWindowRecord {
    pub link: usize,
    pub coding_rate: f64,
    /// Slots in which the link transmitted.
    pub slots_active: u64,
    pub slots_in_window: u64,
    pub successes: u64,
    pub outages: u64,
    pub losses: u64,
    pub arrivals: u64,
}

impl LinkWindowRecord {
    pub fn new(link: usize, coding_rate: f64) -> Self {
        LinkWindowRecord {
            link,
            coding_rate,
            ..Default::default()
        }
    }

    pub fn attempts(&self) -> u64 {
        self.successes + self.outages
    }

    /// Accumulates `other` (same link) into `self`; the coding rate of the
    /// later record wins.
    pub fn absorb(&mut self, other: &LinkWindowRecord) {
        self.coding_rate = other.coding_rate;
        self.slots_active += other.slots_active;
        self.slots_in_window += other.slots_in_window;
        self.successes += other.successes;
        self.outages += other.outages;
        self.losses += other.losses;
        self.arrivals += other.arrivals;
    }
}

/// Coding rate times the empirical per-attempt success probability.
/// `None` when the link never transmitted in the window.
pub fn effective_link_throughput(record: &LinkWindowRecord) -> Option<f64> {
    let attempts = record.attempts();
    (attempts > 0).then(|| record.coding_rate * record.successes as f64 / attempts as f64)
}

/// Effective throughput weighted by the fraction of the window spent
/// transmitting; zero for a silent link.
pub fn activity_weighted_throughput(record: &LinkWindowRecord, window: u64) -> f64 {
    effective_link_throughput(record)
        .map_or(0.0, |r| record.slots_active as f64 / window as f64 * r)
}

/// Area-normalized sum of activity-weighted effective throughputs, in
/// bits/s/Hz/m².
pub fn spatial_throughput<'a>(
    records: impl IntoIterator<Item = &'a LinkWindowRecord>,
    area: f64,
    window: u64,
) -> f64 {
    records
        .into_iter()
        .map(|r| activity_weighted_throughput(r, window))
        .sum::<f64>()
        / area
}

/// Fraction of the window's arrivals that were dropped. `None` without arrivals.
pub fn packet_loss_rate(record: &LinkWindowRecord) -> Option<f64> {
    (record.arrivals > 0).then(|| record.losses as f64 / record.arrivals as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::{Departure, QueueState, RetxPolicy};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(rate: f64, active: u64, window: u64, ok: u64, fail: u64) -> LinkWindowRecord {
        LinkWindowRecord {
            link: 0,
            coding_rate: rate,
            slots_active: active,
            slots_in_window: window,
            successes: ok,
            outages: fail,
            ..Default::default()
        }
    }

    #[test]
    fn effective_throughput_examples() {
        assert_eq!(effective_link_throughput(&rec(2.0, 10, 10, 10, 0)), Some(2.0));
        assert_eq!(effective_link_throughput(&rec(2.0, 10, 10, 0, 10)), Some(0.0));
        assert_eq!(effective_link_throughput(&rec(1.0, 100, 100, 75, 25)), Some(0.75));
        assert_eq!(effective_link_throughput(&rec(1.0, 0, 100, 0, 0)), None);
    }

    #[test]
    fn spatial_throughput_examples() {
        let full = rec(1.0, 10, 10, 10, 0);
        assert_eq!(spatial_throughput([&full], 1.0, 10), 1.0);
        assert_eq!(spatial_throughput([&full, &full], 2.0, 10), 1.0);
        let half = rec(1.0, 5, 10, 5, 0);
        assert_eq!(spatial_throughput([&half], 1.0, 10), 0.5);
    }

    #[test]
    fn plr_examples() {
        let mut r = rec(1.0, 0, 10, 0, 0);
        assert_eq!(packet_loss_rate(&r), None);
        r.arrivals = 50;
        assert_eq!(packet_loss_rate(&r), Some(0.0));
        r.losses = 50;
        assert_eq!(packet_loss_rate(&r), Some(1.0));
    }

    #[test]
    fn plr_matches_geometric_attempts() {
        // a packet is lost iff both of its M = 2 attempts fail: (1 − μ)² = 0.25
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut q = QueueState::default();
        let mut r = LinkWindowRecord::new(0, 1.0);
        while r.arrivals < 100_000 {
            q.enqueue(1);
            r.arrivals += 1;
            loop {
                match q.on_transmission_result(0, rng.gen_bool(0.5), RetxPolicy::bounded(2)).unwrap() {
                    Departure::Retained => continue,
                    Departure::Lost => r.losses += 1,
                    Departure::Delivered => {}
                }
                break;
            }
        }
        let plr = packet_loss_rate(&r).unwrap();
        assert!((plr - 0.25).abs() < 0.02, "{plr}");
    }

    proptest! {
        #[test]
        fn bounds_linearity_and_area_scaling(
            rate in 0.0..8.0f64, ok in 0u64..100, fail in 0u64..100, idle in 0u64..100,
            rate2 in 0.0..8.0f64, area in 0.1..1e4f64,
        ) {
            let window = ok + fail + idle + 1;
            let a = rec(rate, ok + fail, window, ok, fail);
            if let Some(e) = effective_link_throughput(&a) {
                prop_assert!((0.0..=rate).contains(&e));
            }
            let b = rec(rate2, ok + fail, window, ok, fail);
            let s_a = spatial_throughput([&a], area, window);
            let s_b = spatial_throughput([&b], area, window);
            let s_ab = spatial_throughput([&a, &b], area, window);
            prop_assert!((s_ab - (s_a + s_b)).abs() <= 1e-12 * s_ab.abs().max(1e-300));
            let doubled = spatial_throughput([&a, &b], 2.0 * area, window);
            prop_assert_eq!(doubled, s_ab / 2.0);
        }
    }
}
