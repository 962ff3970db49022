//! Achievable-rate arithmetic for Gaussian point-to-point codes.
//!
//! Receiver `k` sees a multiple access channel: it jointly decodes the
//! transmitters in a decode set `D ∋ k` and treats every other active
//! transmitter as noise. A rate tuple is achievable at `k` with `D` iff for
//! every nonempty `S ⊆ D`
//!
//! ```text
//! Σ_{i∈S} R_i ≤ log₂(1 + Σ_{i∈S} P_ki / (1 + Σ_{j∉D} P_kj))
//! ```
//!
//! Interference-as-noise (IAN) is the special case `D = {k}`; the optimal
//! decoder (OPT) searches over decode sets.

use serde::{Deserialize, Serialize};

use crate::channel::{GainMatrix, NOISE_POWER};
use crate::error::{Error, Result};

/// Relative slack when comparing a rate sum against a capacity bound.
/// Boundary points count as achievable.
pub const REL_TOL: f64 = 1e-12;

/// Above this many active transmitters the decode-set search falls back to
/// nested sets of the strongest interferers.
pub const DEFAULT_SEARCH_LIMIT: usize = 12;

/// Decode sets larger than this are not enumerated.
const MAX_DECODE_SET: usize = 30;

#[inline]
pub fn within(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + REL_TOL * lhs.abs().max(rhs.abs())
}

#[inline]
fn capacity(signal: f64, noise: f64) -> f64 {
    (signal / noise).ln_1p() / std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    Ian,
    Opt,
}

/// Per-link coding rates in bits/s/Hz, indexed by link id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTuple(pub Vec<f64>);

impl RateTuple {
    pub fn zeros(n: usize) -> Self {
        RateTuple(vec![0.0; n])
    }

    pub fn uniform(n: usize, rate: f64) -> Self {
        RateTuple(vec![rate; n])
    }

    pub fn get(&self, k: usize) -> f64 {
        self.0.get(k).copied().unwrap_or(0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        RateTuple(self.0.iter().map(|r| r * factor).collect())
    }
}

/// The transmitters whose messages receiver `owner` decodes jointly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeSet {
    owner: usize,
    decoded: Vec<usize>,
}

impl DecodeSet {
    pub fn new(owner: usize, decoded: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut decoded: Vec<usize> = decoded.into_iter().collect();
        decoded.sort_unstable();
        decoded.dedup();
        if decoded.binary_search(&owner).is_err() {
            return Err(Error::invalid(
                "decode_set",
                format!("decode set of receiver {owner} must contain it"),
            ));
        }
        Ok(DecodeSet { owner, decoded })
    }

    /// The IAN decode set `{owner}`.
    pub fn only(owner: usize) -> Self {
        DecodeSet {
            owner,
            decoded: vec![owner],
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn decoded(&self) -> &[usize] {
        &self.decoded
    }

    pub fn contains(&self, tx: usize) -> bool {
        self.decoded.binary_search(&tx).is_ok()
    }
}

/// Largest rate link `k` can use while treating all other active
/// transmitters as noise.
pub fn ian_rate(k: usize, row: &[f64], active: &[usize]) -> f64 {
    let interference: f64 = active.iter().filter(|&&j| j != k).map(|&j| row[j]).sum();
    capacity(row[k], NOISE_POWER + interference)
}

/// Checks every MAC constraint at receiver `decode.owner()`. `row` holds the
/// received powers at that receiver; silent transmitters must be zero.
///
/// Panics if the decode set has more than 30 members.
pub fn achievable_with_decode_set(decode: &DecodeSet, rates: &RateTuple, row: &[f64]) -> bool {
    let members = decode.decoded();
    assert!(members.len() <= MAX_DECODE_SET, "decode set too large to enumerate");
    let noise = NOISE_POWER
        + row
            .iter()
            .enumerate()
            .filter(|(j, _)| !decode.contains(*j))
            .map(|(_, p)| p)
            .sum::<f64>();
    let psum = subset_sums(members.iter().map(|&i| row[i]));
    let rsum = subset_sums(members.iter().map(|&i| rates.get(i)));
    (1..psum.len()).all(|s| within(rsum[s], capacity(psum[s], noise)))
}

/// `sums[mask]` = sum of the values selected by `mask`.
fn subset_sums(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let values: Vec<f64> = values.collect();
    let mut sums = vec![0.0; 1 << values.len()];
    for mask in 1..sums.len() {
        let low = mask.trailing_zeros() as usize;
        sums[mask] = sums[mask & (mask - 1)] + values[low];
    }
    sums
}

/// Interferers of receiver `k` considered for joint decoding, with their
/// power and rate prefix sums.
struct Universe {
    members: Vec<usize>,
    psum: Vec<f64>,
    rsum: Vec<f64>,
    /// Power from active interferers outside `members`; always noise.
    outside: f64,
    own: f64,
}

impl Universe {
    fn build(k: usize, row: &[f64], active: &[usize], rates: &RateTuple, size: usize) -> Self {
        let mut interferers: Vec<usize> = active.iter().copied().filter(|&j| j != k).collect();
        interferers.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let members: Vec<usize> = interferers.iter().copied().take(size).collect();
        let outside = interferers[members.len()..].iter().map(|&j| row[j]).sum();
        Universe {
            psum: subset_sums(members.iter().map(|&j| row[j])),
            rsum: subset_sums(members.iter().map(|&j| rates.get(j))),
            members,
            outside,
            own: row[k],
        }
    }

    fn full(&self) -> usize {
        self.psum.len() - 1
    }

    /// Best rate for the owner when it decodes the interferers in `joint`,
    /// or `None` if some constraint not involving the owner already fails.
    fn bound(&self, joint: usize) -> Option<f64> {
        let noise = NOISE_POWER + self.outside + self.psum[self.full() ^ joint];
        let mut best = capacity(self.own, noise);
        // walk the nonempty submasks of `joint`
        let mut sub = joint;
        while sub != 0 {
            if !within(self.rsum[sub], capacity(self.psum[sub], noise)) {
                return None;
            }
            best = best.min(capacity(self.own + self.psum[sub], noise) - self.rsum[sub]);
            sub = (sub - 1) & joint;
        }
        Some(best)
    }

    fn decode_set(&self, owner: usize, joint: usize) -> DecodeSet {
        let others = (0..self.members.len())
            .filter(|b| joint & (1 << b) != 0)
            .map(|b| self.members[b]);
        DecodeSet::new(owner, std::iter::once(owner).chain(others))
            .expect("owner is always included")
    }
}

/// Candidate decode sets, as masks over the universe: every subset when the
/// search is exhaustive, otherwise the nested strongest-first prefixes.
fn candidates(universe: &Universe, exhaustive: bool) -> Box<dyn Iterator<Item = usize>> {
    let n = universe.members.len();
    if exhaustive {
        Box::new(0..(1usize << n))
    } else {
        Box::new((0..=n).map(|m| (1usize << m) - 1))
    }
}

fn search(
    k: usize,
    row: &[f64],
    active: &[usize],
    rates: &RateTuple,
    search_limit: usize,
    target: Option<f64>,
) -> (f64, DecodeSet) {
    let limit = search_limit.clamp(1, MAX_DECODE_SET);
    let exhaustive = active.len() <= limit;
    let universe = Universe::build(k, row, active, rates, limit - 1);
    // decoding nothing extra is plain IAN; use its direct form so the
    // result never falls below it through summation order
    let mut best = (ian_rate(k, row, active), 0usize);
    for joint in candidates(&universe, exhaustive).filter(|&j| j != 0) {
        if let Some(r) = universe.bound(joint) {
            if r > best.0 {
                best = (r, joint);
                if target.is_some_and(|t| within(t, r)) {
                    break;
                }
            }
        }
    }
    (best.0.max(0.0), universe.decode_set(k, best.1))
}

/// Largest rate achievable by link `k` under the optimal decoder given the
/// other links' rates, with a decode set that attains it.
///
/// The search is exhaustive when `|active| ≤ search_limit`; otherwise only
/// `{k}` plus nested sets of the strongest interferers (at most
/// `search_limit` members) are tried. The result is never below
/// [`ian_rate`].
pub fn opt_rate(
    k: usize,
    row: &[f64],
    active: &[usize],
    other_rates: &RateTuple,
    search_limit: usize,
) -> (f64, DecodeSet) {
    search(k, row, active, other_rates, search_limit, None)
}

/// Whether link `k` is in outage at `coding_rate` for the realized powers.
pub fn outage(
    k: usize,
    coding_rate: f64,
    row: &[f64],
    active: &[usize],
    decoder: Decoder,
    other_rates: &RateTuple,
    search_limit: usize,
) -> bool {
    if coding_rate <= 0.0 {
        return false;
    }
    let ian = ian_rate(k, row, active);
    if within(coding_rate, ian) {
        return false;
    }
    match decoder {
        Decoder::Ian => true,
        Decoder::Opt => {
            let (best, _) = search(k, row, active, other_rates, search_limit, Some(coding_rate));
            !within(coding_rate, best)
        }
    }
}

/// Membership in the intersection of the per-receiver MAC regions for the
/// given decode sets (one per active receiver).
pub fn in_capacity_region(rates: &RateTuple, gains: &GainMatrix, decode_sets: &[DecodeSet]) -> bool {
    decode_sets
        .iter()
        .all(|d| achievable_with_decode_set(d, rates, gains.row(d.owner())))
}

/// Membership in the capacity region when every receiver may pick its own
/// decode set from `active`.
pub fn capacity_region_contains(
    rates: &RateTuple,
    gains: &GainMatrix,
    active: &[usize],
    search_limit: usize,
) -> bool {
    active
        .iter()
        .all(|&k| !outage(k, rates.get(k), gains.row(k), active, Decoder::Opt, rates, search_limit))
}

/// Largest common rate `R` such that link `k` achieves `R` while every other
/// active link also codes at `R`.
pub fn symmetric_rate(k: usize, row: &[f64], active: &[usize], decoder: Decoder, search_limit: usize) -> f64 {
    let ian = ian_rate(k, row, active);
    if decoder == Decoder::Ian || active.len() <= 1 {
        return ian;
    }
    let n = row.len();
    let achievable = |r: f64| !outage(k, r, row, active, Decoder::Opt, &RateTuple::uniform(n, r), search_limit);
    let mut lo = ian;
    let mut hi = capacity(row[k], NOISE_POWER);
    if achievable(hi) {
        return hi;
    }
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if achievable(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    // Independent oracle: naive set-based enumeration straight from the
    // MAC-region definition.
    fn brute_ok(owner: usize, decoded: &BTreeSet<usize>, rates: &[f64], row: &[f64], active: &[usize]) -> bool {
        assert!(decoded.contains(&owner));
        let noise: f64 = 1.0
            + active
                .iter()
                .filter(|j| !decoded.contains(j))
                .map(|&j| row[j])
                .sum::<f64>();
        let items: Vec<usize> = decoded.iter().copied().collect();
        for mask in 1u32..(1 << items.len()) {
            let s: Vec<usize> = (0..items.len()).filter(|b| mask >> b & 1 == 1).map(|b| items[b]).collect();
            let lhs: f64 = s.iter().map(|&i| rates[i]).sum();
            let rhs = (1.0 + s.iter().map(|&i| row[i]).sum::<f64>() / noise).log2();
            if lhs > rhs + 1e-12 * lhs.abs().max(rhs.abs()) {
                return false;
            }
        }
        true
    }

    fn brute_opt(k: usize, row: &[f64], active: &[usize], rates: &[f64]) -> f64 {
        let others: Vec<usize> = active.iter().copied().filter(|&j| j != k).collect();
        let mut best: f64 = 0.0;
        for mask in 0u32..(1 << others.len()) {
            let mut d: BTreeSet<usize> = (0..others.len()).filter(|b| mask >> b & 1 == 1).map(|b| others[b]).collect();
            d.insert(k);
            // bisection on R_k against the brute-force checker
            let mut r = rates.to_vec();
            r[k] = 0.0;
            if !brute_ok(k, &d, &r, row, active) {
                continue;
            }
            let (mut lo, mut hi) = (0.0, 64.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                r[k] = mid;
                if brute_ok(k, &d, &r, row, active) {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            best = best.max(lo);
        }
        best
    }

    #[test]
    fn ian_examples() {
        assert_eq!(ian_rate(0, &[1.0], &[0]), 1.0);
        let r = ian_rate(0, &[1.0, 1.0], &[0, 1]);
        assert!((r - 1.5f64.log2()).abs() < 1e-15);
        assert!((r - 0.5849625).abs() < 1e-7);
        assert_eq!(ian_rate(0, &[0.0, 3.0], &[0, 1]), 0.0);
        // silent transmitters are ignored even if the row holds their power
        assert_eq!(ian_rate(0, &[1.0, 5.0], &[0]), 1.0);
    }

    #[test]
    fn decode_set_validation() {
        assert!(DecodeSet::new(2, [0, 1]).is_err());
        let d = DecodeSet::new(2, [3, 2, 3]).unwrap();
        assert_eq!(d.decoded(), &[2, 3]);
    }

    #[test]
    fn single_member_set_is_the_ian_test() {
        let row = [2.0, 1.0, 0.5];
        let ian = ian_rate(0, &row, &[0, 1, 2]);
        let d = DecodeSet::only(0);
        assert!(achievable_with_decode_set(&d, &RateTuple(vec![ian, 9.0, 9.0]), &row));
        assert!(!achievable_with_decode_set(&d, &RateTuple(vec![ian * 1.001, 0.0, 0.0]), &row));
    }

    #[test]
    fn two_user_decode_both() {
        let d = DecodeSet::new(0, [0, 1]).unwrap();
        assert!(achievable_with_decode_set(&d, &RateTuple(vec![0.5, 0.5]), &[1.0, 1.0]));
        // sum constraint log2(3) = 1.585 binds
        assert!(!achievable_with_decode_set(&d, &RateTuple(vec![0.9, 0.9]), &[1.0, 1.0]));
        assert!(achievable_with_decode_set(&d, &RateTuple::zeros(2), &[1.0, 1.0]));
    }

    #[test]
    fn opt_two_user_example() {
        let row = [1.0, 4.0];
        let (r, d) = opt_rate(0, &row, &[0, 1], &RateTuple(vec![0.0, 0.5]), DEFAULT_SEARCH_LIMIT);
        assert!((r - 1.0).abs() < 1e-12, "{r}");
        assert_eq!(d.decoded(), &[0, 1]);
        let ian = ian_rate(0, &row, &[0, 1]);
        assert!((ian - 1.2f64.log2()).abs() < 1e-12);
        assert!(r > ian);
    }

    #[test]
    fn opt_falls_back_to_ian_when_decoding_cannot_help() {
        // interferer too weak to decode at its rate
        let row = [10.0, 0.1];
        let (r, d) = opt_rate(0, &row, &[0, 1], &RateTuple(vec![0.0, 3.0]), DEFAULT_SEARCH_LIMIT);
        assert_eq!(d, DecodeSet::only(0));
        assert_eq!(r, ian_rate(0, &row, &[0, 1]));
    }

    #[test]
    fn outage_examples() {
        let row = [1.0, 1.0];
        let active = [0, 1];
        let rates = RateTuple::zeros(2);
        assert!(!outage(0, 0.0, &[0.0, 9.0], &active, Decoder::Ian, &rates, 12));
        let ian = ian_rate(0, &row, &active);
        assert!(!outage(0, ian, &row, &active, Decoder::Ian, &rates, 12));
        assert!(outage(0, ian + 1e-6, &row, &active, Decoder::Ian, &rates, 12));
        assert!(!outage(0, 0.5, &row, &active, Decoder::Ian, &rates, 12));
        // OPT rescues the two-user example
        let row = [1.0, 4.0];
        let rates = RateTuple(vec![0.0, 0.5]);
        assert!(outage(0, 0.9, &row, &active, Decoder::Ian, &rates, 12));
        assert!(!outage(0, 0.9, &row, &active, Decoder::Opt, &rates, 12));
        assert!(outage(0, 1.01, &row, &active, Decoder::Opt, &rates, 12));
    }

    #[test]
    fn single_link_region_boundary() {
        let g = GainMatrix::from_rows(vec![vec![3.0]]);
        let cap = 4f64.log2();
        let sets = [DecodeSet::only(0)];
        assert!(in_capacity_region(&RateTuple(vec![cap]), &g, &sets));
        assert!(!in_capacity_region(&RateTuple(vec![cap + 1e-9]), &g, &sets));
        assert!(in_capacity_region(&RateTuple(vec![0.0]), &g, &sets));
        assert!(capacity_region_contains(&RateTuple(vec![cap]), &g, &[0], 12));
        assert!(!capacity_region_contains(&RateTuple(vec![cap + 1e-9]), &g, &[0], 12));
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
        let row = (0..n).map(|_| 10f64.powf(rng.gen_range(-2.0..1.5))).collect();
        let rates = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        (row, rates)
    }

    #[test]
    fn exhaustive_opt_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let n = rng.gen_range(1..=5);
            let (row, rates) = random_instance(&mut rng, n);
            let active: Vec<usize> = (0..n).collect();
            let k = rng.gen_range(0..n);
            let (r, d) = opt_rate(k, &row, &active, &RateTuple(rates.clone()), 12);
            let oracle = brute_opt(k, &row, &active, &rates);
            assert!((r - oracle).abs() < 1e-9 * oracle.max(1.0), "{r} vs {oracle}");
            let mut with = rates.clone();
            with[k] = r;
            assert!(achievable_with_decode_set(&d, &RateTuple(with), &row));
        }
    }

    #[test]
    fn greedy_search_stays_valid_above_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (row, rates) = random_instance(&mut rng, 9);
            let active: Vec<usize> = (0..9).collect();
            let rates = RateTuple(rates);
            let (greedy, d) = opt_rate(0, &row, &active, &rates, 4);
            let (full, _) = opt_rate(0, &row, &active, &rates, 12);
            assert!(d.decoded().len() <= 4);
            assert!(greedy >= ian_rate(0, &row, &active));
            assert!(greedy <= full + 1e-12);
        }
    }

    #[test]
    fn symmetric_rate_is_self_consistent() {
        // two strong interferers close to receiver 0
        let row = [1.0, 30.0, 20.0, 0.01];
        let active = [0, 1, 2, 3];
        let r = symmetric_rate(0, &row, &active, Decoder::Opt, 12);
        assert!(r > ian_rate(0, &row, &active));
        let rates = RateTuple::uniform(4, r);
        assert!(!outage(0, r, &row, &active, Decoder::Opt, &rates, 12));
        let above = RateTuple::uniform(4, r * 1.0001);
        assert!(outage(0, r * 1.0001, &row, &active, Decoder::Opt, &above, 12));
    }

    proptest! {
        #[test]
        fn opt_dominates_ian(seed in any::<u64>(), n in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (row, rates) = random_instance(&mut rng, n);
            let active: Vec<usize> = (0..n).collect();
            for k in 0..n {
                let (r, _) = opt_rate(k, &row, &active, &RateTuple(rates.clone()), 12);
                prop_assert!(r >= ian_rate(k, &row, &active));
            }
        }

        #[test]
        fn ian_decreases_with_interference(pkk in 0.01..100.0f64, pj in 0.0..100.0f64, extra in 0.001..10.0f64) {
            let a = ian_rate(0, &[pkk, pj], &[0, 1]);
            let b = ian_rate(0, &[pkk, pj + extra], &[0, 1]);
            prop_assert!(b < a);
        }

        #[test]
        fn region_is_closed_under_scaling(seed in any::<u64>(), lambda in 0.0..=1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..=4);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| random_instance(&mut rng, n).0).collect();
            let g = GainMatrix::from_rows(rows);
            let rates = RateTuple((0..n).map(|_| rng.gen_range(0.0..1.0)).collect());
            let active: Vec<usize> = (0..n).collect();
            if capacity_region_contains(&rates, &g, &active, 12) {
                prop_assert!(capacity_region_contains(&rates.scaled(lambda), &g, &active, 12));
            }
            let sets: Vec<DecodeSet> = (0..n).map(|k| opt_rate(k, g.row(k), &active, &rates, 12).1).collect();
            if in_capacity_region(&rates, &g, &sets) {
                prop_assert!(in_capacity_region(&rates.scaled(lambda), &g, &sets));
            }
        }
    }
}
