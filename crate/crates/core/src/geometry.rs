//! Link placement over a rectangular area treated as a torus.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::{self, Concern};

/// A position in meters. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from(p: [f64; 2]) -> Self {
        Point { x: p[0], y: p[1] }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Plain Euclidean distance.
pub fn distance(a: Point, b: Point) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Shortest distance between two points on a `width × height` torus.
pub fn torus_distance(a: Point, b: Point, width: f64, height: f64) -> f64 {
    let wrap = |d: f64, len: f64| {
        let d = d.abs() % len;
        d.min(len - d)
    };
    wrap(a.x - b.x, width).hypot(wrap(a.y - b.y, height))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: usize,
    pub tx: Point,
    pub rx: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub area_width: f64,
    pub area_height: f64,
    #[serde(default)]
    pub epoch: u64,
    pub links: Vec<LinkSpec>,
}

impl Topology {
    pub fn empty(area_width: f64, area_height: f64) -> Self {
        Topology {
            area_width,
            area_height,
            epoch: 0,
            links: Vec::new(),
        }
    }

    pub fn area(&self) -> f64 {
        self.area_width * self.area_height
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Toroidal distance from the TX of link `tx` to the RX of link `rx`.
    pub fn tx_rx_distance(&self, tx: usize, rx: usize) -> f64 {
        self.dist(self.links[tx].tx, self.links[rx].rx)
    }

    /// Toroidal distance between the transmitters of links `a` and `b`.
    pub fn tx_tx_distance(&self, a: usize, b: usize) -> f64 {
        self.dist(self.links[a].tx, self.links[b].tx)
    }

    fn dist(&self, a: Point, b: Point) -> f64 {
        torus_distance(a, b, self.area_width, self.area_height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.area_width.is_finite() && self.area_width > 0.0) {
            return Err(Error::invalid("area.width", "must be finite and > 0"));
        }
        if !(self.area_height.is_finite() && self.area_height > 0.0) {
            return Err(Error::invalid("area.height", "must be finite and > 0"));
        }
        let mut seen = vec![false; self.links.len()];
        for (pos, link) in self.links.iter().enumerate() {
            let path = format!("links[{pos}]");
            if link.id >= self.links.len() {
                return Err(Error::invalid(
                    format!("{path}.id"),
                    format!("link ids must be 0..{} without gaps", self.links.len()),
                ));
            }
            if seen[link.id] {
                return Err(Error::invalid(
                    format!("{path}.id"),
                    format!("duplicate node id {}", link.id),
                ));
            }
            seen[link.id] = true;
            if !link.tx.is_finite() || !link.rx.is_finite() {
                return Err(Error::invalid(path, "coordinates must be finite"));
            }
            if self.dist(link.tx, link.rx) <= 0.0 {
                return Err(Error::invalid(path, "tx and rx must not coincide"));
            }
        }
        Ok(())
    }

    /// Links sorted by id, so that `links[k].id == k`.
    pub fn normalized(mut self) -> Self {
        self.links.sort_by_key(|l| l.id);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MobilityKind {
    QuasiStatic,
    HighlyMobile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityModel {
    pub kind: MobilityKind,
    /// Links per m², used when resampling.
    pub density: f64,
    /// TX–RX separation used when sampling.
    pub link_distance: f64,
}

impl MobilityModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.density.is_finite() && self.density >= 0.0) {
            return Err(Error::invalid("mobility.density", "must be finite and >= 0"));
        }
        if !(self.link_distance.is_finite() && self.link_distance > 0.0) {
            return Err(Error::invalid(
                "mobility.link_distance",
                "must be finite and > 0",
            ));
        }
        Ok(())
    }
}

fn wrap(v: f64, len: f64) -> f64 {
    let w = v.rem_euclid(len);
    // rem_euclid can round up to `len` for tiny negative inputs
    if w >= len {
        0.0
    } else {
        w
    }
}

/// Draws a Poisson number of links (mean `density · area`) with uniformly
/// placed transmitters; each receiver sits `link_distance` away at a uniform
/// angle, wrapped back onto the torus.
pub fn sample_poisson_topology(
    density: f64,
    area: (f64, f64),
    link_distance: f64,
    seed: u64,
) -> Result<Topology> {
    let (width, height) = area;
    MobilityModel {
        kind: MobilityKind::HighlyMobile,
        density,
        link_distance,
    }
    .validate()?;
    for (v, name) in [(width, "area.width"), (height, "area.height")] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(name, "must be finite and > 0"));
        }
    }

    let mut rng = rng::stream(seed, Concern::Topology, 0, 0);
    let mean = density * width * height;
    let count = if mean > 0.0 {
        let poisson = Poisson::new(mean)
            .map_err(|e| Error::invalid("mobility.density", e.to_string()))?;
        poisson.sample(&mut rng) as usize
    } else {
        0
    };

    let links = (0..count)
        .map(|id| {
            let tx = Point::new(rng.gen_range(0.0..width), rng.gen_range(0.0..height));
            let angle = rng.gen_range(0.0..2.0 * PI);
            let rx = Point::new(
                wrap(tx.x + link_distance * angle.cos(), width),
                wrap(tx.y + link_distance * angle.sin(), height),
            );
            LinkSpec { id, tx, rx }
        })
        .collect();

    Ok(Topology {
        area_width: width,
        area_height: height,
        epoch: 0,
        links,
    })
}

/// Evolves a topology to `slot`. Quasi-static networks are returned
/// unchanged; highly mobile ones are redrawn independently every slot.
pub fn advance(
    topology: &Topology,
    mobility: &MobilityModel,
    slot: u64,
    seed: u64,
) -> Result<Topology> {
    match mobility.kind {
        MobilityKind::QuasiStatic => Ok(topology.clone()),
        MobilityKind::HighlyMobile => {
            let slot_seed = rng::key(seed, Concern::Topology, slot, 0, 0);
            let mut next = sample_poisson_topology(
                mobility.density,
                (topology.area_width, topology.area_height),
                mobility.link_distance,
                slot_seed,
            )?;
            next.epoch = slot;
            Ok(next)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        let o = Point::new(0.0, 0.0);
        assert_eq!(distance(o, o), 0.0);
        assert_eq!(distance(o, Point::new(3.0, 4.0)), 5.0);
    }

    #[test]
    fn torus_wraps_the_short_way() {
        let a = Point::new(1.0, 1.0);
        let b = Point::new(99.0, 99.0);
        let d = torus_distance(a, b, 100.0, 100.0);
        assert!((d - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_density_is_empty() {
        let t = sample_poisson_topology(0.0, (100.0, 100.0), 5.0, 3).unwrap();
        assert!(t.is_empty());
        let mobile = MobilityModel {
            kind: MobilityKind::HighlyMobile,
            density: 0.0,
            link_distance: 5.0,
        };
        for slot in 0..10 {
            assert!(advance(&t, &mobile, slot, 3).unwrap().is_empty());
        }
    }

    #[test]
    fn same_seed_same_topology() {
        let a = sample_poisson_topology(0.01, (100.0, 100.0), 5.0, 11).unwrap();
        let b = sample_poisson_topology(0.01, (100.0, 100.0), 5.0, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_poisson_topology(0.01, (100.0, 100.0), 5.0, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(sample_poisson_topology(-1.0, (10.0, 10.0), 1.0, 0).is_err());
        assert!(sample_poisson_topology(f64::NAN, (10.0, 10.0), 1.0, 0).is_err());
        assert!(sample_poisson_topology(0.1, (0.0, 10.0), 1.0, 0).is_err());
        assert!(sample_poisson_topology(0.1, (10.0, 10.0), 0.0, 0).is_err());
    }

    #[test]
    fn sampled_points_stay_inside_and_keep_link_distance() {
        let t = sample_poisson_topology(0.05, (40.0, 30.0), 7.0, 5).unwrap();
        assert!(!t.is_empty());
        t.validate().unwrap();
        for l in &t.links {
            for p in [l.tx, l.rx] {
                assert!((0.0..40.0).contains(&p.x) && (0.0..30.0).contains(&p.y));
            }
            let d = torus_distance(l.tx, l.rx, 40.0, 30.0);
            assert!((d - 7.0).abs() < 1e-9);
        }
    }

    #[test]
    fn poisson_count_mean_and_dispersion() {
        // mean 100; the sample mean of 10^4 counts has standard error 0.1
        let n = 10_000;
        let counts: Vec<f64> = (0..n)
            .map(|s| sample_poisson_topology(0.01, (100.0, 100.0), 1.0, s).unwrap().len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 100.0).abs() <= 3.0 * 10.0 / 100.0, "mean {mean}");
        let ratio = var / mean;
        assert!((0.9..=1.1).contains(&ratio), "var/mean {ratio}");
    }

    #[test]
    fn mobile_counts_are_uncorrelated_across_slots() {
        let base = Topology::empty(100.0, 100.0);
        let mobile = MobilityModel {
            kind: MobilityKind::HighlyMobile,
            density: 0.01,
            link_distance: 2.0,
        };
        let counts: Vec<f64> = (0..10_001)
            .map(|t| advance(&base, &mobile, t, 77).unwrap().len() as f64)
            .collect();
        let (x, y) = (&counts[..10_000], &counts[1..]);
        let mx = x.iter().sum::<f64>() / x.len() as f64;
        let my = y.iter().sum::<f64>() / y.len() as f64;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let corr = cov / (vx * vy).sqrt();
        // 10^4 pairs: one standard error is 0.01
        assert!(corr.abs() < 0.04, "lag-1 correlation {corr}");
    }

    #[test]
    fn json_shape() {
        let t = Topology {
            area_width: 10.0,
            area_height: 5.0,
            epoch: 0,
            links: vec![LinkSpec {
                id: 0,
                tx: Point::new(1.0, 2.0),
                rx: Point::new(3.0, 2.0),
            }],
        };
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(
            s,
            r#"{"area_width":10.0,"area_height":5.0,"epoch":0,"links":[{"id":0,"tx":[1.0,2.0],"rx":[3.0,2.0]}]}"#
        );
        let back: Topology = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn validate_catches_duplicates() {
        let link = |id| LinkSpec {
            id,
            tx: Point::new(0.0, 0.0),
            rx: Point::new(1.0, 0.0),
        };
        let t = Topology {
            area_width: 10.0,
            area_height: 10.0,
            epoch: 0,
            links: vec![link(0), link(0)],
        };
        assert!(matches!(t.validate(), Err(Error::Invalid { .. })));
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(ax in -1e3..1e3f64, ay in -1e3..1e3f64, bx in -1e3..1e3f64, by in -1e3..1e3f64) {
            let (a, b) = (Point::new(ax, ay), Point::new(bx, by));
            prop_assert_eq!(distance(a, b), distance(b, a));
            prop_assert_eq!(torus_distance(a, b, 50.0, 70.0), torus_distance(b, a, 50.0, 70.0));
        }

        #[test]
        fn quasi_static_advance_is_identity(seed in any::<u64>(), slot in any::<u64>()) {
            let t = sample_poisson_topology(0.02, (30.0, 30.0), 3.0, seed).unwrap();
            let still = MobilityModel { kind: MobilityKind::QuasiStatic, density: 0.02, link_distance: 3.0 };
            let once = advance(&t, &still, slot, seed).unwrap();
            let twice = advance(&once, &still, slot + 1, seed).unwrap();
            prop_assert_eq!(&once, &t);
            prop_assert_eq!(twice, t);
        }
    }
}
