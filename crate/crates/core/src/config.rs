//! Scenario documents: strict JSON parsing, defaults and validation.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::adapt::{ConstraintSet, ControllerConfig, DesignSetting};
use crate::channel::{ChannelModel, Fading};
use crate::error::{Error, Result};
use crate::geometry::{sample_poisson_topology, LinkSpec, MobilityKind, MobilityModel, Topology};
use crate::mac::MacPolicy;
use crate::rates::Decoder;
use crate::traffic::{ArrivalProcess, RetxPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityConfig {
    pub kind: MobilityKind,
    /// Links per m². Required for highly mobile networks, and for
    /// quasi-static ones that list no links.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_distance: Option<f64>,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig {
            kind: MobilityKind::QuasiStatic,
            density: None,
            link_distance: None,
        }
    }
}

impl MobilityConfig {
    /// The sampling model, when density and link distance are both given.
    pub fn model(&self) -> Option<MobilityModel> {
        Some(MobilityModel {
            kind: self.kind,
            density: self.density?,
            link_distance: self.link_distance?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationConfig {
    /// Slots between controller runs.
    pub epoch_slots: u64,
    #[serde(default)]
    pub controller: ControllerConfig,
}

pub fn default_setting() -> DesignSetting {
    DesignSetting {
        coding_rate: 1.0,
        decoder: Decoder::Ian,
        mac: MacPolicy::Aloha { p: 1.0 },
        retx: RetxPolicy::UNBOUNDED,
    }
}

fn default_arrivals() -> ArrivalProcess {
    ArrivalProcess::Bernoulli { rate: 0.5 }
}

fn default_window() -> u64 {
    1000
}

fn default_stride() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub total_slots: u64,
    pub area: Area,
    #[serde(default)]
    pub mobility: MobilityConfig,
    /// Explicit quasi-static links. In a highly mobile network the links are
    /// redrawn every slot and this list must be empty.
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub channel: ChannelModel,
    /// Setting shared by every node unless overridden.
    #[serde(default = "default_setting")]
    pub setting: DesignSetting,
    /// Per-node overrides, keyed by node id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub node_settings: BTreeMap<usize, DesignSetting>,
    #[serde(default = "default_arrivals")]
    pub arrivals: ArrivalProcess,
    /// Packets queued at every node before slot 0.
    #[serde(default)]
    pub initial_backlog: u64,
    #[serde(default)]
    pub constraints: ConstraintSet,
    /// `null` disables adaptation.
    #[serde(default)]
    pub adaptation: Option<AdaptationConfig>,
    #[serde(default = "default_window")]
    pub window_slots: u64,
    /// Backlog is sampled every `trace_stride` slots.
    #[serde(default = "default_stride")]
    pub trace_stride: u64,
}

impl ScenarioConfig {
    pub fn setting_for(&self, node: usize) -> &DesignSetting {
        self.node_settings.get(&node).unwrap_or(&self.setting)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_slots < 1 {
            return Err(Error::invalid("total_slots", "must be >= 1"));
        }
        for (v, key) in [(self.area.width, "area.width"), (self.area.height, "area.height")] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(key, "must be finite and > 0"));
            }
        }
        self.channel.validate()?;
        if let Some(model) = self.mobility.model() {
            model.validate()?;
        }
        match self.mobility.kind {
            MobilityKind::HighlyMobile => {
                if self.mobility.model().is_none() {
                    return Err(Error::invalid(
                        "mobility",
                        "highly mobile networks need `density` and `link_distance`",
                    ));
                }
                if !self.links.is_empty() {
                    return Err(Error::invalid(
                        "links",
                        "must be empty for a highly mobile network",
                    ));
                }
            }
            MobilityKind::QuasiStatic => {
                if self.links.is_empty() && self.mobility.model().is_none() {
                    return Err(Error::invalid(
                        "links",
                        "list links or give mobility.density and mobility.link_distance",
                    ));
                }
                let topology = Topology {
                    area_width: self.area.width,
                    area_height: self.area.height,
                    epoch: 0,
                    links: self.links.clone(),
                };
                topology.validate()?;
            }
        }

        self.setting.validate("setting")?;
        for (node, s) in &self.node_settings {
            let path = format!("node_settings.{node}");
            s.validate(&path)?;
            if self.mobility.kind == MobilityKind::QuasiStatic
                && !self.links.is_empty()
                && *node >= self.links.len()
            {
                return Err(Error::invalid(path, "no such node"));
            }
        }
        let settings = std::iter::once(("setting".to_string(), &self.setting)).chain(
            self.node_settings
                .iter()
                .map(|(n, s)| (format!("node_settings.{n}"), s)),
        );
        for (path, s) in settings {
            if let MacPolicy::Tdma(t) = &s.mac {
                if let Some(map) = &t.assignment {
                    let covered = match self.mobility.kind {
                        MobilityKind::HighlyMobile => false,
                        MobilityKind::QuasiStatic => {
                            !self.links.is_empty() && (0..self.links.len()).all(|k| map.contains_key(&k))
                        }
                    };
                    if !covered {
                        return Err(Error::invalid(
                            format!("{path}.mac.assignment"),
                            "must assign a group to every node",
                        ));
                    }
                }
            }
        }

        self.arrivals.validate("arrivals")?;
        self.constraints.validate("constraints")?;
        if self.window_slots < 1 {
            return Err(Error::invalid("window_slots", "must be >= 1"));
        }
        if self.trace_stride < 1 {
            return Err(Error::invalid("trace_stride", "must be >= 1"));
        }
        if let Some(a) = &self.adaptation {
            if a.epoch_slots < crate::adapt::MIN_WINDOW as u64 {
                return Err(Error::invalid(
                    "adaptation.epoch_slots",
                    format!("must be >= {}", crate::adapt::MIN_WINDOW),
                ));
            }
            if a.epoch_slots % self.window_slots != 0 {
                return Err(Error::invalid(
                    "adaptation.epoch_slots",
                    "must be a multiple of window_slots",
                ));
            }
            a.controller.validate("adaptation.controller")?;
            if self.mobility.kind == MobilityKind::HighlyMobile && self.channel.fading != Fading::RayleighPerSlot {
                return Err(Error::invalid(
                    "channel.fading",
                    "adaptation in a highly mobile network assumes rayleigh-per-slot fading",
                ));
            }
        }
        Ok(())
    }

    /// Fills in the quasi-static links from the density when none are listed.
    pub fn resolved(mut self) -> Result<Self> {
        if self.mobility.kind == MobilityKind::QuasiStatic && self.links.is_empty() {
            if let Some(m) = self.mobility.model() {
                let t = sample_poisson_topology(
                    m.density,
                    (self.area.width, self.area.height),
                    m.link_distance,
                    self.seed,
                )?;
                self.links = t.links;
            }
        }
        self.links.sort_by_key(|l| l.id);
        Ok(self)
    }

    /// The slot-0 topology.
    pub fn initial_topology(&self) -> Topology {
        Topology {
            area_width: self.area.width,
            area_height: self.area.height,
            epoch: 0,
            links: self.links.clone(),
        }
        .normalized()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Parses and validates a scenario document, rejecting unknown keys, but
/// leaves sampled links unresolved so the seed can still be overridden.
pub fn parse(text: &str) -> Result<ScenarioConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::invalid(
            if path == "." { "(document)".to_string() } else { path },
            e.into_inner().to_string(),
        )
    })?;
    config.validate()?;
    Ok(config)
}

/// [`parse`] followed by resolution of every default.
pub fn parse_and_validate(text: &str) -> Result<ScenarioConfig> {
    let resolved = parse(text)?.resolved()?;
    resolved.validate()?;
    Ok(resolved)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "seed": 7,
        "total_slots": 100,
        "area": {"width": 100, "height": 100},
        "links": [{"id": 0, "tx": [0, 0], "rx": [10, 0]}]
    }"#;

    fn path_of(err: Error) -> String {
        match err {
            Error::Invalid { path, .. } => path,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_and_validate(MINIMAL).unwrap();
        assert_eq!(c.channel, ChannelModel::default());
        assert_eq!(c.setting, default_setting());
        assert_eq!(c.window_slots, 1000);
        assert!(c.adaptation.is_none());
        // the resolved dump parses back to the same scenario
        assert_eq!(parse_and_validate(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn range_errors_name_the_key() {
        let bad = MINIMAL.replace(
            r#""links""#,
            r#""setting": {"coding_rate": 1, "decoder": "ian", "mac": {"kind": "aloha", "p": 1.5}}, "links""#,
        );
        assert_eq!(path_of(parse_and_validate(&bad).unwrap_err()), "setting.mac.p");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace(r#""seed""#, r#""sede": 1, "seed""#);
        assert!(parse_and_validate(&bad).is_err());
        let nested = MINIMAL.replace(r#""width": 100"#, r#""width": 100, "depth": 3"#);
        assert_eq!(path_of(parse_and_validate(&nested).unwrap_err()), "area.depth");
        let mac = MINIMAL.replace(
            r#""links""#,
            r#""setting": {"coding_rate": 1, "decoder": "ian", "mac": {"kind": "aloha", "p": 0.5, "q": 1}}, "links""#,
        );
        assert!(parse_and_validate(&mac).is_err());
    }

    #[test]
    fn duplicate_node_id_is_rejected() {
        let bad = MINIMAL.replace(
            r#"[{"id": 0, "tx": [0, 0], "rx": [10, 0]}]"#,
            r#"[{"id": 0, "tx": [0, 0], "rx": [10, 0]}, {"id": 0, "tx": [50, 0], "rx": [60, 0]}]"#,
        );
        let err = parse_and_validate(&bad).unwrap_err();
        assert_eq!(path_of(err.clone()), "links[1].id");
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn zero_slots_is_rejected() {
        let bad = MINIMAL.replace(r#""total_slots": 100"#, r#""total_slots": 0"#);
        assert_eq!(path_of(parse_and_validate(&bad).unwrap_err()), "total_slots");
    }

    #[test]
    fn poisson_links_are_materialized() {
        let text = r#"{
            "seed": 3, "total_slots": 10, "area": {"width": 200, "height": 200},
            "mobility": {"kind": "quasi-static", "density": 0.001, "link_distance": 5}
        }"#;
        let c = parse_and_validate(text).unwrap();
        assert!(!c.links.is_empty());
        assert_eq!(parse_and_validate(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn mobile_networks_need_a_density() {
        let text = r#"{
            "seed": 3, "total_slots": 10, "area": {"width": 200, "height": 200},
            "mobility": {"kind": "highly-mobile"}
        }"#;
        assert_eq!(path_of(parse_and_validate(text).unwrap_err()), "mobility");
    }

    #[test]
    fn epoch_must_align_with_windows() {
        let bad = MINIMAL.replace(
            r#""links""#,
            r#""window_slots": 300, "adaptation": {"epoch_slots": 1000}, "links""#,
        );
        assert_eq!(path_of(parse_and_validate(&bad).unwrap_err()), "adaptation.epoch_slots");
    }
}
