use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::geo::{circular_day_distance, great_circle_deg};
use crate::error::{Error, Result};
use crate::rng::substream;

/// Generative description of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesSpec {
    pub class_id: usize,
    pub name: String,
    pub prototype: Vec<f64>,
    pub visual_noise: f64,
    /// `(lat, lon)` in degrees.
    pub range_center: (f64, f64),
    /// Great-circle radius in degrees.
    pub range_radius: f64,
    /// Day of year.
    pub season_center: f64,
    /// Standard deviation of the capture date, in days.
    pub season_width: f64,
    pub sister_of: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SisterKind {
    Geographic,
    Seasonal,
}

/// Two classes that share a visual prototype; `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SisterPair {
    pub a: usize,
    pub b: usize,
    pub kind: SisterKind,
}

impl SisterPair {
    pub fn contains(&self, class: usize) -> bool {
        class == self.a || class == self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesSet {
    pub feature_dim: usize,
    pub species: Vec<SpeciesSpec>,
}

fn ranges_disjoint(x: &SpeciesSpec, y: &SpeciesSpec) -> bool {
    let d = great_circle_deg(
        x.range_center.0,
        x.range_center.1,
        y.range_center.0,
        y.range_center.1,
    );
    d >= 3.0 * x.range_radius.max(y.range_radius)
}

fn seasons_disjoint(x: &SpeciesSpec, y: &SpeciesSpec) -> bool {
    circular_day_distance(x.season_center, y.season_center)
        >= 3.0 * x.season_width.max(y.season_width)
}

impl SpeciesSet {
    pub fn num_classes(&self) -> usize {
        self.species.len()
    }

    /// Every violated invariant is listed in the returned error.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.species.is_empty() {
            problems.push("no species".to_string());
        }
        for (i, s) in self.species.iter().enumerate() {
            if s.class_id != i {
                problems.push(format!("{}: class_id {} should be {i}", s.name, s.class_id));
            }
            if s.prototype.len() != self.feature_dim {
                problems.push(format!(
                    "{}: prototype has {} values, feature_dim is {}",
                    s.name,
                    s.prototype.len(),
                    self.feature_dim
                ));
            }
            if !(s.visual_noise >= 0.0 && s.visual_noise.is_finite()) {
                problems.push(format!("{}: visual_noise must be ≥ 0", s.name));
            }
            let (lat, lon) = s.range_center;
            if !((-90.0..=90.0).contains(&lat) && lon > -180.0 && lon <= 180.0) {
                problems.push(format!(
                    "{}: range_center ({lat}, {lon}) out of bounds",
                    s.name
                ));
            }
            if !(s.range_radius > 0.0 && s.range_radius < 90.0) {
                problems.push(format!("{}: range_radius must be in (0, 90)", s.name));
            }
            if !(1.0..=366.0).contains(&s.season_center) {
                problems.push(format!(
                    "{}: season_center must be a day in [1, 366]",
                    s.name
                ));
            }
            if !(s.season_width > 0.0) {
                problems.push(format!("{}: season_width must be positive", s.name));
            }
            if let Some(j) = s.sister_of {
                match self.species.get(j) {
                    None => problems.push(format!("{}: sister_of {j} does not exist", s.name)),
                    Some(_) if j == i => {
                        problems.push(format!("{}: cannot be its own sister", s.name))
                    }
                    Some(t) => {
                        if t.prototype != s.prototype {
                            problems.push(format!(
                                "{} / {}: sisters must share a prototype",
                                s.name, t.name
                            ));
                        }
                        if !ranges_disjoint(s, t) && !seasons_disjoint(s, t) {
                            problems.push(format!(
                                "{} / {}: sisters need ranges ≥ 3×radius apart or seasons ≥ 3×width apart",
                                s.name, t.name
                            ));
                        }
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::validation("species spec", problems.join("; ")))
        }
    }

    /// Unordered sister pairs, geographic when the ranges are disjoint.
    pub fn sister_pairs(&self) -> Vec<SisterPair> {
        let mut pairs: Vec<SisterPair> = Vec::new();
        for s in &self.species {
            let Some(j) = s.sister_of else { continue };
            let (a, b) = (s.class_id.min(j), s.class_id.max(j));
            if pairs.iter().any(|p| p.a == a && p.b == b) {
                continue;
            }
            let kind = if ranges_disjoint(&self.species[a], &self.species[b]) {
                SisterKind::Geographic
            } else {
                SisterKind::Seasonal
            };
            pairs.push(SisterPair { a, b, kind });
        }
        pairs.sort_by_key(|p| (p.a, p.b));
        pairs
    }

    pub fn class_names(&self) -> Vec<String> {
        self.species.iter().map(|s| s.name.clone()).collect()
    }
}

/// One `[[species]]` entry of a species file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesFileEntry {
    pub name: String,
    /// `[lat, lon]`.
    pub range_center: [f64; 2],
    pub range_radius: f64,
    pub season_center: f64,
    pub season_width: f64,
    /// Name of the sister species; the prototype is shared with it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sister_of: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_noise: Option<f64>,
    /// Drawn from the prototype stream when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prototype: Option<Vec<f64>>,
}

/// Species file layout (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSetFile {
    pub feature_dim: usize,
    /// Standard deviation of drawn prototype entries.
    #[serde(default = "one")]
    pub prototype_scale: f64,
    /// Default per-class visual noise σ.
    #[serde(default = "one")]
    pub visual_noise: f64,
    pub species: Vec<SpeciesFileEntry>,
}

fn one() -> f64 {
    1.0
}

fn entry(
    name: &str,
    center: [f64; 2],
    radius: f64,
    season: f64,
    width: f64,
    sister: Option<&str>,
) -> SpeciesFileEntry {
    SpeciesFileEntry {
        name: name.to_string(),
        range_center: center,
        range_radius: radius,
        season_center: season,
        season_width: width,
        sister_of: sister.map(str::to_string),
        visual_noise: None,
        prototype: None,
    }
}

impl Default for SpeciesSetFile {
    /// 12 classes: two range-separated sister pairs, two season-separated
    /// sister pairs and four singletons.
    fn default() -> Self {
        Self {
            feature_dim: 64,
            prototype_scale: 1.0,
            visual_noise: 1.0,
            species: vec![
                entry("Western Meadowlark", [47.0, -118.0], 8.0, 183.0, 60.0, None),
                entry(
                    "Eastern Meadowlark",
                    [37.0, -80.0],
                    8.0,
                    183.0,
                    60.0,
                    Some("Western Meadowlark"),
                ),
                entry("Alpine Pipit", [46.0, 9.0], 8.0, 183.0, 60.0, None),
                entry(
                    "Steppe Pipit",
                    [55.0, 62.0],
                    8.0,
                    183.0,
                    60.0,
                    Some("Alpine Pipit"),
                ),
                entry("Spring Warbler", [40.0, -95.0], 12.0, 110.0, 20.0, None),
                entry(
                    "Autumn Warbler",
                    [40.0, -95.0],
                    12.0,
                    290.0,
                    20.0,
                    Some("Spring Warbler"),
                ),
                entry("Summer Tern", [52.0, 0.0], 10.0, 170.0, 20.0, None),
                entry(
                    "Winter Tern",
                    [52.0, 0.0],
                    10.0,
                    350.0,
                    20.0,
                    Some("Summer Tern"),
                ),
                entry("Coastal Gull", [35.0, -122.0], 10.0, 183.0, 60.0, None),
                entry("Prairie Finch", [45.0, -100.0], 12.0, 183.0, 60.0, None),
                entry("Desert Wren", [28.0, -108.0], 10.0, 183.0, 60.0, None),
                entry("Forest Owl", [50.0, 20.0], 12.0, 183.0, 60.0, None),
            ],
        }
    }
}

impl SpeciesSetFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("species file: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("species file: {e}")))
    }

    /// Materializes prototypes (from the `"prototypes"` substream of `seed`)
    /// and sister links, then validates.
    pub fn resolve(&self, seed: u64) -> Result<SpeciesSet> {
        let mut rng = substream(seed, "prototypes");
        let index_of = |name: &str| {
            self.species
                .iter()
                .position(|s| s.name == name)
                .ok_or_else(|| Error::validation("sister_of", format!("unknown species {name:?}")))
        };
        let mut sister_idx = Vec::with_capacity(self.species.len());
        for s in &self.species {
            sister_idx.push(s.sister_of.as_deref().map(index_of).transpose()?);
        }
        // Roots draw (or take) a prototype; a sister reuses its root's.
        let mut prototypes: Vec<Option<Vec<f64>>> = vec![None; self.species.len()];
        for (i, s) in self.species.iter().enumerate() {
            if sister_idx[i].is_some() && s.prototype.is_none() {
                continue;
            }
            prototypes[i] = Some(match &s.prototype {
                Some(p) => p.clone(),
                None => (0..self.feature_dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * self.prototype_scale
                    })
                    .collect(),
            });
        }
        for i in 0..self.species.len() {
            if prototypes[i].is_none() {
                let mut j = sister_idx[i].expect("only sisters lack a prototype");
                let mut hops = 0;
                while prototypes[j].is_none() {
                    j = sister_idx[j]
                        .ok_or_else(|| Error::validation("sister_of", "broken sister chain"))?;
                    hops += 1;
                    if hops > self.species.len() {
                        return Err(Error::validation(
                            "sister_of",
                            "cyclic sister links without a prototype",
                        ));
                    }
                }
                prototypes[i] = prototypes[j].clone();
            }
        }
        let species = self
            .species
            .iter()
            .zip(prototypes)
            .zip(sister_idx)
            .enumerate()
            .map(|(i, ((s, proto), sister))| SpeciesSpec {
                class_id: i,
                name: s.name.clone(),
                prototype: proto.expect("filled above"),
                visual_noise: s.visual_noise.unwrap_or(self.visual_noise),
                range_center: (s.range_center[0], s.range_center[1]),
                range_radius: s.range_radius,
                season_center: s.season_center,
                season_width: s.season_width,
                sister_of: sister,
            })
            .collect();
        let set = SpeciesSet {
            feature_dim: self.feature_dim,
            species,
        };
        set.validate()?;
        Ok(set)
    }
}
