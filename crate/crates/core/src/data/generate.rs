use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::geo::destination;
use super::{Dataset, Sample, SpeciesSet, SpeciesSpec, Split};
use crate::encoders::MetaInput;
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

/// Uniform point in the spherical cap around the species' range center.
fn sample_location(spec: &SpeciesSpec, rng: &mut Rng) -> (f64, f64) {
    let cos_r = spec.range_radius.to_radians().cos();
    let u: f64 = rng.random_range(cos_r..=1.0);
    let angle = u.clamp(-1.0, 1.0).acos().to_degrees();
    let bearing: f64 = rng.random_range(0.0..360.0);
    destination(spec.range_center.0, spec.range_center.1, bearing, angle)
}

fn sample_day(spec: &SpeciesSpec, rng: &mut Rng) -> u16 {
    let z: f64 = StandardNormal.sample(rng);
    let d = (spec.season_center + spec.season_width * z).round() as i64;
    ((d - 1).rem_euclid(365) + 1) as u16
}

/// Draws `n_per_class` training and `n_per_class` test samples per class.
///
/// Image features are `prototype + N(0, σ²)`, locations uniform over the
/// range cap, dates a wrapped Gaussian around the season center. All
/// randomness comes from the `"data"` substream of `seed`.
pub fn generate(set: &SpeciesSet, n_per_class: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    set.validate()?;
    if n_per_class == 0 {
        return Err(Error::validation("n_per_class", "must be at least 1"));
    }
    let mut rng = substream(seed, "data");
    let mut train = Vec::with_capacity(n_per_class * set.num_classes());
    let mut test = Vec::with_capacity(n_per_class * set.num_classes());
    for spec in &set.species {
        let noise = Normal::new(0.0, spec.visual_noise)
            .map_err(|e| Error::validation("visual_noise", e.to_string()))?;
        for k in 0..2 * n_per_class {
            let image = spec
                .prototype
                .iter()
                .map(|&p| p + noise.sample(&mut rng))
                .collect();
            let (lat, lon) = sample_location(spec, &mut rng);
            let day = sample_day(spec, &mut rng);
            let (split, bucket, idx) = if k < n_per_class {
                (Split::Train, &mut train, k)
            } else {
                (Split::Test, &mut test, k - n_per_class)
            };
            bucket.push(Sample {
                id: format!("{}-{}-{}", split.name(), spec.class_id, idx),
                class: spec.class_id,
                image,
                meta: MetaInput::new(lat, lon, day)?,
            });
        }
    }
    let make = |samples, split| Dataset {
        samples,
        num_classes: set.num_classes(),
        split,
        seed: Some(seed),
    };
    Ok((make(train, Split::Train), make(test, Split::Test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::geo::great_circle_deg;
    use crate::data::{SisterKind, SpeciesSetFile};

    fn default_data(seed: u64) -> (SpeciesSet, Dataset, Dataset) {
        let set = SpeciesSetFile::default().resolve(seed).unwrap();
        let (tr, te) = generate(&set, 80, seed).unwrap();
        (set, tr, te)
    }

    fn nearest(protos: &[&[f64]], x: &[f64]) -> usize {
        let d = |p: &[f64]| p.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        (0..protos.len())
            .min_by(|&i, &j| d(protos[i]).partial_cmp(&d(protos[j])).unwrap())
            .unwrap()
    }

    #[test]
    fn deterministic_per_seed() {
        let (_, a, b) = default_data(3);
        let (_, c, d) = default_data(3);
        assert_eq!(a, c);
        assert_eq!(b, d);
        let (_, e, _) = default_data(4);
        assert_ne!(a, e);
    }

    #[test]
    fn every_class_in_both_splits_and_valid() {
        let (_, tr, te) = default_data(1);
        assert_eq!(tr.class_counts(), vec![80; 12]);
        assert_eq!(te.class_counts(), vec![80; 12]);
        tr.validate().unwrap();
        te.validate().unwrap();
    }

    #[test]
    fn locations_lie_in_range_discs() {
        let (set, tr, te) = default_data(2);
        for s in tr.samples.iter().chain(&te.samples) {
            let spec = &set.species[s.class];
            let d = great_circle_deg(
                spec.range_center.0,
                spec.range_center.1,
                s.meta.lat,
                s.meta.lon,
            );
            assert!(d <= spec.range_radius + 1e-9, "{} at {d}", s.id);
        }
    }

    #[test]
    fn noiseless_distinct_prototypes_are_separable() {
        let mut file = SpeciesSetFile::default();
        file.visual_noise = 0.0;
        let set = file.resolve(5).unwrap();
        let (_, te) = generate(&set, 20, 5).unwrap();
        // Classes 8 and 9 are singletons with distinct prototypes.
        let protos = [
            set.species[8].prototype.as_slice(),
            set.species[9].prototype.as_slice(),
        ];
        for s in te.samples.iter().filter(|s| s.class == 8 || s.class == 9) {
            assert_eq!(nearest(&protos, &s.image) + 8, s.class);
        }
    }

    #[test]
    fn sister_features_are_indistinguishable() {
        // Nearest-prototype over the pair cannot beat chance: identical prototypes.
        let (set, _, te) = default_data(6);
        for pair in set.sister_pairs() {
            let protos = [
                set.species[pair.a].prototype.as_slice(),
                set.species[pair.b].prototype.as_slice(),
            ];
            let samples: Vec<_> = te
                .samples
                .iter()
                .filter(|s| pair.contains(s.class))
                .collect();
            let correct = samples
                .iter()
                .filter(|s| [pair.a, pair.b][nearest(&protos, &s.image)] == s.class)
                .count();
            assert_eq!(
                correct,
                samples.len() / 2,
                "ties resolve to the first class"
            );
        }
    }

    #[test]
    fn metadata_separates_sisters() {
        let (set, _, te) = default_data(7);
        for pair in set.sister_pairs() {
            let (sa, sb) = (&set.species[pair.a], &set.species[pair.b]);
            let samples: Vec<_> = te
                .samples
                .iter()
                .filter(|s| pair.contains(s.class))
                .collect();
            let correct = samples
                .iter()
                .filter(|s| {
                    let pick_a = match pair.kind {
                        SisterKind::Geographic => {
                            great_circle_deg(
                                sa.range_center.0,
                                sa.range_center.1,
                                s.meta.lat,
                                s.meta.lon,
                            ) <= great_circle_deg(
                                sb.range_center.0,
                                sb.range_center.1,
                                s.meta.lat,
                                s.meta.lon,
                            )
                        }
                        SisterKind::Seasonal => {
                            let day = f64::from(s.meta.day_of_year);
                            crate::data::geo::circular_day_distance(day, sa.season_center)
                                <= crate::data::geo::circular_day_distance(day, sb.season_center)
                        }
                    };
                    (if pick_a { pair.a } else { pair.b }) == s.class
                })
                .count();
            assert!(
                correct as f64 / samples.len() as f64 >= 0.99,
                "{pair:?}: {correct}/{}",
                samples.len()
            );
        }
    }
}
