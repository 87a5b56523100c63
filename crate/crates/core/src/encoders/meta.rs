//! Location/date encoder: fixed multi-frequency sine–cosine features followed
//! by a residual MLP and a projection into the shared space.

use serde::{Deserialize, Serialize};

use super::{Linear, ProjectionHead};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamGroup, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Capture metadata of one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaInput {
    /// Degrees in `[-90, 90]`.
    pub lat: f64,
    /// Degrees in `(-180, 180]`.
    pub lon: f64,
    /// Day of year in `[1, 366]`.
    pub day_of_year: u16,
}

impl MetaInput {
    pub fn new(lat: f64, lon: f64, day_of_year: u16) -> Result<Self> {
        let m = Self {
            lat,
            lon,
            day_of_year,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(Error::validation(
                "lat",
                format!("{} outside [-90, 90]", self.lat),
            ));
        }
        if !(self.lon.is_finite() && self.lon > -180.0 && self.lon <= 180.0) {
            return Err(Error::validation(
                "lon",
                format!("{} outside (-180, 180]", self.lon),
            ));
        }
        if !(1..=366).contains(&self.day_of_year) {
            return Err(Error::validation(
                "date",
                format!("day of year {} outside [1, 366]", self.day_of_year),
            ));
        }
        Ok(())
    }

    /// `(lat/90, lon/180, 2·(doy−1)/365 − 1)`, each in `[-1, 1]` (day 366 maps
    /// slightly past 1).
    pub fn normalized(&self) -> [f64; 3] {
        [
            self.lat / 90.0,
            self.lon / 180.0,
            2.0 * f64::from(self.day_of_year - 1) / 365.0 - 1.0,
        ]
    }
}

/// `6·F` values: for each normalized coordinate and each frequency `2ᵏπ`,
/// the pair `(sin, cos)`. Layout is coordinate-major: lat pairs, then lon,
/// then date.
#[derive(Debug, Clone, PartialEq)]
pub struct SinFeatures(Vec<f64>);

impl SinFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `(sin, cos)` for coordinate `coord` (0 lat, 1 lon, 2 date) at frequency `k`.
    pub fn pair(&self, coord: usize, k: usize) -> (f64, f64) {
        let f = self.0.len() / 6;
        let base = 2 * (coord * f + k);
        (self.0[base], self.0[base + 1])
    }
}

pub fn encode_meta_features(meta: &MetaInput, frequencies: usize) -> Result<SinFeatures> {
    if frequencies == 0 {
        return Err(Error::validation("meta frequencies", "must be at least 1"));
    }
    meta.validate()?;
    let mut out = Vec::with_capacity(6 * frequencies);
    for c in meta.normalized() {
        for k in 0..frequencies {
            let arg = f64::powi(2.0, k as i32) * std::f64::consts::PI * c;
            out.push(arg.sin());
            out.push(arg.cos());
        }
    }
    Ok(SinFeatures(out))
}

/// `linear(6F→H) → relu → h₁; relu(linear(H→H)(h₁) + h₁) → projection(H→shared)`.
#[derive(Debug, Clone)]
pub struct MetaEncoder {
    pub frequencies: usize,
    input: Linear,
    hidden: Linear,
    pub head: ProjectionHead,
}

impl MetaEncoder {
    pub(crate) fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        frequencies: usize,
        hidden: usize,
        shared_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let g = ParamGroup::Meta;
        Ok(Self {
            frequencies,
            input: Linear::register(store, "meta.input", g, 6 * frequencies, hidden, rng)?,
            hidden: Linear::register(store, "meta.hidden", g, hidden, hidden, rng)?,
            head: ProjectionHead(Linear::register(
                store,
                "meta.proj",
                g,
                hidden,
                shared_dim,
                rng,
            )?),
        })
    }

    pub(crate) fn reattach<T: Scalar>(store: &ParamStore<T>, frequencies: usize) -> Result<Self> {
        Ok(Self {
            frequencies,
            input: Linear::find(store, "meta.input")?,
            hidden: Linear::find(store, "meta.hidden")?,
            head: ProjectionHead(Linear::find(store, "meta.proj")?),
        })
    }

    fn backbone<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Binding,
        features: Var,
    ) -> Result<Var> {
        let h1 = self.input.forward(tape, params, features)?;
        let h1 = tape.relu(h1);
        let h2 = self.hidden.forward(tape, params, h1)?;
        let skip = tape.add(h2, h1)?;
        Ok(tape.relu(skip))
    }

    /// Unnormalized shared-space output for a `[B × 6F]` feature batch.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Binding,
        features: Var,
    ) -> Result<Var> {
        let h = self.backbone(tape, params, features)?;
        self.head.0.forward(tape, params, h)
    }

    /// Unit-norm shared-space embeddings.
    pub fn embed<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Binding,
        features: Var,
    ) -> Result<Var> {
        let h = self.backbone(tape, params, features)?;
        self.head.project_and_normalize(tape, params, h)
    }
}
