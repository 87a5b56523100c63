//! Flat parameter storage with named, shaped slices.

use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Which optimizer owns a slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Image,
    Text,
    Meta,
    Temperature,
    Head,
}

impl ParamGroup {
    pub const ENCODERS: [ParamGroup; 3] = [ParamGroup::Image, ParamGroup::Text, ParamGroup::Meta];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotId(usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform on `(−a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    Xavier {
        fan_in: usize,
        fan_out: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    slots: Vec<ParamSlot>,
    values: Vec<T>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            slots: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(
        &mut self,
        name: &str,
        group: ParamGroup,
        shape: Vec<usize>,
        init: Init,
        rng: &mut Rng,
    ) -> Result<SlotId> {
        let n: usize = shape.iter().product();
        let values = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Constant(c) => vec![T::of(c); n],
            Init::Xavier { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| T::of(rng.random_range(-a..a))).collect()
            }
        };
        self.add_values(name, group, shape, values)
    }

    pub fn add_values(
        &mut self,
        name: &str,
        group: ParamGroup,
        shape: Vec<usize>,
        values: Vec<T>,
    ) -> Result<SlotId> {
        if self.find(name).is_some() {
            return Err(Error::validation(
                "parameter name",
                format!("duplicate slot {name}"),
            ));
        }
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::Dimension {
                op: "add_values",
                lhs: shape,
                rhs: vec![values.len()],
            });
        }
        self.slots.push(ParamSlot {
            name: name.to_string(),
            group,
            shape,
            offset: self.values.len(),
        });
        self.values.extend(values);
        Ok(SlotId(self.slots.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<SlotId> {
        self.slots.iter().position(|s| s.name == name).map(SlotId)
    }

    pub fn slot(&self, id: SlotId) -> &ParamSlot {
        &self.slots[id.0]
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn get(&self, id: SlotId) -> &[T] {
        &self.values[self.slots[id.0].range()]
    }

    pub fn get_mut(&mut self, id: SlotId) -> &mut [T] {
        let r = self.slots[id.0].range();
        &mut self.values[r]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Adds `delta` to the `index`-th flat value.
    pub fn perturb(&mut self, index: usize, delta: T) {
        self.values[index] += delta;
    }

    /// Flat index ranges of every slot in `group`, in slot order.
    pub fn group_ranges(&self, group: ParamGroup) -> Vec<Range<usize>> {
        self.slots
            .iter()
            .filter(|s| s.group == group)
            .map(ParamSlot::range)
            .collect()
    }

    pub fn group_len(&self, group: ParamGroup) -> usize {
        self.group_ranges(group).iter().map(|r| r.len()).sum()
    }

    /// Slot whose range contains `index`.
    pub fn slot_of(&self, index: usize) -> Option<&ParamSlot> {
        self.slots.iter().find(|s| s.range().contains(&index))
    }

    pub fn tensor(&self, id: SlotId) -> Tensor<T> {
        let slot = &self.slots[id.0];
        Tensor::new(slot.shape.clone(), self.get(id).to_vec()).expect("slot shape matches data")
    }

    /// Records every slot as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Binding {
        let vars = (0..self.slots.len())
            .map(|i| tape.leaf(self.tensor(SlotId(i))))
            .collect();
        Binding { vars }
    }

    /// Flat gradient aligned with [`values`](Self::values); slots the loss
    /// did not reach get zeros.
    pub fn collect_grads(&self, tape: &Tape<T>, binding: &Binding) -> Vec<T> {
        let mut out = vec![T::zero(); self.values.len()];
        for (slot, &var) in self.slots.iter().zip(&binding.vars) {
            if let Some(g) = tape.grad(var) {
                out[slot.range()].copy_from_slice(g);
            }
        }
        out
    }

    /// Same layout, values converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            slots: self.slots.clone(),
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Tape handles for every slot of one [`ParamStore`], index-aligned with its slots.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: SlotId) -> Var {
        self.vars[id.0]
    }
}
