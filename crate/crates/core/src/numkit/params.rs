use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One named block inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl LayerSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered, contiguous list of slots describing a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    slots: Vec<LayerSlot>,
    len: usize,
}

impl Layout {
    pub fn new(slots: Vec<LayerSlot>) -> Result<Self> {
        let mut next = 0;
        for slot in &slots {
            if slot.offset != next {
                return Err(Error::input(format!(
                    "slot {} starts at {} but previous slots end at {next}",
                    slot.name, slot.offset
                )));
            }
            next += slot.len();
        }
        Ok(Self { slots, len: next })
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    pub fn slot(&self, name: &str) -> Option<&LayerSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Flat vector of every trainable weight of one model.
#[derive(Debug, Clone)]
pub struct ParamVector {
    data: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn new(layout: Arc<Layout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::dim("param vector", layout.len(), data.len()));
        }
        Ok(Self { data, layout })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![0.0; layout.len()];
        Self { data, layout }
    }

    /// Same layout, new contents.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.layout.clone(), data)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, other: &ParamVector, context: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::input(format!("{context}: parameter layouts differ")))
        }
    }

    pub fn slot(&self, name: &str) -> Option<&[f64]> {
        self.layout.slot(name).map(|s| &self.data[s.range()])
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ParamVector) -> Result<()> {
        self.check_layout(x, "axpy")?;
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: f64) -> ParamVector {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.same_layout(other) && self.data == other.data
    }
}
