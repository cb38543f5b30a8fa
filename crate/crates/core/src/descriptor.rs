//! Fixed-size local feature descriptors.

use std::fmt;

use crate::error::{Error, Result};

/// Dimension of every local descriptor.
pub const DIM: usize = 128;

/// A 128-dimensional local feature descriptor with finite entries.
#[derive(Clone, PartialEq)]
pub struct Descriptor(Box<[f32; DIM]>);

impl Descriptor {
    pub fn new(values: [f32; DIM]) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "descriptor component {i} is not finite"
            )));
        }
        Ok(Descriptor(Box::new(values)))
    }

    pub fn from_slice(values: &[f32]) -> Result<Self> {
        let arr: [f32; DIM] = values.try_into().map_err(|_| {
            Error::InvalidInput(format!(
                "descriptor must have {DIM} components, got {}",
                values.len()
            ))
        })?;
        Self::new(arr)
    }

    pub fn zeros() -> Self {
        Descriptor(Box::new([0.0; DIM]))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0[..]
    }

    pub fn as_array(&self) -> &[f32; DIM] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn sq_distance(&self, other: &Descriptor) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum()
    }

    /// Unit-norm copy, or `None` when the norm vanishes.
    pub fn normalized(&self) -> Option<Descriptor> {
        let n = self.norm();
        if n <= f64::EPSILON {
            return None;
        }
        let mut out = [0f32; DIM];
        for (o, &v) in out.iter_mut().zip(self.0.iter()) {
            *o = (v as f64 / n) as f32;
        }
        Some(Descriptor(Box::new(out)))
    }
}

impl fmt::Debug for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Descriptor([{:.4}, {:.4}, {:.4}, .. ; norm {:.4}])",
            self.0[0],
            self.0[1],
            self.0[2],
            self.norm()
        )
    }
}
