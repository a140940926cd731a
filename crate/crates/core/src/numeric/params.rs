use std::collections::BTreeMap;

use super::{Matrix, RngStream};
use crate::error::{Error, Result};

/// Named parameter blocks, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    blocks: BTreeMap<String, Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Inserts a block; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, block: Matrix) -> Result<()> {
        let name = name.into();
        if self.blocks.contains_key(&name) {
            return Err(Error::arg(format!("duplicate parameter block {name}")));
        }
        self.blocks.insert(name, block);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::arg(format!("missing parameter block {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.blocks
            .get_mut(name)
            .ok_or_else(|| Error::arg(format!("missing parameter block {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.blocks.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.blocks.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.blocks.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.blocks.keys()
    }

    /// Total scalar count.
    pub fn size(&self) -> usize {
        self.blocks.values().map(|m| m.data().len()).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            blocks: self
                .blocks
                .iter()
                .map(|(k, m)| (k.clone(), Matrix::zeros(m.rows(), m.cols())))
                .collect(),
        }
    }

    /// Checks that `other` has exactly the same block names and shapes.
    pub fn check_congruent(&self, other: &ParamSet) -> Result<()> {
        if self.blocks.len() != other.blocks.len() {
            return Err(Error::dim(format!(
                "parameter sets have {} and {} blocks",
                self.blocks.len(),
                other.blocks.len()
            )));
        }
        for ((a, ma), (b, mb)) in self.blocks.iter().zip(&other.blocks) {
            if a != b || ma.shape() != mb.shape() {
                return Err(Error::dim(format!(
                    "block {a} {:?} does not match {b} {:?}",
                    ma.shape(),
                    mb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Adds `other` into `self` block by block.
    pub fn accumulate(&mut self, other: &ParamSet) -> Result<()> {
        self.check_congruent(other)?;
        for (m, o) in self.blocks.values_mut().zip(other.blocks.values()) {
            m.add_assign(o)?;
        }
        Ok(())
    }

    /// A uniform Glorot block drawn from the sub-stream named after the block.
    pub fn glorot_block(rng: &RngStream, name: &str, fan_in: usize, fan_out: usize) -> Matrix {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut stream = rng.substream(name);
        let data = (0..fan_in * fan_out)
            .map(|_| stream.uniform_range(-bound, bound))
            .collect();
        Matrix::from_vec(fan_in, fan_out, data).expect("shape is consistent")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", Matrix::zeros(1, 1)).unwrap();
        assert!(p.insert("w", Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn glorot_bounds_and_reproducibility() {
        let rng = RngStream::new(5, "init");
        let a = ParamSet::glorot_block(&rng, "enc.w", 10, 6);
        let b = ParamSet::glorot_block(&rng, "enc.w", 10, 6);
        assert_eq!(a, b);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
        let c = ParamSet::glorot_block(&rng, "dec.w", 10, 6);
        assert_ne!(a, c);
    }

    #[test]
    fn congruence_detects_shape_change() {
        let mut a = ParamSet::new();
        a.insert("w", Matrix::zeros(2, 2)).unwrap();
        let mut b = ParamSet::new();
        b.insert("w", Matrix::zeros(2, 3)).unwrap();
        assert!(a.check_congruent(&b).is_err());
    }
}
