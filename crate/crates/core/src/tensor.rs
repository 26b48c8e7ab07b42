//! Dense n-dimensional arrays of 64-bit floats, stored row-major.
//!
//! `Tensor` is plain storage: images, classifier parameters, and gradients
//! all live here. Differentiable computation happens on a [`crate::tape::Tape`],
//! which borrows tensors in and hands gradients back.

use rand::Rng;

use crate::error::{Error, Result};

/// An n-dimensional array of `f64` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    /// Create a tensor, checking that the value count matches the shape.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                expected,
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![value],
        }
    }

    /// Fill from a seeded RNG with uniform values in `[lo, hi)`.
    pub fn rand_uniform<R: Rng>(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor { shape, values }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.values.len(), 1);
        self.values[0]
    }

    /// Round every value to the nearest multiple of 1/255 and clamp to `[0, 1]`.
    ///
    /// This is the projection onto storable 8-bit pixel values.
    pub fn quantized_255(&self) -> Tensor {
        let values = self
            .values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
            .collect();
        Tensor {
            shape: self.shape.clone(),
            values,
        }
    }

    /// True when every value is a multiple of 1/255 inside `[0, 1]`.
    pub fn is_on_grid_255(&self) -> bool {
        self.values.iter().all(|&v| {
            (0.0..=1.0).contains(&v) && {
                let scaled = v * 255.0;
                (scaled - scaled.round()).abs() < 1e-9
            }
        })
    }

    /// Largest absolute elementwise difference.
    pub fn linf_distance(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Sum of absolute elementwise differences.
    pub fn l1_distance(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Index of the largest value; ties break toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest value; ties break toward the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_length() {
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn quantization_lands_on_grid() {
        let t = Tensor::new(vec![4], vec![-0.2, 0.5001, 0.9999, 1.7]).unwrap();
        let q = t.quantized_255();
        assert!(q.is_on_grid_255());
        assert_eq!(q.values()[0], 0.0);
        assert_eq!(q.values()[3], 1.0);
    }

    #[test]
    fn quantization_is_idempotent() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7);
        let t = Tensor::rand_uniform(vec![3, 4, 4], 0.0, 1.0, &mut rng);
        let q = t.quantized_255();
        assert_eq!(q, q.quantized_255());
    }
}
