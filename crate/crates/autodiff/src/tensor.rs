use crate::{AdError, AdResult, Real};

/// Dense row-major tensor. Scalars use shape `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T> Tensor<T> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> AdResult<Self> {
        let expect: usize = shape.iter().product();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(AdError::Config(format!("invalid tensor shape {shape:?}")));
        }
        if expect != data.len() {
            return Err(AdError::Config(format!(
                "shape {shape:?} wants {expect} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_f64_slice(shape: Vec<usize>, values: &[f64]) -> AdResult<Self> {
        Self::new(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn item(&self) -> AdResult<T> {
        if self.data.len() != 1 {
            return Err(AdError::Tape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise in-place accumulation; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> AdResult<()> {
        if self.shape != other.shape {
            return Err(AdError::Config(format!(
                "accumulate shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Precision cast, used when rebuilding f32 graphs as f64 for checking.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.into_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.into_f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_shape_data_mismatch() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn cast_round_trips_exactly_for_f32_values() {
        let t = Tensor::<f32>::new(vec![3], vec![1.5, -2.25, 0.125]).unwrap();
        let d: Tensor<f64> = t.cast();
        let back: Tensor<f32> = d.cast();
        assert_eq!(t, back);
    }
}
