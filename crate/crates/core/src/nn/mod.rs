//! Neural-network layers and the CNN feature extractor.

pub mod cnn;
pub mod layers;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use cnn::{CnnArch, CnnCache, CnnModel};
pub use layers::Mode;

/// Anything with an ordered list of trainable tensors.
pub trait Parameters<T: Real> {
    fn params(&self) -> Vec<&Tensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// One gradient tensor per parameter tensor, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T: Real> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros_like(params: &[&Tensor<T>]) -> Self {
        Self {
            tensors: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Dimension(format!(
                "gradient sets of {} and {} tensors",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data().iter().all(|v| *v == T::zero()))
    }

    /// Checks shape congruence with a parameter list.
    pub fn matches(&self, params: &[&Tensor<T>]) -> bool {
        self.tensors.len() == params.len()
            && self
                .tensors
                .iter()
                .zip(params)
                .all(|(g, p)| g.shape() == p.shape())
    }
}
