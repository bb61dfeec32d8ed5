use crate::tensor::{ComplexTensor, Tensor};

/// Storage usable as a trainable parameter: a shape plus a flat `f64` view.
/// Complex storage is viewed as interleaved (re, im) pairs.
pub trait ParamData: Clone {
    const COMPLEX: bool;
    fn shape(&self) -> &[usize];
    fn flat(&self) -> &[f64];
    fn flat_mut(&mut self) -> &mut [f64];
    fn zeros_like(&self) -> Self;
}

impl ParamData for Tensor {
    const COMPLEX: bool = false;
    fn shape(&self) -> &[usize] {
        Tensor::shape(self)
    }
    fn flat(&self) -> &[f64] {
        self.data()
    }
    fn flat_mut(&mut self) -> &mut [f64] {
        self.data_mut()
    }
    fn zeros_like(&self) -> Self {
        Tensor::zeros(Tensor::shape(self))
    }
}

impl ParamData for ComplexTensor {
    const COMPLEX: bool = true;
    fn shape(&self) -> &[usize] {
        ComplexTensor::shape(self)
    }
    fn flat(&self) -> &[f64] {
        self.as_f64()
    }
    fn flat_mut(&mut self) -> &mut [f64] {
        self.as_f64_mut()
    }
    fn zeros_like(&self) -> Self {
        ComplexTensor::zeros(ComplexTensor::shape(self))
    }
}

/// A named value with a same-shaped gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub value: T,
    pub grad: T,
}

impl<T: ParamData> ParamTensor<T> {
    pub fn new(name: impl Into<String>, value: T) -> Self {
        let grad = value.zeros_like();
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Type-erased access used by the optimiser, checkpoints and gradient checks.
pub trait ParamSlot {
    fn name(&self) -> &str;
    fn shape(&self) -> &[usize];
    fn is_complex(&self) -> bool;
    fn values(&self) -> &[f64];
    fn values_mut(&mut self) -> &mut [f64];
    fn grads(&self) -> &[f64];
    fn grads_mut(&mut self) -> &mut [f64];

    fn zero_grad(&mut self) {
        self.grads_mut().fill(0.0);
    }

    /// Number of real scalars (complex entries count twice).
    fn numel(&self) -> usize {
        self.values().len()
    }
}

impl<T: ParamData> ParamSlot for ParamTensor<T> {
    fn name(&self) -> &str {
        &self.name
    }
    fn shape(&self) -> &[usize] {
        self.value.shape()
    }
    fn is_complex(&self) -> bool {
        T::COMPLEX
    }
    fn values(&self) -> &[f64] {
        self.value.flat()
    }
    fn values_mut(&mut self) -> &mut [f64] {
        self.value.flat_mut()
    }
    fn grads(&self) -> &[f64] {
        self.grad.flat()
    }
    fn grads_mut(&mut self) -> &mut [f64] {
        self.grad.flat_mut()
    }
}
