//! 2D CNN layers applied per frame, residual block variants and the
//! network builder. Backward passes are hand-written per layer.

pub mod act;
pub mod block;
pub mod conv;
pub mod cost;
pub mod linear;
pub mod network;
pub mod norm;
pub mod pool;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, VideoTensor};

/// Forward-pass mode: training uses batch statistics and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A learnable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<S: Scalar> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<S>,
    pub grad: Vec<S>,
    /// Whether weight decay applies (false for biases and BN affine).
    pub decay: bool,
}

impl<S: Scalar> Param<S> {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<S>, decay: bool) -> Self {
        let len = data.len();
        assert_eq!(dims.iter().product::<usize>(), len);
        Param {
            name: name.into(),
            dims,
            data,
            grad: vec![S::zero(); len],
            decay,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = S::zero());
    }

    /// 5-axis shape used when dumping to the VST1 checkpoint format.
    pub fn shape5(&self) -> Shape {
        match self.dims.len() {
            1 => Shape::new(1, 1, self.dims[0], 1, 1),
            2 => Shape::new(self.dims[0], 1, self.dims[1], 1, 1),
            4 => Shape::new(self.dims[0], 1, self.dims[1], self.dims[2], self.dims[3]),
            _ => panic!("unsupported param rank {}", self.dims.len()),
        }
    }

    pub fn to_tensor(&self) -> VideoTensor<S> {
        VideoTensor::from_vec(self.shape5(), self.data.clone()).expect("param shape")
    }

    pub fn load_from(&mut self, t: &VideoTensor<S>) -> Result<()> {
        if t.data().len() != self.data.len() {
            return Err(Error::Config(format!(
                "checkpoint tensor for {} has {} values, expected {}",
                self.name,
                t.data().len(),
                self.data.len()
            )));
        }
        self.data.copy_from_slice(t.data());
        Ok(())
    }
}
