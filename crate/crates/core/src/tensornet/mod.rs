//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Covers exactly the layer set the projection networks need: 2-D
//! convolution (per-axis valid/same padding), max-pooling, ReLU, sigmoid,
//! row cropping and channel concatenation, plus plain SGD and the
//! contrastive loss. Storage is `f32`; reductions that feed decisions
//! (distances, losses, bias gradients) accumulate in `f64`.
//!
//! Determinism contract: all kernels are single-threaded and
//! order-stable, so a fixed seed reproduces bit-identical weights and
//! training trajectories.

mod layers;
mod loss;

pub use layers::{
    concat_channels, crop_rows, Conv2d, Fire, Layer, LayerCache, LayerGrads, MaxPool2d, Network,
    NetworkGrads, PadMode,
};
pub use loss::{contrastive_batch, contrastive_single, LabelConvention, LossSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid layer geometry: {0}")]
    BadGeometry(String),
}

/// Dense row-major tensor, laid out `[batch][height][width][channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Tensor { n, h, w, c, data: vec![0.0; n * h * w * c] }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n * h * w * c, "tensor data length mismatch");
        Tensor { n, h, w, c, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    pub fn batch(&self) -> usize {
        self.n
    }
    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }
    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, y: usize, x: usize, ch: usize) -> usize {
        ((b * self.h + y) * self.w + x) * self.c + ch
    }

    #[inline]
    pub fn at(&self, b: usize, y: usize, x: usize, ch: usize) -> f32 {
        self.data[self.index(b, y, x, ch)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, y: usize, x: usize, ch: usize, v: f32) {
        let i = self.index(b, y, x, ch);
        self.data[i] = v;
    }

    /// One sample of the batch as a batch-1 tensor.
    pub fn slice_batch(&self, b: usize) -> Tensor {
        let stride = self.h * self.w * self.c;
        Tensor {
            n: 1,
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data[b * stride..(b + 1) * stride].to_vec(),
        }
    }

    /// Stacks batch-1 tensors of identical spatial shape.
    pub fn stack(samples: &[Tensor]) -> Tensor {
        assert!(!samples.is_empty());
        let [n0, h, w, c] = samples[0].shape();
        assert_eq!(n0, 1);
        let mut data = Vec::with_capacity(samples.len() * h * w * c);
        for s in samples {
            assert_eq!(s.shape(), [1, h, w, c]);
            data.extend_from_slice(&s.data);
        }
        Tensor { n: samples.len(), h, w, c, data }
    }

    pub fn check_finite(&self, op: &'static str) -> Result<(), TensorError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }
}

/// `p <- p - lr * g`, element-wise.
pub fn sgd_step(params: &mut [f32], grads: &[f32], lr: f32) {
    assert_eq!(params.len(), grads.len(), "sgd_step shape mismatch");
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}
