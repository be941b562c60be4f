//! Minimal differentiable-tensor toolkit: single-sample CHW tensors,
//! layers with explicit forward/backward passes, and Adam.
//!
//! Every layer caches what its backward pass needs during a training-mode
//! forward call; inference-mode forward calls cache nothing.

mod adam;
mod gemm;
mod layers;

pub use adam::Adam;
pub use gemm::{gemm, MatRef};
pub use layers::{col2im, im2col, Act, Activation, Conv2d, ConvTranspose2d, Dropout, Norm2d};

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A single-sample `channels x height x width` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self::filled(c, h, w, 0.0)
    }

    pub fn filled(c: usize, h: usize, w: usize, v: f32) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![v; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.c, self.h, self.w]
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Channel-wise concatenation `[a; b]`.
    pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!((a.h, a.w), (b.h, b.w), "concat spatial mismatch");
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor::from_vec(a.c + b.c, a.h, a.w, data)
    }

    /// Inverse of [`concat`](Self::concat): the first `c1` channels and the rest.
    pub fn split(&self, c1: usize) -> (Tensor, Tensor) {
        let cut = c1 * self.plane_len();
        (
            Tensor::from_vec(c1, self.h, self.w, self.data[..cut].to_vec()),
            Tensor::from_vec(self.c - c1, self.h, self.w, self.data[cut..].to_vec()),
        )
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// A trainable array with its gradient and Adam moments (allocated on the
/// first optimizer step).
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub(crate) m: Vec<f32>,
    pub(crate) v: Vec<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: &[usize], fill: f32) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![fill; n],
            grad: vec![0.0; n],
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn init_normal<R: Rng>(&mut self, std: f64, rng: &mut R) {
        let dist = Normal::new(0.0, std).expect("finite stdev");
        for x in &mut self.value {
            *x = dist.sample(rng) as f32;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything holding trainable parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
