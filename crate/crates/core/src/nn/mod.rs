//! Minimal dense-layer toolkit with explicit forward caches and
//! hand-derived backward passes.
//!
//! Layers are generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks. Gradient
//! buffers are values of the same type as the module they belong to.

mod layers;

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::Rng;

pub use layers::{
    dropout_mask, gelu, gelu_grad, relu, softmax_in_place, softmax_rows, AdditiveAttention, AttentionCache,
    Conv1d, Conv1dCache, Embedding, LayerNorm, LayerNormCache, Linear, Lstm, LstmCache, MultiHeadSelfAttention,
    MhaCache,
};

pub trait Real:
    LinalgScalar
    + Float
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
    fn lit(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn erf(self) -> Self;
}

impl Real for f32 {
    fn lit(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Real for f64 {
    fn lit(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

/// Visit every trainable tensor of a module in a fixed order.
pub trait Parameters<R> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[R]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [R]));

    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, data| n += data.len());
        n
    }

    /// Flat copies of every tensor, in visit order.
    fn flatten(&self) -> Vec<Vec<R>>
    where
        R: Clone,
    {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, data| out.push(data.to_vec()));
        out
    }

    fn names(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, shape, _| out.push((name.to_string(), shape.to_vec())));
        out
    }

    fn zero(&mut self)
    where
        R: Real,
    {
        self.visit_mut("", &mut |_, _, data| data.iter_mut().for_each(|x| *x = R::zero()));
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit2<R>(a: &Array2<R>, name: &str, f: &mut dyn FnMut(&str, &[usize], &[R])) {
    f(name, a.shape(), a.as_slice().expect("standard layout"));
}

pub(crate) fn visit1<R>(a: &Array1<R>, name: &str, f: &mut dyn FnMut(&str, &[usize], &[R])) {
    f(name, a.shape(), a.as_slice().expect("standard layout"));
}

pub(crate) fn visit2_mut<R>(a: &mut Array2<R>, name: &str, f: &mut dyn FnMut(&str, &[usize], &mut [R])) {
    let shape = a.shape().to_vec();
    f(name, &shape, a.as_slice_mut().expect("standard layout"));
}

pub(crate) fn visit1_mut<R>(a: &mut Array1<R>, name: &str, f: &mut dyn FnMut(&str, &[usize], &mut [R])) {
    let shape = a.shape().to_vec();
    f(name, &shape, a.as_slice_mut().expect("standard layout"));
}

/// `dst += src` tensor by tensor. Both modules must share architecture.
pub fn accumulate<R: Real, P: Parameters<R>>(dst: &mut P, src: &P) {
    let flat = src.flatten();
    let mut i = 0;
    dst.visit_mut("", &mut |_, _, data| {
        for (d, s) in data.iter_mut().zip(&flat[i]) {
            *d += *s;
        }
        i += 1;
    });
}

/// Overwrite every tensor of `dst` with the flat tensors in `values`.
pub fn load_flat<R: Real, P: Parameters<R>>(dst: &mut P, values: &[Vec<R>]) {
    let mut i = 0;
    dst.visit_mut("", &mut |_, _, data| {
        data.copy_from_slice(&values[i]);
        i += 1;
    });
}

/// Copy parameters between precisions (same architecture).
pub fn cast_into<A: Real, B: Real, PA: Parameters<A>, PB: Parameters<B>>(src: &PA, dst: &mut PB) {
    let flat = src.flatten();
    let mut i = 0;
    dst.visit_mut("", &mut |_, _, data| {
        for (d, s) in data.iter_mut().zip(&flat[i]) {
            *d = B::lit(Real::to_f64(*s));
        }
        i += 1;
    });
}

pub fn glorot_uniform<R: Real, G: Rng>(rows: usize, cols: usize, rng: &mut G) -> Array2<R> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| R::lit(rng.gen_range(-limit..limit)))
}

/// Uniform initialisation with the given standard deviation.
pub fn uniform_std<R: Real, G: Rng>(rows: usize, cols: usize, std: f64, rng: &mut G) -> Array2<R> {
    let limit = std * 3f64.sqrt();
    Array2::from_shape_fn((rows, cols), |_| R::lit(rng.gen_range(-limit..limit)))
}
