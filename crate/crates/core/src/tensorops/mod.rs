//! Dense tensors, kernels, reverse-mode differentiation and the optimizer.

mod kernels;
mod optim;
mod tape;

pub use kernels::{conv2d_naive, WarpPlan};
pub use optim::{AdamW, AdamWConfig};
pub use tape::{FocalSpec, Gradients, Tape, Var};

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::grid::{GridSpec, Pose2};
use crate::real::Real;

/// Dense `channels x height x width` array, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T = f32> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(shape_err!(
                "{} values for a {}x{}x{} map",
                values.len(),
                channels,
                height,
                width
            ));
        }
        Ok(FeatureMap { channels, height, width, values })
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: T) -> Self {
        FeatureMap { channels, height, width, values: vec![v; channels * height * width] }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, T::zero())
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut values = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    values.push(f(c, i, j));
                }
            }
        }
        FeatureMap { channels, height, width, values }
    }

    pub fn random_uniform(channels: usize, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        Self::from_fn(channels, height, width, |_, _, _| T::lit(rng.gen_range(-1.0..1.0)))
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.height + i) * self.width + j
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> T {
        self.values[self.index(c, i, j)]
    }

    pub fn set(&mut self, c: usize, i: usize, j: usize, v: T) {
        let k = self.index(c, i, j);
        self.values[k] = v;
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.plane();
        &self.values[c * p..(c + 1) * p]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| U::lit(v.to_f64().unwrap_or(0.0))).collect(),
        }
    }

    /// Channels `[start, start + count)` as a new map.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.channels {
            return Err(shape_err!("channel slice {}..{} of {}", start, start + count, self.channels));
        }
        let p = self.plane();
        Ok(FeatureMap {
            channels: count,
            height: self.height,
            width: self.width,
            values: self.values[start * p..(start + count) * p].to_vec(),
        })
    }
}

/// Trainable tensor with a gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<T = f32> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub grad: Vec<T>,
    pub requires_grad: bool,
}

impl<T: Real> ParamTensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(shape_err!("{} values for shape {:?}", values.len(), shape));
        }
        Ok(ParamTensor { shape, grad: vec![T::zero(); n], values, requires_grad: true })
    }

    pub fn filled(shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        ParamTensor { shape, values: vec![v; n], grad: vec![T::zero(); n], requires_grad: true }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Adds the gradient recorded for `var` (if any) into `grad`.
    pub fn accumulate(&mut self, grads: &Gradients<T>, var: Var) {
        if let Some(g) = grads.get(var) {
            debug_assert_eq!(g.len(), self.grad.len());
            for (a, b) in self.grad.iter_mut().zip(g) {
                *a = *a + *b;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamTensor<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::lit(x.to_f64().unwrap_or(0.0))).collect();
        ParamTensor {
            shape: self.shape.clone(),
            values: conv(&self.values),
            grad: conv(&self.grad),
            requires_grad: self.requires_grad,
        }
    }
}

/// Zeroes every gradient accumulator.
pub fn zero_grad<'a, T: Real>(params: impl IntoIterator<Item = &'a mut ParamTensor<T>>) {
    for p in params {
        p.zero_grad();
    }
}

/// Egomotion warp of a whole map onto the grid after `rel` (previous → current).
pub fn warp<T: Real>(f: &FeatureMap<T>, rel: &Pose2, spec: &GridSpec) -> Result<FeatureMap<T>> {
    if f.height != spec.h_cells || f.width != spec.w_cells {
        return Err(shape_err!(
            "map is {}x{}, grid is {}x{}",
            f.height,
            f.width,
            spec.h_cells,
            spec.w_cells
        ));
    }
    if rel.is_identity() {
        return Ok(f.clone());
    }
    let plan = WarpPlan::new(spec, rel);
    Ok(plan.apply(f))
}

/// Eager `conv2d` with zero same-padding and stride 1.
pub fn conv2d<T: Real>(
    f: &FeatureMap<T>,
    weight: &ParamTensor<T>,
    bias: &ParamTensor<T>,
    dilation: (usize, usize),
) -> Result<FeatureMap<T>> {
    let mut tape = Tape::inference();
    let x = tape.constant(f);
    let w = tape.param(weight);
    let b = tape.param(bias);
    let y = tape.conv2d(x, w, b, dilation)?;
    tape.feature_map(y)
}

pub fn relu<T: Real>(f: &FeatureMap<T>) -> FeatureMap<T> {
    let values = f.values.iter().map(|&v| kernels::relu(v)).collect();
    FeatureMap { values, ..*f }
}

pub fn sigmoid<T: Real>(f: &FeatureMap<T>) -> FeatureMap<T> {
    let values = f.values.iter().map(|&v| kernels::sigmoid(v)).collect();
    FeatureMap { values, ..*f }
}

pub fn layer_norm<T: Real>(
    f: &FeatureMap<T>,
    gain: &ParamTensor<T>,
    bias: &ParamTensor<T>,
    eps: T,
) -> Result<FeatureMap<T>> {
    let mut tape = Tape::inference();
    let x = tape.constant(f);
    let g = tape.param(gain);
    let b = tape.param(bias);
    let y = tape.layer_norm(x, g, b, eps)?;
    tape.feature_map(y)
}

pub fn concat_channels<T: Real>(parts: &[&FeatureMap<T>]) -> Result<FeatureMap<T>> {
    let first = parts.first().ok_or_else(|| shape_err!("concat of zero maps"))?;
    let (h, w) = (first.height, first.width);
    let mut values = Vec::new();
    let mut channels = 0;
    for p in parts {
        if p.height != h || p.width != w {
            return Err(shape_err!("concat of {}x{} and {}x{}", h, w, p.height, p.width));
        }
        channels += p.channels;
        values.extend_from_slice(&p.values);
    }
    Ok(FeatureMap { channels, height: h, width: w, values })
}

impl<T> FeatureMap<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
