//! Parameters, the module trait and the small dense layers the blocks are
//! built from (pointwise convolution, linear map).

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::numerics::{Features, SeededRng};

/// A named parameter tensor with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    /// Frozen parameters are skipped by optimizers (their gradients are still computed).
    pub frozen: bool,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![0.0; n],
            grad: vec![0.0; n],
            frozen: false,
        }
    }

    /// Uniform in `±1/√fan_in`.
    pub fn uniform(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(name, shape);
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        rng.fill_uniform(&mut p.value, -bound, bound);
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything that owns parameters.
///
/// `params` and `params_mut` must list parameters in the same, stable order.
/// Layers that validate caches treat any `params_mut` call (including
/// `zero_grad`) as a parameter change, so gradients are zeroed before a
/// forward pass, not between forward and backward.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// All parameter values, concatenated in `params()` order.
    fn flat_values(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    fn flat_grads(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    fn set_flat_values(&mut self, values: &[f64]) -> Result<()> {
        let total = self.num_params();
        if values.len() != total {
            return Err(Error::Validation(format!(
                "expected {total} parameter values, got {}",
                values.len()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.value.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// A differentiable map from one feature map to another.
pub trait Layer: Module {
    type Cache;

    fn forward(&self, x: &Features) -> Result<(Features, Self::Cache)>;

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, cache: &Self::Cache, dy: &Features) -> Result<Features>;
}

static NEXT_MODULE_ID: AtomicU64 = AtomicU64::new(1);

/// Identity plus a mutation counter; caches record it so a backward pass can
/// reject caches produced by another module or before a parameter update.
#[derive(Debug, PartialEq, Eq)]
pub struct Stamp {
    id: u64,
    version: u64,
}

impl Stamp {
    pub fn new() -> Self {
        Self {
            id: NEXT_MODULE_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }

    pub fn bump(&mut self) {
        self.version += 1;
    }

    pub fn token(&self) -> (u64, u64) {
        (self.id, self.version)
    }

    pub fn check(&self, token: (u64, u64), what: &str) -> Result<()> {
        if token.0 != self.id {
            return Err(Error::Usage(format!("{what}: cache was produced by a different module")));
        }
        if token.1 != self.version {
            return Err(Error::Usage(format!(
                "{what}: stale cache (parameters changed since the forward pass)"
            )));
        }
        Ok(())
    }
}

impl Default for Stamp {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for Stamp {
    /// Clones get a fresh identity so their caches are not interchangeable.
    fn clone(&self) -> Self {
        Stamp::new()
    }
}

/// 1×1 convolution: `y[o, t] = b[o] + Σ_i W[o, i]·x[i, t]`.
#[derive(Debug, Clone)]
pub struct Pointwise {
    in_channels: usize,
    out_channels: usize,
    pub weight: Param,
    pub bias: Param,
}

pub struct PointwiseCache {
    input: Features,
}

impl Pointwise {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, rng: &mut SeededRng) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: Param::uniform(format!("{name}.weight"), &[out_channels, in_channels], in_channels, rng),
            bias: Param::uniform(format!("{name}.bias"), &[out_channels], in_channels, rng),
        }
    }

    pub fn zeros(name: &str, in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: Param::zeros(format!("{name}.weight"), &[out_channels, in_channels]),
            bias: Param::zeros(format!("{name}.bias"), &[out_channels]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn apply(&self, x: &Features) -> Result<Features> {
        if x.channels() != self.in_channels {
            return Err(Error::Config(format!(
                "pointwise layer expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        let len = x.len();
        let mut y = Features::zeros(self.out_channels, len);
        for o in 0..self.out_channels {
            let b = self.bias.value[o];
            let row = y.row_mut(o);
            row.iter_mut().for_each(|v| *v = b);
            for i in 0..self.in_channels {
                let w = self.weight.value[o * self.in_channels + i];
                if w == 0.0 {
                    continue;
                }
                for (v, xv) in row.iter_mut().zip(x.row(i)) {
                    *v += w * xv;
                }
            }
        }
        Ok(y)
    }
}

impl Module for Pointwise {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl Layer for Pointwise {
    type Cache = PointwiseCache;

    fn forward(&self, x: &Features) -> Result<(Features, PointwiseCache)> {
        let y = self.apply(x)?;
        Ok((y, PointwiseCache { input: x.clone() }))
    }

    fn backward(&mut self, cache: &PointwiseCache, dy: &Features) -> Result<Features> {
        let x = &cache.input;
        if dy.shape() != (self.out_channels, x.len()) {
            return Err(Error::Config(format!(
                "pointwise backward: dy shape {:?} does not match ({}, {})",
                dy.shape(),
                self.out_channels,
                x.len()
            )));
        }
        let mut dx = Features::zeros(self.in_channels, x.len());
        for o in 0..self.out_channels {
            let g = dy.row(o);
            self.bias.grad[o] += g.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let idx = o * self.in_channels + i;
                self.weight.grad[idx] += g.iter().zip(x.row(i)).map(|(a, b)| a * b).sum::<f64>();
                let w = self.weight.value[idx];
                for (d, gv) in dx.row_mut(i).iter_mut().zip(g) {
                    *d += w * gv;
                }
            }
        }
        Ok(dx)
    }
}

/// Dense map on the flattened input: `y = W·vec(x) + b`, reshaped to `out_shape`.
#[derive(Debug, Clone)]
pub struct Linear {
    in_features: usize,
    out_shape: (usize, usize),
    pub weight: Param,
    pub bias: Param,
}

pub struct LinearCache {
    input: Vec<f64>,
    in_shape: (usize, usize),
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_shape: (usize, usize), rng: &mut SeededRng) -> Self {
        let out = out_shape.0 * out_shape.1;
        Self {
            in_features,
            out_shape,
            weight: Param::uniform(format!("{name}.weight"), &[out, in_features], in_features, rng),
            bias: Param::uniform(format!("{name}.bias"), &[out], in_features, rng),
        }
    }

    pub fn out_shape(&self) -> (usize, usize) {
        self.out_shape
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl Layer for Linear {
    type Cache = LinearCache;

    fn forward(&self, x: &Features) -> Result<(Features, LinearCache)> {
        if x.data().len() != self.in_features {
            return Err(Error::Config(format!(
                "linear layer expects {} inputs, got {}",
                self.in_features,
                x.data().len()
            )));
        }
        let out = self.out_shape.0 * self.out_shape.1;
        let mut y = Vec::with_capacity(out);
        for o in 0..out {
            let w = &self.weight.value[o * self.in_features..(o + 1) * self.in_features];
            y.push(self.bias.value[o] + w.iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>());
        }
        Ok((
            Features::new(self.out_shape.0, self.out_shape.1, y)?,
            LinearCache {
                input: x.data().to_vec(),
                in_shape: x.shape(),
            },
        ))
    }

    fn backward(&mut self, cache: &LinearCache, dy: &Features) -> Result<Features> {
        let out = self.out_shape.0 * self.out_shape.1;
        if dy.data().len() != out {
            return Err(Error::Config("linear backward: dy size mismatch".into()));
        }
        let mut dx = vec![0.0; self.in_features];
        for (o, &g) in dy.data().iter().enumerate() {
            self.bias.grad[o] += g;
            let row = o * self.in_features;
            for j in 0..self.in_features {
                self.weight.grad[row + j] += g * cache.input[j];
                dx[j] += g * self.weight.value[row + j];
            }
        }
        Features::new(cache.in_shape.0, cache.in_shape.1, dx)
    }
}
