//! The period-anchored 1D deformable convolution.
//!
//! Tap `n ∈ {−⌊S/2⌋, …, ⌊S/2⌋}` of the kernel centred at output position `p0`
//! reads the input at the continuous coordinate `p0 + T·n + Δp_n`, where `T`
//! is the dilation anchor (a detected period) and `Δp_n` a learned offset.
//! Features are gathered with the configured [`InterpKernel`]; coordinates
//! outside the sequence read zero, so the output has the input's length
//! without a materialized padding buffer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{in_range, InterpKernel, Stencil, Tap};
use crate::nn::{Layer, Module, Param, Stamp};
use crate::numerics::{Features, SeededRng};

/// Where the per-tap offsets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMode {
    /// A pointwise predictor maps the input column at `p0` to `S` offsets.
    #[default]
    Predicted,
    /// One free offset per tap, shared by every position.
    Free,
    /// No offsets: the operator is a plain dilated convolution.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefOpConfig {
    pub kernel_size: usize,
    pub period: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub interp: InterpKernel,
    #[serde(default)]
    pub offset_mode: OffsetMode,
}

impl DefOpConfig {
    pub fn new(kernel_size: usize, period: usize, in_channels: usize, out_channels: usize, interp: InterpKernel) -> Self {
        Self {
            kernel_size,
            period,
            in_channels,
            out_channels,
            interp,
            offset_mode: OffsetMode::Predicted,
        }
    }

    pub fn with_offset_mode(mut self, mode: OffsetMode) -> Self {
        self.offset_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd and positive, got {}",
                self.kernel_size
            )));
        }
        if self.period == 0 {
            return Err(Error::Config("dilation period must be >= 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        self.interp.validate()
    }

    pub fn half_width(&self) -> isize {
        (self.kernel_size / 2) as isize
    }

    /// Tap index `n` of kernel slot `j`.
    pub fn tap(&self, j: usize) -> isize {
        j as isize - self.half_width()
    }
}

/// `p0 + T·n + Δp_n` for every tap, in slot order.
pub fn sampling_positions(p0: isize, config: &DefOpConfig, offsets: &[f64]) -> Result<Vec<f64>> {
    if offsets.len() != config.kernel_size {
        return Err(Error::Config(format!(
            "expected {} offsets, got {}",
            config.kernel_size,
            offsets.len()
        )));
    }
    if let Some(bad) = offsets.iter().find(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("offset {bad} is not finite")));
    }
    Ok(offsets
        .iter()
        .enumerate()
        .map(|(j, d)| anchor(p0, config, j) + d)
        .collect())
}

#[inline]
fn anchor(p0: isize, config: &DefOpConfig, j: usize) -> f64 {
    (p0 + config.period as isize * config.tap(j)) as f64
}

/// Deformable operator with its parameters and gradient buffers.
///
/// Parameter shapes: `weight [out × in × S]`, `bias [out]`,
/// `offset_weight [S × in]` and `offset_bias [S]`. Offset parameters start at
/// zero so an untrained operator samples the pure period-anchored grid.
#[derive(Debug, Clone)]
pub struct DefOp {
    config: DefOpConfig,
    pub weight: Param,
    pub bias: Param,
    pub offset_weight: Param,
    pub offset_bias: Param,
    stamp: Stamp,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct DefOpCache {
    token: (u64, u64),
    input: Features,
    /// `[L × S]`
    offsets: Vec<f64>,
    /// Stencil taps for slot `(p0, j)` live at `taps[spans[p0·S + j]]`.
    taps: Vec<Tap>,
    spans: Vec<(u32, u32)>,
    /// Sampled values and their position derivatives, `[in × L × S]`.
    sampled: Vec<f64>,
    dsampled: Vec<f64>,
}

impl DefOpCache {
    /// Offsets used at position `p0`, one per tap.
    pub fn offsets_at(&self, p0: usize) -> &[f64] {
        let s = self.offsets.len() / self.input.len();
        &self.offsets[p0 * s..(p0 + 1) * s]
    }
}

impl DefOp {
    pub fn new(config: DefOpConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let (ci, co, s) = (config.in_channels, config.out_channels, config.kernel_size);
        let fan_in = ci * s;
        Ok(Self {
            config,
            weight: Param::uniform("defop.weight", &[co, ci, s], fan_in, rng),
            bias: Param::uniform("defop.bias", &[co], fan_in, rng),
            offset_weight: Param::zeros("defop.offset_weight", &[s, ci]),
            offset_bias: Param::zeros("defop.offset_bias", &[s]),
            stamp: Stamp::new(),
        })
    }

    pub fn config(&self) -> &DefOpConfig {
        &self.config
    }

    pub fn set_period(&mut self, period: usize) -> Result<()> {
        if period == 0 {
            return Err(Error::Config("dilation period must be >= 1".into()));
        }
        self.config.period = period;
        self.stamp.bump();
        Ok(())
    }

    pub fn set_interp(&mut self, interp: InterpKernel) -> Result<()> {
        interp.validate()?;
        self.config.interp = interp;
        self.stamp.bump();
        Ok(())
    }

    /// Renames parameters with a path prefix.
    pub fn with_prefix(mut self, prefix: &str) -> Self {
        for p in [&mut self.weight, &mut self.bias, &mut self.offset_weight, &mut self.offset_bias] {
            let short = p.name.rsplit('.').next().unwrap_or("").to_string();
            p.name = format!("{prefix}.{short}");
        }
        self
    }

    fn offset(&self, x: &Features, p0: usize, j: usize) -> f64 {
        match self.config.offset_mode {
            OffsetMode::Off => 0.0,
            OffsetMode::Free => self.offset_bias.value[j],
            OffsetMode::Predicted => {
                let ci = self.config.in_channels;
                let w = &self.offset_weight.value[j * ci..(j + 1) * ci];
                let mut acc = self.offset_bias.value[j];
                for (c, wc) in w.iter().enumerate() {
                    acc += wc * x.get(c, p0);
                }
                acc
            }
        }
    }
}

impl Module for DefOp {
    fn params(&self) -> Vec<&Param> {
        match self.config.offset_mode {
            OffsetMode::Predicted => vec![&self.weight, &self.bias, &self.offset_weight, &self.offset_bias],
            OffsetMode::Free => vec![&self.weight, &self.bias, &self.offset_bias],
            OffsetMode::Off => vec![&self.weight, &self.bias],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.stamp.bump();
        match self.config.offset_mode {
            OffsetMode::Predicted => vec![
                &mut self.weight,
                &mut self.bias,
                &mut self.offset_weight,
                &mut self.offset_bias,
            ],
            OffsetMode::Free => vec![&mut self.weight, &mut self.bias, &mut self.offset_bias],
            OffsetMode::Off => vec![&mut self.weight, &mut self.bias],
        }
    }
}

impl Layer for DefOp {
    type Cache = DefOpCache;

    fn forward(&self, x: &Features) -> Result<(Features, DefOpCache)> {
        let cfg = &self.config;
        if x.channels() != cfg.in_channels {
            return Err(Error::Config(format!(
                "deformable op expects {} input channels, got {}",
                cfg.in_channels,
                x.channels()
            )));
        }
        let (ci, co, s, len) = (cfg.in_channels, cfg.out_channels, cfg.kernel_size, x.len());
        if len == 0 {
            return Err(Error::Config("deformable op input is empty".into()));
        }
        if (s - 1) * cfg.period >= 4 * len {
            log::warn!(
                "deformable op span {} exceeds 4x the sequence length {len}",
                (s - 1) * cfg.period
            );
        }

        let mut offsets = vec![0.0; len * s];
        let mut taps = Vec::with_capacity(len * s * 2);
        let mut spans = Vec::with_capacity(len * s);
        let mut sampled = vec![0.0; ci * len * s];
        let mut dsampled = vec![0.0; ci * len * s];
        let mut stencil = Stencil::new();

        for p0 in 0..len {
            for j in 0..s {
                let delta = self.offset(x, p0, j);
                if !delta.is_finite() {
                    return Err(Error::Runtime(format!(
                        "non-finite offset {delta} at position {p0}, tap {}",
                        cfg.tap(j)
                    )));
                }
                offsets[p0 * s + j] = delta;
                let pos = anchor(p0 as isize, cfg, j) + delta;
                stencil.plan(&cfg.interp, pos, len);
                let start = taps.len() as u32;
                taps.extend_from_slice(stencil.taps());
                spans.push((start, taps.len() as u32));
                for c in 0..ci {
                    let (v, dv) = stencil.sample(x.row(c));
                    let idx = (c * len + p0) * s + j;
                    sampled[idx] = v;
                    dsampled[idx] = dv;
                }
            }
        }

        let mut y = Features::zeros(co, len);
        for o in 0..co {
            let b = self.bias.value[o];
            for p0 in 0..len {
                let mut acc = b;
                for c in 0..ci {
                    let w = &self.weight.value[(o * ci + c) * s..(o * ci + c + 1) * s];
                    let v = &sampled[(c * len + p0) * s..(c * len + p0 + 1) * s];
                    for (wj, vj) in w.iter().zip(v) {
                        acc += wj * vj;
                    }
                }
                if !acc.is_finite() {
                    return Err(Error::Runtime(format!(
                        "non-finite activation at output channel {o}, position {p0}"
                    )));
                }
                y.set(o, p0, acc);
            }
        }

        Ok((
            y,
            DefOpCache {
                token: self.stamp.token(),
                input: x.clone(),
                offsets,
                taps,
                spans,
                sampled,
                dsampled,
            },
        ))
    }

    fn backward(&mut self, cache: &DefOpCache, dy: &Features) -> Result<Features> {
        self.stamp.check(cache.token, "deformable op backward")?;
        let cfg = self.config;
        let x = &cache.input;
        let (ci, co, s, len) = (cfg.in_channels, cfg.out_channels, cfg.kernel_size, x.len());
        if dy.shape() != (co, len) {
            return Err(Error::Config(format!(
                "deformable op backward: dy shape {:?}, expected ({co}, {len})",
                dy.shape()
            )));
        }

        for o in 0..co {
            self.bias.grad[o] += dy.row(o).iter().sum::<f64>();
        }

        let mut dx = Features::zeros(ci, len);
        let mut dv = vec![0.0; ci];
        for p0 in 0..len {
            for j in 0..s {
                // Upstream gradient of each sampled value.
                for (c, slot) in dv.iter_mut().enumerate() {
                    let idx = (c * len + p0) * s + j;
                    let v = cache.sampled[idx];
                    let mut acc = 0.0;
                    for o in 0..co {
                        let g = dy.get(o, p0);
                        let widx = (o * ci + c) * s + j;
                        acc += g * self.weight.value[widx];
                        self.weight.grad[widx] += g * v;
                    }
                    *slot = acc;
                }

                let (a, b) = cache.spans[p0 * s + j];
                let taps = &cache.taps[a as usize..b as usize];
                let mut ddelta = 0.0;
                for (c, &g) in dv.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let row = dx.row_mut(c);
                    for t in taps {
                        if in_range(t.q, len) {
                            row[t.q as usize] += g * t.alpha;
                        }
                    }
                    ddelta += g * cache.dsampled[(c * len + p0) * s + j];
                }

                match cfg.offset_mode {
                    OffsetMode::Off => {}
                    OffsetMode::Free => self.offset_bias.grad[j] += ddelta,
                    OffsetMode::Predicted => {
                        self.offset_bias.grad[j] += ddelta;
                        for c in 0..ci {
                            let widx = j * ci + c;
                            self.offset_weight.grad[widx] += ddelta * x.get(c, p0);
                            let w = self.offset_weight.value[widx];
                            let cur = dx.get(c, p0);
                            dx.set(c, p0, cur + ddelta * w);
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}
