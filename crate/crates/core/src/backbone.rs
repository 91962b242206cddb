//! Toy hierarchical backbone: pointwise stem, stages of residual FGDM blocks
//! separated by strided-average downsampling, and a task head.
//!
//! All stages share one route assignment computed from the global spectral
//! prior; a stage behind a cumulative stride `s` sees every period
//! floor-divided by `s` (minimum 1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fgdm::{assign_routes, FgdmBlock, FgdmCache, FgdmConfig, RouteAssignment};
use crate::interp::InterpKernel;
use crate::nn::{Layer, Linear, LinearCache, Module, Param, Pointwise, PointwiseCache};
use crate::numerics::{Features, SeededRng};
use crate::spectral::SpectralPrior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskHead {
    /// `horizon` future values for every input channel.
    Forecast { horizon: usize },
    /// Per-position reconstruction of the input.
    Reconstruction,
    /// Global average pool followed by a linear classifier.
    Classification { classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub blocks: usize,
    pub width: usize,
    /// Stride of the averaging downsample applied on entry (1 = none).
    pub downsample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub window: usize,
    pub stem_width: usize,
    pub stages: Vec<StageSpec>,
    pub fgdm: FgdmConfig,
    pub head: TaskHead,
}

impl BackboneConfig {
    /// Single-stage forecaster used by the experiments.
    pub fn forecaster(in_channels: usize, window: usize, width: usize, horizon: usize, fgdm: FgdmConfig) -> Self {
        Self {
            in_channels,
            window,
            stem_width: width,
            stages: vec![StageSpec {
                blocks: 1,
                width,
                downsample: 1,
            }],
            fgdm,
            head: TaskHead::Forecast { horizon },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.window == 0 || self.stem_width == 0 {
            return Err(Error::Config("backbone dimensions must be positive".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("backbone needs at least one stage".into()));
        }
        let mut stride = 1;
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 || s.downsample == 0 {
                return Err(Error::Config(format!("stage {i}: block count and downsample must be >= 1")));
            }
            self.fgdm
                .validate(s.width)
                .map_err(|e| Error::Config(format!("stage {i}: {e}")))?;
            stride *= s.downsample;
        }
        if self.window % stride != 0 {
            return Err(Error::Config(format!(
                "window {} is not divisible by the cumulative downsample factor {stride}",
                self.window
            )));
        }
        match self.head {
            TaskHead::Forecast { horizon: 0 } => Err(Error::Config("forecast horizon must be positive".into())),
            TaskHead::Classification { classes: 0 } => Err(Error::Config("class count must be positive".into())),
            _ => Ok(()),
        }
    }

    pub fn total_stride(&self) -> usize {
        self.stages.iter().map(|s| s.downsample).product()
    }

    /// Output shape `(rows, cols)` of the head.
    pub fn output_shape(&self) -> (usize, usize) {
        match self.head {
            TaskHead::Forecast { horizon } => (self.in_channels, horizon),
            TaskHead::Reconstruction => (self.in_channels, self.window),
            TaskHead::Classification { classes } => (classes, 1),
        }
    }
}

/// Mean over non-overlapping windows of `factor` samples.
pub fn downsample_avg(x: &Features, factor: usize) -> Features {
    let out_len = x.len().div_ceil(factor);
    Features::from_fn(x.channels(), out_len, |c, t| {
        let row = x.row(c);
        let end = (t * factor + factor).min(x.len());
        let win = &row[t * factor..end];
        win.iter().sum::<f64>() / win.len() as f64
    })
}

fn downsample_avg_backward(dy: &Features, factor: usize, in_len: usize) -> Features {
    Features::from_fn(dy.channels(), in_len, |c, t| {
        let o = t / factor;
        let width = ((o * factor + factor).min(in_len) - o * factor) as f64;
        dy.get(c, o) / width
    })
}

fn upsample_nearest(x: &Features, factor: usize, out_len: usize) -> Features {
    Features::from_fn(x.channels(), out_len, |c, t| x.get(c, (t / factor).min(x.len() - 1)))
}

fn upsample_nearest_backward(dy: &Features, factor: usize, in_len: usize) -> Features {
    let mut dx = Features::zeros(dy.channels(), in_len);
    for c in 0..dy.channels() {
        for t in 0..dy.len() {
            let o = (t / factor).min(in_len - 1);
            let cur = dx.get(c, o);
            dx.set(c, o, cur + dy.get(c, t));
        }
    }
    dx
}

#[derive(Debug, Clone)]
struct Stage {
    downsample: usize,
    transition: Option<Pointwise>,
    blocks: Vec<FgdmBlock>,
}

#[derive(Debug, Clone)]
enum Head {
    Forecast(Linear),
    Reconstruction(Pointwise),
    Classification(Linear),
}

struct StageCache {
    in_len: usize,
    transition: Option<PointwiseCache>,
    blocks: Vec<FgdmCache>,
}

enum HeadCache {
    Forecast(LinearCache),
    Reconstruction { inner: PointwiseCache, feat_len: usize },
    Classification { inner: LinearCache, feat_len: usize },
}

pub struct BackboneCache {
    stem: PointwiseCache,
    stages: Vec<StageCache>,
    head: HeadCache,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    config: BackboneConfig,
    routes: RouteAssignment,
    stem: Pointwise,
    stages: Vec<Stage>,
    head: Head,
}

impl Backbone {
    pub fn new(config: BackboneConfig, routes: RouteAssignment, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let stem = Pointwise::new("stem", config.in_channels, config.stem_width, rng);
        let mut width = config.stem_width;
        let mut stride = 1;
        let mut len = config.window;
        let mut stages = Vec::with_capacity(config.stages.len());
        for (si, spec) in config.stages.iter().enumerate() {
            stride *= spec.downsample;
            len /= spec.downsample;
            let transition = (spec.width != width)
                .then(|| Pointwise::new(&format!("stage{si}.transition"), width, spec.width, rng));
            width = spec.width;
            let stage_routes = routes.at_stride(stride);
            let blocks = (0..spec.blocks)
                .map(|bi| {
                    FgdmBlock::new(
                        &format!("stage{si}.block{bi}"),
                        config.fgdm.clone(),
                        width,
                        stage_routes.clone(),
                        rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage {
                downsample: spec.downsample,
                transition,
                blocks,
            });
        }
        let head = match config.head {
            TaskHead::Forecast { horizon } => {
                Head::Forecast(Linear::new("head", width * len, (config.in_channels, horizon), rng))
            }
            TaskHead::Reconstruction => Head::Reconstruction(Pointwise::new("head", width, config.in_channels, rng)),
            TaskHead::Classification { classes } => Head::Classification(Linear::new("head", width, (classes, 1), rng)),
        };
        Ok(Self {
            config,
            routes,
            stem,
            stages,
            head,
        })
    }

    /// Builds routes from `prior` (`None` = aperiodic input) and then the model.
    pub fn from_prior(config: BackboneConfig, prior: Option<&SpectralPrior>, rng: &mut SeededRng) -> Result<Self> {
        let routes = assign_routes(prior, &config.fgdm)?;
        Self::new(config, routes, rng)
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn routes(&self) -> &RouteAssignment {
        &self.routes
    }

    pub fn set_interp(&mut self, interp: InterpKernel) -> Result<()> {
        for s in &mut self.stages {
            for b in &mut s.blocks {
                b.set_interp(interp)?;
            }
        }
        self.config.fgdm.interp = interp;
        Ok(())
    }

    /// Block `bi` of stage `si`.
    pub fn block(&self, si: usize, bi: usize) -> &FgdmBlock {
        &self.stages[si].blocks[bi]
    }

    pub fn block_mut(&mut self, si: usize, bi: usize) -> &mut FgdmBlock {
        &mut self.stages[si].blocks[bi]
    }
}

impl Module for Backbone {
    fn params(&self) -> Vec<&Param> {
        let mut out = self.stem.params();
        for s in &self.stages {
            if let Some(t) = &s.transition {
                out.extend(t.params());
            }
            for b in &s.blocks {
                out.extend(b.params());
            }
        }
        match &self.head {
            Head::Forecast(l) | Head::Classification(l) => out.extend(l.params()),
            Head::Reconstruction(p) => out.extend(p.params()),
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.stem.params_mut();
        for s in &mut self.stages {
            if let Some(t) = &mut s.transition {
                out.extend(t.params_mut());
            }
            for b in &mut s.blocks {
                out.extend(b.params_mut());
            }
        }
        match &mut self.head {
            Head::Forecast(l) | Head::Classification(l) => out.extend(l.params_mut()),
            Head::Reconstruction(p) => out.extend(p.params_mut()),
        }
        out
    }
}

impl Layer for Backbone {
    type Cache = BackboneCache;

    fn forward(&self, x: &Features) -> Result<(Features, BackboneCache)> {
        if x.shape() != (self.config.in_channels, self.config.window) {
            return Err(Error::Config(format!(
                "backbone expects input shape ({}, {}), got {:?}",
                self.config.in_channels,
                self.config.window,
                x.shape()
            )));
        }
        let (mut h, stem) = self.stem.forward(x)?;
        let mut stage_caches = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let in_len = h.len();
            if stage.downsample > 1 {
                h = downsample_avg(&h, stage.downsample);
            }
            let transition = match &stage.transition {
                Some(t) => {
                    let (y, c) = t.forward(&h)?;
                    h = y;
                    Some(c)
                }
                None => None,
            };
            let mut blocks = Vec::with_capacity(stage.blocks.len());
            for b in &stage.blocks {
                let (y, c) = b.forward(&h)?;
                h.add_assign(&y);
                blocks.push(c);
            }
            stage_caches.push(StageCache {
                in_len,
                transition,
                blocks,
            });
        }
        let feat_len = h.len();
        let (out, head) = match &self.head {
            Head::Forecast(l) => {
                let (y, c) = l.forward(&h)?;
                (y, HeadCache::Forecast(c))
            }
            Head::Reconstruction(p) => {
                let up = upsample_nearest(&h, self.config.total_stride(), self.config.window);
                let (y, c) = p.forward(&up)?;
                (y, HeadCache::Reconstruction { inner: c, feat_len })
            }
            Head::Classification(l) => {
                let pooled = Features::from_fn(h.channels(), 1, |c, _| h.row(c).iter().sum::<f64>() / feat_len as f64);
                let (y, c) = l.forward(&pooled)?;
                (y, HeadCache::Classification { inner: c, feat_len })
            }
        };
        if let Some((c, t)) = out.first_non_finite() {
            return Err(Error::Runtime(format!("non-finite backbone output at ({c}, {t})")));
        }
        Ok((
            out,
            BackboneCache {
                stem,
                stages: stage_caches,
                head,
            },
        ))
    }

    fn backward(&mut self, cache: &BackboneCache, dy: &Features) -> Result<Features> {
        if cache.stages.len() != self.stages.len() {
            return Err(Error::Usage("backbone cache does not belong to this model".into()));
        }
        let stride = self.config.total_stride();
        let mut dh = match (&mut self.head, &cache.head) {
            (Head::Forecast(l), HeadCache::Forecast(c)) => l.backward(c, dy)?,
            (Head::Reconstruction(p), HeadCache::Reconstruction { inner, feat_len }) => {
                let dup = p.backward(inner, dy)?;
                upsample_nearest_backward(&dup, stride, *feat_len)
            }
            (Head::Classification(l), HeadCache::Classification { inner, feat_len }) => {
                let dpool = l.backward(inner, dy)?;
                Features::from_fn(dpool.channels(), *feat_len, |c, _| dpool.get(c, 0) / *feat_len as f64)
            }
            _ => return Err(Error::Usage("backbone head cache mismatch".into())),
        };
        for (stage, sc) in self.stages.iter_mut().zip(&cache.stages).rev() {
            if sc.blocks.len() != stage.blocks.len() {
                return Err(Error::Usage("backbone cache does not belong to this model".into()));
            }
            for (b, c) in stage.blocks.iter_mut().zip(&sc.blocks).rev() {
                let dblock = b.backward(c, &dh)?;
                dh.add_assign(&dblock);
            }
            if let (Some(t), Some(c)) = (&mut stage.transition, &sc.transition) {
                dh = t.backward(c, &dh)?;
            }
            if stage.downsample > 1 {
                dh = downsample_avg_backward(&dh, stage.downsample, sc.in_len);
            }
        }
        self.stem.backward(&cache.stem, &dh)
    }
}
