//! End-to-end experiment drivers behind the CLI subcommands.
//!
//! Each driver takes a serde config, returns typed result rows plus a
//! summary, and is deterministic for a given config and seed. Independent
//! cases can be spread over a thread pool with [`run_cases`]; results come
//! back in case order.

pub mod ablation;
pub mod compensation;
pub mod gradcheck;
pub mod periods;
pub mod routing;
pub mod topk;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fgdm::{cost_model, CostReport};
use crate::nn::Module;
use crate::numerics::{Features, SeededRng, SeriesBatch};
use crate::spectral::SpectralPrior;
use crate::synth::{generate, SignalSpec};
use crate::training::Sample;

/// Evaluates `f` on every case, on `threads` workers, preserving case order.
pub fn run_cases<C, R, F>(threads: usize, cases: &[C], f: F) -> Result<Vec<R>>
where
    C: Sync,
    R: Send,
    F: Fn(&C) -> Result<R> + Sync + Send,
{
    if threads <= 1 || cases.len() <= 1 {
        return cases.iter().map(&f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Runtime(format!("cannot start thread pool: {e}")))?;
    pool.install(|| cases.par_iter().map(&f).collect())
}

/// Adds `U(−scale, scale)` noise to every parameter, so zero-initialized
/// offsets and projections take generic values before a gradient check.
pub fn perturb_params<M: Module + ?Sized>(model: &mut M, rng: &mut SeededRng, scale: f64) {
    for p in model.params_mut() {
        for v in p.value.iter_mut() {
            *v += rng.uniform(-scale, scale);
        }
    }
}

/// Sliding-window forecasting data cut from one synthetic series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastTask {
    pub signal: SignalSpec,
    pub window: usize,
    pub horizon: usize,
    /// Distance between consecutive window starts.
    pub step: usize,
    /// Chronological fraction of the series used for training.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.8
}

pub struct ForecastData {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Training inputs stacked as a batch, for spectral extraction.
    pub train_inputs: SeriesBatch,
}

impl ForecastTask {
    pub fn validate(&self) -> Result<()> {
        if self.window < 4 || self.horizon == 0 || self.step == 0 {
            return Err(Error::Config("forecast task needs window >= 4, horizon >= 1, step >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        self.signal.validate()
    }

    pub fn build(&self) -> Result<ForecastData> {
        self.validate()?;
        let (series, _) = generate(&self.signal)?;
        forecast_windows(&series, self.window, self.horizon, self.step, self.train_fraction)
    }
}

/// Cuts `[C × window] → [C × horizon]` samples from batch element 0 and
/// splits them chronologically: a training window's target never crosses
/// the split point.
pub fn forecast_windows(
    series: &SeriesBatch,
    window: usize,
    horizon: usize,
    step: usize,
    train_fraction: f64,
) -> Result<ForecastData> {
    let len = series.len();
    let channels = series.channels();
    let split = (len as f64 * train_fraction).floor() as usize;
    let cut = |start: usize| Sample {
        input: Features::from_fn(channels, window, |c, t| series.get(0, c, start + t)),
        target: Features::from_fn(channels, horizon, |c, t| series.get(0, c, start + window + t)),
    };
    let span = window + horizon;
    let train: Vec<Sample> = (0..).map(|i| i * step).take_while(|s| s + span <= split).map(cut).collect();
    let test: Vec<Sample> = (0..)
        .map(|i| split.saturating_sub(window) + i * step)
        .take_while(|s| s + span <= len)
        .map(cut)
        .collect();
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "series of length {len} is too short for window {window} + horizon {horizon} on both sides of the split"
        )));
    }
    let inputs: Vec<Features> = train.iter().map(|s| s.input.clone()).collect();
    let train_inputs = SeriesBatch::from_samples(&inputs)?;
    Ok(ForecastData {
        train,
        test,
        train_inputs,
    })
}

/// Extracts the prior, mapping "no periodicity" to `None`.
pub fn prior_or_aperiodic(batch: &SeriesBatch, k: usize) -> Result<Option<SpectralPrior>> {
    match SpectralPrior::extract(batch, k) {
        Ok(p) => Ok(Some(p)),
        Err(Error::NoPeriodicity(msg)) => {
            log::warn!("{msg}; falling back to period 1");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub channels: usize,
    pub length: usize,
    pub partitions: usize,
    pub kernels: Vec<usize>,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            length: 96,
            partitions: 4,
            kernels: vec![3, 5, 7],
        }
    }
}

pub fn run_cost_model(config: &CostConfig) -> Result<CostReport> {
    cost_model(config.channels, config.length, config.partitions, &config.kernels)
}
