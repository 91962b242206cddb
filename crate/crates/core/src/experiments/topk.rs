//! Sensitivity of the forecaster to the number of extracted periods.
//!
//! One period feeds each cascade stage, so `k` periods mean `k + 1`
//! partitions. The channel width is the smallest multiple of the partition
//! count that reaches `min_width`.

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::experiments::{prior_or_aperiodic, run_cases, ForecastTask};
use crate::fgdm::{assign_routes, FgdmConfig};
use crate::interp::InterpKernel;
use crate::nn::Module;
use crate::numerics::SeededRng;
use crate::synth::{Component, SignalSpec};
use crate::training::{evaluate, train, OptimizerConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopkSweepConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub task: ForecastTask,
    pub min_width: usize,
    pub sigma: f64,
    pub train: TrainConfig,
    /// Largest acceptable max/min test-MSE ratio across the sweep.
    pub max_ratio: f64,
    pub seed: u64,
}

pub fn three_tone_task() -> ForecastTask {
    ForecastTask {
        signal: SignalSpec::multi_tone(
            vec![
                Component::new(24.0, 1.0),
                Component::new(10.4, 0.6),
                Component::new(6.3, 0.4),
            ],
            1200,
            0.05,
            11,
        ),
        window: 96,
        horizon: 16,
        step: 4,
        train_fraction: 0.8,
    }
}

impl Default for TopkSweepConfig {
    fn default() -> Self {
        Self {
            k_min: 1,
            k_max: 6,
            task: three_tone_task(),
            min_width: 12,
            sigma: 1.0,
            train: TrainConfig {
                epochs: 15,
                batch_size: 16,
                optimizer: OptimizerConfig::adam(3e-3),
                shuffle: true,
            },
            max_ratio: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkRow {
    pub k: usize,
    pub partitions: usize,
    pub width: usize,
    pub periods: String,
    pub mse: f64,
    pub mae: f64,
    pub smape: f64,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkSummary {
    pub best_k: usize,
    pub mse_ratio: f64,
    pub max_ratio: f64,
    pub within_bound: bool,
    pub clamped: bool,
}

/// Smallest multiple of `n` that is at least `min`.
pub fn width_for(n: usize, min: usize) -> usize {
    min.div_ceil(n).max(1) * n
}

pub fn run_topk_sweep(config: &TopkSweepConfig, threads: usize) -> Result<(Vec<TopkRow>, TopkSummary)> {
    if config.k_min == 0 || config.k_min > config.k_max {
        return Err(Error::Config(format!(
            "empty or invalid k range [{}, {}]",
            config.k_min, config.k_max
        )));
    }
    let limit = config.task.window / 2;
    let mut clamped = false;
    let mut k_max = config.k_max;
    if k_max > limit {
        log::warn!("k_max {k_max} exceeds window/2 = {limit}; clamping");
        k_max = limit;
        clamped = true;
    }
    if config.k_min > k_max {
        return Err(Error::Config(format!("k_min {} exceeds window/2 = {limit}", config.k_min)));
    }
    let data = config.task.build()?;
    let channels = data.train_inputs.channels();
    let interp = InterpKernel::gaussian(config.sigma)?;
    let ks: Vec<usize> = (config.k_min..=k_max).collect();
    let rows = run_cases(threads, &ks, |&k| {
        let n = k + 1;
        let width = width_for(n, config.min_width);
        let fgdm = FgdmConfig::new(n, interp);
        let prior = prior_or_aperiodic(&data.train_inputs, k)?;
        let routes = assign_routes(prior.as_ref(), &fgdm)?;
        let bcfg = BackboneConfig::forecaster(channels, config.task.window, width, config.task.horizon, fgdm);
        let mut model = Backbone::new(bcfg, routes.clone(), &mut SeededRng::new(config.seed))?;
        train(&mut model, &data.train, &[], &config.train, config.seed)?;
        let (m, _) = evaluate(&model, &data.test)?;
        Ok(TopkRow {
            k,
            partitions: n,
            width,
            periods: routes.periods().iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
            mse: m.mse,
            mae: m.mae,
            smape: m.smape,
            params: model.num_params(),
        })
    })?;
    let best = rows
        .iter()
        .min_by(|a, b| a.mse.total_cmp(&b.mse))
        .ok_or_else(|| Error::Invariant("empty sweep".into()))?;
    let worst = rows.iter().map(|r| r.mse).fold(f64::MIN, f64::max);
    let ratio = worst / best.mse;
    Ok((
        rows.clone(),
        TopkSummary {
            best_k: best.k,
            mse_ratio: ratio,
            max_ratio: config.max_ratio,
            within_bound: ratio <= config.max_ratio,
            clamped,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths() {
        assert_eq!(width_for(2, 12), 12);
        assert_eq!(width_for(5, 12), 15);
        assert_eq!(width_for(7, 12), 14);
    }

    #[test]
    fn empty_range_is_rejected() {
        let cfg = TopkSweepConfig {
            k_min: 3,
            k_max: 2,
            ..Default::default()
        };
        assert!(matches!(run_topk_sweep(&cfg, 1), Err(Error::Config(_))));
    }
}
