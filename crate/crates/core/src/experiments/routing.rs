//! Energy-ascending versus energy-descending routing on an anomaly
//! reconstruction task.
//!
//! A reconstruction backbone is trained on the anomaly-free head of a
//! series. Each time step of the tail is scored by its squared
//! reconstruction error (averaged over channels); steps scoring above the
//! `(1 − r)` quantile of the tail's scores are flagged.

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, StageSpec, TaskHead};
use crate::error::{Error, Result};
use crate::experiments::{prior_or_aperiodic, run_cases};
use crate::fgdm::{assign_routes, FgdmConfig, RoutingOrder};
use crate::interp::InterpKernel;
use crate::nn::Layer;
use crate::numerics::{Features, SeededRng, SeriesBatch};
use crate::synth::{generate, Anomaly, Component, SignalKind, SignalSpec};
use crate::training::{train, OptimizerConfig, Sample, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingConfig {
    pub signal: SignalSpec,
    pub window: usize,
    /// Head of the series used for training; anomalies should lie after it.
    pub train_fraction: f64,
    pub width: usize,
    pub partitions: usize,
    pub sigma: f64,
    /// Expected anomaly ratio `r`.
    pub anomaly_ratio: f64,
    pub train: TrainConfig,
    pub seed: u64,
}

pub fn anomaly_signal() -> SignalSpec {
    let anomalies = [(1330, 3.0, 3), (1412, -2.5, 2), (1497, 2.5, 3), (1561, -3.0, 2)]
        .into_iter()
        .map(|(position, magnitude, width)| Anomaly {
            position,
            magnitude,
            width,
        })
        .collect();
    SignalSpec {
        kind: SignalKind::AnomalyInjected { anomalies },
        length: 1600,
        components: vec![
            Component::new(16.0, 1.0),
            Component::new(6.4, 0.5),
            Component::new(40.0, 0.3),
        ],
        noise_std: 0.05,
        channels: 1,
        seed: 5,
    }
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            signal: anomaly_signal(),
            window: 64,
            train_fraction: 0.8,
            width: 8,
            partitions: 4,
            sigma: 1.0,
            anomaly_ratio: 0.01,
            train: TrainConfig {
                epochs: 15,
                batch_size: 16,
                optimizer: OptimizerConfig::adam(3e-3),
                shuffle: true,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRow {
    pub order: String,
    pub periods: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub flagged: usize,
    pub last_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingSummary {
    pub f1_asc: f64,
    pub f1_desc: f64,
    pub anomalous_points: usize,
    pub scored_points: usize,
}

/// Linear-interpolated `q` quantile of `values` (`q ∈ [0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Precision, recall and F1 of `flags` against `labels` (0 when undefined).
pub fn prf1(flags: &[bool], labels: &[bool]) -> (f64, f64, f64) {
    let tp = flags.iter().zip(labels).filter(|(f, l)| **f && **l).count() as f64;
    let fp = flags.iter().zip(labels).filter(|(f, l)| **f && !**l).count() as f64;
    let fn_ = flags.iter().zip(labels).filter(|(f, l)| !**f && **l).count() as f64;
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

fn window_at(series: &SeriesBatch, start: usize, window: usize) -> Features {
    Features::from_fn(series.channels(), window, |c, t| series.get(0, c, start + t))
}

/// Squared reconstruction error per time step over non-overlapping windows
/// from `start`; returns the scores and the index of the first scored step.
pub fn reconstruction_scores<M: Layer>(model: &M, series: &SeriesBatch, start: usize, window: usize) -> Result<Vec<f64>> {
    let mut scores = Vec::new();
    let mut s = start;
    while s + window <= series.len() {
        let x = window_at(series, s, window);
        let (y, _) = model.forward(&x)?;
        for t in 0..window {
            let e: f64 = (0..x.channels()).map(|c| (y.get(c, t) - x.get(c, t)).powi(2)).sum();
            scores.push(e / x.channels() as f64);
        }
        s += window;
    }
    Ok(scores)
}

pub fn run_routing_ablation(config: &RoutingConfig, threads: usize) -> Result<(Vec<RoutingRow>, RoutingSummary)> {
    if !(config.anomaly_ratio > 0.0 && config.anomaly_ratio < 1.0) {
        return Err(Error::Validation(format!(
            "anomaly ratio must lie in (0, 1), got {}",
            config.anomaly_ratio
        )));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
    }
    let (series, truth) = generate(&config.signal)?;
    let split = (series.len() as f64 * config.train_fraction).floor() as usize;
    let w = config.window;
    if split < w || series.len() - split < w {
        return Err(Error::Config("series too short for the window on both sides of the split".into()));
    }
    let train_set: Vec<Sample> = (0..)
        .map(|i| i * (w / 4).max(1))
        .take_while(|s| s + w <= split)
        .map(|s| {
            let x = window_at(&series, s, w);
            Sample {
                input: x.clone(),
                target: x,
            }
        })
        .collect();
    let inputs: Vec<Features> = train_set.iter().map(|s| s.input.clone()).collect();
    let train_batch = SeriesBatch::from_samples(&inputs)?;
    let interp = InterpKernel::gaussian(config.sigma)?;
    let channels = series.channels();
    let base = FgdmConfig::new(config.partitions, interp);
    let prior = prior_or_aperiodic(&train_batch, base.topk)?;

    let orders = [RoutingOrder::EnergyAscKernel, RoutingOrder::EnergyDescKernel];
    let rows = run_cases(threads, &orders, |&order| {
        let mut fgdm = base.clone();
        fgdm.routing_order = order;
        let routes = assign_routes(prior.as_ref(), &fgdm)?;
        let bcfg = BackboneConfig {
            in_channels: channels,
            window: w,
            stem_width: config.width,
            stages: vec![StageSpec {
                blocks: 1,
                width: config.width,
                downsample: 1,
            }],
            fgdm,
            head: TaskHead::Reconstruction,
        };
        let mut model = Backbone::new(bcfg, routes.clone(), &mut SeededRng::new(config.seed))?;
        let records = train(&mut model, &train_set, &[], &config.train, config.seed)?;
        let scores = reconstruction_scores(&model, &series, split, w)?;
        let labels = &truth.anomaly_labels[split..split + scores.len()];
        let threshold = quantile(&scores, 1.0 - config.anomaly_ratio);
        let flags: Vec<bool> = scores.iter().map(|s| *s > threshold).collect();
        let (precision, recall, f1) = prf1(&flags, labels);
        Ok(RoutingRow {
            order: match order {
                RoutingOrder::EnergyAscKernel => "asc".into(),
                RoutingOrder::EnergyDescKernel => "desc".into(),
            },
            periods: routes.periods().iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
            precision,
            recall,
            f1,
            threshold,
            flagged: flags.iter().filter(|f| **f).count(),
            last_train_loss: records.last().map_or(f64::NAN, |r| r.train_loss),
        })
    })?;
    let scored = ((series.len() - split) / w) * w;
    let summary = RoutingSummary {
        f1_asc: rows[0].f1,
        f1_desc: rows[1].f1,
        anomalous_points: truth.anomaly_labels[split..split + scored].iter().filter(|l| **l).count(),
        scored_points: scored,
    };
    Ok((rows, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_and_scores() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0, 5.0], 0.5), 3.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
        let (p, r, f) = prf1(&[true, true, false, false], &[true, false, true, false]);
        assert_eq!((p, r, f), (0.5, 0.5, 0.5));
        assert_eq!(prf1(&[false], &[true]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn zero_ratio_is_rejected() {
        let cfg = RoutingConfig {
            anomaly_ratio: 0.0,
            ..Default::default()
        };
        assert!(matches!(run_routing_ablation(&cfg, 1), Err(Error::Validation(_))));
    }
}
