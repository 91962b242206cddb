//! Interpolation ablation: the same forecaster with a plain dilated
//! convolution, a bilinear deformable operator and a Gaussian deformable
//! operator, trained under identical seeds and hyperparameters.

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, StageSpec, TaskHead};
use crate::deform::OffsetMode;
use crate::error::{Error, Result};
use crate::experiments::{prior_or_aperiodic, run_cases, ForecastTask};
use crate::fgdm::{assign_routes, FgdmConfig};
use crate::interp::InterpKernel;
use crate::nn::Module;
use crate::numerics::SeededRng;
use crate::synth::{Component, SignalSpec};
use crate::training::{evaluate, train, OptimizerConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Period-anchored dilated convolution without offsets.
    #[serde(rename = "anchor-1d")]
    Anchor1d,
    #[serde(rename = "anchor-bl")]
    AnchorBl,
    #[serde(rename = "anchor-gaussian")]
    AnchorGaussian,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Anchor1d, Variant::AnchorBl, Variant::AnchorGaussian];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Anchor1d => "anchor-1d",
            Variant::AnchorBl => "anchor-bl",
            Variant::AnchorGaussian => "anchor-gaussian",
        }
    }

    fn operator(self, sigma: f64) -> Result<(InterpKernel, OffsetMode)> {
        Ok(match self {
            Variant::Anchor1d => (InterpKernel::Bilinear, OffsetMode::Off),
            Variant::AnchorBl => (InterpKernel::Bilinear, OffsetMode::Predicted),
            Variant::AnchorGaussian => (InterpKernel::gaussian(sigma)?, OffsetMode::Predicted),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub variants: Vec<Variant>,
    pub task: ForecastTask,
    pub width: usize,
    /// Stage layout after a stem of width `width`.
    pub stages: Vec<StageSpec>,
    pub partitions: usize,
    pub sigma: f64,
    pub train: TrainConfig,
    /// Training runs per variant, seeded `seed, seed + 1, ...`; reported
    /// metrics are their means.
    pub repeats: usize,
    pub seed: u64,
}

/// Two fractional-period tones with light noise.
pub fn fractional_task() -> ForecastTask {
    ForecastTask {
        signal: SignalSpec::multi_tone(vec![Component::new(10.5, 1.0), Component::new(23.3, 0.6)], 1200, 0.01, 7),
        window: 96,
        horizon: 16,
        step: 4,
        train_fraction: 0.8,
    }
}

/// The same layout with integer periods, where sub-pixel offsets have nothing to fix.
pub fn integer_task() -> ForecastTask {
    ForecastTask {
        signal: SignalSpec::multi_tone(vec![Component::new(12.0, 1.0), Component::new(24.0, 0.6)], 1200, 0.01, 7),
        ..fractional_task()
    }
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            task: fractional_task(),
            width: 8,
            // Pooling before the head keeps it from reading raw lags directly,
            // so the forecast has to go through the deformable blocks.
            stages: vec![
                StageSpec {
                    blocks: 1,
                    width: 8,
                    downsample: 1,
                },
                StageSpec {
                    blocks: 1,
                    width: 8,
                    downsample: 8,
                },
            ],
            partitions: 2,
            sigma: 1.0,
            train: TrainConfig {
                epochs: 20,
                batch_size: 16,
                optimizer: OptimizerConfig::adam(3e-3),
                shuffle: true,
            },
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub mse: f64,
    pub mae: f64,
    pub smape: f64,
    pub first_train_loss: f64,
    pub last_train_loss: f64,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub periods: Vec<usize>,
    /// Variants ordered by test MSE, best first.
    pub ranking: Vec<String>,
}

pub fn run_ablation(config: &AblationConfig, threads: usize) -> Result<(Vec<AblationRow>, AblationSummary)> {
    if config.variants.is_empty() {
        return Err(Error::Config("no ablation variants selected".into()));
    }
    if config.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let data = config.task.build()?;
    let fgdm = FgdmConfig::new(config.partitions, InterpKernel::Bilinear);
    let prior = prior_or_aperiodic(&data.train_inputs, fgdm.topk)?;
    let routes = assign_routes(prior.as_ref(), &fgdm)?;
    let channels = data.train_inputs.channels();

    let rows = run_cases(threads, &config.variants, |&variant| {
        let (interp, mode) = variant.operator(config.sigma)?;
        let mut fg = fgdm.clone();
        fg.interp = interp;
        fg.offset_mode = mode;
        let bcfg = BackboneConfig {
            in_channels: channels,
            window: config.task.window,
            stem_width: config.width,
            stages: config.stages.clone(),
            fgdm: fg,
            head: TaskHead::Forecast {
                horizon: config.task.horizon,
            },
        };
        // Every variant starts from the same draws: offset parameters are
        // zero-initialized and never consume randomness.
        let mut sums = [0.0; 5];
        let mut params = 0;
        for r in 0..config.repeats as u64 {
            let seed = config.seed.wrapping_add(r);
            let mut model = Backbone::new(bcfg.clone(), routes.clone(), &mut SeededRng::new(seed))?;
            let records = train(&mut model, &data.train, &[], &config.train, seed)?;
            let (m, _) = evaluate(&model, &data.test)?;
            let first = records.first().map_or(f64::NAN, |r| r.train_loss);
            let last = records.last().map_or(f64::NAN, |r| r.train_loss);
            for (s, v) in sums.iter_mut().zip([m.mse, m.mae, m.smape, first, last]) {
                *s += v;
            }
            params = model.num_params();
        }
        let [mse, mae, smape, first_train_loss, last_train_loss] = sums.map(|s| s / config.repeats as f64);
        Ok(AblationRow {
            variant: variant.name().to_string(),
            mse,
            mae,
            smape,
            first_train_loss,
            last_train_loss,
            params,
        })
    })?;
    let mut ranked: Vec<&AblationRow> = rows.iter().collect();
    ranked.sort_by(|a, b| a.mse.total_cmp(&b.mse));
    let summary = AblationSummary {
        periods: routes.periods(),
        ranking: ranked.iter().map(|r| r.variant.clone()).collect(),
    };
    Ok((rows, summary))
}
