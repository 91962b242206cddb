//! `train`: CSV in, trained backbone, metrics and a parameter dump out.

use std::path::PathBuf;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::json;

use anchor_core::backbone::{Backbone, BackboneConfig, StageSpec, TaskHead};
use anchor_core::experiments::routing::{quantile, reconstruction_scores};
use anchor_core::experiments::{forecast_windows, prior_or_aperiodic};
use anchor_core::fgdm::FgdmConfig;
use anchor_core::interp::InterpKernel;
use anchor_core::nn::{Layer, Module};
use anchor_core::synth::{load_csv, CsvOptions};
use anchor_core::training::{train, Sample, TrainConfig, TrainRecord};
use anchor_core::{Features, SeededRng, SeriesBatch};

use crate::{plot, to_value, Context, Failure, Outcome};

#[derive(Clone, Copy, ValueEnum)]
pub enum TaskKind {
    Forecast,
    Reconstruction,
}

/// The head selected by `--task`; `--horizon` is applied on top of it.
pub fn head_override(task: Option<TaskKind>, horizon: Option<usize>) -> Option<TaskHead> {
    task.map(|t| match t {
        TaskKind::Forecast => TaskHead::Forecast {
            horizon: horizon.unwrap_or(24),
        },
        TaskKind::Reconstruction => TaskHead::Reconstruction,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub input: Option<PathBuf>,
    pub header: bool,
    pub head: TaskHead,
    pub window: usize,
    /// Distance between consecutive window starts.
    pub step: usize,
    /// Chronological head of the series used for training.
    pub train_fraction: f64,
    pub stem_width: usize,
    pub stages: Vec<StageSpec>,
    pub fgdm: FgdmConfig,
    pub train: TrainConfig,
    /// Expected share of anomalous points (reconstruction only).
    pub anomaly_ratio: f64,
    pub seed: u64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            input: None,
            header: true,
            head: TaskHead::Forecast { horizon: 24 },
            window: 96,
            step: 4,
            train_fraction: 0.8,
            stem_width: 8,
            stages: vec![StageSpec {
                blocks: 1,
                width: 8,
                downsample: 1,
            }],
            fgdm: FgdmConfig::new(4, InterpKernel::default()),
            train: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            anomaly_ratio: 0.01,
            seed: 0,
        }
    }
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    train_loss: f64,
    val_mse: Option<f64>,
    val_mae: Option<f64>,
    val_smape: Option<f64>,
    seconds: f64,
}

impl From<&TrainRecord> for EpochRow {
    fn from(r: &TrainRecord) -> Self {
        Self {
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_mse: r.validation.map(|m| m.mse),
            val_mae: r.validation.map(|m| m.mae),
            val_smape: r.validation.map(|m| m.smape),
            seconds: r.seconds,
        }
    }
}

#[derive(Serialize)]
struct ScoreRow {
    index: usize,
    score: f64,
    flagged: bool,
}

#[derive(Serialize)]
struct TensorEntry<'a> {
    name: &'a str,
    shape: &'a [usize],
    offset: usize,
    len: usize,
}

fn window(series: &SeriesBatch, start: usize, len: usize) -> Features {
    Features::from_fn(series.channels(), len, |c, t| series.get(0, c, start + t))
}

/// Autoencoding samples starting every `step` within `[from, to)`.
fn reconstruction_windows(series: &SeriesBatch, from: usize, to: usize, len: usize, step: usize) -> Vec<Sample> {
    (0..)
        .map(|i| from + i * step)
        .take_while(|s| s + len <= to)
        .map(|s| {
            let x = window(series, s, len);
            Sample {
                input: x.clone(),
                target: x,
            }
        })
        .collect()
}

/// Per-step scores for the whole series: tiled windows, then one window
/// flush with the end for any remainder.
fn score_series<M: Layer>(model: &M, series: &SeriesBatch, len: usize) -> Result<Vec<f64>, Failure> {
    let n = series.len();
    let mut scores = reconstruction_scores(model, series, 0, len)?;
    if scores.len() < n {
        let tail = reconstruction_scores(model, series, n - len, len)?;
        let missing = n - scores.len();
        scores.extend_from_slice(&tail[len - missing..]);
    }
    Ok(scores)
}

pub fn run(ctx: &mut Context, cfg: TrainRunConfig) -> Result<Outcome, Failure> {
    let path = cfg
        .input
        .clone()
        .ok_or_else(|| Failure::Usage("train needs --input <csv>".into()))?;
    if cfg.window < 4 || cfg.step == 0 {
        return Err(Failure::Usage("train needs window >= 4 and step >= 1".into()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Failure::Usage("train_fraction must lie in (0, 1)".into()));
    }
    let data = load_csv(
        &path,
        CsvOptions {
            header: cfg.header,
            standardize: true,
        },
    )?;
    let series = &data.batch;
    let n = series.len();
    let split = (n as f64 * cfg.train_fraction).floor() as usize;
    let (train_set, val_set, train_inputs) = match cfg.head {
        TaskHead::Forecast { horizon } => {
            let d = forecast_windows(series, cfg.window, horizon, cfg.step, cfg.train_fraction)?;
            (d.train, d.test, d.train_inputs)
        }
        TaskHead::Reconstruction => {
            let tr = reconstruction_windows(series, 0, split, cfg.window, cfg.step);
            let va = reconstruction_windows(series, split, n, cfg.window, cfg.step);
            if tr.is_empty() || va.is_empty() {
                return Err(Failure::Usage(format!(
                    "{n} rows are too few for window {} on both sides of the split at row {split}",
                    cfg.window
                )));
            }
            let inputs: Vec<Features> = tr.iter().map(|s| s.input.clone()).collect();
            let batch = SeriesBatch::from_samples(&inputs)?;
            (tr, va, batch)
        }
        TaskHead::Classification { .. } => {
            return Err(Failure::Usage("train supports forecast and reconstruction heads only".into()));
        }
    };

    let prior = prior_or_aperiodic(&train_inputs, cfg.fgdm.topk)?;
    let bcfg = BackboneConfig {
        in_channels: series.channels(),
        window: cfg.window,
        stem_width: cfg.stem_width,
        stages: cfg.stages.clone(),
        fgdm: cfg.fgdm.clone(),
        head: cfg.head,
    };
    let mut model = Backbone::from_prior(bcfg, prior.as_ref(), &mut SeededRng::new(cfg.seed))?;
    let records = train(&mut model, &train_set, &val_set, &cfg.train, cfg.seed)?;

    let run = ctx.run_dir("train")?;
    let rows: Vec<EpochRow> = records.iter().map(EpochRow::from).collect();
    run.write_csv("results.csv", &rows)?;

    let mut flat = Vec::new();
    let mut manifest = Vec::new();
    let params = model.params();
    for p in &params {
        manifest.push(TensorEntry {
            name: &p.name,
            shape: &p.shape,
            offset: flat.len() / 8,
            len: p.len(),
        });
        for v in &p.value {
            flat.extend_from_slice(&v.to_le_bytes());
        }
    }
    let total = flat.len() / 8;
    run.write_bytes("params.bin", &flat)?;
    run.write_json("params.json", &json!({"dtype": "f64", "endian": "little", "total": total, "tensors": manifest}))?;
    drop(params);

    let mut anomaly = json!(null);
    if cfg.head == TaskHead::Reconstruction {
        if !(cfg.anomaly_ratio > 0.0 && cfg.anomaly_ratio < 1.0) {
            return Err(Failure::Usage("anomaly_ratio must lie in (0, 1)".into()));
        }
        let scores = score_series(&model, series, cfg.window)?;
        let threshold = quantile(&scores, 1.0 - cfg.anomaly_ratio);
        let rows: Vec<ScoreRow> = scores
            .iter()
            .enumerate()
            .map(|(index, &score)| ScoreRow {
                index,
                score,
                flagged: score > threshold,
            })
            .collect();
        let flagged = rows.iter().filter(|r| r.flagged).count();
        run.write_csv("scores.csv", &rows)?;
        anomaly = json!({"threshold": threshold, "flagged": flagged, "scored": rows.len()});
    }

    ctx.chart(&run, "loss.png", || {
        plot::lines(&[
            records.iter().map(|r| r.train_loss).collect(),
            records.iter().map(|r| r.validation.map_or(f64::NAN, |m| m.mse)).collect(),
        ])
    })?;

    let last = records.last();
    let val = last.and_then(|r| r.validation);
    Ok(Outcome {
        headline: format!(
            "{} epochs on {} rows x {} channels, final train loss {:.4e}, validation MSE {}",
            records.len(),
            n,
            series.channels(),
            last.map_or(f64::NAN, |r| r.train_loss),
            val.map_or("n/a".to_string(), |m| format!("{:.4e}", m.mse)),
        ),
        passed: true,
        summary: json!({
            "rows": n,
            "channels": series.channels(),
            "columns": data.names,
            "split_row": split,
            "train_samples": train_set.len(),
            "validation_samples": val_set.len(),
            "periods": prior.as_ref().map(|p| p.periods().to_vec()),
            "parameters": total,
            "final_train_loss": last.map(|r| r.train_loss),
            "validation": val.map(|m| to_value(&m)),
            "scaling": data.scaling,
            "anomaly": anomaly,
        }),
        config: to_value(&cfg),
        run,
    })
}
