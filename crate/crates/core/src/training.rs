//! Losses, metrics, optimizers, the fixed-epoch training loop and the
//! whole-model gradient checker.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, Module};
use crate::numerics::{Features, SeededRng, DEFAULT_FD_STEP};

fn check_same_len(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Validation(format!(
            "prediction has {} values, target has {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Validation("empty prediction".into()));
    }
    Ok(())
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_same_len(pred, target)?;
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    /// `200·mean(|p−t| / (|p|+|t|))`, with `0/0` terms counted as 0.
    pub smape: f64,
}

pub fn metric_suite(pred: &[f64], target: &[f64]) -> Result<Metrics> {
    check_same_len(pred, target)?;
    let n = pred.len() as f64;
    let (mut se, mut ae, mut sm) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(target) {
        let d = p - t;
        se += d * d;
        ae += d.abs();
        let denom = p.abs() + t.abs();
        if denom > 0.0 {
            sm += d.abs() / denom;
        }
    }
    let m = Metrics {
        mse: se / n,
        mae: ae / n,
        smape: 200.0 * sm / n,
    };
    if !(m.mse.is_finite() && m.mae.is_finite() && m.smape.is_finite()) {
        return Err(Error::Runtime(format!("non-finite metrics {m:?}")));
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self::Sgd {
            lr,
            momentum: default_momentum(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Self::Sgd { lr, .. } | Self::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Sgd { lr, momentum } => lr >= 0.0 && (0.0..1.0).contains(&momentum),
            Self::Adam { lr, beta1, beta2, eps } => {
                lr >= 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if !ok {
            return Err(Error::Config(format!("invalid optimizer hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// Optimizer with per-parameter moment buffers, created lazily on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the accumulated gradients (gradients are left in place).
    pub fn step<M: Module + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        let mut params = model.params_mut();
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() || self.first.iter().zip(&params).any(|(b, p)| b.len() != p.len()) {
            return Err(Error::Usage("optimizer state does not match the model's parameters".into()));
        }
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd { lr, momentum } => {
                for (p, vel) in params.iter_mut().zip(&mut self.first) {
                    if p.frozen {
                        continue;
                    }
                    for ((w, g), v) in p.value.iter_mut().zip(&p.grad).zip(vel.iter_mut()) {
                        *v = momentum * *v + g;
                        *w -= lr * *v;
                    }
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    if p.frozen {
                        continue;
                    }
                    for (((w, g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// One supervised example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Features,
    pub target: Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_shuffle")]
    pub shuffle: bool,
}

fn default_shuffle() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            optimizer: OptimizerConfig::default(),
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean minibatch loss seen during the epoch.
    pub train_loss: f64,
    pub validation: Option<Metrics>,
    pub seconds: f64,
    pub seed: u64,
}

/// Predictions for every sample and the metrics against their targets.
pub fn evaluate<M: Layer>(model: &M, samples: &[Sample]) -> Result<(Metrics, Vec<Features>)> {
    let mut preds = Vec::with_capacity(samples.len());
    let (mut p_all, mut t_all) = (Vec::new(), Vec::new());
    for s in samples {
        let (y, _) = model.forward(&s.input)?;
        p_all.extend_from_slice(y.data());
        t_all.extend_from_slice(s.target.data());
        preds.push(y);
    }
    Ok((metric_suite(&p_all, &t_all)?, preds))
}

/// Fixed-epoch minibatch training on the MSE loss.
///
/// Gradients of a minibatch are averaged over its samples before each step.
/// Sample order is shuffled per epoch from `seed`, so equal seeds replay
/// identical runs.
pub fn train<M: Layer>(
    model: &mut M,
    train_set: &[Sample],
    validation: &[Sample],
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<TrainRecord>> {
    if train_set.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut opt = Optimizer::new(config.optimizer)?;
    let mut rng = SeededRng::new(seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        if config.shuffle {
            rng.shuffle(&mut order);
        }
        let mut total = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            model.zero_grad();
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let s = &train_set[i];
                let (y, cache) = model.forward(&s.input)?;
                let (loss, grad) = mse_loss(y.data(), s.target.data())?;
                if !loss.is_finite() {
                    return Err(Error::Runtime(format!(
                        "training diverged at epoch {epoch}, step {step}: loss {loss}"
                    )));
                }
                batch_loss += loss * scale;
                let dy = Features::new(y.channels(), y.len(), grad.iter().map(|g| g * scale).collect())?;
                model.backward(&cache, &dy)?;
            }
            if model.flat_grads().iter().any(|g| !g.is_finite()) {
                return Err(Error::Runtime(format!(
                    "training diverged at epoch {epoch}, step {step}: non-finite gradient"
                )));
            }
            opt.step(model)?;
            total += batch_loss;
            batches += 1;
        }
        let train_loss = total / batches as f64;
        let validation = if validation.is_empty() {
            None
        } else {
            Some(evaluate(model, validation)?.0)
        };
        log::debug!("epoch {epoch}: train loss {train_loss:.6e}");
        records.push(TrainRecord {
            epoch,
            train_loss,
            validation,
            seconds: start.elapsed().as_secs_f64(),
            seed,
        });
    }
    Ok(records)
}

/// Largest model the gradient checker accepts.
pub const GRADCHECK_MAX_PARAMS: usize = 10_000;

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Deliberate corruption of the analytic gradient, for testing the checker itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    /// Substring of the parameter names to corrupt (`"input"` targets the input gradient).
    pub target: String,
    /// Added to every corrupted gradient entry.
    pub perturb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Seeds the random projection that turns the output into a scalar loss.
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl GradcheckConfig {
    pub fn new(tolerance: f64, seed: u64) -> Self {
        Self {
            step: DEFAULT_FD_STEP,
            tolerance,
            floor: 1e-3,
            seed,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub count: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupError>,
    pub max_rel_err: f64,
    pub worst_group: String,
    pub tolerance: f64,
    pub passed: bool,
}

fn projected<M: Layer>(model: &M, x: &Features, r: &[f64]) -> Result<f64> {
    let (y, _) = model.forward(x)?;
    Ok(y.data().iter().zip(r).map(|(a, b)| a * b).sum())
}

fn group_error(name: String, analytic: &[f64], numeric: &[f64], floor: f64) -> GroupError {
    let mut worst = (0usize, 0.0f64);
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let e = relative_error(*a, *n, floor);
        if e > worst.1 || e.is_nan() {
            worst = (i, e);
        }
    }
    GroupError {
        name,
        count: analytic.len(),
        max_rel_err: worst.1,
        worst_index: worst.0,
    }
}

/// Compares the analytic backward pass of `model` at input `x` against
/// central finite differences for every parameter and every input entry.
///
/// The scalar loss is `Σ r ⊙ y` with `r` drawn from `config.seed`.
pub fn gradcheck_model<M: Layer>(model: &mut M, x: &Features, config: &GradcheckConfig) -> Result<GradcheckReport> {
    let n_params = model.num_params();
    if n_params > GRADCHECK_MAX_PARAMS {
        return Err(Error::Config(format!(
            "gradcheck is limited to {GRADCHECK_MAX_PARAMS} parameters, model has {n_params}"
        )));
    }
    if config.step <= 0.0 {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let mut rng = SeededRng::new(config.seed);
    // Zeroing goes through `params_mut`, which invalidates caches, so it comes first.
    model.zero_grad();
    let (y, cache) = model.forward(x)?;
    let r: Vec<f64> = (0..y.data().len()).map(|_| rng.normal()).collect();
    let dy = Features::new(y.channels(), y.len(), r.clone())?;
    let mut dx = model.backward(&cache, &dy)?.into_data();

    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    let mut analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();
    if let Some(f) = &config.fault {
        for (name, g) in names.iter().zip(analytic.iter_mut()) {
            if name.contains(&f.target) {
                g.iter_mut().for_each(|v| *v += f.perturb);
            }
        }
        if f.target == "input" {
            dx.iter_mut().for_each(|v| *v += f.perturb);
        }
    }

    let h = config.step;
    let mut groups = Vec::with_capacity(names.len() + 1);
    for (pi, name) in names.iter().enumerate() {
        let len = analytic[pi].len();
        let mut numeric = Vec::with_capacity(len);
        for k in 0..len {
            let orig = model.params()[pi].value[k];
            model.params_mut()[pi].value[k] = orig + h;
            let up = projected(model, x, &r)?;
            model.params_mut()[pi].value[k] = orig - h;
            let down = projected(model, x, &r)?;
            model.params_mut()[pi].value[k] = orig;
            let d = (up - down) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::Runtime(format!("non-finite difference for {name}[{k}]")));
            }
            numeric.push(d);
        }
        groups.push(group_error(name.clone(), &analytic[pi], &numeric, config.floor));
    }

    let mut xp = x.clone();
    let mut numeric = Vec::with_capacity(dx.len());
    for k in 0..dx.len() {
        let orig = xp.data()[k];
        xp.data_mut()[k] = orig + h;
        let up = projected(model, &xp, &r)?;
        xp.data_mut()[k] = orig - h;
        let down = projected(model, &xp, &r)?;
        xp.data_mut()[k] = orig;
        numeric.push((up - down) / (2.0 * h));
    }
    groups.push(group_error("input".into(), &dx, &numeric, config.floor));

    let worst = groups
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .expect("at least the input group");
    let max_rel_err = worst.max_rel_err;
    Ok(GradcheckReport {
        worst_group: worst.name.clone(),
        max_rel_err,
        tolerance: config.tolerance,
        passed: max_rel_err <= config.tolerance,
        groups,
    })
}
