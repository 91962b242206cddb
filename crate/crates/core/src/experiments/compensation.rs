//! Sub-pixel compensation bench.
//!
//! For a fractional period `T*`, a single deformable operator with dilation
//! `⌊T*⌋` and one free offset per tap is trained to reproduce the operator
//! that samples the continuous signal at `p0 + T*·n`. The offsets that do
//! so exactly are `n·(T* − ⌊T*⌋)`; the bench reports how far each
//! interpolation kernel's learned offsets end up from them.
//!
//! Each tap writes to its own output channel with a fixed unit weight, so
//! the only trainable quantities are the offsets. The teacher target for
//! tap `n` at position `p0` is the analytic signal at `p0 + T*·n`, or 0 when
//! that coordinate falls outside the sequence (the same zero-padding the
//! operator sees).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::deform::{DefOp, DefOpConfig, OffsetMode};
use crate::error::{Error, Result};
use crate::experiments::run_cases;
use crate::interp::InterpKernel;
use crate::nn::{Layer, Module};
use crate::numerics::{Features, SeededRng};
use crate::synth::{generate, theoretical_offsets, SignalSpec, DEFAULT_FRACTIONAL_PERIODS};
use crate::training::{mse_loss, Optimizer, OptimizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompensationConfig {
    pub periods: Vec<f64>,
    pub steps: usize,
    pub lr: f64,
    pub sigma: f64,
    /// Gaussian window radius; defaults to ⌈3σ⌉ (at least 2).
    pub radius: Option<usize>,
    pub kernel_size: usize,
    pub length: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for CompensationConfig {
    fn default() -> Self {
        Self {
            periods: DEFAULT_FRACTIONAL_PERIODS.to_vec(),
            steps: 500,
            lr: 1.0,
            sigma: 1.0,
            radius: None,
            kernel_size: 3,
            length: 512,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl CompensationConfig {
    pub fn gaussian_kernel(&self) -> Result<InterpKernel> {
        match self.radius {
            Some(r) => InterpKernel::gaussian_with_radius(self.sigma, r),
            None => InterpKernel::gaussian(self.sigma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods.is_empty() {
            return Err(Error::Config("period set is empty".into()));
        }
        for &p in &self.periods {
            if !p.is_finite() || p <= 1.0 {
                return Err(Error::Validation(format!("period {p} must be finite and greater than 1")));
            }
            if p.fract() == 0.0 {
                return Err(Error::Validation(format!(
                    "period {p} is an integer; every bench period needs a non-zero fractional part"
                )));
            }
        }
        if self.kernel_size < 3 || self.kernel_size % 2 == 0 {
            return Err(Error::Config("kernel_size must be odd and >= 3".into()));
        }
        if self.length < 8 {
            return Err(Error::Config("length must be at least 8".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config("learning rate must be >= 0".into()));
        }
        self.gaussian_kernel()?;
        Ok(())
    }
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.9}")).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationRow {
    pub period: f64,
    pub dilation: usize,
    pub mae_linear: f64,
    pub mae_gaussian: f64,
    /// `mae_linear / mae_gaussian`; above 1 favours the Gaussian kernel.
    pub eta: f64,
    pub theoretical_offsets: String,
    pub learned_linear: String,
    pub learned_gaussian: String,
    pub final_loss_linear: f64,
    pub final_loss_gaussian: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationSummary {
    pub cases: usize,
    pub eta_above_one: usize,
    pub mean_eta: f64,
}

/// Learned offsets and the final loss for one period and kernel.
pub fn fit_offsets(config: &CompensationConfig, period: f64, interp: InterpKernel) -> Result<(Vec<f64>, f64)> {
    let s = config.kernel_size;
    let len = config.length;
    let mut spec = SignalSpec::fractional_sine(period, len);
    spec.noise_std = config.noise_std;
    spec.seed = config.seed;
    let (series, _) = generate(&spec)?;
    let x = series.sample(0);

    let half = (s / 2) as isize;
    let target = Features::from_fn(s, len, |j, p0| {
        let pc = p0 as f64 + period * (j as isize - half) as f64;
        if (0.0..=(len - 1) as f64).contains(&pc) {
            (2.0 * PI * pc / period).sin()
        } else {
            0.0
        }
    });

    let cfg = DefOpConfig::new(s, period.floor() as usize, 1, s, interp).with_offset_mode(OffsetMode::Free);
    // Weights are fixed below, so the RNG only fills values that get overwritten.
    let mut op = DefOp::new(cfg, &mut SeededRng::new(config.seed))?;
    op.weight.value = (0..s * s).map(|i| if i / s == i % s { 1.0 } else { 0.0 }).collect();
    op.bias.value.iter_mut().for_each(|b| *b = 0.0);
    op.weight.frozen = true;
    op.bias.frozen = true;

    let mut opt = Optimizer::new(OptimizerConfig::Sgd {
        lr: config.lr,
        momentum: 0.0,
    })?;
    let mut loss = f64::NAN;
    for step in 0..config.steps {
        op.zero_grad();
        let (y, cache) = op.forward(&x)?;
        let (l, grad) = mse_loss(y.data(), target.data())?;
        if !l.is_finite() {
            return Err(Error::Runtime(format!("compensation bench diverged at step {step} for period {period}")));
        }
        loss = l;
        op.backward(&cache, &Features::new(s, len, grad)?)?;
        opt.step(&mut op)?;
    }
    Ok((op.offset_bias.value.clone(), loss))
}

fn mae(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

pub fn run_compensation(
    config: &CompensationConfig,
    threads: usize,
) -> Result<(Vec<CompensationRow>, CompensationSummary)> {
    config.validate()?;
    let gaussian = config.gaussian_kernel()?;
    let rows = run_cases(threads, &config.periods, |&period| {
        let theory = theoretical_offsets(period, config.kernel_size);
        let (lin, loss_lin) = fit_offsets(config, period, InterpKernel::Bilinear)?;
        let (gau, loss_gau) = fit_offsets(config, period, gaussian)?;
        let (e_lin, e_gau) = (mae(&lin, &theory), mae(&gau, &theory));
        Ok(CompensationRow {
            period,
            dilation: period.floor() as usize,
            mae_linear: e_lin,
            mae_gaussian: e_gau,
            eta: e_lin / e_gau,
            theoretical_offsets: fmt_vec(&theory),
            learned_linear: fmt_vec(&lin),
            learned_gaussian: fmt_vec(&gau),
            final_loss_linear: loss_lin,
            final_loss_gaussian: loss_gau,
        })
    })?;
    let summary = CompensationSummary {
        cases: rows.len(),
        eta_above_one: rows.iter().filter(|r| r.eta > 1.0).count(),
        mean_eta: rows.iter().map(|r| r.eta).sum::<f64>() / rows.len() as f64,
    };
    Ok((rows, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_periods_are_rejected() {
        let cfg = CompensationConfig {
            periods: vec![8.5, 12.0],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn theoretical_column_for_ten_and_a_half() {
        let cfg = CompensationConfig {
            periods: vec![10.5],
            steps: 2,
            length: 64,
            ..Default::default()
        };
        let (rows, s) = run_compensation(&cfg, 1).unwrap();
        assert_eq!(s.cases, 1);
        assert_eq!(rows[0].dilation, 10);
        assert_eq!(rows[0].theoretical_offsets, "-0.500000000 0.000000000 0.500000000");
    }

    #[test]
    fn zero_steps_leave_offsets_at_zero() {
        let cfg = CompensationConfig {
            periods: vec![8.3],
            steps: 0,
            length: 64,
            ..Default::default()
        };
        let (lin, _) = fit_offsets(&cfg, 8.3, InterpKernel::Bilinear).unwrap();
        assert_eq!(lin, vec![0.0; 3]);
    }
}
