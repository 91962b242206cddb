//! Gradient-oracle suites: analytic backward passes against central finite
//! differences, per scope.

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, StageSpec, TaskHead};
use crate::deform::{DefOp, DefOpConfig};
use crate::error::{Error, Result};
use crate::experiments::perturb_params;
use crate::fgdm::{assign_routes, FgdmBlock, FgdmConfig, RouteAssignment};
use crate::interp::{interp_bilinear, interp_gaussian, interp_grad_features, InterpKernel};
use crate::nn::Layer;
use crate::numerics::{finite_diff_grad, Features, SeededRng, DEFAULT_FD_STEP};
use crate::training::{gradcheck_model, Fault, GradcheckConfig, GradcheckReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradcheckScope {
    Interp,
    Defop,
    Fgdm,
    Backbone,
}

impl GradcheckScope {
    pub fn default_tolerance(self) -> f64 {
        match self {
            Self::Interp => 1e-6,
            Self::Defop | Self::Fgdm => 1e-5,
            Self::Backbone => 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSuiteConfig {
    pub scope: GradcheckScope,
    #[serde(default)]
    pub seed: u64,
    /// Defaults per scope: 1e-6 interp, 1e-5 defop/fgdm, 1e-4 backbone.
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Random cases for the interpolation scope.
    #[serde(default = "default_cases")]
    pub cases: usize,
    /// Corrupts one analytic gradient to prove the harness catches it.
    #[serde(default)]
    pub inject_fault: bool,
}

fn default_cases() -> usize {
    1000
}

impl GradcheckSuiteConfig {
    pub fn new(scope: GradcheckScope, seed: u64) -> Self {
        Self {
            scope,
            seed,
            tolerance: None,
            cases: default_cases(),
            inject_fault: false,
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance.unwrap_or_else(|| self.scope.default_tolerance())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub case: String,
    pub group: String,
    pub count: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub scope: GradcheckScope,
    pub passed: bool,
    pub max_error: f64,
    pub worst: String,
    pub fault_injected: bool,
}

/// Below this gradient magnitude the interpolation suite compares absolutely.
const SMALL_GRADIENT: f64 = 1e-3;
const ABS_FLOOR: f64 = 1e-9;

pub fn run_gradcheck(config: &GradcheckSuiteConfig) -> Result<(Vec<GradcheckRow>, GradcheckSummary)> {
    let tol = config.tolerance();
    if !(tol > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let rows = match config.scope {
        GradcheckScope::Interp => interp_suite(config, tol)?,
        GradcheckScope::Defop => model_suite(config, tol, defop_cases(config.seed)?)?,
        GradcheckScope::Fgdm => model_suite(config, tol, fgdm_cases(config.seed)?)?,
        GradcheckScope::Backbone => model_suite(config, tol, backbone_cases(config.seed)?)?,
    };
    let worst = rows
        .iter()
        .max_by(|a, b| (a.max_error / a.tolerance).total_cmp(&(b.max_error / b.tolerance)))
        .ok_or_else(|| Error::Invariant("gradcheck produced no rows".into()))?;
    let summary = GradcheckSummary {
        scope: config.scope,
        passed: rows.iter().all(|r| r.passed),
        max_error: worst.max_error,
        worst: format!("{}/{}", worst.case, worst.group),
        fault_injected: config.inject_fault,
    };
    Ok((rows, summary))
}

fn row(case: &str, group: &str, count: usize, max_error: f64, tolerance: f64) -> GradcheckRow {
    GradcheckRow {
        case: case.into(),
        group: group.into(),
        count,
        max_error,
        tolerance,
        passed: max_error <= tolerance,
    }
}

/// Random `(x, p, σ, radius)` cases: position and feature gradients of the
/// Gaussian interpolant, and the bilinear gradient law.
fn interp_suite(config: &GradcheckSuiteConfig, tol: f64) -> Result<Vec<GradcheckRow>> {
    let mut rng = SeededRng::new(config.seed);
    let fault = if config.inject_fault { 0.1 } else { 0.0 };
    let (mut rel_max, mut rel_n) = (0.0f64, 0);
    let (mut abs_max, mut abs_n) = (0.0f64, 0);
    let mut feat_max = 0.0f64;
    let mut bl_max = 0.0f64;
    let h = DEFAULT_FD_STEP;
    for _ in 0..config.cases {
        let x: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        let p = rng.uniform(1.0, 14.0);
        let sigma = rng.uniform(0.3, 2.0);
        let radius = 2 + rng.below(3);
        let kernel = InterpKernel::gaussian_with_radius(sigma, radius)?;

        let analytic = interp_gaussian(&x, p, &kernel)?.dvalue_dp + fault;
        let numeric = finite_diff_grad(|v| interp_gaussian(&x, v[0], &kernel).map_or(f64::NAN, |r| r.value), &[p], h)?[0];
        let mag = analytic.abs().max(numeric.abs());
        if mag < SMALL_GRADIENT {
            abs_max = abs_max.max((analytic - numeric).abs());
            abs_n += 1;
        } else {
            rel_max = rel_max.max((analytic - numeric).abs() / mag);
            rel_n += 1;
        }

        let grads = interp_grad_features(&x, p, &kernel)?;
        let fd = finite_diff_grad(|v| interp_gaussian(v, p, &kernel).map_or(f64::NAN, |r| r.value), &x, h)?;
        for (q, g) in grads {
            let m = g.abs().max(fd[q].abs()).max(SMALL_GRADIENT);
            feat_max = feat_max.max((g - fd[q]).abs() / m);
        }

        // Bilinear: the position gradient is x(q_R) − x(q_L), constant on the open cell.
        let r = interp_bilinear(&x, p)?;
        let ql = p.floor() as usize;
        let law = x[ql + 1] - x[ql];
        let inner = ql as f64 + rng.uniform(0.05, 0.95);
        let r2 = interp_bilinear(&x, inner)?;
        let mismatch = (r.dvalue_dp - law).abs() + (r2.dvalue_dp - law).abs();
        bl_max = bl_max.max(mismatch);
    }
    Ok(vec![
        row("gaussian", "dvalue_dp (relative)", rel_n, rel_max, tol),
        row("gaussian", "dvalue_dp (absolute, small gradients)", abs_n, abs_max, ABS_FLOOR),
        row("gaussian", "dvalue_dx", config.cases, feat_max, tol),
        row("bilinear", "dvalue_dp law (exact)", config.cases, bl_max, 0.0),
    ])
}

enum Case {
    DefOp(DefOp),
    Fgdm(FgdmBlock),
    Backbone(Backbone),
}

struct ModelCase {
    name: String,
    model: Case,
    input: Features,
}

fn kernels() -> Result<[InterpKernel; 2]> {
    Ok([InterpKernel::Bilinear, InterpKernel::gaussian(1.0)?])
}

fn random_input(rng: &mut SeededRng, channels: usize, len: usize) -> Features {
    Features::from_fn(channels, len, |_, _| rng.normal())
}

fn defop_cases(seed: u64) -> Result<Vec<ModelCase>> {
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::new();
    for interp in kernels()? {
        let cfg = DefOpConfig::new(3, 3, 2, 2, interp);
        let mut op = DefOp::new(cfg, &mut rng)?;
        perturb_params(&mut op, &mut rng, 0.5);
        out.push(ModelCase {
            name: format!("defop[{}]", interp.name()),
            model: Case::DefOp(op),
            input: random_input(&mut rng, 2, 24),
        });
    }
    Ok(out)
}

fn fgdm_cases(seed: u64) -> Result<Vec<ModelCase>> {
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::new();
    for interp in kernels()? {
        for (n, c) in [(2, 4), (3, 6)] {
            let cfg = FgdmConfig::new(n, interp);
            let routes = RouteAssignment {
                routes: assign_routes(None, &cfg)?
                    .routes
                    .into_iter()
                    .enumerate()
                    .map(|(i, mut r)| {
                        r.period = 2 + i;
                        r
                    })
                    .collect(),
                warnings: Vec::new(),
            };
            let mut block = FgdmBlock::new("fgdm", cfg, c, routes, &mut rng)?;
            perturb_params(&mut block, &mut rng, 0.5);
            out.push(ModelCase {
                name: format!("fgdm[N={n},C={c},{}]", interp.name()),
                model: Case::Fgdm(block),
                input: random_input(&mut rng, c, 16),
            });
        }
    }
    Ok(out)
}

/// Two stages (the second downsampled by 2), N=2, C=4, forecast head.
pub fn toy_backbone_config(interp: InterpKernel) -> BackboneConfig {
    BackboneConfig {
        in_channels: 1,
        window: 16,
        stem_width: 4,
        stages: vec![
            StageSpec {
                blocks: 1,
                width: 4,
                downsample: 1,
            },
            StageSpec {
                blocks: 1,
                width: 4,
                downsample: 2,
            },
        ],
        fgdm: FgdmConfig::new(2, interp),
        head: TaskHead::Forecast { horizon: 4 },
    }
}

fn backbone_cases(seed: u64) -> Result<Vec<ModelCase>> {
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::new();
    for interp in kernels()? {
        let cfg = toy_backbone_config(interp);
        let mut routes = assign_routes(None, &cfg.fgdm)?;
        routes.routes[0].period = 4;
        let mut model = Backbone::new(cfg, routes, &mut rng)?;
        perturb_params(&mut model, &mut rng, 0.3);
        out.push(ModelCase {
            name: format!("backbone[{}]", interp.name()),
            model: Case::Backbone(model),
            input: random_input(&mut rng, 1, 16),
        });
    }
    Ok(out)
}

fn check<M: Layer>(model: &mut M, x: &Features, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    gradcheck_model(model, x, cfg)
}

fn model_suite(config: &GradcheckSuiteConfig, tol: f64, cases: Vec<ModelCase>) -> Result<Vec<GradcheckRow>> {
    let mut rows = Vec::new();
    for (i, mut case) in cases.into_iter().enumerate() {
        let mut gc = GradcheckConfig::new(tol, config.seed.wrapping_add(i as u64));
        if config.inject_fault && i == 0 {
            gc.fault = Some(Fault {
                target: "weight".into(),
                perturb: 0.1,
            });
        }
        let report = match &mut case.model {
            Case::DefOp(m) => check(m, &case.input, &gc)?,
            Case::Fgdm(m) => check(m, &case.input, &gc)?,
            Case::Backbone(m) => check(m, &case.input, &gc)?,
        };
        for g in report.groups {
            rows.push(row(&case.name, &g.name, g.count, g.max_rel_err, tol));
        }
    }
    Ok(rows)
}
