//! Analytic backward passes against central finite differences, beyond the
//! fixed cases of the built-in suites.

use anchor_core::backbone::{Backbone, BackboneConfig, StageSpec, TaskHead};
use anchor_core::deform::{DefOp, DefOpConfig, OffsetMode};
use anchor_core::experiments::gradcheck::{run_gradcheck, GradcheckScope, GradcheckSuiteConfig};
use anchor_core::experiments::perturb_params;
use anchor_core::fgdm::{assign_routes, FgdmBlock, FgdmConfig, RoutingOrder};
use anchor_core::interp::{interp_gaussian, Boundary, InterpKernel};
use anchor_core::numerics::finite_diff_grad;
use anchor_core::training::{gradcheck_model, Fault, GradcheckConfig};
use anchor_core::{Features, SeededRng};

fn input(rng: &mut SeededRng, c: usize, l: usize) -> Features {
    Features::from_fn(c, l, |_, _| rng.normal())
}

#[test]
fn suites_pass_at_other_seeds() {
    for scope in [GradcheckScope::Defop, GradcheckScope::Fgdm, GradcheckScope::Backbone] {
        for seed in [1, 2] {
            let (rows, summary) = run_gradcheck(&GradcheckSuiteConfig::new(scope, seed)).unwrap();
            assert!(summary.passed, "{scope:?} seed {seed}: {rows:?}");
        }
    }
}

#[test]
fn every_scope_catches_an_injected_fault() {
    for scope in [
        GradcheckScope::Interp,
        GradcheckScope::Defop,
        GradcheckScope::Fgdm,
        GradcheckScope::Backbone,
    ] {
        let mut cfg = GradcheckSuiteConfig::new(scope, 0);
        cfg.cases = 50;
        cfg.inject_fault = true;
        let (_, summary) = run_gradcheck(&cfg).unwrap();
        assert!(!summary.passed, "{scope:?} missed the fault");
    }
}

#[test]
fn renormalized_boundary_gradient() {
    let mut rng = SeededRng::new(8);
    let k = InterpKernel::gaussian(0.8).unwrap().with_boundary(Boundary::Renormalize);
    let x: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
    // Positions near and past both ends, away from the half-integer window switch.
    for p in [-1.2, -0.3, 0.2, 1.1, 10.3, 11.2, 12.4] {
        let a = interp_gaussian(&x, p, &k).unwrap().dvalue_dp;
        let n = finite_diff_grad(|v| interp_gaussian(&x, v[0], &k).unwrap().value, &[p], 1e-6).unwrap()[0];
        assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()).max(1e-3), "p={p}: {a} vs {n}");
    }
}

#[test]
fn free_offset_defop() {
    let mut rng = SeededRng::new(31);
    for interp in [InterpKernel::Bilinear, InterpKernel::gaussian(0.7).unwrap()] {
        let cfg = DefOpConfig::new(5, 2, 2, 3, interp).with_offset_mode(OffsetMode::Free);
        let mut op = DefOp::new(cfg, &mut rng).unwrap();
        perturb_params(&mut op, &mut rng, 0.4);
        let x = input(&mut rng, 2, 20);
        let report = gradcheck_model(&mut op, &x, &GradcheckConfig::new(1e-5, 3)).unwrap();
        assert!(report.passed, "{interp:?}: {report:?}");
    }
}

#[test]
fn descending_routes_and_wide_blocks() {
    let mut rng = SeededRng::new(41);
    let mut cfg = FgdmConfig::new(4, InterpKernel::gaussian(1.0).unwrap());
    cfg.routing_order = RoutingOrder::EnergyDescKernel;
    let mut routes = assign_routes(None, &cfg).unwrap();
    for (r, t) in routes.routes.iter_mut().zip([2, 3, 5]) {
        r.period = t;
    }
    let mut block = FgdmBlock::new("b", cfg, 8, routes, &mut rng).unwrap();
    perturb_params(&mut block, &mut rng, 0.3);
    let x = input(&mut rng, 8, 14);
    let report = gradcheck_model(&mut block, &x, &GradcheckConfig::new(1e-5, 4)).unwrap();
    assert!(report.passed, "{report:?}");
}

fn small_backbone(head: TaskHead) -> BackboneConfig {
    BackboneConfig {
        in_channels: 2,
        window: 12,
        stem_width: 4,
        stages: vec![
            StageSpec {
                blocks: 1,
                width: 4,
                downsample: 1,
            },
            StageSpec {
                blocks: 1,
                width: 6,
                downsample: 2,
            },
        ],
        fgdm: FgdmConfig::new(2, InterpKernel::gaussian(1.0).unwrap()),
        head,
    }
}

#[test]
fn reconstruction_and_classification_heads() {
    for head in [TaskHead::Reconstruction, TaskHead::Classification { classes: 3 }] {
        let mut rng = SeededRng::new(51);
        let cfg = small_backbone(head);
        let mut routes = assign_routes(None, &cfg.fgdm).unwrap();
        routes.routes[0].period = 4;
        let mut model = Backbone::new(cfg, routes, &mut rng).unwrap();
        perturb_params(&mut model, &mut rng, 0.3);
        let x = input(&mut rng, 2, 12);
        let report = gradcheck_model(&mut model, &x, &GradcheckConfig::new(1e-4, 5)).unwrap();
        assert!(report.passed, "{head:?}: {report:?}");
    }
}

#[test]
fn input_gradient_fault_is_reported_on_the_input_group() {
    let mut rng = SeededRng::new(61);
    // Offsets stay off: zero bilinear offsets sit on the kink at grid points.
    let cfg = DefOpConfig::new(3, 2, 1, 1, InterpKernel::Bilinear).with_offset_mode(OffsetMode::Off);
    let mut op = DefOp::new(cfg, &mut rng).unwrap();
    let x = input(&mut rng, 1, 10);
    let mut cfg = GradcheckConfig::new(1e-5, 0);
    cfg.fault = Some(Fault {
        target: "input".into(),
        perturb: 0.5,
    });
    let report = gradcheck_model(&mut op, &x, &cfg).unwrap();
    assert!(!report.passed);
    assert_eq!(report.worst_group, "input");
}
