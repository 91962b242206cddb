//! Frequency-guided deformable module (FGDM).
//!
//! The input channels are split into `N` equal partitions. Partition 0 seeds
//! the cascade; stage `i ∈ 1..N` runs a deformable operator `D_i` (kernel
//! `K_i`, dilation anchored at the period routed to that stage) on the
//! running state and combines it with partition `i`:
//!
//! ```text
//! d     = D_i(y_{i-1})                      width i·g → i·g
//! left  = φc_i(x_i) + d                     φc_i: g → i·g
//! right = d ⊙ φv_i(y_{i-1})                 φv_i: i·g → i·g
//! y_i   = φf_i([left ∥ right])              φf_i: 2i·g → (i+1)·g
//! ```
//!
//! with `g = C/N`, so `y_{N-1}` has the full width `C`. The concatenation
//! doubles the width, and the fusion projection `φf_i` brings it back onto
//! the `(i+1)·g` growth law.

use serde::{Deserialize, Serialize};

use crate::deform::{DefOp, DefOpCache, DefOpConfig, OffsetMode};
use crate::error::{Error, Result};
use crate::interp::InterpKernel;
use crate::nn::{Layer, Module, Param, Pointwise, PointwiseCache};
use crate::numerics::{Features, SeededRng};
use crate::spectral::SpectralPrior;

/// How energy-ranked periods are paired with the increasing kernel schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingOrder {
    /// Highest-energy period on the smallest kernel.
    #[default]
    EnergyAscKernel,
    /// Highest-energy period on the largest kernel.
    EnergyDescKernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FgdmConfig {
    pub partitions: usize,
    pub kernel_schedule: Vec<usize>,
    #[serde(default)]
    pub interp: InterpKernel,
    #[serde(default)]
    pub routing_order: RoutingOrder,
    pub topk: usize,
    #[serde(default)]
    pub offset_mode: OffsetMode,
}

impl FgdmConfig {
    /// `partitions` stages with kernels 3, 5, 7, …
    pub fn new(partitions: usize, interp: InterpKernel) -> Self {
        let stages = partitions.saturating_sub(1);
        Self {
            partitions,
            kernel_schedule: (0..stages).map(|i| 3 + 2 * i).collect(),
            interp,
            routing_order: RoutingOrder::EnergyAscKernel,
            topk: stages,
            offset_mode: OffsetMode::Predicted,
        }
    }

    pub fn stages(&self) -> usize {
        self.partitions - 1
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.partitions < 2 {
            return Err(Error::Config(format!(
                "FGDM needs at least 2 partitions, got {}",
                self.partitions
            )));
        }
        if channels % self.partitions != 0 {
            return Err(Error::Config(format!(
                "channel count {channels} is not divisible by {} partitions",
                self.partitions
            )));
        }
        if self.kernel_schedule.len() != self.partitions - 1 {
            return Err(Error::Config(format!(
                "kernel schedule has {} entries, expected {}",
                self.kernel_schedule.len(),
                self.partitions - 1
            )));
        }
        if self.kernel_schedule.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config("kernel sizes must be odd".into()));
        }
        if self.kernel_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("kernel schedule must be strictly increasing".into()));
        }
        if self.topk != self.partitions - 1 {
            return Err(Error::Config(format!(
                "top-k ({}) must equal the number of stages ({})",
                self.topk,
                self.partitions - 1
            )));
        }
        self.interp.validate()
    }
}

/// Splits `[C × L]` into `n` contiguous `[C/n × L]` partitions.
pub fn channel_split(x: &Features, n: usize) -> Result<Vec<Features>> {
    if n < 2 {
        return Err(Error::Config(format!("channel split needs at least 2 partitions, got {n}")));
    }
    if x.channels() % n != 0 {
        return Err(Error::Config(format!(
            "channel count {} is not divisible by {n}",
            x.channels()
        )));
    }
    let g = x.channels() / n;
    Ok((0..n).map(|i| x.channel_range(i * g, g)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    /// 1-based cascade stage.
    pub stage: usize,
    pub kernel: usize,
    pub period: usize,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteAssignment {
    pub routes: Vec<Route>,
    pub warnings: Vec<String>,
}

impl RouteAssignment {
    pub fn periods(&self) -> Vec<usize> {
        self.routes.iter().map(|r| r.period).collect()
    }

    /// The same routes on a grid downsampled by `stride` (periods floor-divided, min 1).
    pub fn at_stride(&self, stride: usize) -> RouteAssignment {
        let stride = stride.max(1);
        RouteAssignment {
            routes: self
                .routes
                .iter()
                .map(|r| Route {
                    period: (r.period / stride).max(1),
                    ..r.clone()
                })
                .collect(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Pairs energy-ranked periods with the kernel schedule.
///
/// `prior = None` means the input had no periodicity; every stage then falls
/// back to `T = 1`. With fewer periods than stages the ranked list is cycled.
pub fn assign_routes(prior: Option<&SpectralPrior>, config: &FgdmConfig) -> Result<RouteAssignment> {
    let stages = config.stages();
    if config.kernel_schedule.len() != stages {
        return Err(Error::Config("kernel schedule length must equal partitions - 1".into()));
    }
    let mut warnings = Vec::new();
    let ranked: Vec<(usize, f64)> = match prior {
        None => {
            warnings.push("no periodicity detected; all stages use period 1".to_string());
            vec![(1, 0.0); stages]
        }
        Some(p) if p.k() == 0 => return Err(Error::Config("spectral prior holds no periods".into())),
        Some(p) => {
            let all: Vec<(usize, f64)> = (0..p.k()).map(|r| (p.periods()[r], p.energy_of_rank(r))).collect();
            if all.len() < stages {
                warnings.push(format!(
                    "prior has {} periods for {stages} stages; cycling periods",
                    all.len()
                ));
            }
            (0..stages).map(|i| all[i % all.len()]).collect()
        }
    };
    let routes = (0..stages)
        .map(|i| {
            let rank = match config.routing_order {
                RoutingOrder::EnergyAscKernel => i,
                RoutingOrder::EnergyDescKernel => stages - 1 - i,
            };
            Route {
                stage: i + 1,
                kernel: config.kernel_schedule[i],
                period: ranked[rank].0,
                energy: ranked[rank].1,
            }
        })
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(RouteAssignment { routes, warnings })
}

/// Multiply-accumulate counts of a full-width multi-branch block versus the
/// partitioned cascade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// `L·C²·Σ K_i`
    pub baseline: f64,
    /// `L·(C²/N²)·Σ i²·K_i`
    pub spatial: f64,
    /// `spatial / baseline = Σ i²K_i / (N²·Σ K_i)`
    pub ratio: f64,
    /// `C·L·log₂L` for the one-off spectral extraction.
    pub rfft: f64,
    /// `rfft / (rfft + spatial)`
    pub rfft_fraction: f64,
}

pub fn cost_model(channels: usize, len: usize, partitions: usize, kernels: &[usize]) -> Result<CostReport> {
    if partitions < 2 {
        return Err(Error::Config("cost model needs at least 2 partitions".into()));
    }
    if channels == 0 || len < 2 {
        return Err(Error::Config("cost model needs positive channels and length >= 2".into()));
    }
    if kernels.len() != partitions - 1 || kernels.contains(&0) {
        return Err(Error::Config(format!(
            "cost model needs {} positive kernel sizes, got {kernels:?}",
            partitions - 1
        )));
    }
    let k_sum: u64 = kernels.iter().map(|&k| k as u64).sum();
    let k_sq: u64 = kernels
        .iter()
        .enumerate()
        .map(|(i, &k)| ((i + 1) * (i + 1)) as u64 * k as u64)
        .sum();
    let (c, l, n) = (channels as f64, len as f64, partitions as f64);
    let baseline = l * c * c * k_sum as f64;
    let spatial = l * c * c * k_sq as f64 / (n * n);
    let ratio = k_sq as f64 / (partitions as u64 * partitions as u64 * k_sum) as f64;
    let rfft = c * l * l.log2();
    Ok(CostReport {
        baseline,
        spatial,
        ratio,
        rfft,
        rfft_fraction: rfft / (rfft + spatial),
    })
}

#[derive(Debug, Clone)]
struct Stage {
    defop: DefOp,
    phi_c: Pointwise,
    phi_v: Pointwise,
    phi_f: Pointwise,
}

struct StageCache {
    defop: DefOpCache,
    phi_c: PointwiseCache,
    phi_v: PointwiseCache,
    phi_f: PointwiseCache,
    d: Features,
    gate: Features,
}

pub struct FgdmCache {
    stages: Vec<StageCache>,
    group: usize,
}

/// One FGDM block over `C` channels.
#[derive(Debug, Clone)]
pub struct FgdmBlock {
    config: FgdmConfig,
    channels: usize,
    routes: RouteAssignment,
    stages: Vec<Stage>,
}

impl FgdmBlock {
    /// Builds the block with stage periods taken from `routes`.
    ///
    /// Deformable and gating weights are drawn uniformly in `±1/√fan_in`;
    /// offset predictors and the final fusion projection start at zero.
    pub fn new(
        name: &str,
        config: FgdmConfig,
        channels: usize,
        routes: RouteAssignment,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        config.validate(channels)?;
        check_routes(&config, &routes)?;
        let g = channels / config.partitions;
        let n_stages = config.stages();
        let mut stages = Vec::with_capacity(n_stages);
        for (idx, route) in routes.routes.iter().enumerate() {
            let i = idx + 1;
            let w = i * g;
            let dcfg = DefOpConfig::new(route.kernel, route.period, w, w, config.interp)
                .with_offset_mode(config.offset_mode);
            let prefix = format!("{name}.stage{i}");
            let defop = DefOp::new(dcfg, rng)?.with_prefix(&format!("{prefix}.defop"));
            let phi_c = Pointwise::new(&format!("{prefix}.phi_c"), g, w, rng);
            let phi_v = Pointwise::new(&format!("{prefix}.phi_v"), w, w, rng);
            let phi_f = if i == n_stages {
                Pointwise::zeros(&format!("{prefix}.phi_f"), 2 * w, w + g)
            } else {
                Pointwise::new(&format!("{prefix}.phi_f"), 2 * w, w + g, rng)
            };
            stages.push(Stage {
                defop,
                phi_c,
                phi_v,
                phi_f,
            });
        }
        Ok(Self {
            config,
            channels,
            routes,
            stages,
        })
    }

    pub fn config(&self) -> &FgdmConfig {
        &self.config
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn routes(&self) -> &RouteAssignment {
        &self.routes
    }

    /// Replaces the stage periods (kernels must match the schedule).
    pub fn set_routes(&mut self, routes: RouteAssignment) -> Result<()> {
        check_routes(&self.config, &routes)?;
        for (stage, r) in self.stages.iter_mut().zip(&routes.routes) {
            stage.defop.set_period(r.period)?;
        }
        self.routes = routes;
        Ok(())
    }

    pub fn set_interp(&mut self, interp: InterpKernel) -> Result<()> {
        for s in &mut self.stages {
            s.defop.set_interp(interp)?;
        }
        self.config.interp = interp;
        Ok(())
    }

    /// The deformable operator of 1-based stage `i`.
    pub fn defop(&self, i: usize) -> &DefOp {
        &self.stages[i - 1].defop
    }

    pub fn defop_mut(&mut self, i: usize) -> &mut DefOp {
        &mut self.stages[i - 1].defop
    }

    /// The gating projection `φv` of 1-based stage `i`.
    pub fn gate_mut(&mut self, i: usize) -> &mut Pointwise {
        &mut self.stages[i - 1].phi_v
    }

    /// The fusion projection `φf` of 1-based stage `i`.
    pub fn fusion_mut(&mut self, i: usize) -> &mut Pointwise {
        &mut self.stages[i - 1].phi_f
    }
}

fn check_routes(config: &FgdmConfig, routes: &RouteAssignment) -> Result<()> {
    if routes.routes.len() != config.stages() {
        return Err(Error::Config(format!(
            "{} routes for {} stages",
            routes.routes.len(),
            config.stages()
        )));
    }
    for (r, k) in routes.routes.iter().zip(&config.kernel_schedule) {
        if r.kernel != *k || r.period == 0 {
            return Err(Error::Config(format!("route {r:?} is inconsistent with the kernel schedule")));
        }
    }
    Ok(())
}

impl Module for FgdmBlock {
    fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.extend(s.defop.params());
            out.extend(s.phi_c.params());
            out.extend(s.phi_v.params());
            out.extend(s.phi_f.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            out.extend(s.defop.params_mut());
            out.extend(s.phi_c.params_mut());
            out.extend(s.phi_v.params_mut());
            out.extend(s.phi_f.params_mut());
        }
        out
    }
}

fn expect_width(f: &Features, width: usize, what: &str) -> Result<()> {
    if f.channels() != width {
        return Err(Error::Invariant(format!(
            "{what} has width {}, expected {width}",
            f.channels()
        )));
    }
    Ok(())
}

impl Layer for FgdmBlock {
    type Cache = FgdmCache;

    fn forward(&self, x: &Features) -> Result<(Features, FgdmCache)> {
        if x.channels() != self.channels {
            return Err(Error::Config(format!(
                "FGDM block expects {} channels, got {}",
                self.channels,
                x.channels()
            )));
        }
        let parts = channel_split(x, self.config.partitions)?;
        let g = self.channels / self.config.partitions;
        let mut y = parts[0].clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        for (idx, stage) in self.stages.iter().enumerate() {
            let i = idx + 1;
            expect_width(&y, i * g, "cascade state")?;
            let (d, defop) = stage.defop.forward(&y)?;
            let (mut left, phi_c) = stage.phi_c.forward(&parts[i])?;
            left.add_assign(&d);
            let (gate, phi_v) = stage.phi_v.forward(&y)?;
            let mut right = d.clone();
            for (r, v) in right.data_mut().iter_mut().zip(gate.data()) {
                *r *= v;
            }
            let cat = Features::concat(&[&left, &right])?;
            expect_width(&cat, 2 * i * g, "concatenated branches")?;
            let (next, phi_f) = stage.phi_f.forward(&cat)?;
            expect_width(&next, (i + 1) * g, "stage output")?;
            caches.push(StageCache {
                defop,
                phi_c,
                phi_v,
                phi_f,
                d,
                gate,
            });
            y = next;
        }
        expect_width(&y, self.channels, "block output")?;
        Ok((y, FgdmCache { stages: caches, group: g }))
    }

    fn backward(&mut self, cache: &FgdmCache, dy: &Features) -> Result<Features> {
        if cache.stages.len() != self.stages.len() {
            return Err(Error::Usage("FGDM cache does not belong to this block".into()));
        }
        if dy.channels() != self.channels {
            return Err(Error::Config(format!(
                "FGDM backward expects {} gradient channels, got {}",
                self.channels,
                dy.channels()
            )));
        }
        let g = cache.group;
        let mut dparts: Vec<Features> = Vec::with_capacity(self.config.partitions);
        let mut dstate = dy.clone();
        for idx in (0..self.stages.len()).rev() {
            let i = idx + 1;
            let w = i * g;
            let stage = &mut self.stages[idx];
            let sc = &cache.stages[idx];
            let dcat = stage.phi_f.backward(&sc.phi_f, &dstate)?;
            let dleft = dcat.channel_range(0, w);
            let dright = dcat.channel_range(w, w);

            let mut dd = dleft.clone();
            for ((a, r), v) in dd.data_mut().iter_mut().zip(dright.data()).zip(sc.gate.data()) {
                *a += r * v;
            }
            let mut dgate = dright;
            for (r, d) in dgate.data_mut().iter_mut().zip(sc.d.data()) {
                *r *= d;
            }

            dparts.push(stage.phi_c.backward(&sc.phi_c, &dleft)?);
            let mut dprev = stage.defop.backward(&sc.defop, &dd)?;
            dprev.add_assign(&stage.phi_v.backward(&sc.phi_v, &dgate)?);
            dstate = dprev;
        }
        dparts.push(dstate);
        dparts.reverse();
        let refs: Vec<&Features> = dparts.iter().collect();
        Features::concat(&refs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::topk_periods;

    fn prior(len: usize, peaks: &[(usize, f64)], k: usize) -> SpectralPrior {
        let mut e = vec![0.0; len / 2 + 1];
        for &(f, v) in peaks {
            e[f] = v;
        }
        topk_periods(&e, k, len).unwrap()
    }

    #[test]
    fn split_examples() {
        let x = Features::from_fn(8, 5, |c, t| (c * 5 + t) as f64);
        let parts = channel_split(&x, 4).unwrap();
        assert_eq!(parts.len(), 4);
        assert!(parts.iter().all(|p| p.shape() == (2, 5)));
        let refs: Vec<&Features> = parts.iter().collect();
        assert_eq!(Features::concat(&refs).unwrap(), x);
        assert!(matches!(channel_split(&x, 1), Err(Error::Config(_))));
        assert!(matches!(channel_split(&x, 3), Err(Error::Config(_))));
    }

    #[test]
    fn routing_examples() {
        // Periods by energy: 24 (f=4), 10 (f=9), 6 (f=16) on L=96.
        let p = prior(96, &[(4, 10.0), (9, 7.0), (16, 3.0)], 3);
        assert_eq!(p.periods(), &[24, 10, 6]);
        let mut cfg = FgdmConfig::new(4, InterpKernel::Bilinear);
        let asc = assign_routes(Some(&p), &cfg).unwrap();
        let pairs: Vec<(usize, usize)> = asc.routes.iter().map(|r| (r.kernel, r.period)).collect();
        assert_eq!(pairs, vec![(3, 24), (5, 10), (7, 6)]);
        assert!(asc.warnings.is_empty());

        cfg.routing_order = RoutingOrder::EnergyDescKernel;
        let desc = assign_routes(Some(&p), &cfg).unwrap();
        let pairs: Vec<(usize, usize)> = desc.routes.iter().map(|r| (r.kernel, r.period)).collect();
        assert_eq!(pairs, vec![(3, 6), (5, 10), (7, 24)]);

        let p2 = prior(96, &[(4, 10.0), (9, 7.0)], 2);
        cfg.routing_order = RoutingOrder::EnergyAscKernel;
        let cyc = assign_routes(Some(&p2), &cfg).unwrap();
        let pairs: Vec<(usize, usize)> = cyc.routes.iter().map(|r| (r.kernel, r.period)).collect();
        assert_eq!(pairs, vec![(3, 24), (5, 10), (7, 24)]);
        assert_eq!(cyc.warnings.len(), 1);

        let flat = assign_routes(None, &cfg).unwrap();
        assert!(flat.routes.iter().all(|r| r.period == 1));
    }

    #[test]
    fn config_guards() {
        let cfg = FgdmConfig::new(4, InterpKernel::Bilinear);
        assert!(cfg.validate(8).is_ok());
        assert!(cfg.validate(6).is_err());
        let mut bad = cfg.clone();
        bad.topk = 2;
        assert!(bad.validate(8).is_err());
        let mut bad = cfg.clone();
        bad.kernel_schedule = vec![3, 3, 5];
        assert!(bad.validate(8).is_err());
        let mut bad = cfg;
        bad.kernel_schedule = vec![3, 5];
        assert!(bad.validate(8).is_err());
        assert!(FgdmConfig::new(1, InterpKernel::Bilinear).validate(4).is_err());
    }

    #[test]
    fn cost_examples() {
        let c = cost_model(8, 96, 4, &[3, 5, 7]).unwrap();
        assert_eq!(c.baseline, 92160.0);
        assert_eq!(c.spatial, 33024.0);
        assert_eq!(c.ratio, 33024.0 / 92160.0);
        let c2 = cost_model(6, 50, 2, &[9]).unwrap();
        assert_eq!(c2.ratio, 0.25);
        assert!(cost_model(8, 96, 1, &[]).is_err());
        assert!(cost_model(8, 96, 3, &[3]).is_err());
    }

    #[test]
    fn stage_widths_follow_growth_law() {
        let mut rng = SeededRng::new(5);
        let cfg = FgdmConfig::new(4, InterpKernel::default());
        let routes = assign_routes(None, &cfg).unwrap();
        let block = FgdmBlock::new("b", cfg, 12, routes, &mut rng).unwrap();
        for i in 1..4 {
            let d = block.defop(i).config();
            assert_eq!(d.in_channels, i * 3);
            assert_eq!(d.out_channels, i * 3);
            assert_eq!(block.stages[i - 1].phi_f.out_channels(), (i + 1) * 3);
        }
        let x = Features::from_fn(12, 20, |c, t| ((c + 2 * t) as f64).sin());
        assert_eq!(block.forward(&x).unwrap().0.shape(), (12, 20));
    }
}
