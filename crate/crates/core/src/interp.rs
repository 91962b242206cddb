//! Sub-pixel sampling of a 1D sequence at a continuous coordinate.
//!
//! Two rules are provided: the C⁰ bilinear blend of the two neighbouring grid
//! points and a C∞ normalized Gaussian RBF over a window of grid points around
//! the target. Both return the sampled value, its derivative with respect to
//! the coordinate and the per-grid-point weights (which are also the feature
//! gradients). Grid points outside `[0, len)` read as zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Gaussian width, in grid units.
pub const DEFAULT_SIGMA: f64 = 1.0;

/// How out-of-range grid points in the Gaussian window are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Padded points read as zero but keep their weight in the normalizer.
    #[default]
    ZeroPad,
    /// Padded points are dropped and the weights renormalized over in-range points.
    Renormalize,
}

/// The sampling rule used by a deformable tap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InterpKernel {
    Bilinear,
    Gaussian {
        sigma: f64,
        radius: usize,
        #[serde(default)]
        boundary: Boundary,
    },
}

impl Default for InterpKernel {
    fn default() -> Self {
        InterpKernel::Gaussian {
            sigma: DEFAULT_SIGMA,
            radius: default_radius(DEFAULT_SIGMA),
            boundary: Boundary::ZeroPad,
        }
    }
}

/// `⌈3σ⌉`, clamped to at least 2.
pub fn default_radius(sigma: f64) -> usize {
    ((3.0 * sigma).ceil() as usize).max(2)
}

impl InterpKernel {
    /// Gaussian kernel with the default window radius.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("gaussian sigma must be > 0, got {sigma}")));
        }
        Self::gaussian_with_radius(sigma, default_radius(sigma))
    }

    pub fn gaussian_with_radius(sigma: f64, radius: usize) -> Result<Self> {
        let k = InterpKernel::Gaussian {
            sigma,
            radius,
            boundary: Boundary::ZeroPad,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn with_boundary(self, boundary: Boundary) -> Self {
        match self {
            InterpKernel::Gaussian { sigma, radius, .. } => InterpKernel::Gaussian {
                sigma,
                radius,
                boundary,
            },
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let InterpKernel::Gaussian { sigma, radius, .. } = *self {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::Config(format!("gaussian sigma must be > 0, got {sigma}")));
            }
            if radius < 1 {
                return Err(Error::Config("gaussian window radius must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            InterpKernel::Bilinear => "bilinear",
            InterpKernel::Gaussian { .. } => "gaussian",
        }
    }
}

/// Value, position derivative and grid weights of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpResult {
    pub value: f64,
    pub dvalue_dp: f64,
    /// `(grid index, normalized weight)` for every point of the stencil,
    /// including zero-padded ones.
    pub weights: Vec<(isize, f64)>,
}

/// One stencil point: grid index, weight, and the weight's derivative in `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub q: isize,
    pub alpha: f64,
    pub dalpha: f64,
}

/// Reusable stencil for sampling several channels at the same coordinate.
///
/// With the stencil in hand, `value = Σ α_q·x(q)` and
/// `∂value/∂p = Σ (∂α_q/∂p)·x(q)` for any sequence of the planned length.
#[derive(Debug, Clone, Default)]
pub struct Stencil {
    taps: Vec<Tap>,
    len: usize,
}

impl Stencil {
    pub fn new() -> Self {
        Self::default()
    }

    /// Plans the stencil for coordinate `p` on a grid of `len` points.
    pub fn plan(&mut self, kernel: &InterpKernel, p: f64, len: usize) {
        self.taps.clear();
        self.len = len;
        match *kernel {
            InterpKernel::Bilinear => {
                let fl = p.floor();
                let d = p - fl;
                let ql = fl as isize;
                self.taps.push(Tap {
                    q: ql,
                    alpha: 1.0 - d,
                    dalpha: -1.0,
                });
                self.taps.push(Tap {
                    q: ql + 1,
                    alpha: d,
                    dalpha: 1.0,
                });
            }
            InterpKernel::Gaussian {
                sigma,
                radius,
                boundary,
            } => {
                let center = p.round();
                // Distances are formed from the fractional part so that shifting
                // p by an integer reproduces the same weights exactly.
                let frac = p - center;
                let c = center as isize;
                let r = radius as isize;
                let inv2s2 = 1.0 / (2.0 * sigma * sigma);
                let mut total = 0.0;
                for k in -r..=r {
                    let q = c + k;
                    if boundary == Boundary::Renormalize && !in_range(q, len) {
                        continue;
                    }
                    let dist = k as f64 - frac; // q − p
                    let w = (-dist * dist * inv2s2).exp();
                    total += w;
                    // Stash q − p in `dalpha` until the weights are normalized.
                    self.taps.push(Tap {
                        q,
                        alpha: w,
                        dalpha: dist,
                    });
                }
                if total > 0.0 {
                    let mut mean_shift = 0.0;
                    for t in self.taps.iter_mut() {
                        t.alpha /= total;
                        mean_shift += t.alpha * t.dalpha;
                    }
                    let inv_s2 = 1.0 / (sigma * sigma);
                    for t in self.taps.iter_mut() {
                        t.dalpha = t.alpha * (t.dalpha - mean_shift) * inv_s2;
                    }
                }
            }
        }
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.len);
        let mut acc = 0.0;
        for t in &self.taps {
            if in_range(t.q, self.len) {
                acc += t.alpha * x[t.q as usize];
            }
        }
        acc
    }

    pub fn dvalue_dp(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for t in &self.taps {
            if in_range(t.q, self.len) {
                acc += t.dalpha * x[t.q as usize];
            }
        }
        acc
    }

    /// Value and position derivative in one pass.
    pub fn sample(&self, x: &[f64]) -> (f64, f64) {
        let mut v = 0.0;
        let mut dv = 0.0;
        for t in &self.taps {
            if in_range(t.q, self.len) {
                let xq = x[t.q as usize];
                v += t.alpha * xq;
                dv += t.dalpha * xq;
            }
        }
        (v, dv)
    }
}

#[inline]
pub(crate) fn in_range(q: isize, len: usize) -> bool {
    q >= 0 && (q as usize) < len
}

#[inline]
fn read(x: &[f64], q: isize) -> f64 {
    if in_range(q, x.len()) {
        x[q as usize]
    } else {
        0.0
    }
}

fn check_coordinate(p: f64) -> Result<()> {
    if !p.is_finite() {
        return Err(Error::Validation(format!("sampling coordinate must be finite, got {p}")));
    }
    Ok(())
}

/// Bilinear sample with `q_L = ⌊p⌋`, `d = p − q_L`.
///
/// The position derivative is `x(q_R) − x(q_L)`; at integer `p` this is the
/// right-hand derivative.
pub fn interp_bilinear(x: &[f64], p: f64) -> Result<InterpResult> {
    check_coordinate(p)?;
    if x.is_empty() {
        return Err(Error::Validation("cannot interpolate an empty sequence".into()));
    }
    let fl = p.floor();
    let d = p - fl;
    let ql = fl as isize;
    let (xl, xr) = (read(x, ql), read(x, ql + 1));
    Ok(InterpResult {
        value: xl * (1.0 - d) + xr * d,
        dvalue_dp: xr - xl,
        weights: vec![(ql, 1.0 - d), (ql + 1, d)],
    })
}

/// Normalized Gaussian RBF sample over `|q − round(p)| ≤ radius`.
///
/// The position derivative is the mean-shift form
/// `(1/σ²)·Σ α_q·(q − p)·[x(q) − x(p)]`.
pub fn interp_gaussian(x: &[f64], p: f64, kernel: &InterpKernel) -> Result<InterpResult> {
    kernel.validate()?;
    let InterpKernel::Gaussian { sigma, .. } = *kernel else {
        return Err(Error::Config("interp_gaussian requires a Gaussian kernel".into()));
    };
    check_coordinate(p)?;
    let mut st = Stencil::new();
    st.plan(kernel, p, x.len());
    let value = st.value(x);
    let inv_s2 = 1.0 / (sigma * sigma);
    let dvalue_dp = inv_s2
        * st
            .taps()
            .iter()
            .map(|t| t.alpha * (t.q as f64 - p) * (read(x, t.q) - value))
            .sum::<f64>();
    Ok(InterpResult {
        value,
        dvalue_dp,
        weights: st.taps().iter().map(|t| (t.q, t.alpha)).collect(),
    })
}

/// Dispatches on the kernel kind.
pub fn interpolate(x: &[f64], p: f64, kernel: &InterpKernel) -> Result<InterpResult> {
    match kernel {
        InterpKernel::Bilinear => interp_bilinear(x, p),
        InterpKernel::Gaussian { .. } => interp_gaussian(x, p, kernel),
    }
}

/// `∂value/∂x(q)` for every in-range grid point of the stencil.
pub fn interp_grad_features(x: &[f64], p: f64, kernel: &InterpKernel) -> Result<Vec<(usize, f64)>> {
    let res = interpolate(x, p, kernel)?;
    Ok(res
        .weights
        .into_iter()
        .filter(|(q, _)| in_range(*q, x.len()))
        .map(|(q, w)| (q as usize, w))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, SeededRng};

    fn g(sigma: f64, radius: usize) -> InterpKernel {
        InterpKernel::gaussian_with_radius(sigma, radius).unwrap()
    }

    #[test]
    fn bilinear_examples() {
        let r = interp_bilinear(&[0.0, 10.0], 0.3).unwrap();
        assert!((r.value - 3.0).abs() < 1e-12);
        assert_eq!(r.dvalue_dp, 10.0);

        for p in [0.0, 0.25, 1.0, 1.7, 2.0 - 1e-9] {
            let r = interp_bilinear(&[5.0, 5.0, 5.0], p).unwrap();
            assert!((r.value - 5.0).abs() < 1e-12);
            assert_eq!(r.dvalue_dp, 0.0);
        }

        let r = interp_bilinear(&[2.0, 8.0], 1.5).unwrap();
        assert_eq!(r.value, 4.0);
        assert_eq!(r.dvalue_dp, -8.0);
        assert!(interp_bilinear(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn bilinear_integer_uses_right_derivative() {
        let r = interp_bilinear(&[1.0, 4.0, 2.0], 1.0).unwrap();
        assert_eq!(r.value, 4.0);
        assert_eq!(r.dvalue_dp, 2.0 - 4.0);
    }

    #[test]
    fn gaussian_examples() {
        let r = interp_gaussian(&[5.0, 5.0, 5.0], 1.0, &g(1.0, 1)).unwrap();
        assert!((r.value - 5.0).abs() < 1e-12);
        assert_eq!(r.dvalue_dp, 0.0);

        let r = interp_gaussian(&[1.0, 2.0, 1.0], 1.0, &g(0.8, 1)).unwrap();
        assert!(r.value > 1.0 && r.value < 2.0);
        assert!(r.dvalue_dp.abs() < 1e-15);
    }

    #[test]
    fn gaussian_direct_formula() {
        // x=[1,2,4], p=1.5, σ=1, radius 2: round(1.5)=2, window q ∈ {0..4};
        // q=3,4 are padded (value 0, weight kept).
        // p=1.5 is where round() switches windows, so the derivative is taken
        // on the fixed window the interpolant uses at p.
        let x = [1.0, 2.0, 4.0];
        let p = 1.5;
        let direct = |p: f64| {
            let w: Vec<f64> = (0..5).map(|q| (-((p - q as f64).powi(2)) / 2.0).exp()).collect();
            let total: f64 = w.iter().sum();
            let xs = [1.0, 2.0, 4.0, 0.0, 0.0];
            w.iter().zip(&xs).map(|(a, b)| a * b).sum::<f64>() / total
        };
        let r = interp_gaussian(&x, p, &g(1.0, 2)).unwrap();
        assert!((r.value - direct(p)).abs() < 1e-14);
        let fd = finite_diff_grad(|v| direct(v[0]), &[p], 1e-5).unwrap();
        assert!((r.dvalue_dp - fd[0]).abs() < 1e-9);
        // Just inside the window the full interpolant agrees as well.
        let q = 1.5 + 1e-3;
        let fd = finite_diff_grad(|v| interp_gaussian(&x, v[0], &g(1.0, 2)).unwrap().value, &[q], 1e-5).unwrap();
        let a = interp_gaussian(&x, q, &g(1.0, 2)).unwrap().dvalue_dp;
        assert!((a - fd[0]).abs() < 1e-9);
    }

    #[test]
    fn stencil_matches_mean_shift_form() {
        let mut rng = SeededRng::new(4);
        let x: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        let mut st = Stencil::new();
        for _ in 0..200 {
            let p = rng.uniform(-2.0, 17.0);
            let k = g(rng.uniform(0.3, 2.0), 1 + rng.below(4));
            let r = interp_gaussian(&x, p, &k).unwrap();
            st.plan(&k, p, x.len());
            let (v, dv) = st.sample(&x);
            assert!((v - r.value).abs() < 1e-13);
            assert!((dv - r.dvalue_dp).abs() < 1e-12 * (1.0 + dv.abs()));
        }
    }

    #[test]
    fn grad_features_examples() {
        let gf = interp_grad_features(&[1.0, 2.0, 3.0], 0.3, &InterpKernel::Bilinear).unwrap();
        assert_eq!(gf.len(), 2);
        assert_eq!(gf[0].0, 0);
        assert!((gf[0].1 - 0.7).abs() < 1e-15);
        assert_eq!(gf[1].0, 1);
        assert!((gf[1].1 - 0.3).abs() < 1e-15);

        let x = [0.0; 11];
        let gf = interp_grad_features(&x, 5.0, &g(1.0, 2)).unwrap();
        let weight = |q: usize| gf.iter().find(|(i, _)| *i == q).unwrap().1;
        for k in 1..=2 {
            assert_eq!(weight(5 - k), weight(5 + k));
        }
    }

    #[test]
    fn grad_features_match_finite_differences() {
        let mut rng = SeededRng::new(77);
        for _ in 0..50 {
            let x: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
            let p = rng.uniform(0.0, 11.0);
            let k = g(rng.uniform(0.4, 1.8), 3);
            let analytic = interp_grad_features(&x, p, &k).unwrap();
            let fd = finite_diff_grad(|v| interp_gaussian(v, p, &k).unwrap().value, &x, 1e-5).unwrap();
            for (q, a) in analytic {
                let n = fd[q];
                assert!((a - n).abs() <= 1e-7 * a.abs().max(n.abs()).max(1e-3), "q={q} {a} vs {n}");
            }
        }
    }

    #[test]
    fn padded_points_get_no_feature_gradient() {
        let gf = interp_grad_features(&[1.0, 2.0], 1.6, &g(1.0, 3)).unwrap();
        assert!(gf.iter().all(|(q, _)| *q < 2));
        let r = interp_gaussian(&[1.0, 2.0], 1.6, &g(1.0, 3)).unwrap();
        let sum: f64 = r.weights.iter().map(|w| w.1).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn renormalize_ignores_padding() {
        let k = g(1.0, 3).with_boundary(Boundary::Renormalize);
        let r = interp_gaussian(&[2.0, 2.0], 1.6, &k).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!(r.weights.iter().all(|(q, _)| *q == 0 || *q == 1));
        let fd = finite_diff_grad(|v| interp_gaussian(&[1.0, 3.0], v[0], &k).unwrap().value, &[0.7], 1e-6)
            .unwrap();
        let a = interp_gaussian(&[1.0, 3.0], 0.7, &k).unwrap().dvalue_dp;
        assert!((a - fd[0]).abs() < 1e-8);
    }

    #[test]
    fn config_validation() {
        assert!(InterpKernel::gaussian(0.0).is_err());
        assert!(InterpKernel::gaussian(-1.0).is_err());
        assert!(InterpKernel::gaussian_with_radius(1.0, 0).is_err());
        assert!(interp_gaussian(&[1.0], 0.0, &InterpKernel::Bilinear).is_err());
        let bad = InterpKernel::Gaussian {
            sigma: 1.0,
            radius: 0,
            boundary: Boundary::ZeroPad,
        };
        assert!(matches!(interp_gaussian(&[1.0], 0.0, &bad), Err(Error::Config(_))));
        assert_eq!(default_radius(1.0), 3);
        assert_eq!(default_radius(0.3), 2);
        assert_eq!(default_radius(1.5), 5);
    }

    #[test]
    fn sharp_sigma_reproduces_grid_values() {
        let x = [0.3, -1.2, 4.0, 2.5, 0.0, 7.0];
        let k = g(0.1, 3);
        for q in 0..x.len() {
            let r = interp_gaussian(&x, q as f64, &k).unwrap();
            assert!((r.value - x[q]).abs() < 1e-8);
        }
    }

    #[test]
    fn gaussian_gradient_reaches_distant_impulse() {
        let mut x = [0.0; 16];
        x[8] = 1.0;
        let k = g(1.5, 6);
        assert!(interp_gaussian(&x, 4.0, &k).unwrap().dvalue_dp.abs() > 0.0);
        assert_eq!(interp_bilinear(&x, 4.0).unwrap().dvalue_dp, 0.0);
    }
}
