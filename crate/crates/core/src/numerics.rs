//! Dense containers, seeded randomness, the real FFT and the central
//! finite-difference oracle.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "{what}: non-finite value {} at flat index {i}",
            data[i]
        )));
    }
    Ok(())
}

/// A batch of multichannel series, laid out `[batch][channel][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesBatch {
    batch: usize,
    channels: usize,
    len: usize,
    data: Vec<f64>,
}

impl SeriesBatch {
    pub fn new(batch: usize, channels: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if batch == 0 || channels == 0 || len == 0 {
            return Err(Error::Validation(format!(
                "series batch dims must be positive, got {batch}x{channels}x{len}"
            )));
        }
        if data.len() != batch * channels * len {
            return Err(Error::Validation(format!(
                "series batch expects {} values, got {}",
                batch * channels * len,
                data.len()
            )));
        }
        check_finite(&data, "series batch")?;
        Ok(Self {
            batch,
            channels,
            len,
            data,
        })
    }

    /// Stacks per-sample feature maps of identical shape.
    pub fn from_samples(samples: &[Features]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Validation("cannot build a batch from zero samples".into()))?;
        let (c, l) = (first.channels(), first.len());
        let mut data = Vec::with_capacity(samples.len() * c * l);
        for (i, s) in samples.iter().enumerate() {
            if s.channels() != c || s.len() != l {
                return Err(Error::Validation(format!(
                    "sample {i} has shape {}x{}, expected {c}x{l}",
                    s.channels(),
                    s.len()
                )));
            }
            data.extend_from_slice(s.data());
        }
        Self::new(samples.len(), c, l, data)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, b: usize, c: usize, t: usize) -> f64 {
        self.data[(b * self.channels + c) * self.len + t]
    }

    /// The time series at `(b, c)`.
    pub fn series(&self, b: usize, c: usize) -> &[f64] {
        let start = (b * self.channels + c) * self.len;
        &self.data[start..start + self.len]
    }

    /// A copy of batch element `b` as a `[channels × len]` feature map.
    pub fn sample(&self, b: usize) -> Features {
        let n = self.channels * self.len;
        Features {
            channels: self.channels,
            len: self.len,
            data: self.data[b * n..(b + 1) * n].to_vec(),
        }
    }
}

/// A single `[channels × len]` activation map, row-major by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    channels: usize,
    len: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn zeros(channels: usize, len: usize) -> Self {
        Self {
            channels,
            len,
            data: vec![0.0; channels * len],
        }
    }

    pub fn new(channels: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * len {
            return Err(Error::Validation(format!(
                "feature map {channels}x{len} expects {} values, got {}",
                channels * len,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            len,
            data,
        })
    }

    pub fn from_fn(channels: usize, len: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * len);
        for c in 0..channels {
            for t in 0..len {
                data.push(f(c, t));
            }
        }
        Self {
            channels,
            len,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.len)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, t: usize) -> f64 {
        self.data[c * self.len + t]
    }

    pub fn set(&mut self, c: usize, t: usize, v: f64) {
        self.data[c * self.len + t] = v;
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    /// Channels `[start, start + count)` as a new map.
    pub fn channel_range(&self, start: usize, count: usize) -> Features {
        Features {
            channels: count,
            len: self.len,
            data: self.data[start * self.len..(start + count) * self.len].to_vec(),
        }
    }

    /// Channel-wise concatenation.
    pub fn concat(parts: &[&Features]) -> Result<Features> {
        let len = parts
            .first()
            .map(|p| p.len)
            .ok_or_else(|| Error::Invariant("concat of zero feature maps".into()))?;
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.len != len {
                return Err(Error::Invariant(format!(
                    "concat length mismatch: {} vs {len}",
                    p.len
                )));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Ok(Features {
            channels,
            len,
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Features) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| (i / self.len, i % self.len))
    }
}

/// RFFT output: bins `0..=L/2` of an unnormalized forward DFT.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    bins: Vec<Complex64>,
    origin_length: usize,
}

impl ComplexSpectrum {
    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn origin_length(&self) -> usize {
        self.origin_length
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.norm()).collect()
    }
}

/// A planned real FFT for a fixed length, reusable across many series.
pub struct RealFft {
    len: usize,
    plan: Arc<dyn Fft<f64>>,
}

impl RealFft {
    pub fn new(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::Validation(format!(
                "rfft needs at least 2 samples, got {len}"
            )));
        }
        let plan = FftPlanner::new().plan_fft_forward(len);
        Ok(Self { len, plan })
    }

    pub fn process(&self, signal: &[f64]) -> Result<ComplexSpectrum> {
        if signal.len() != self.len {
            return Err(Error::Validation(format!(
                "rfft planned for length {}, got {}",
                self.len,
                signal.len()
            )));
        }
        check_finite(signal, "rfft input")?;
        let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.plan.process(&mut buf);
        buf.truncate(self.len / 2 + 1);
        Ok(ComplexSpectrum {
            bins: buf,
            origin_length: self.len,
        })
    }
}

/// Forward real DFT, `bins[f] = Σ_t x[t]·exp(−2πi·f·t/L)` for `0 ≤ f ≤ L/2`.
pub fn rfft(signal: &[f64]) -> Result<ComplexSpectrum> {
    RealFft::new(signal.len())?.process(signal)
}

/// Central finite-difference gradient of `f` at `x`.
///
/// Component `k` is `(f(x + h·e_k) − f(x − h·e_k)) / 2h`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let plus = f(&probe);
        probe[k] = orig - h;
        let minus = f(&probe);
        probe[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Runtime(format!(
                "non-finite function value while differentiating component {k} (f+ = {plus}, f- = {minus})"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// ChaCha8-backed generator; identical seeds give identical streams on every platform.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent generator derived from this seed and a stream label.
    pub fn fork(&self, stream: u64) -> SeededRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        SeededRng {
            seed: self.seed,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn fill_uniform(&mut self, out: &mut [f64], lo: f64, hi: f64) {
        for v in out {
            *v = self.uniform(lo, hi);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let l = x.len();
        (0..=l / 2)
            .map(|f| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (t, &v)| {
                    let ang = -2.0 * PI * (f * t) as f64 / l as f64;
                    acc + Complex64::new(v * ang.cos(), v * ang.sin())
                })
            })
            .collect()
    }

    #[test]
    fn rfft_constant_is_dc_only() {
        let s = rfft(&[3.0, 3.0, 3.0, 3.0]).unwrap();
        assert_eq!(s.bins().len(), 3);
        assert!((s.bins()[0] - Complex64::new(12.0, 0.0)).norm() < 1e-12);
        assert!(s.bins()[1].norm() < 1e-12);
        assert!(s.bins()[2].norm() < 1e-12);
    }

    #[test]
    fn rfft_single_tone() {
        let x: Vec<f64> = (0..8).map(|t| (2.0 * PI * t as f64 / 8.0).cos()).collect();
        let m = rfft(&x).unwrap().magnitudes();
        assert!((m[1] - 4.0).abs() < 1e-9);
        for (f, v) in m.iter().enumerate() {
            if f != 1 {
                assert!(*v < 1e-9, "bin {f} = {v}");
            }
        }
    }

    #[test]
    fn rfft_matches_naive_dft_on_all_short_lengths() {
        let mut rng = SeededRng::new(11);
        for l in 2..=32 {
            let x: Vec<f64> = (0..l).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let fast = rfft(&x).unwrap();
            let slow = naive_dft(&x);
            assert_eq!(fast.bins().len(), l / 2 + 1);
            assert_eq!(fast.origin_length(), l);
            for (a, b) in fast.bins().iter().zip(&slow) {
                assert!((a - b).norm() < 1e-10, "L={l}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rfft_parseval() {
        let mut rng = SeededRng::new(5);
        for l in [7usize, 16, 31, 64] {
            let x: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
            let bins = rfft(&x).unwrap();
            let b = bins.bins();
            let mut spec = b[0].norm_sqr();
            let upper = if l % 2 == 0 { l / 2 } else { l / 2 + 1 };
            for bin in &b[1..upper] {
                spec += 2.0 * bin.norm_sqr();
            }
            if l % 2 == 0 {
                spec += b[l / 2].norm_sqr();
            }
            spec /= l as f64;
            let energy: f64 = x.iter().map(|v| v * v).sum();
            assert!(((spec - energy) / energy).abs() < 1e-9);
        }
    }

    #[test]
    fn rfft_rejects_bad_input() {
        assert!(matches!(rfft(&[1.0, f64::NAN, 2.0]), Err(Error::Validation(_))));
        assert!(matches!(rfft(&[1.0]), Err(Error::Validation(_))));
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|v| v[0] * v[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
        let g = finite_diff_grad(|_| 4.2, &[1.0, -1.0, 0.5], 1e-5).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        let g = finite_diff_grad(|v| v.iter().map(|a| a * a).sum(), &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-7 && (g[1] - 4.0).abs() < 1e-7);
    }

    #[test]
    fn finite_diff_names_bad_component() {
        let err = finite_diff_grad(|v| if v[1] > 1.0 { f64::NAN } else { v[0] }, &[0.0, 1.0], 1e-3)
            .unwrap_err();
        match err {
            Error::Runtime(msg) => assert!(msg.contains("component 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(finite_diff_grad(|v| v[0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn seeded_streams_reproduce() {
        let mut a = SeededRng::new(1234);
        let mut b = SeededRng::new(1234);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = SeededRng::new(1235);
        assert_ne!(SeededRng::new(1234).next_u64(), c.next_u64());
        let mut f1 = a.fork(3);
        let mut f2 = b.fork(3);
        assert_eq!(f1.normal(), f2.normal());
    }

    #[test]
    fn series_batch_validates() {
        assert!(SeriesBatch::new(1, 1, 2, vec![0.0, f64::INFINITY]).is_err());
        assert!(SeriesBatch::new(0, 1, 2, vec![]).is_err());
        let b = SeriesBatch::new(2, 2, 3, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(b.get(1, 0, 2), 8.0);
        assert_eq!(b.series(1, 1), &[9.0, 10.0, 11.0]);
        assert_eq!(b.sample(1).row(0), &[6.0, 7.0, 8.0]);
    }
}
