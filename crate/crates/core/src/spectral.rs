//! Spectral energy averaging and top-K period extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RealFft, SeriesBatch};

/// Relative floor below which a bin counts as numerically empty.
///
/// Every bin magnitude is bounded by `Σ_t |x[t]|`, so anything under this
/// fraction of that bound is FFT round-off.
const ENERGY_SNAP: f64 = 1e-12;

/// Dominant frequencies of a batch and their integer periods, sorted by
/// descending energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralPrior {
    energies: Vec<f64>,
    top_freqs: Vec<usize>,
    periods: Vec<usize>,
    window_length: usize,
}

impl SpectralPrior {
    /// Averages spectral magnitudes over `batch` and keeps the top `k` bins.
    pub fn extract(batch: &SeriesBatch, k: usize) -> Result<Self> {
        let energies = spectral_energy(batch)?;
        topk_periods(&energies, k, batch.len())
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn top_freqs(&self) -> &[usize] {
        &self.top_freqs
    }

    pub fn periods(&self) -> &[usize] {
        &self.periods
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn k(&self) -> usize {
        self.periods.len()
    }

    /// Energy of the period ranked `rank` (0 = strongest).
    pub fn energy_of_rank(&self, rank: usize) -> f64 {
        self.energies[self.top_freqs[rank]]
    }

    /// Periods expressed on a grid downsampled by `stride` (floor-divided, at least 1).
    pub fn periods_at_stride(&self, stride: usize) -> Vec<usize> {
        let stride = stride.max(1);
        self.periods.iter().map(|&p| (p / stride).max(1)).collect()
    }
}

/// Mean spectral magnitude over every `(batch, channel)` series, DC forced to zero.
pub fn spectral_energy(batch: &SeriesBatch) -> Result<Vec<f64>> {
    let l = batch.len();
    if l < 4 {
        return Err(Error::Validation(format!(
            "spectral energy needs at least 4 samples, got {l}"
        )));
    }
    let fft = RealFft::new(l)?;
    let bins = l / 2 + 1;
    let mut energy = vec![0.0; bins];
    let mut scale = 0.0;
    let count = (batch.batch() * batch.channels()) as f64;
    for b in 0..batch.batch() {
        for c in 0..batch.channels() {
            let series = batch.series(b, c);
            scale += series.iter().map(|v| v.abs()).sum::<f64>();
            let spec = fft.process(series)?;
            for (e, bin) in energy.iter_mut().zip(spec.bins()) {
                *e += bin.norm();
            }
        }
    }
    let floor = ENERGY_SNAP * scale / count;
    for e in energy.iter_mut() {
        *e /= count;
        if *e <= floor {
            *e = 0.0;
        }
    }
    energy[0] = 0.0;
    Ok(energy)
}

/// Selects the `k` most energetic non-DC bins and maps each to `⌊L / f⌋`.
///
/// Equal energies are ordered by lower frequency first.
pub fn topk_periods(energies: &[f64], k: usize, len: usize) -> Result<SpectralPrior> {
    if len < 2 || energies.len() != len / 2 + 1 {
        return Err(Error::Validation(format!(
            "energy vector of length {} does not match window length {len}",
            energies.len()
        )));
    }
    let max_k = len / 2;
    if k == 0 || k > max_k {
        return Err(Error::Config(format!(
            "top-k must lie in [1, {max_k}] for window length {len}, got {k}"
        )));
    }
    if energies[0] != 0.0 {
        return Err(Error::Validation(
            "energy vector must have its DC entry removed".into(),
        ));
    }
    if energies.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::Validation("energies must be finite and non-negative".into()));
    }
    if energies.iter().all(|&e| e == 0.0) {
        return Err(Error::NoPeriodicity(
            "spectrum has no energy outside DC (constant input?)".into(),
        ));
    }
    let mut order: Vec<usize> = (1..=max_k).collect();
    order.sort_by(|&a, &b| energies[b].total_cmp(&energies[a]).then(a.cmp(&b)));
    order.truncate(k);
    let periods = order.iter().map(|&f| len / f).collect();
    Ok(SpectralPrior {
        energies: energies.to_vec(),
        top_freqs: order,
        periods,
        window_length: len,
    })
}
