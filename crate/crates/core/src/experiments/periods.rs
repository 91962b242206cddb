use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::SeriesBatch;
use crate::spectral::SpectralPrior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRow {
    pub rank: usize,
    pub frequency: usize,
    pub period: usize,
    pub energy: f64,
}

/// One row per extracted period, strongest first.
pub fn extract_periods(batch: &SeriesBatch, k: usize) -> Result<(SpectralPrior, Vec<PeriodRow>)> {
    let prior = SpectralPrior::extract(batch, k)?;
    let rows = (0..prior.k())
        .map(|r| PeriodRow {
            rank: r + 1,
            frequency: prior.top_freqs()[r],
            period: prior.periods()[r],
            energy: prior.energy_of_rank(r),
        })
        .collect();
    Ok((prior, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, Component, SignalSpec};
    use crate::Error;

    #[test]
    fn rank_one_row() {
        let (b, _) = generate(&SignalSpec::multi_tone(vec![Component::new(24.0, 1.0)], 96, 0.0, 0)).unwrap();
        let (_, rows) = extract_periods(&b, 3).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0].rank, rows[0].period), (1, 24));
        assert!(matches!(extract_periods(&b, 0), Err(Error::Config(_))));
        let flat = SeriesBatch::new(1, 1, 32, vec![1.0; 32]).unwrap();
        assert!(matches!(extract_periods(&flat, 1), Err(Error::NoPeriodicity(_))));
    }
}
