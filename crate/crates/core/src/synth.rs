//! Deterministic synthetic signals and CSV ingestion.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{SeededRng, SeriesBatch};

/// Default fractional periods for the compensation bench: three base scales
/// times three non-zero fractional parts.
pub const DEFAULT_FRACTIONAL_PERIODS: [f64; 9] = [8.3, 8.5, 8.7, 12.25, 12.5, 12.75, 20.2, 20.5, 20.8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub period: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Component {
    pub fn new(period: f64, amplitude: f64) -> Self {
        Self {
            period,
            amplitude,
            phase: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anomaly {
    pub position: usize,
    pub magnitude: f64,
    #[serde(default = "one")]
    pub width: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalKind {
    /// A single tone whose period is generally not an integer.
    FractionalSine,
    MultiTone,
    TrendPlusSeason { intercept: f64, slope: f64 },
    AnomalyInjected { anomalies: Vec<Anomaly> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub length: usize,
    pub components: Vec<Component>,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "one")]
    pub channels: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SignalSpec {
    pub fn fractional_sine(period: f64, length: usize) -> Self {
        Self {
            kind: SignalKind::FractionalSine,
            length,
            components: vec![Component::new(period, 1.0)],
            noise_std: 0.0,
            channels: 1,
            seed: 0,
        }
    }

    pub fn multi_tone(components: Vec<Component>, length: usize, noise_std: f64, seed: u64) -> Self {
        Self {
            kind: SignalKind::MultiTone,
            length,
            components,
            noise_std,
            channels: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::Validation(format!("signal length must be >= 2, got {}", self.length)));
        }
        if self.channels == 0 {
            return Err(Error::Validation("channel count must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Validation(format!("noise_std must be finite and >= 0, got {}", self.noise_std)));
        }
        if self.components.is_empty() {
            return Err(Error::Validation("signal needs at least one component".into()));
        }
        for c in &self.components {
            if !(c.period > 1.0 && c.period.is_finite()) {
                return Err(Error::Validation(format!("component period must exceed 1, got {}", c.period)));
            }
            if !c.amplitude.is_finite() || !c.phase.is_finite() {
                return Err(Error::Validation("component amplitude and phase must be finite".into()));
            }
        }
        match &self.kind {
            SignalKind::FractionalSine if self.components.len() != 1 => {
                return Err(Error::Validation("a fractional sine has exactly one component".into()));
            }
            SignalKind::TrendPlusSeason { intercept, slope } if !(intercept.is_finite() && slope.is_finite()) => {
                return Err(Error::Validation("trend coefficients must be finite".into()));
            }
            SignalKind::AnomalyInjected { anomalies } => {
                for a in anomalies {
                    if a.width == 0 || a.position + a.width > self.length || !a.magnitude.is_finite() {
                        return Err(Error::Validation(format!("anomaly {a:?} does not fit the signal")));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn max_period(&self) -> f64 {
        self.components.iter().map(|c| c.period).fold(0.0, f64::max)
    }
}

/// Ground truth that accompanies a generated signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub true_periods: Vec<f64>,
    /// `⌊T*⌋` per component: the dilation an integer-period detector would report.
    pub integer_periods: Vec<usize>,
    /// `T* − ⌊T*⌋` per component; tap `n` must be shifted by `n` times this.
    pub fractional_parts: Vec<f64>,
    /// One flag per time step; all false unless anomalies were injected.
    pub anomaly_labels: Vec<bool>,
}

impl GroundTruth {
    /// Theoretical offsets `n·(T* − ⌊T*⌋)` of component `idx` for taps
    /// `n = −⌊S/2⌋ … ⌊S/2⌋`.
    pub fn theoretical_offsets(&self, idx: usize, kernel_size: usize) -> Vec<f64> {
        theoretical_offsets(self.true_periods[idx], kernel_size)
    }
}

pub fn theoretical_offsets(period: f64, kernel_size: usize) -> Vec<f64> {
    let frac = period - period.floor();
    let half = (kernel_size / 2) as isize;
    (-half..=half).map(|n| n as f64 * frac).collect()
}

pub fn generate(spec: &SignalSpec) -> Result<(SeriesBatch, GroundTruth)> {
    spec.validate()?;
    if (spec.length as f64) < 4.0 * spec.max_period() {
        log::warn!(
            "signal length {} is shorter than four times the longest period {}",
            spec.length,
            spec.max_period()
        );
    }
    let mut rng = SeededRng::new(spec.seed);
    let len = spec.length;
    let mut labels = vec![false; len];
    let mut base: Vec<f64> = (0..len)
        .map(|t| {
            spec.components
                .iter()
                .map(|c| c.amplitude * (2.0 * PI * t as f64 / c.period + c.phase).sin())
                .sum()
        })
        .collect();
    match &spec.kind {
        SignalKind::TrendPlusSeason { intercept, slope } => {
            for (t, v) in base.iter_mut().enumerate() {
                *v += intercept + slope * t as f64;
            }
        }
        SignalKind::AnomalyInjected { anomalies } => {
            for a in anomalies {
                for t in a.position..a.position + a.width {
                    base[t] += a.magnitude;
                    labels[t] = true;
                }
            }
        }
        SignalKind::FractionalSine | SignalKind::MultiTone => {}
    }
    let mut data = Vec::with_capacity(spec.channels * len);
    for _ in 0..spec.channels {
        for &v in &base {
            let noise = if spec.noise_std > 0.0 {
                spec.noise_std * rng.normal()
            } else {
                0.0
            };
            data.push(v + noise);
        }
    }
    let truth = GroundTruth {
        true_periods: spec.components.iter().map(|c| c.period).collect(),
        integer_periods: spec.components.iter().map(|c| c.period.floor() as usize).collect(),
        fractional_parts: spec.components.iter().map(|c| c.period - c.period.floor()).collect(),
        anomaly_labels: labels,
    };
    Ok((SeriesBatch::new(1, spec.channels, len, data)?, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CsvOptions {
    pub header: bool,
    pub standardize: bool,
}

/// Per-channel affine map applied by standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaling {
    /// Maps standardized values of `channel` back to the original units.
    pub fn inverse(&self, channel: usize, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| v * self.std[channel] + self.mean[channel]).collect()
    }

    pub fn inverse_batch(&self, batch: &SeriesBatch) -> Result<SeriesBatch> {
        let mut data = Vec::with_capacity(batch.data().len());
        for b in 0..batch.batch() {
            for c in 0..batch.channels() {
                data.extend(self.inverse(c, batch.series(b, c)));
            }
        }
        SeriesBatch::new(batch.batch(), batch.channels(), batch.len(), data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCsv {
    /// `1 × channels × rows`
    pub batch: SeriesBatch,
    pub names: Option<Vec<String>>,
    pub scaling: Option<Scaling>,
}

/// Reads one column per channel and one row per time step.
pub fn load_csv(path: &Path, options: CsvOptions) -> Result<LoadedCsv> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    let names = if options.header {
        let h = reader
            .headers()
            .map_err(|e| Error::Validation(format!("{}: bad header: {e}", path.display())))?;
        Some(h.iter().map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        let row = rec.position().map_or(i + 1, |p| p.line() as usize);
        let width = names.as_ref().map_or(columns.len(), Vec::len);
        if columns.is_empty() && names.is_none() {
            columns = vec![Vec::new(); rec.len()];
        } else if columns.is_empty() {
            columns = vec![Vec::new(); width];
        }
        if rec.len() != columns.len() {
            return Err(Error::Validation(format!(
                "{}: row {row} has {} fields, expected {}",
                path.display(),
                rec.len(),
                columns.len()
            )));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Validation(format!(
                    "{}: non-numeric value {field:?} at row {row}, column {}",
                    path.display(),
                    c + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "{}: non-finite value at row {row}, column {}",
                    path.display(),
                    c + 1
                )));
            }
            columns[c].push(v);
        }
    }
    if columns.is_empty() || columns[0].is_empty() {
        return Err(Error::Validation(format!("{}: no data rows", path.display())));
    }
    let scaling = options.standardize.then(|| {
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for col in &mut columns {
            let n = col.len() as f64;
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            // A constant column is only centred.
            let s = if var > 0.0 { var.sqrt() } else { 1.0 };
            col.iter_mut().for_each(|v| *v = (*v - m) / s);
            mean.push(m);
            std.push(s);
        }
        Scaling { mean, std }
    });
    let rows = columns[0].len();
    let channels = columns.len();
    let data = columns.into_iter().flatten().collect();
    Ok(LoadedCsv {
        batch: SeriesBatch::new(1, channels, rows, data)?,
        names,
        scaling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::SpectralPrior;
    use std::io::Write;

    #[test]
    fn fractional_decomposition() {
        let (_, gt) = generate(&SignalSpec::fractional_sine(10.5, 64)).unwrap();
        assert_eq!(gt.integer_periods, vec![10]);
        assert_eq!(gt.theoretical_offsets(0, 5), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn tone_is_detected() {
        let spec = SignalSpec::multi_tone(vec![Component::new(24.0, 1.0)], 96, 0.0, 0);
        let (b, _) = generate(&spec).unwrap();
        assert_eq!(SpectralPrior::extract(&b, 1).unwrap().periods(), &[24]);
    }

    #[test]
    fn same_seed_same_series() {
        let spec = SignalSpec::multi_tone(vec![Component::new(7.3, 1.0), Component::new(19.0, 0.4)], 200, 0.3, 42);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SignalSpec { seed: 43, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().0, generate(&other).unwrap().0);
    }

    #[test]
    fn anomalies_are_labelled() {
        let spec = SignalSpec {
            kind: SignalKind::AnomalyInjected {
                anomalies: vec![Anomaly {
                    position: 10,
                    magnitude: 5.0,
                    width: 3,
                }],
            },
            ..SignalSpec::multi_tone(vec![Component::new(8.0, 1.0)], 40, 0.0, 0)
        };
        let (b, gt) = generate(&spec).unwrap();
        assert_eq!(gt.anomaly_labels.iter().filter(|l| **l).count(), 3);
        assert!(gt.anomaly_labels[10] && gt.anomaly_labels[12] && !gt.anomaly_labels[13]);
        assert!((b.get(0, 0, 11) - 5.0 - (2.0 * PI * 11.0 / 8.0).sin()).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs() {
        let mut s = SignalSpec::fractional_sine(1.0, 64);
        assert!(generate(&s).is_err());
        s.components[0].period = 5.5;
        s.noise_std = -1.0;
        assert!(generate(&s).is_err());
        let two = SignalSpec {
            kind: SignalKind::FractionalSine,
            ..SignalSpec::multi_tone(vec![Component::new(5.0, 1.0); 2], 64, 0.0, 0)
        };
        assert!(generate(&two).is_err());
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_shapes_and_names() {
        let body: String = (0..100).map(|i| format!("{i},{},{}\n", 2 * i, -i)).collect();
        let f = write(&body);
        let l = load_csv(f.path(), CsvOptions::default()).unwrap();
        assert_eq!((l.batch.batch(), l.batch.channels(), l.batch.len()), (1, 3, 100));
        assert_eq!(l.batch.get(0, 1, 7), 14.0);

        let f = write(&format!("a,b,c\n{body}"));
        let l = load_csv(
            f.path(),
            CsvOptions {
                header: true,
                standardize: false,
            },
        )
        .unwrap();
        assert_eq!(l.batch.len(), 100);
        assert_eq!(l.names.unwrap(), vec!["a", "b", "c"]);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let f = write("1,2\n3,4\n5\n");
        let msg = load_csv(f.path(), CsvOptions::default()).unwrap_err().to_string();
        assert!(msg.contains("row 3"), "{msg}");
        let f = write("1,2\n3,x\n");
        let msg = load_csv(f.path(), CsvOptions::default()).unwrap_err().to_string();
        assert!(msg.contains("row 2") && msg.contains("column 2"), "{msg}");
        let f = write("");
        assert!(load_csv(f.path(), CsvOptions::default()).is_err());
        let missing = Path::new("/definitely/not/here.csv");
        let err = load_csv(missing, CsvOptions::default()).unwrap_err();
        assert!(err.is_validation() && err.to_string().contains("here.csv"));
    }

    #[test]
    fn standardize_round_trip() {
        let body: String = (0..50).map(|i| format!("{},{}\n", (i as f64 * 0.37).sin() * 4.0 + 9.0, 3.0)).collect();
        let f = write(&body);
        let raw = load_csv(f.path(), CsvOptions::default()).unwrap().batch;
        let l = load_csv(
            f.path(),
            CsvOptions {
                header: false,
                standardize: true,
            },
        )
        .unwrap();
        let s = l.scaling.as_ref().unwrap();
        let m: f64 = l.batch.series(0, 0).iter().sum::<f64>() / 50.0;
        assert!(m.abs() < 1e-12);
        let back = s.inverse_batch(&l.batch).unwrap();
        for (a, b) in back.data().iter().zip(raw.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
