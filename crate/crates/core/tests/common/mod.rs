//! Oracles and recorded values shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use anchor_core::{Features, SeededRng, SeriesBatch};

/// O(L²) DFT of a real signal, bins 0..=L/2.
pub fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, v)| {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect()
}

/// Mean DFT magnitude over batch and channels, DC zeroed.
pub fn naive_energy(batch: &SeriesBatch) -> Vec<f64> {
    let mut acc = vec![0.0; batch.len() / 2 + 1];
    let count = (batch.batch() * batch.channels()) as f64;
    for b in 0..batch.batch() {
        for c in 0..batch.channels() {
            for (a, (re, im)) in acc.iter_mut().zip(naive_dft(batch.series(b, c))) {
                *a += (re * re + im * im).sqrt() / count;
            }
        }
    }
    acc[0] = 0.0;
    acc
}

/// `y[o, p] = b[o] + Σ_c Σ_j W[o, c, j]·x[c, p + T·(j − S/2)]`, zero outside.
pub fn dilated_conv(x: &Features, w: &[f64], b: &[f64], out: usize, s: usize, period: usize) -> Features {
    let (ci, len) = x.shape();
    let half = (s / 2) as isize;
    Features::from_fn(out, len, |o, p| {
        let mut acc = b[o];
        for c in 0..ci {
            for j in 0..s {
                let q = p as isize + period as isize * (j as isize - half);
                let v = if (0..len as isize).contains(&q) { x.get(c, q as usize) } else { 0.0 };
                acc += w[(o * ci + c) * s + j] * v;
            }
        }
        acc
    })
}

pub fn random_features(rng: &mut SeededRng, c: usize, l: usize) -> Features {
    Features::from_fn(c, l, |_, _| rng.normal())
}

/// One sinusoid of the given period with a phase offset, plus Gaussian noise.
pub fn tone(len: usize, period: f64, noise: f64, seed: u64) -> SeriesBatch {
    let mut rng = SeededRng::new(seed);
    let data = (0..len)
        .map(|t| (2.0 * PI * t as f64 / period + 0.3).sin() + noise * rng.normal())
        .collect();
    SeriesBatch::new(1, 1, len, data).unwrap()
}

/// `(period, eta, mae_linear, mae_gaussian)` of the compensation bench at
/// its default configuration.
pub const COMPENSATION: [(f64, f64, f64, f64); 9] = [
    (8.3, 1.8906952780833497, 0.002457060842264732, 0.0012995541220981537),
    (8.5, 3.7476401133276775, 0.0006759624295777552, 0.00018037015538761045),
    (8.7, 3.478333645652086, 0.003235077273295824, 0.0009300652562009593),
    (12.25, 1.3588385293213912, 0.003777123070715075, 0.0027796702766452936),
    (12.5, 3.136913158105285, 0.0013129076140598144, 0.0004185348933449017),
    (12.75, 3.5176667456623423, 0.0015508562153736156, 0.0004408763898075298),
    (20.2, 1.5010659366297263, 0.010091441828280007, 0.00672285046380964),
    (20.5, 3.100945309383625, 0.0014469458452335826, 0.00046661443555777904),
    (20.8, 2.1781934965799254, 0.0009701116071479943, 0.00044537439335449666),
];

pub const COMPENSATION_MEAN_ETA: f64 = 2.6566991347494895;

/// Relative closeness with a unit floor, for recorded fixtures.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
