//! Minimal static charts (axes, lines, bars) rendered straight to PNG.
//! There is no text; the CSV next to each image carries the numbers.

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, Rgb, RgbImage};

const W: u32 = 640;
const H: u32 = 400;
const MARGIN: u32 = 40;
const PALETTE: [[u8; 3]; 4] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40]];

struct Canvas {
    img: RgbImage,
    lo: f64,
    hi: f64,
}

impl Canvas {
    fn new(values: impl Iterator<Item = f64>, zero_based: bool) -> Self {
        let (mut lo, mut hi) = values
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if zero_based {
            lo = lo.min(0.0);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-300 {
            hi = lo + 1.0;
        }
        let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
        let axis = Rgb([60, 60, 60]);
        for x in MARGIN..W - MARGIN / 2 {
            img.put_pixel(x, H - MARGIN, axis);
        }
        for y in MARGIN / 2..=H - MARGIN {
            img.put_pixel(MARGIN, y, axis);
        }
        Self { img, lo, hi }
    }

    fn y(&self, v: f64) -> f64 {
        let span = (H - MARGIN - MARGIN / 2) as f64;
        (H - MARGIN) as f64 - (v - self.lo) / (self.hi - self.lo) * span
    }

    fn x(&self, i: usize, n: usize) -> f64 {
        let span = (W - MARGIN - MARGIN / 2) as f64;
        MARGIN as f64 + span * (i as f64 + 0.5) / n.max(1) as f64
    }

    fn dot(&mut self, x: f64, y: f64, c: Rgb<u8>) {
        for dx in -1..=1 {
            for dy in -1..=1 {
                let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
                if (0..W as i64).contains(&px) && (0..H as i64).contains(&py) {
                    self.img.put_pixel(px as u32, py as u32, c);
                }
            }
        }
    }

    fn segment(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let (px, py) = ((x0 + t * (x1 - x0)).round(), (y0 + t * (y1 - y0)).round());
            if px >= 0.0 && py >= 0.0 && px < W as f64 && py < H as f64 {
                self.img.put_pixel(px as u32, py as u32, c);
            }
        }
    }

    fn encode(self) -> Vec<u8> {
        let mut out = Vec::new();
        PngEncoder::new(&mut out)
            .write_image(self.img.as_raw(), W, H, ExtendedColorType::Rgb8)
            .expect("in-memory PNG encoding");
        out
    }
}

/// One polyline per series, all sharing the x axis (sample index).
pub fn lines(series: &[Vec<f64>]) -> Vec<u8> {
    let n = series.iter().map(Vec::len).max().unwrap_or(0);
    let mut cv = Canvas::new(series.iter().flatten().copied(), false);
    for (k, s) in series.iter().enumerate() {
        let c = Rgb(PALETTE[k % PALETTE.len()]);
        let pts: Vec<(f64, f64)> = s
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| (cv.x(i, n), cv.y(*v)))
            .collect();
        for w in pts.windows(2) {
            cv.segment(w[0], w[1], c);
        }
        for p in pts {
            cv.dot(p.0, p.1, c);
        }
    }
    cv.encode()
}

/// Vertical bars from zero, one colour per bar.
pub fn bars(values: &[f64]) -> Vec<u8> {
    let mut cv = Canvas::new(values.iter().copied(), true);
    let n = values.len();
    let half = ((W - MARGIN - MARGIN / 2) as f64 / n.max(1) as f64 * 0.35).max(1.0);
    let base = cv.y(0.0);
    for (i, v) in values.iter().enumerate().filter(|(_, v)| v.is_finite()) {
        let c = Rgb(PALETTE[i % PALETTE.len()]);
        let (xc, top) = (cv.x(i, n), cv.y(*v));
        let (y0, y1) = (top.min(base).round() as u32, top.max(base).round() as u32);
        for x in (xc - half).round() as u32..=(xc + half).round() as u32 {
            for y in y0..=y1.min(H - 1) {
                cv.img.put_pixel(x.min(W - 1), y, c);
            }
        }
    }
    cv.encode()
}
