//! Seeded synthetic image generators used by tests, benchmarks and the CLI.
//!
//! Two families:
//! * isotropic Gaussian blobs with a multiplicative log-normal texture, for
//!   controlled location/scale experiments;
//! * stroke-based digit glyphs (0..=9) with seeded affine distortion and pen
//!   width, a stand-in for scanned handwritten digits that needs no dataset
//!   download and renders reproducibly on any machine.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::histogram::ImageHistogram;
use crate::seeding::rng_for;

/// Relative floor below which blob weights are truncated to exact zero.
/// Keeps supports compact so exact transport stays fast.
const BLOB_TRUNCATE_REL: f64 = 1e-14;

/// Gaussian blob centered at `center` (row, col) with standard deviation
/// `scale` pixels, multiplied by a seeded log-normal texture.
pub fn synth_blob(grid: PixelGrid, center: [f64; 2], scale: f64, seed: u64) -> Result<ImageHistogram> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "blob scale must be positive, got {scale}"
        )));
    }
    let mut rng = rng_for(seed, 0x0b10b);
    let inv = 1.0 / (2.0 * scale * scale);
    let mut raw = Vec::with_capacity(grid.len());
    let mut max = 0.0f64;
    for k in 0..grid.len() {
        let p = grid.coord(k);
        let dr = p[0] - center[0];
        let dc = p[1] - center[1];
        let g: f64 = StandardNormal.sample(&mut rng);
        let w = (-(dr * dr + dc * dc) * inv).exp() * (0.05 * g).exp();
        max = max.max(w);
        raw.push(w);
    }
    if max <= 0.0 {
        return Err(Error::Degenerate(
            "blob underflowed to zero everywhere; center too far from the grid".to_string(),
        ));
    }
    let floor = max * BLOB_TRUNCATE_REL;
    for w in raw.iter_mut() {
        if *w < floor {
            *w = 0.0;
        }
    }
    ImageHistogram::from_intensities(grid, &raw)
}

/// Uniform weights on `k` seeded distinct pixels. Pairs of such images have
/// optimal plans that are permutation maps, which several tests rely on.
pub fn synth_uniform_support(grid: PixelGrid, k: usize, seed: u64) -> Result<ImageHistogram> {
    if k == 0 || k > grid.len() {
        return Err(Error::InvalidArgument(format!(
            "support size {k} out of range 1..={}",
            grid.len()
        )));
    }
    let mut rng = rng_for(seed, 0x5e7);
    // Partial Fisher-Yates over pixel indices.
    let mut idx: Vec<usize> = (0..grid.len()).collect();
    for i in 0..k {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    let mut w = vec![0.0; grid.len()];
    for &p in &idx[..k] {
        w[p] = 1.0;
    }
    ImageHistogram::from_intensities(grid, &w)
}

// Digit skeletons as polylines in the unit square, x right / y down.
fn digit_strokes(digit: u8) -> Vec<Vec<[f64; 2]>> {
    let ring = |cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64, n: usize| -> Vec<[f64; 2]> {
        (0..=n)
            .map(|i| {
                let t = from + (to - from) * i as f64 / n as f64;
                [cx + rx * t.cos(), cy + ry * t.sin()]
            })
            .collect()
    };
    use std::f64::consts::PI;
    match digit {
        0 => vec![ring(0.5, 0.5, 0.22, 0.34, 0.0, 2.0 * PI, 20)],
        1 => vec![vec![[0.38, 0.3], [0.52, 0.16], [0.52, 0.84]]],
        2 => {
            let mut top = ring(0.48, 0.32, 0.2, 0.17, -PI, 0.35, 10);
            top.push([0.28, 0.82]);
            top.push([0.72, 0.82]);
            vec![top]
        }
        3 => {
            let mut s = ring(0.45, 0.32, 0.2, 0.16, -PI * 0.8, PI * 0.5, 10);
            s.extend(ring(0.45, 0.66, 0.22, 0.18, -PI * 0.5, PI * 0.8, 10));
            vec![s]
        }
        4 => vec![
            vec![[0.6, 0.16], [0.28, 0.6], [0.74, 0.6]],
            vec![[0.6, 0.16], [0.6, 0.84]],
        ],
        5 => {
            let mut s = vec![[0.68, 0.18], [0.34, 0.18], [0.32, 0.48]];
            s.extend(ring(0.47, 0.64, 0.2, 0.19, -PI * 0.55, PI * 0.75, 12));
            vec![s]
        }
        6 => {
            let mut s = vec![[0.62, 0.16]];
            s.extend(ring(0.47, 0.63, 0.19, 0.2, -PI * 0.7, PI * 1.3, 14));
            vec![s]
        }
        7 => vec![vec![[0.28, 0.18], [0.72, 0.18], [0.42, 0.84]]],
        8 => vec![
            ring(0.5, 0.33, 0.18, 0.15, 0.0, 2.0 * PI, 14),
            ring(0.5, 0.66, 0.21, 0.18, 0.0, 2.0 * PI, 14),
        ],
        9 => {
            let mut s = ring(0.5, 0.36, 0.19, 0.18, 0.0, 2.0 * PI, 14);
            s.push([0.69, 0.36]);
            s.push([0.62, 0.84]);
            vec![s]
        }
        d => panic!("digit out of range: {d}"),
    }
}

/// Render one seeded glyph of `digit` as `size x size` grayscale bytes
/// (row-major, 0 = background). Each seed yields a different distortion of
/// the same skeleton: rotation, anisotropic scale, shift, pen width, and
/// per-vertex jitter.
pub fn digit_raster(size: usize, digit: u8, seed: u64) -> Vec<u8> {
    assert!(digit <= 9, "digit out of range: {digit}");
    assert!(size >= 8, "raster too small: {size}");
    let mut rng = rng_for(seed, 0xd161_7u64 + digit as u64);
    let theta: f64 = rng.random_range(-0.14..0.14);
    let sx: f64 = rng.random_range(0.82..1.04);
    let sy: f64 = rng.random_range(0.82..1.04);
    let shx: f64 = rng.random_range(-0.12..0.12);
    let tx: f64 = rng.random_range(-0.05..0.05);
    let ty: f64 = rng.random_range(-0.05..0.05);
    let pen: f64 = rng.random_range(0.032..0.05) * size as f64;
    let jitter = 0.012;

    let (c, s) = (theta.cos(), theta.sin());
    let transform = |p: [f64; 2], rng: &mut rand_chacha::ChaCha12Rng| -> [f64; 2] {
        let jx: f64 = StandardNormal.sample(rng);
        let jy: f64 = StandardNormal.sample(rng);
        let x0 = p[0] - 0.5 + jitter * jx;
        let y0 = p[1] - 0.5 + jitter * jy;
        let x1 = sx * (x0 + shx * y0);
        let y1 = sy * y0;
        let x2 = c * x1 - s * y1 + 0.5 + tx;
        let y2 = s * x1 + c * y1 + 0.5 + ty;
        // Margin keeps the pen inside the raster for any admissible shift.
        let m = 2.5 / size as f64;
        [
            (x2.clamp(m, 1.0 - m)) * size as f64,
            (y2.clamp(m, 1.0 - m)) * size as f64,
        ]
    };

    let mut acc = vec![0.0f64; size * size];
    let two_pen_sq = 2.0 * pen * pen;
    let reach = (3.0 * pen).ceil() as isize;
    for stroke in digit_strokes(digit) {
        let pts: Vec<[f64; 2]> = stroke.iter().map(|&p| transform(p, &mut rng)).collect();
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let steps = (len / 0.35).ceil().max(1.0) as usize;
            for i in 0..=steps {
                let t = i as f64 / steps as f64;
                let px = a[0] + t * (b[0] - a[0]);
                let py = a[1] + t * (b[1] - a[1]);
                let (ix, iy) = (px.round() as isize, py.round() as isize);
                for dy in -reach..=reach {
                    for dx in -reach..=reach {
                        let (x, y) = (ix + dx, iy + dy);
                        if x < 0 || y < 0 || x >= size as isize || y >= size as isize {
                            continue;
                        }
                        let ddx = x as f64 - px;
                        let ddy = y as f64 - py;
                        let v = (-(ddx * ddx + ddy * ddy) / two_pen_sq).exp();
                        let cell = &mut acc[y as usize * size + x as usize];
                        *cell = cell.max(v);
                    }
                }
            }
        }
    }
    let peak = acc.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    acc.iter()
        .map(|&v| {
            let b = (255.0 * v / peak).round();
            if b < 8.0 {
                0
            } else {
                b as u8
            }
        })
        .collect()
}

/// Seeded glyph as a normalized histogram on a square grid.
pub fn synth_digit(size: usize, digit: u8, seed: u64) -> Result<ImageHistogram> {
    if digit > 9 {
        return Err(Error::InvalidArgument(format!(
            "digit out of range: {digit}"
        )));
    }
    if size < 8 {
        return Err(Error::InvalidArgument(format!("raster too small: {size}")));
    }
    let grid = PixelGrid::new(size, size)?;
    let bytes = digit_raster(size, digit, seed);
    let vals: Vec<f64> = bytes.iter().map(|&b| b as f64).collect();
    ImageHistogram::from_intensities(grid, &vals)
}
