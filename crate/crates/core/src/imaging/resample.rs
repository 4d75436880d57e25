//! Bicubic resampling with the Keys kernel (`a = -0.5`).
//!
//! Output pixel `o` along an axis samples the source at
//! `(o + 0.5) · in / out − 0.5` (pixel centres aligned), using the four
//! taps around that position. Out-of-range taps are clamped to the edge.
//! No antialiasing prefilter is applied when downsampling.

use super::ImageGray;
use crate::error::Result;

pub const BICUBIC_A: f64 = -0.5;

pub fn bicubic_kernel(x: f64) -> f64 {
    let a = BICUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

fn taps_at(src: f64, input: usize) -> ([usize; 4], [f64; 4]) {
    let base = src.floor();
    let t = src - base;
    let mut idx = [0usize; 4];
    let mut wts = [0.0; 4];
    for k in 0..4 {
        let pos = base as isize + k as isize - 1;
        idx[k] = pos.clamp(0, input as isize - 1) as usize;
        wts[k] = bicubic_kernel(t - (k as f64 - 1.0));
    }
    (idx, wts)
}

/// Source taps and weights for each output position along one axis.
fn axis_taps(input: usize, output: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| taps_at((o as f64 + 0.5) * ratio - 0.5, input))
        .collect()
}

/// Unclipped bicubic interpolation of `img` at normalised `(y, x)` points.
/// On a cell-centred grid this agrees with [`bicubic_resample_unclipped`].
pub fn bicubic_sample(img: &ImageGray, points: &[(f64, f64)]) -> Vec<f64> {
    let (h, w) = img.dims();
    let data = img.data();
    let src = |q: f64, n: usize| ((q + 1.0) * n as f64 - 1.0) / 2.0;
    points
        .iter()
        .map(|&(y, x)| {
            let (ri, rw) = taps_at(src(y, h), h);
            let (ci, cw) = taps_at(src(x, w), w);
            let mut acc = 0.0;
            for a in 0..4 {
                let row = &data[ri[a] * w..(ri[a] + 1) * w];
                acc += rw[a] * (0..4).map(|b| cw[b] * row[ci[b]]).sum::<f64>();
            }
            acc
        })
        .collect()
}

/// Bicubic resample without the final clip; values may leave `[0, 1]`.
pub fn bicubic_resample_unclipped(
    data: &[f64],
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    assert!(out_h >= 1 && out_w >= 1, "output must be at least 1x1");
    assert_eq!(data.len(), height * width);
    let cols = axis_taps(width, out_w);
    let rows = axis_taps(height, out_h);
    let mut horiz = vec![0.0; height * out_w];
    for i in 0..height {
        let src = &data[i * width..(i + 1) * width];
        for (j, (idx, wts)) in cols.iter().enumerate() {
            horiz[i * out_w + j] = (0..4).map(|k| wts[k] * src[idx[k]]).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (i, (idx, wts)) in rows.iter().enumerate() {
        for j in 0..out_w {
            out[i * out_w + j] = (0..4).map(|k| wts[k] * horiz[idx[k] * out_w + j]).sum();
        }
    }
    out
}

/// Bicubic resample to `out_h × out_w`, clipped to `[0, 1]`.
pub fn bicubic_resample(img: &ImageGray, out_h: usize, out_w: usize) -> Result<ImageGray> {
    let out = bicubic_resample_unclipped(img.data(), img.height(), img.width(), out_h, out_w);
    ImageGray::from_clipped(out_h, out_w, out)
}
