//! Synthetic thermal-like scenes: a smooth low-frequency background,
//! hard-edged warm and cold rectangles, a few linear structures, hot spots
//! and mild sensor noise.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ImageGray;

fn scene(size: usize, rng: &mut impl Rng) -> ImageGray {
    let n = size as f64;
    let mut data = vec![0.0; size * size];

    let base = rng.random_range(0.3..0.55);
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.03..0.09),
            )
        })
        .collect();
    for i in 0..size {
        for j in 0..size {
            let (y, x) = (i as f64 / n, j as f64 / n);
            data[i * size + j] = base
                + waves
                    .iter()
                    .map(|&(fy, fx, ph, amp)| amp * (2.0 * PI * (fy * y + fx * x) + ph).cos())
                    .sum::<f64>();
        }
    }

    let (lo, hi) = ((size / 12).max(1), (size / 3).max(2));
    for _ in 0..rng.random_range(3..8) {
        let h = rng.random_range(lo..hi);
        let w = rng.random_range(lo..hi);
        let top = rng.random_range(0..size - h);
        let left = rng.random_range(0..size - w);
        let delta = rng.random_range(0.12..0.35) * if rng.random_bool(0.7) { 1.0 } else { -1.0 };
        for i in top..top + h {
            for j in left..left + w {
                data[i * size + j] += delta;
            }
        }
    }

    for _ in 0..rng.random_range(1..4) {
        let angle = rng.random_range(0.0..PI);
        let (ny, nx) = (angle.sin(), angle.cos());
        let offset = rng.random_range(-0.3..0.3) * n;
        let half = rng.random_range(0.6..2.0);
        let delta = rng.random_range(-0.2..0.2);
        let mid = n / 2.0;
        for i in 0..size {
            for j in 0..size {
                let dist = (i as f64 - mid) * ny + (j as f64 - mid) * nx - offset;
                if dist.abs() <= half {
                    data[i * size + j] += delta;
                }
            }
        }
    }

    for _ in 0..rng.random_range(0..4) {
        let (cy, cx) = (rng.random_range(0.0..n), rng.random_range(0.0..n));
        let r = rng.random_range(1.5..n / 16.0 + 2.0);
        let heat = rng.random_range(0.15..0.4);
        for i in 0..size {
            for j in 0..size {
                if (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2) <= r * r {
                    data[i * size + j] += heat;
                }
            }
        }
    }

    let noise = Normal::new(0.0, 0.008).expect("valid sigma");
    for v in &mut data {
        *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
    }
    ImageGray::new(size, size, data).expect("clamped values")
}

/// `count` square scenes of side `size`; deterministic for a given rng state.
pub fn synth_dataset(count: usize, size: usize, rng: &mut impl Rng) -> Vec<ImageGray> {
    assert!(count >= 1, "count must be positive");
    assert!(size >= 8, "synthetic images must be at least 8x8");
    (0..count).map(|_| scene(size, rng)).collect()
}
