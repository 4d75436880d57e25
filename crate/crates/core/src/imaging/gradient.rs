//! Sobel and Laplacian responses with replicate-padded borders.

use super::ImageGray;
use crate::error::{Error, Result};

/// First-order (`gx`, `gy`) and second-order (`lap`) gradient responses,
/// each with the source image's dims, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientStack {
    pub height: usize,
    pub width: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub lap: Vec<f64>,
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
const LAPLACE: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];

fn correlate(data: &[f64], h: usize, w: usize, k: &[[f64; 3]; 3]) -> Vec<f64> {
    let at = |i: isize, j: isize| {
        let i = i.clamp(0, h as isize - 1) as usize;
        let j = j.clamp(0, w as isize - 1) as usize;
        data[i * w + j]
    };
    let mut out = vec![0.0; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0;
            for (dy, row) in k.iter().enumerate() {
                for (dx, kv) in row.iter().enumerate() {
                    acc += kv * at(i + dy as isize - 1, j + dx as isize - 1);
                }
            }
            out[i as usize * w + j as usize] = acc;
        }
    }
    out
}

/// Gradient responses of a raw row-major plane (values need not lie in
/// `[0, 1]`).
pub(crate) fn plane_gradients(data: &[f64], height: usize, width: usize) -> Result<GradientStack> {
    if height < 3 || width < 3 {
        return Err(Error::ImageTooSmall {
            height,
            width,
            min: 3,
        });
    }
    Ok(GradientStack {
        height,
        width,
        gx: correlate(data, height, width, &SOBEL_X),
        gy: correlate(data, height, width, &SOBEL_Y),
        lap: correlate(data, height, width, &LAPLACE),
    })
}

pub fn gradients(img: &ImageGray) -> Result<GradientStack> {
    plane_gradients(img.data(), img.height(), img.width())
}
