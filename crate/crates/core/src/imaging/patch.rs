use rand::seq::index;
use rand::Rng;

use super::{bicubic_resample, cell_center, ImageGray};
use crate::error::{Error, Result};

/// One training sample: a low-resolution input and a sparse set of
/// ground-truth pixels from the high-resolution crop it was made from.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub lr: ImageGray,
    pub scale: f64,
    /// Normalised `(y, x)` centres of the selected pixels within the crop.
    pub gt_coords: Vec<(f64, f64)>,
    pub gt_values: Vec<f64>,
}

/// HR crop edge for a given scale; `round(s · lr_size)`.
pub fn crop_size(scale: f64, lr_size: usize) -> usize {
    (scale * lr_size as f64).round() as usize
}

/// Crops a random `round(s·lr_size)` square from `hr`, bicubic-downsamples
/// it to `lr_size²`, and picks `lr_size²` distinct crop pixels as targets.
pub fn sample_patch_pair(
    hr: &ImageGray,
    scale: f64,
    lr_size: usize,
    rng: &mut impl Rng,
) -> Result<PatchPair> {
    if !(scale >= 1.0 && scale.is_finite()) {
        return Err(Error::InvalidConfig(format!("scale {scale} must be >= 1")));
    }
    if lr_size == 0 {
        return Err(Error::InvalidConfig("lr_size must be positive".into()));
    }
    let crop = crop_size(scale, lr_size);
    if crop > hr.height() || crop > hr.width() {
        return Err(Error::Dataset(format!(
            "image {}x{} too small for a {crop}x{crop} crop (scale {scale}, lr_size {lr_size})",
            hr.height(),
            hr.width()
        )));
    }
    let top = rng.random_range(0..=hr.height() - crop);
    let left = rng.random_range(0..=hr.width() - crop);
    let region = hr.crop(top, left, crop, crop)?;
    let lr = bicubic_resample(&region, lr_size, lr_size)?;
    let picks = index::sample(rng, crop * crop, lr_size * lr_size);
    let mut gt_coords = Vec::with_capacity(picks.len());
    let mut gt_values = Vec::with_capacity(picks.len());
    for p in picks.iter() {
        let (i, j) = (p / crop, p % crop);
        gt_coords.push((cell_center(i, crop), cell_center(j, crop)));
        gt_values.push(region.get(i, j));
    }
    Ok(PatchPair {
        lr,
        scale,
        gt_coords,
        gt_values,
    })
}
