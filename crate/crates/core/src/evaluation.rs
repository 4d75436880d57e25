//! Test-time protocol: downsample each HR image by `s`, super-resolve back
//! to the HR size, score with PSNR against the original and against a plain
//! bicubic upsampling of the same LR input.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{bicubic_resample, ImageGray};
use crate::model::{AnyTsr, MAX_OUTPUT_PIXELS};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Scales above this were never seen in training.
pub const TRAIN_SCALE_MAX: f64 = 4.0;

/// `10·log10(peak² / MSE)`, or `f64::INFINITY` for identical images.
pub fn psnr_raw(a: &ImageGray, b: &ImageGray, peak: f64) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "psnr of {:?} vs {:?} images",
            a.dims(),
            b.dims()
        )));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

/// PSNR with peak 1, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageGray, b: &ImageGray) -> Result<f64> {
    Ok(psnr_raw(a, b, 1.0)?.min(PSNR_CAP_DB))
}

/// A full-reference image metric, e.g. a perceptual distance. None is
/// bundled beyond PSNR.
pub trait ImageMetric: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, prediction: &ImageGray, reference: &ImageGray) -> Result<f64>;
}

pub struct Psnr;

impl ImageMetric for Psnr {
    fn name(&self) -> &str {
        "psnr"
    }

    fn score(&self, prediction: &ImageGray, reference: &ImageGray) -> Result<f64> {
        psnr(prediction, reference)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalOptions {
    /// Pixels removed from every side before scoring.
    pub crop_border: usize,
}

fn shave(img: &ImageGray, border: usize) -> Result<ImageGray> {
    if border == 0 {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    if 2 * border >= h || 2 * border >= w {
        return Err(Error::InvalidImage(format!("crop border {border} too large for {h}x{w}")));
    }
    img.crop(border, border, h - 2 * border, w - 2 * border)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub image: String,
    pub psnr_model: f64,
    pub psnr_bicubic: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleRow {
    pub scale: f64,
    /// Above the training range.
    pub ood: bool,
    pub images: Vec<ImageScore>,
}

impl ScaleRow {
    pub fn mean_model(&self) -> f64 {
        mean(self.images.iter().map(|i| i.psnr_model))
    }

    pub fn mean_bicubic(&self) -> f64 {
        mean(self.images.iter().map(|i| i.psnr_bicubic))
    }

    pub fn std_model(&self) -> f64 {
        let m = self.mean_model();
        let n = self.images.len().max(1) as f64;
        (self.images.iter().map(|i| (i.psnr_model - m).powi(2)).sum::<f64>() / n).sqrt()
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub model: String,
    /// Active toggles, `key=value`.
    pub flags: Vec<String>,
    pub rows: Vec<ScaleRow>,
}

impl EvalReport {
    pub fn new(model: &AnyTsr, name: &str) -> Self {
        let e = &model.config.encoder;
        let u = &model.config.upsampler;
        let flags = [
            ("use_ssb_scale_term", e.use_ssb_scale_term),
            ("use_sam", e.use_sam),
            ("use_gradient_branch", e.use_gradient_branch),
            ("use_lle", u.use_lle),
            ("use_orm", u.use_orm),
            ("bicubic_skip", u.bicubic_skip),
        ]
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
        Self {
            model: name.to_string(),
            flags,
            rows: Vec::new(),
        }
    }

    /// `scale,ood,image,psnr_model,psnr_bicubic`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scale,ood,image,psnr_model,psnr_bicubic\n");
        for row in &self.rows {
            for img in &row.images {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.6},{:.6}",
                    row.scale, row.ood, img.image, img.psnr_model, img.psnr_bicubic
                );
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("model: {}\nflags: {}\n", self.model, self.flags.join(" "));
        let _ = writeln!(out, "{:>8}  {:>12}  {:>12}  {:>8}", "scale", "model (dB)", "bicubic (dB)", "images");
        for row in &self.rows {
            let mark = if row.ood { "*" } else { " " };
            let _ = writeln!(
                out,
                "{:>7.2}{mark}  {:>12.3}  {:>12.3}  {:>8}",
                row.scale,
                row.mean_model(),
                row.mean_bicubic(),
                row.images.len()
            );
        }
        if self.rows.iter().any(|r| r.ood) {
            out.push_str("* scale outside the training range\n");
        }
        out
    }
}

/// LR input for scale `s`: bicubic downsampling to `round(H/s) × round(W/s)`.
pub fn degrade(hr: &ImageGray, s: f64) -> Result<ImageGray> {
    if !(s >= 1.0 && s.is_finite()) {
        return Err(Error::InvalidConfig(format!("scale {s} must be >= 1")));
    }
    let r = |n: usize| ((n as f64 / s).round() as usize).max(1);
    bicubic_resample(hr, r(hr.height()), r(hr.width()))
}

pub fn eval_scale(
    model: &AnyTsr,
    images: &[(String, ImageGray)],
    s: f64,
    opts: &EvalOptions,
) -> Result<ScaleRow> {
    let scores = images
        .par_iter()
        .map(|(name, hr)| {
            let (h, w) = hr.dims();
            let lr = degrade(hr, s)?;
            let sr = model.infer_dims(&lr, s, h, w)?;
            let bicubic = bicubic_resample(&lr, h, w)?;
            let hr_c = shave(hr, opts.crop_border)?;
            Ok(ImageScore {
                image: name.clone(),
                psnr_model: psnr(&shave(&sr, opts.crop_border)?, &hr_c)?,
                psnr_bicubic: psnr(&shave(&bicubic, opts.crop_border)?, &hr_c)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScaleRow {
        scale: s,
        ood: s > TRAIN_SCALE_MAX,
        images: scores,
    })
}

pub fn sweep(
    model: &AnyTsr,
    name: &str,
    images: &[(String, ImageGray)],
    scales: &[f64],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut report = EvalReport::new(model, name);
    for &s in scales {
        report.rows.push(eval_scale(model, images, s, opts)?);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainRow {
    pub chain: Vec<f64>,
    pub total_scale: f64,
    pub per_image: Vec<(String, f64)>,
}

impl ChainRow {
    pub fn psnr_mean(&self) -> f64 {
        mean(self.per_image.iter().map(|(_, p)| *p))
    }

    /// `2x3` style label.
    pub fn label(&self) -> String {
        self.chain.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x")
    }
}

/// Intermediate (and final) sizes for a chain starting at `lr` dims and
/// ending at exactly `target`.
fn chain_sizes(lr: (usize, usize), target: (usize, usize), chain: &[f64]) -> Vec<(usize, usize)> {
    let mut sizes = Vec::with_capacity(chain.len());
    let mut cur = (lr.0 as f64, lr.1 as f64);
    for (i, &s) in chain.iter().enumerate() {
        if i + 1 == chain.len() {
            sizes.push(target);
        } else {
            cur = (cur.0 * s, cur.1 * s);
            sizes.push(((cur.0.round() as usize).max(1), (cur.1.round() as usize).max(1)));
        }
    }
    sizes
}

/// Super-resolves in several steps, re-encoding each clipped intermediate.
/// The LR input is the HR image degraded by the chain's product; the last
/// step lands exactly on the HR size.
pub fn multi_step_synthesis(model: &AnyTsr, images: &[(String, ImageGray)], chain: &[f64]) -> Result<ChainRow> {
    if chain.is_empty() {
        return Err(Error::InvalidConfig("empty scale chain".into()));
    }
    if let Some(s) = chain.iter().find(|s| !(**s >= 1.0 && s.is_finite())) {
        return Err(Error::InvalidConfig(format!("chain scale {s} must be >= 1")));
    }
    let total: f64 = chain.iter().product();
    let mut per_image = Vec::with_capacity(images.len());
    for (name, hr) in images {
        let lr = degrade(hr, total)?;
        let sizes = chain_sizes(lr.dims(), hr.dims(), chain);
        if let Some(&(h, w)) = sizes.iter().find(|(h, w)| h * w > MAX_OUTPUT_PIXELS) {
            return Err(Error::InvalidImage(format!(
                "intermediate size {h}x{w} exceeds 4096x4096"
            )));
        }
        let mut cur = lr;
        for (&s, &(h, w)) in chain.iter().zip(&sizes) {
            cur = model.infer_dims(&cur, s, h, w)?;
        }
        per_image.push((name.clone(), psnr(&cur, hr)?));
    }
    Ok(ChainRow {
        chain: chain.to_vec(),
        total_scale: total,
        per_image,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiStepReport {
    pub rows: Vec<ChainRow>,
}

impl MultiStepReport {
    /// `chain,psnr_mean`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("chain,psnr_mean\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.6}", r.label(), r.psnr_mean());
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("chains multiply to the target scale; each step re-encodes the clipped output\n");
        let _ = writeln!(out, "{:>14}  {:>7}  {:>10}  {:>11}", "chain", "total", "steps", "PSNR (dB)");
        for r in &self.rows {
            let kind = if r.chain.len() == 1 {
                "one step".to_string()
            } else {
                format!("{} steps", r.chain.len())
            };
            let _ = writeln!(
                out,
                "{:>14}  {:>7.3}  {:>10}  {:>11.3}",
                r.label(),
                r.total_scale,
                kind,
                r.psnr_mean()
            );
        }
        out
    }
}

pub fn multi_step_report(model: &AnyTsr, images: &[(String, ImageGray)], chains: &[Vec<f64>]) -> Result<MultiStepReport> {
    let rows = chains
        .iter()
        .map(|c| multi_step_synthesis(model, images, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiStepReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_hand_values() {
        let a = ImageGray::constant(4, 4, 0.0).unwrap();
        let b = ImageGray::constant(4, 4, 0.5).unwrap();
        assert!((psnr(&a, &b).unwrap() - 6.020_599_913_279_624).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        assert!(psnr_raw(&a, &a, 1.0).unwrap().is_infinite());
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let c = ImageGray::constant(3, 4, 0.0).unwrap();
        assert!(psnr(&a, &c).is_err());
    }

    #[test]
    fn chain_sizes_end_on_target() {
        assert_eq!(chain_sizes((16, 16), (96, 96), &[6.0]), vec![(96, 96)]);
        assert_eq!(chain_sizes((16, 16), (96, 96), &[2.0, 3.0]), vec![(32, 32), (96, 96)]);
        assert_eq!(
            chain_sizes((16, 16), (96, 96), &[2.0, 2.0, 1.5]),
            vec![(32, 32), (64, 64), (96, 96)]
        );
    }

    #[test]
    fn degrade_rounds() {
        let hr = ImageGray::constant(96, 96, 0.2).unwrap();
        assert_eq!(degrade(&hr, 2.45).unwrap().dims(), (39, 39));
        assert_eq!(degrade(&hr, 1.0).unwrap(), hr);
    }

    use crate::config::{ModelConfig, Preset};
    use crate::imaging::synth_dataset;
    use rand::SeedableRng;

    fn setup() -> (AnyTsr, Vec<(String, ImageGray)>) {
        let mut cfg = ModelConfig::preset(Preset::Tiny);
        cfg.encoder.channels = 8;
        cfg.upsampler.neo_width = 8;
        let model = AnyTsr::new(cfg, 3).unwrap();
        let imgs = synth_dataset(2, 24, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1))
            .into_iter()
            .enumerate()
            .map(|(i, img)| (format!("img{i}"), img))
            .collect();
        (model, imgs)
    }

    #[test]
    fn evaluation_is_deterministic_and_marks_ood() {
        let (model, imgs) = setup();
        let opts = EvalOptions::default();
        let a = sweep(&model, "m", &imgs, &[2.0, 4.5], &opts).unwrap();
        let b = sweep(&model, "m", &imgs, &[2.0, 4.5], &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.iter().map(|r| r.ood).collect::<Vec<_>>(), vec![false, true]);
        let csv = a.to_csv();
        assert!(csv.starts_with("scale,ood,image,psnr_model,psnr_bicubic\n"));
        assert_eq!(csv.lines().count(), 5);
        assert!(a.rows.iter().all(|r| r.std_model() < 20.0));
    }

    #[test]
    fn unit_scale_bicubic_is_saturated() {
        let (model, imgs) = setup();
        let row = eval_scale(&model, &imgs, 1.0, &EvalOptions::default()).unwrap();
        assert!(row.images.iter().all(|s| s.psnr_bicubic == PSNR_CAP_DB));
    }

    #[test]
    fn crop_border_changes_the_scored_region() {
        let (model, imgs) = setup();
        let full = eval_scale(&model, &imgs, 2.0, &EvalOptions::default()).unwrap();
        let cropped = eval_scale(&model, &imgs, 2.0, &EvalOptions { crop_border: 2 }).unwrap();
        assert_ne!(full, cropped);
        assert!(eval_scale(&model, &imgs, 2.0, &EvalOptions { crop_border: 12 }).is_err());
    }

    #[test]
    fn single_step_chain_equals_eval_scale() {
        let (model, imgs) = setup();
        for s in [2.0, 3.0] {
            let chain = multi_step_synthesis(&model, &imgs, &[s]).unwrap();
            let row = eval_scale(&model, &imgs, s, &EvalOptions::default()).unwrap();
            let direct: Vec<f64> = row.images.iter().map(|i| i.psnr_model).collect();
            let chained: Vec<f64> = chain.per_image.iter().map(|(_, p)| *p).collect();
            assert_eq!(chained, direct);
        }
        let report = multi_step_report(&model, &imgs, &[vec![6.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(report.to_csv().lines().next(), Some("chain,psnr_mean"));
        assert!(report.to_text().contains("one step"));
    }
}
