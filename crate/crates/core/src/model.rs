//! The full network: encoder followed by the any-scale upsampler.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamStore, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::imaging::{bicubic_sample, make_coord_grid, ImageGray};
use crate::tensor::Tensor;
use crate::init::Init;
use crate::{encoder, upsampler};

/// Largest output (in pixels) a single inference call will produce.
pub const MAX_OUTPUT_PIXELS: usize = 4096 * 4096;

#[derive(Clone, Debug)]
pub struct AnyTsr {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// HR output size for scale `s`: `round(s·h) × round(s·w)`.
pub fn output_dims(height: usize, width: usize, s: f64) -> (usize, usize) {
    let r = |n: usize| ((s * n as f64).round() as usize).max(1);
    (r(height), r(width))
}

impl AnyTsr {
    /// Randomly initialised model. Parameters are rounded to `f32` so that
    /// checkpoints reproduce them exactly.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        encoder::register(&mut init, &config.encoder);
        upsampler::register(&mut init, &config.upsampler, config.encoder.channels);
        store.quantize_f32();
        Ok(Self {
            config,
            params: store,
        })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let reference = Self::new(config.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing tensor {name}"))),
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors, expected {}",
                params.len(),
                reference.params.len()
            )));
        }
        Ok(Self { config, params })
    }

    /// Predicted values (unclipped) at normalised `queries`, `[K]`.
    pub fn forward_points(&self, g: &mut Graph<'_>, lr: &ImageGray, s: f64, queries: &[(f64, f64)]) -> Result<Var> {
        let e = encoder::encode(g, &self.config.encoder, lr, s)?;
        let out = upsampler::upsample(g, &self.config.upsampler, e, s, queries)?;
        if !self.config.upsampler.bicubic_skip {
            return Ok(out);
        }
        let base = g.constant(Tensor::new(&[queries.len()], bicubic_sample(lr, queries)));
        Ok(g.add(out, base))
    }

    /// Clipped predictions at `queries`, without gradient tracking.
    pub fn infer_points(&self, lr: &ImageGray, s: f64, queries: &[(f64, f64)]) -> Result<Vec<f64>> {
        let mut g = Graph::inference(&self.params);
        let out = self.forward_points(&mut g, lr, s, queries)?;
        Ok(g.value(out).data().iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    /// Super-resolves `lr` to `out_h × out_w`, conditioning on scale `s`.
    pub fn infer_dims(&self, lr: &ImageGray, s: f64, out_h: usize, out_w: usize) -> Result<ImageGray> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidConfig(format!("scale must be positive, got {s}")));
        }
        if out_h == 0 || out_w == 0 || out_h * out_w > MAX_OUTPUT_PIXELS {
            return Err(Error::InvalidImage(format!(
                "output size {out_h}x{out_w} outside 1..=4096x4096"
            )));
        }
        let grid = make_coord_grid(out_h, out_w);
        let values = self.infer_points(lr, s, &grid.coords)?;
        ImageGray::new(out_h, out_w, values)
    }

    /// Super-resolves `lr` by `s` to `round(s·h) × round(s·w)`.
    pub fn infer(&self, lr: &ImageGray, s: f64) -> Result<ImageGray> {
        let (h, w) = output_dims(lr.height(), lr.width(), s);
        self.infer_dims(lr, s, h, w)
    }
}
