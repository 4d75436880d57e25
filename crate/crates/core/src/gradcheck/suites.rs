//! Per-block gradient suites on small configurations.
//!
//! Each suite builds a scalar loss from one block's output (a fixed random
//! weighting of the outputs, so no direction is privileged) and checks
//! every parameter that block touches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_block, BlockCheck};
use crate::autograd::Graph;
use crate::config::{ModelConfig, Preset};
use crate::encoder;
use crate::error::Result;
use crate::imaging::{make_coord_grid, ImageGray};
use crate::model::AnyTsr;
use crate::tensor::Tensor;
use crate::upsampler::{self, Corner};

pub const SUITES: &[&str] = &[
    "ssb",
    "sam",
    "encoder",
    "rbf_ensemble",
    "rbf_ensemble_per_corner",
    "offset_refine",
    "neo",
    "end_to_end",
];

const LR: usize = 6;
const SCALE: f64 = 1.7;

/// Shrunk model used by the suites. `Full` exercises more layers, blocks
/// and iterations; both stay small enough for finite differences.
pub fn suite_config(preset: Preset) -> ModelConfig {
    let mut cfg = ModelConfig::preset(preset);
    let e = &mut cfg.encoder;
    let u = &mut cfg.upsampler;
    let (layers, blocks, channels, kernels, iters) = match preset {
        Preset::Tiny => (1, 1, 4, 2, 1),
        Preset::Full => (2, 2, 4, 3, 2),
    };
    e.layers = layers;
    e.blocks = blocks;
    e.channels = channels;
    e.sam_kernels = kernels;
    e.sam_hidden = 4;
    e.d_state = 2;
    u.neo_width = 6;
    u.neo_iters = iters;
    cfg
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

fn test_image(rng: &mut ChaCha8Rng) -> ImageGray {
    let data = (0..LR * LR).map(|_| rng.random_range(0.05..0.95)).collect();
    ImageGray::new(LR, LR, data).expect("valid image")
}

fn queries() -> Vec<(f64, f64)> {
    let n = ((LR as f64) * SCALE).round() as usize;
    make_coord_grid(n, n).coords
}

/// Runs one named suite.
pub fn run_suite(name: &str, preset: Preset, fault: Option<&'static str>) -> Result<BlockCheck> {
    let mut cfg = suite_config(preset);
    if name == "rbf_ensemble_per_corner" {
        cfg.upsampler.per_corner_sigma = true;
    }
    let model = AnyTsr::new(cfg.clone(), 17)?;
    let store = &model.params;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let c = cfg.encoder.channels;
    let img = test_image(&mut rng);
    let q = queries();
    let k = q.len();
    match name {
        "ssb" => {
            let x = random(&mut rng, &[LR, LR, c], 1.0);
            let proj = random(&mut rng, &[LR, LR, c], 1.0);
            check_block(name, store, fault, |g| {
                let xv = g.constant(x.clone());
                let s = encoder::scale_input(g, SCALE);
                let y = encoder::ssb_forward(g, &cfg.encoder, &encoder::block_prefix(0, 0), xv, s)?;
                Ok(g.weighted_sum(y, proj.clone()))
            })
        }
        "sam" => {
            let x = random(&mut rng, &[LR, LR, c], 1.0);
            let proj = random(&mut rng, &[LR, LR, c], 1.0);
            check_block(name, store, fault, |g| {
                let xv = g.constant(x.clone());
                let s = encoder::scale_input(g, SCALE);
                let y = encoder::sam_forward(g, &format!("{}.sam", encoder::layer_prefix(0)), xv, s);
                Ok(g.weighted_sum(y, proj.clone()))
            })
        }
        "encoder" => {
            let proj = random(&mut rng, &[LR, LR, c], 1.0);
            check_block(name, store, fault, |g| {
                let e = encoder::encode(g, &cfg.encoder, &img, SCALE)?;
                Ok(g.weighted_sum(e, proj.clone()))
            })
        }
        "rbf_ensemble" | "rbf_ensemble_per_corner" => {
            let e = random(&mut rng, &[LR * LR, c], 1.0);
            let projs: Vec<Tensor> = (0..4).map(|_| random(&mut rng, &[k, c], 1.0)).collect();
            check_block(name, store, fault, |g| {
                let ev = g.constant(e.clone());
                let mut total = None;
                for (l, corner) in Corner::ALL.into_iter().enumerate() {
                    let lift = upsampler::lift_corner(LR, LR, &q, corner);
                    let codes = upsampler::gather_codes(g, ev, &lift);
                    let w = upsampler::rbf_weights(g, &cfg.upsampler, l, &lift);
                    let weighted = upsampler::weight_codes(g, codes, w);
                    let part = g.weighted_sum(weighted, projs[l].clone());
                    total = Some(match total {
                        Some(t) => g.add(t, part),
                        None => part,
                    });
                }
                Ok(total.expect("four corners"))
            })
        }
        "offset_refine" => {
            let codes = random(&mut rng, &[k, c], 1.0);
            let lift = upsampler::lift_corner(LR, LR, &q, Corner::BottomRight);
            let offsets = lift.cell_offsets(LR, LR);
            let proj = random(&mut rng, &[k, c], 1.0);
            check_block(name, store, fault, |g| {
                let cv = g.constant(codes.clone());
                let y = upsampler::offset_refine(g, &cfg.upsampler, &offsets, cv)?;
                Ok(g.weighted_sum(y, proj.clone()))
            })
        }
        "neo" => {
            let features = random(&mut rng, &[k, upsampler::neo_input_width(c)], 1.0);
            let proj = random(&mut rng, &[k], 1.0);
            check_block(name, store, fault, |g| {
                let f = g.constant(features.clone());
                let y = upsampler::neo_reconstruct(g, &cfg.upsampler, f)?;
                Ok(g.weighted_sum(y, proj.clone()))
            })
        }
        "end_to_end" => {
            let target: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
            check_block(name, store, fault, |g: &mut Graph<'_>| {
                let pred = model.forward_points(g, &img, SCALE, &q)?;
                Ok(g.l1_loss(pred, &target))
            })
        }
        other => Err(crate::Error::InvalidConfig(format!("unknown gradcheck suite {other:?}"))),
    }
}

/// Every suite in [`SUITES`] order.
pub fn run_suites(preset: Preset, fault: Option<&'static str>) -> Result<Vec<BlockCheck>> {
    SUITES.iter().map(|s| run_suite(s, preset, fault)).collect()
}
