//! Scale-specific LR image encoder.
//!
//! ```text
//! F_s   = Conv3x3(I)
//! F     = F_s
//! for each layer:   F = Conv3x3(SSB_M(… SSB_1(F, s) …)) + F · W_mix(s)
//! E     = Conv3x3(F) + F_s + Conv3x3([∇x I, ∇y I, ∇² I])
//! ```
//!
//! A scale-specific state-space block (SSB) is
//!
//! ```text
//! F'  = LN(F_in)
//! F1  = SiLU(Linear(F'))
//! F2  = LN(SS2D(SiLU(DWConv(Linear(F')))))
//! out = Linear(F1 ⊙ F2) + F_in ⊙ MLP(s)
//! ```
//!
//! and `W_mix(s) = Σ_i softmax(Linear(ReLU(Linear(s))))_i · W_i` mixes a bank
//! of `C×C` kernels.
//!
//! Parameter names follow `encoder.<component>.<tensor>`, e.g.
//! `encoder.layer1.block0.ss2d.dir2.delta.weight`.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::config::EncoderConfig;
use crate::error::Result;
use crate::imaging::{gradients, ImageGray};
use crate::init::Init;
use crate::tensor::Tensor;

/// The four flattening orders of SS2D: row-major forward and backward,
/// column-major forward and backward.
pub const SCAN_DIRECTIONS: usize = 4;

pub fn block_prefix(layer: usize, block: usize) -> String {
    format!("encoder.layer{layer}.block{block}")
}

pub fn layer_prefix(layer: usize) -> String {
    format!("encoder.layer{layer}")
}

/// Sequence position → flat row-major cell index, for direction `dir`.
pub fn scan_order(dir: usize, height: usize, width: usize) -> Vec<usize> {
    let l = height * width;
    let col_major = |t: usize| (t % height) * width + t / height;
    match dir {
        0 => (0..l).collect(),
        1 => (0..l).rev().collect(),
        2 => (0..l).map(col_major).collect(),
        3 => (0..l).rev().map(col_major).collect(),
        _ => panic!("scan direction {dir} out of range"),
    }
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (t, &p) in perm.iter().enumerate() {
        inv[p] = t;
    }
    inv
}

pub(crate) fn register_ss2d<R: Rng>(init: &mut Init<'_, R>, prefix: &str, width: usize, d_state: usize) {
    for dir in 0..SCAN_DIRECTIONS {
        let p = format!("{prefix}.dir{dir}");
        init.linear_no_bias(&format!("{p}.delta"), width, width);
        init.delta_bias(format!("{p}.delta.bias"), width);
        init.linear_no_bias(&format!("{p}.b_proj"), width, d_state);
        init.linear_no_bias(&format!("{p}.c_proj"), width, d_state);
        let a_log: Vec<f64> = (0..width)
            .flat_map(|_| (1..=d_state).map(|n| (n as f64).ln()))
            .collect();
        init.tensor(format!("{p}.a_log"), Tensor::new(&[width, d_state], a_log));
        init.constant(format!("{p}.skip"), &[width], 1.0);
    }
}

pub(crate) fn register_ssb<R: Rng>(init: &mut Init<'_, R>, prefix: &str, cfg: &EncoderConfig) {
    let c = cfg.channels;
    init.layer_norm(&format!("{prefix}.ln_in"), c);
    init.linear(&format!("{prefix}.gate"), c, c);
    init.linear(&format!("{prefix}.ssm_in"), c, c);
    init.uniform(format!("{prefix}.dwconv.weight"), &[9, c], 1.0 / 3.0);
    init.uniform(format!("{prefix}.dwconv.bias"), &[c], 1.0 / 3.0);
    register_ss2d(init, &format!("{prefix}.ss2d"), c, cfg.d_state);
    init.layer_norm(&format!("{prefix}.ln_out"), c);
    init.linear(&format!("{prefix}.out_proj"), c, c);
    init.linear(&format!("{prefix}.scale_mlp.fc1"), 1, c);
    let small = 0.1 / (c as f64).sqrt();
    init.uniform(format!("{prefix}.scale_mlp.fc2.weight"), &[c, c], small);
    init.constant(format!("{prefix}.scale_mlp.fc2.bias"), &[c], 1.0);
}

pub(crate) fn register_sam<R: Rng>(init: &mut Init<'_, R>, prefix: &str, cfg: &EncoderConfig) {
    let (c, n) = (cfg.channels, cfg.sam_kernels);
    init.linear(&format!("{prefix}.fc1"), 1, cfg.sam_hidden);
    init.linear(&format!("{prefix}.fc2"), cfg.sam_hidden, n);
    // Each bank entry starts as identity plus a small perturbation, so the
    // branch begins as a near-identity residual for every scale.
    let bound = 0.1 / (c as f64).sqrt();
    let mut bank = Vec::with_capacity(n * c * c);
    for _ in 0..n {
        for i in 0..c {
            for j in 0..c {
                let eye = if i == j { 1.0 } else { 0.0 };
                bank.push(eye + init.rng.random_range(-bound..=bound));
            }
        }
    }
    init.tensor(format!("{prefix}.bank"), Tensor::new(&[n, c * c], bank));
}

pub(crate) fn register<R: Rng>(init: &mut Init<'_, R>, cfg: &EncoderConfig) {
    let c = cfg.channels;
    init.conv3x3("encoder.shallow", 1, c);
    for layer in 0..cfg.layers {
        for block in 0..cfg.blocks {
            register_ssb(init, &block_prefix(layer, block), cfg);
        }
        init.conv3x3(&format!("{}.conv", layer_prefix(layer)), c, c);
        register_sam(init, &format!("{}.sam", layer_prefix(layer)), cfg);
    }
    init.conv3x3("encoder.final_conv", c, c);
    init.conv3x3("encoder.grad_conv", 3, c);
}

fn linear_p(g: &mut Graph<'_>, x: Var, prefix: &str) -> Var {
    let w = g.param(&format!("{prefix}.weight"));
    let b = g.param(&format!("{prefix}.bias"));
    g.linear(x, w, Some(b))
}

fn layer_norm_p(g: &mut Graph<'_>, x: Var, prefix: &str) -> Var {
    let gamma = g.param(&format!("{prefix}.gamma"));
    let beta = g.param(&format!("{prefix}.beta"));
    g.layer_norm(x, gamma, beta)
}

fn conv_p(g: &mut Graph<'_>, x: Var, prefix: &str) -> Var {
    let w = g.param(&format!("{prefix}.weight"));
    let b = g.param(&format!("{prefix}.bias"));
    g.conv3x3(x, w, b)
}

/// The scale as a `[1, 1]` constant.
pub fn scale_input(g: &mut Graph<'_>, s: f64) -> Var {
    g.constant(Tensor::new(&[1, 1], vec![s]))
}

/// `F_s`: 3×3 convolution of the image to `c` channels.
pub fn shallow_features(g: &mut Graph<'_>, img: &ImageGray) -> Var {
    let x = g.constant(Tensor::new(&[img.height(), img.width(), 1], img.data().to_vec()));
    conv_p(g, x, "encoder.shallow")
}

/// Single-direction selective scan of `x` (`[L, D]`, already in scan
/// order) with the parameters under `prefix` (`…ss2d.dirK`).
pub fn directional_scan(g: &mut Graph<'_>, x: Var, prefix: &str) -> Var {
    let wd = g.param(&format!("{prefix}.delta.weight"));
    let bd = g.param(&format!("{prefix}.delta.bias"));
    let pre = g.linear(x, wd, Some(bd));
    let delta = g.softplus(pre);
    let wb = g.param(&format!("{prefix}.b_proj.weight"));
    let b = g.linear(x, wb, None);
    let wc = g.param(&format!("{prefix}.c_proj.weight"));
    let c = g.linear(x, wc, None);
    let a_log = g.param(&format!("{prefix}.a_log"));
    let a = g.exp(a_log);
    let a = g.scale(a, -1.0);
    let skip = g.param(&format!("{prefix}.skip"));
    g.selective_scan(x, delta, a, b, c, skip)
}

/// Four-direction 2-D selective scan of an `[H, W, D]` map. `directions`
/// selects which branches contribute; the result is their sum, `[H, W, D]`.
pub fn ss2d_scan(
    g: &mut Graph<'_>,
    x: Var,
    prefix: &str,
    height: usize,
    width: usize,
    directions: [bool; SCAN_DIRECTIONS],
) -> Var {
    let d = *g.shape(x).last().expect("rank >= 1");
    let flat = g.reshape(x, &[height * width, d]);
    let mut total: Option<Var> = None;
    for (dir, _) in directions.iter().enumerate().filter(|(_, on)| **on) {
        let order = scan_order(dir, height, width);
        let seq = g.gather_rows(flat, &order);
        let y = directional_scan(g, seq, &format!("{prefix}.dir{dir}"));
        let back = g.gather_rows(y, &inverse(&order));
        total = Some(match total {
            Some(t) => g.add(t, back),
            None => back,
        });
    }
    let total = total.unwrap_or_else(|| g.constant(Tensor::zeros(&[height * width, d])));
    g.reshape(total, &[height, width, d])
}

/// One scale-specific state-space block on an `[H, W, C]` map.
pub fn ssb_forward(g: &mut Graph<'_>, cfg: &EncoderConfig, prefix: &str, x: Var, s: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (h, w) = (shape[0], shape[1]);
    let normed = layer_norm_p(g, x, &format!("{prefix}.ln_in"));

    let gate = linear_p(g, normed, &format!("{prefix}.gate"));
    let gate = g.silu(gate);

    let z = linear_p(g, normed, &format!("{prefix}.ssm_in"));
    let dw = g.param(&format!("{prefix}.dwconv.weight"));
    let db = g.param(&format!("{prefix}.dwconv.bias"));
    let z = g.dwconv3x3(z, dw, db);
    let z = g.silu(z);
    let z = ss2d_scan(g, z, &format!("{prefix}.ss2d"), h, w, [true; SCAN_DIRECTIONS]);
    let z = layer_norm_p(g, z, &format!("{prefix}.ln_out"));

    let mixed = g.mul(gate, z);
    let out = linear_p(g, mixed, &format!("{prefix}.out_proj"));

    let residual = if cfg.use_ssb_scale_term {
        let hidden = linear_p(g, s, &format!("{prefix}.scale_mlp.fc1"));
        let hidden = g.relu(hidden);
        let embed = linear_p(g, hidden, &format!("{prefix}.scale_mlp.fc2"));
        g.mul_cols(x, embed)
    } else {
        x
    };
    let out = g.add(out, residual);
    g.ensure_finite(out, prefix)?;
    Ok(out)
}

/// Softmax-normalised kernel weights `[1, n]` for the layer's bank.
pub fn sam_weights(g: &mut Graph<'_>, prefix: &str, s: Var) -> Var {
    let hidden = linear_p(g, s, &format!("{prefix}.fc1"));
    let hidden = g.relu(hidden);
    let logits = linear_p(g, hidden, &format!("{prefix}.fc2"));
    g.softmax(logits)
}

/// `F_in · Σ_i w_i W_i`, applied per pixel over channels.
pub fn sam_forward(g: &mut Graph<'_>, prefix: &str, x: Var, s: Var) -> Var {
    let c = g.shape(x)[2];
    let weights = sam_weights(g, prefix, s);
    let bank = g.param(&format!("{prefix}.bank"));
    let mixed = g.matmul(weights, bank, false, false);
    let mixed = g.reshape(mixed, &[c, c]);
    g.linear(x, mixed, None)
}

/// One scale-specific state-space layer.
pub fn ssl_forward(g: &mut Graph<'_>, cfg: &EncoderConfig, layer: usize, x: Var, s: Var) -> Result<Var> {
    let mut y = x;
    for block in 0..cfg.blocks {
        y = ssb_forward(g, cfg, &block_prefix(layer, block), y, s)?;
    }
    let prefix = layer_prefix(layer);
    let mut y = conv_p(g, y, &format!("{prefix}.conv"));
    if cfg.use_sam {
        let sam = sam_forward(g, &format!("{prefix}.sam"), x, s);
        y = g.add(y, sam);
    }
    g.ensure_finite(y, &prefix)?;
    Ok(y)
}

/// `conv([gx, gy, lap])` as an `[H, W, C]` map.
pub fn gradient_features(g: &mut Graph<'_>, img: &ImageGray) -> Result<Var> {
    let grads = gradients(img)?;
    let data = (0..img.height() * img.width())
        .flat_map(|k| [grads.gx[k], grads.gy[k], grads.lap[k]])
        .collect();
    let x = g.constant(Tensor::new(&[img.height(), img.width(), 3], data));
    Ok(conv_p(g, x, "encoder.grad_conv"))
}

/// Latent code `E` (`[h, w, c]`) for an LR image at scale `s`.
pub fn encode(g: &mut Graph<'_>, cfg: &EncoderConfig, img: &ImageGray, s: f64) -> Result<Var> {
    if img.height() < 3 || img.width() < 3 {
        return Err(crate::Error::ImageTooSmall {
            height: img.height(),
            width: img.width(),
            min: 3,
        });
    }
    let s = scale_input(g, s);
    let shallow = shallow_features(g, img);
    let mut f = shallow;
    for layer in 0..cfg.layers {
        f = ssl_forward(g, cfg, layer, f, s)?;
    }
    let deep = conv_p(g, f, "encoder.final_conv");
    let mut e = g.add(deep, shallow);
    if cfg.use_gradient_branch {
        let grad = gradient_features(g, img)?;
        e = g.add(e, grad);
    }
    g.ensure_finite(e, "encoder")?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_orders_are_permutations() {
        for dir in 0..SCAN_DIRECTIONS {
            let mut o = scan_order(dir, 3, 4);
            o.sort_unstable();
            assert_eq!(o, (0..12).collect::<Vec<_>>());
        }
        assert_eq!(scan_order(2, 2, 3), vec![0, 3, 1, 4, 2, 5]);
        assert_eq!(scan_order(3, 2, 3), vec![5, 2, 4, 1, 3, 0]);
    }

    use crate::config::{ModelConfig, Preset};
    use crate::model::AnyTsr;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> AnyTsr {
        AnyTsr::new(ModelConfig::preset(Preset::Tiny), 4).unwrap()
    }

    fn image(h: usize, w: usize) -> ImageGray {
        ImageGray::from_fn(h, w, |i, j| (0.5 + 0.4 * ((i * 7 + j * 3) as f64 * 0.31).sin()).clamp(0.0, 1.0)).unwrap()
    }

    fn encode_values(model: &AnyTsr, img: &ImageGray, s: f64) -> Tensor {
        let mut g = Graph::inference(&model.params);
        let e = encode(&mut g, &model.config.encoder, img, s).unwrap();
        g.value(e).clone()
    }

    #[test]
    fn encode_shapes() {
        let model = tiny();
        for (h, w) in [(8, 8), (15, 16), (16, 15), (48, 48)] {
            let e = encode_values(&model, &image(h, w), 2.0);
            assert_eq!(e.shape(), &[h, w, 32]);
            assert!(e.all_finite());
        }
        let mut g = Graph::inference(&model.params);
        assert!(matches!(
            encode(&mut g, &model.config.encoder, &image(2, 9), 2.0),
            Err(crate::Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn scale_conditions_the_code_only_through_its_branches() {
        let img = image(8, 9);
        let model = tiny();
        let a = encode_values(&model, &img, 2.0);
        let b = encode_values(&model, &img, 3.0);
        assert!(a.data().iter().zip(b.data()).any(|(x, y)| (x - y).abs() > 1e-9));

        let mut off = model.clone();
        off.config.encoder.use_ssb_scale_term = false;
        off.config.encoder.use_sam = false;
        let a = encode_values(&off, &img, 2.0);
        let b = encode_values(&off, &img, 3.0);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn sam_weights_lie_on_the_simplex() {
        let model = AnyTsr::new(ModelConfig::preset(Preset::Full), 2).unwrap();
        for s in [1.0, 2.37, 4.0, 6.0] {
            let mut g = Graph::inference(&model.params);
            let sv = scale_input(&mut g, s);
            let w = sam_weights(&mut g, &format!("{}.sam", layer_prefix(1)), sv);
            let w = g.value(w).data();
            assert_eq!(w.len(), 4);
            assert!(w.iter().all(|&v| v > 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    fn scan_params(d: usize, n: usize, a_log: f64, skip: f64, rng: &mut ChaCha8Rng) -> crate::ParamStore {
        let mut p = crate::ParamStore::new();
        let mut rand = |shape: &[usize]| {
            let len = shape.iter().product();
            Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
        };
        p.insert("x.delta.weight", rand(&[d, d]));
        p.insert("x.delta.bias", rand(&[d]));
        p.insert("x.b_proj.weight", rand(&[d, n]));
        p.insert("x.c_proj.weight", rand(&[d, n]));
        p.insert("x.a_log", Tensor::full(&[d, n], a_log));
        p.insert("x.skip", Tensor::full(&[d], skip));
        p
    }

    fn row_times(x: &[f64], w: &Tensor, col: usize) -> f64 {
        let out = w.shape()[1];
        x.iter().enumerate().map(|(i, v)| v * w.data()[i * out + col]).sum()
    }

    #[test]
    fn single_step_scan_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (d, n) = (3, 2);
        let p = scan_params(d, n, 0.3, 0.7, &mut rng);
        let x = Tensor::new(&[1, d], vec![0.4, -0.2, 0.9]);
        let mut g = Graph::inference(&p);
        let xv = g.constant(x.clone());
        let y = directional_scan(&mut g, xv, "x");
        // With h₋₁ = 0: y = Δ·u·⟨B, C⟩ + D·u.
        let t = |k: &str| p.get(k).unwrap();
        let bc: f64 = (0..n)
            .map(|s| row_times(x.data(), t("x.b_proj.weight"), s) * row_times(x.data(), t("x.c_proj.weight"), s))
            .sum();
        for ch in 0..d {
            let pre = row_times(x.data(), t("x.delta.weight"), ch) + t("x.delta.bias").data()[ch];
            let delta = pre.exp().ln_1p();
            let u = x.data()[ch];
            let want = delta * u * bc + 0.7 * u;
            assert!((g.value(y).data()[ch] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn scan_without_decay_or_skip_is_a_cumulative_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (d, n, l) = (2, 3, 6);
        // a_log = -inf gives A = 0 (no decay); skip 0 removes D·u.
        let p = scan_params(d, n, f64::NEG_INFINITY, 0.0, &mut rng);
        let x: Vec<f64> = (0..l * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = Graph::inference(&p);
        let xv = g.constant(Tensor::new(&[l, d], x.clone()));
        let y = directional_scan(&mut g, xv, "x");
        let t = |k: &str| p.get(k).unwrap();
        let row = |r: usize| &x[r * d..(r + 1) * d];
        for step in 0..l {
            for ch in 0..d {
                let mut want = 0.0;
                for tau in 0..=step {
                    let pre = row_times(row(tau), t("x.delta.weight"), ch) + t("x.delta.bias").data()[ch];
                    let delta = pre.exp().ln_1p();
                    let bc: f64 = (0..n)
                        .map(|s| row_times(row(tau), t("x.b_proj.weight"), s) * row_times(row(step), t("x.c_proj.weight"), s))
                        .sum();
                    want += delta * row(tau)[ch] * bc;
                }
                assert!((g.value(y).data()[step * d + ch] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shallow_conv_matches_direct_sum() {
        let model = tiny();
        let img = image(5, 5);
        let mut g = Graph::inference(&model.params);
        let f = shallow_features(&mut g, &img);
        let w = model.params.get("encoder.shallow.weight").unwrap();
        let b = model.params.get("encoder.shallow.bias").unwrap();
        let c = w.shape()[1];
        for i in 0..5 {
            for j in 0..5 {
                for o in 0..c {
                    let mut want = b.data()[o];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (y, x) = (i as isize + ky - 1, j as isize + kx - 1);
                            if (0..5).contains(&y) && (0..5).contains(&x) {
                                want += img.get(y as usize, x as usize) * w.data()[(ky * 3 + kx) as usize * c + o];
                            }
                        }
                    }
                    assert!((g.value(f).data()[(i * 5 + j) * c + o] - want).abs() < 1e-12);
                }
            }
        }
    }
}
