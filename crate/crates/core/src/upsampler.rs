//! Any-scale upsampler: decodes an LR latent map at arbitrary normalised
//! query coordinates.
//!
//! For each of the four corners around a query `x_q`:
//!
//! ```text
//! E^HR  = E^LR[corner cell]                       nearest lift
//! δx    = |x_q − x'|                              x' is that cell's centre
//! w     = exp(−|δx|² / 2σ²)                       learnable local ensemble
//! E     = w · E^HR
//! E_off = softmax(φ_q(δx) φ_k(E)ᵀ / √C) φ_v(E)     offset refinement
//! ```
//!
//! and `I = NEO(s, {E_l, E_off_l}, {δx_l})` where NEO lifts the concatenated
//! per-query features, applies a few Galerkin-type attention integrals
//! over the query set and projects to one channel. NEO uses SiLU so the
//! whole head is smooth.
//!
//! The attention-facing offsets (φ_q and the NEO input) are expressed in
//! LR-cell units, `δx · (h/2, w/2) ∈ [0, 1]²`, so they do not depend on the
//! LR resolution. The RBF operates on the normalised `δx`.

use rand::Rng;

use crate::autograd::{AttentionWindow, Graph, Var};
use crate::config::UpsamplerConfig;
use crate::error::Result;
use crate::imaging::cell_center;
use crate::init::Init;
use crate::tensor::Tensor;

/// Initial RBF width in normalised coordinates.
pub const INIT_SIGMA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Corner {
    pub const ALL: [Corner; 4] = [
        Corner::TopLeft,
        Corner::TopRight,
        Corner::BottomLeft,
        Corner::BottomRight,
    ];

    fn is_top(self) -> bool {
        matches!(self, Corner::TopLeft | Corner::TopRight)
    }

    fn is_left(self) -> bool {
        matches!(self, Corner::TopLeft | Corner::BottomLeft)
    }
}

/// Index of the LR cell whose centre is nearest to `q` on the requested
/// side (`lower`: centre ≤ q), clamped to `[0, n)`.
pub fn neighbour_index(q: f64, n: usize, lower: bool) -> usize {
    // Continuous cell index; cell i has its centre at u = i.
    let u = ((q + 1.0) * n as f64 - 1.0) / 2.0;
    let i = if lower {
        (u + 1e-9).floor()
    } else {
        (u - 1e-9).ceil()
    };
    i.clamp(0.0, (n - 1) as f64) as usize
}

/// One corner's nearest lift of a query list.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedCorner {
    pub corner: Corner,
    /// Row-major LR cell index per query.
    pub index: Vec<usize>,
    /// Centre `x'` of that cell.
    pub source: Vec<(f64, f64)>,
    /// `|x_q − x'|` per axis, normalised coordinates.
    pub delta: Vec<(f64, f64)>,
}

impl LiftedCorner {
    pub fn dist_sq(&self) -> Vec<f64> {
        self.delta.iter().map(|(dy, dx)| dy * dy + dx * dx).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.dist_sq().into_iter().map(f64::sqrt).collect()
    }

    /// `δx` rescaled to LR-cell units, `[K, 2]`.
    pub fn cell_offsets(&self, lr_h: usize, lr_w: usize) -> Tensor {
        let (ky, kx) = (lr_h as f64 / 2.0, lr_w as f64 / 2.0);
        let data = self.delta.iter().flat_map(|(dy, dx)| [dy * ky, dx * kx]).collect();
        Tensor::new(&[self.delta.len(), 2], data)
    }
}

pub fn lift_corner(lr_h: usize, lr_w: usize, queries: &[(f64, f64)], corner: Corner) -> LiftedCorner {
    let mut index = Vec::with_capacity(queries.len());
    let mut source = Vec::with_capacity(queries.len());
    let mut delta = Vec::with_capacity(queries.len());
    for &(yq, xq) in queries {
        let i = neighbour_index(yq, lr_h, corner.is_top());
        let j = neighbour_index(xq, lr_w, corner.is_left());
        let (ys, xs) = (cell_center(i, lr_h), cell_center(j, lr_w));
        index.push(i * lr_w + j);
        source.push((ys, xs));
        delta.push(((yq - ys).abs(), (xq - xs).abs()));
    }
    LiftedCorner {
        corner,
        index,
        source,
        delta,
    }
}

/// `exp(−d² / 2σ²)` without a graph.
pub fn rbf_weight(dist: f64, sigma: f64) -> f64 {
    (-dist * dist / (2.0 * sigma * sigma)).exp()
}

pub fn rbf_param_name(cfg: &UpsamplerConfig, corner: usize) -> String {
    if cfg.per_corner_sigma {
        format!("upsampler.rbf.corner{corner}.log_sigma")
    } else {
        "upsampler.rbf.log_sigma".to_string()
    }
}

fn neo_iter_prefix(t: usize) -> String {
    format!("upsampler.neo.iter{t}")
}

/// NEO input width for `channels`-wide codes: four corners of `[E, E_off]`,
/// four `δx` pairs and the scale.
pub fn neo_input_width(channels: usize) -> usize {
    8 * channels + 8 + 1
}

/// Initial gain of the attention query and FFN output maps inside each
/// operator iteration, so every iteration starts close to the identity.
const RESIDUAL_GAIN: f64 = 0.01;

pub(crate) fn register<R: Rng>(init: &mut Init<'_, R>, cfg: &UpsamplerConfig, channels: usize) {
    let log_sigma = INIT_SIGMA.ln();
    if cfg.per_corner_sigma {
        for l in 0..4 {
            init.constant(rbf_param_name(cfg, l), &[1], log_sigma);
        }
    } else {
        init.constant(rbf_param_name(cfg, 0), &[1], log_sigma);
    }
    init.linear("upsampler.orm.q", 2, channels);
    init.linear("upsampler.orm.k", channels, channels);
    init.linear("upsampler.orm.v", channels, channels);
    let w = cfg.neo_width;
    init.linear("upsampler.neo.lift", neo_input_width(channels), w);
    for t in 0..cfg.neo_iters {
        let p = neo_iter_prefix(t);
        init.linear_gain(&format!("{p}.q"), w, w, RESIDUAL_GAIN);
        init.linear(&format!("{p}.k"), w, w);
        init.linear(&format!("{p}.v"), w, w);
        init.layer_norm(&format!("{p}.k_ln"), w);
        init.layer_norm(&format!("{p}.v_ln"), w);
        init.linear(&format!("{p}.ffn.fc1"), w, w);
        init.linear_gain(&format!("{p}.ffn.fc2"), w, w, RESIDUAL_GAIN);
    }
    init.linear("upsampler.neo.proj.fc1", w, w);
    if cfg.bicubic_skip {
        init.constant("upsampler.neo.proj.fc2.weight".into(), &[w, 1], 0.0);
        init.constant("upsampler.neo.proj.fc2.bias".into(), &[1], 0.0);
    } else {
        init.linear("upsampler.neo.proj.fc2", w, 1);
    }
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

/// Lifted codes `[K, C]` gathered from a flattened `[h·w, C]` latent map.
pub fn gather_codes(g: &mut Graph<'_>, e_flat: Var, lift: &LiftedCorner) -> Var {
    g.gather_rows(e_flat, &lift.index)
}

/// RBF ensemble weights `[K]` for one corner.
pub fn rbf_weights(g: &mut Graph<'_>, cfg: &UpsamplerConfig, corner: usize, lift: &LiftedCorner) -> Var {
    let log_sigma = g.param(&rbf_param_name(cfg, corner));
    g.gaussian_rbf(log_sigma, &lift.dist_sq())
}

/// `w · E^HR`, broadcast over channels.
pub fn weight_codes(g: &mut Graph<'_>, codes: Var, w: Var) -> Var {
    g.mul_rows(codes, w)
}

/// `softmax(Q Kᵀ · scale) V` with `Q` from the offsets and `K`, `V` from the
/// weighted codes; `[K, C]`.
pub fn offset_refine(g: &mut Graph<'_>, cfg: &UpsamplerConfig, offsets: &Tensor, codes: Var) -> Result<Var> {
    let c = g.shape(codes)[1];
    let dx = g.constant(offsets.clone());
    let q = linear_p(g, dx, "upsampler.orm.q");
    let k = linear_p(g, codes, "upsampler.orm.k");
    let v = linear_p(g, codes, "upsampler.orm.v");
    let scale = if cfg.scaled_attention {
        1.0 / (c as f64).sqrt()
    } else {
        1.0
    };
    let window = cfg
        .attention_window
        .map_or(AttentionWindow::Global, AttentionWindow::Tiled);
    let out = g.attention(q, k, v, scale, window);
    g.ensure_finite(out, "offset refinement")?;
    Ok(out)
}

/// Neural-operator head on `[K, n_in]` features; returns `[K]` (unclipped).
pub fn neo_reconstruct(g: &mut Graph<'_>, cfg: &UpsamplerConfig, features: Var) -> Result<Var> {
    let n = g.shape(features)[0];
    let mut z = linear_p(g, features, "upsampler.neo.lift");
    for t in 0..cfg.neo_iters {
        let p = neo_iter_prefix(t);
        let q = linear_p(g, z, &format!("{p}.q"));
        let k = linear_p(g, z, &format!("{p}.k"));
        let k = layer_norm_p(g, k, &format!("{p}.k_ln"));
        let v = linear_p(g, z, &format!("{p}.v"));
        let v = layer_norm_p(g, v, &format!("{p}.v_ln"));
        let kv = g.matmul(k, v, true, false);
        let kv = g.scale(kv, 1.0 / n as f64);
        let mixed = g.matmul(q, kv, false, false);
        z = g.add(z, mixed);
        let h = linear_p(g, z, &format!("{p}.ffn.fc1"));
        let h = g.silu(h);
        let h = linear_p(g, h, &format!("{p}.ffn.fc2"));
        z = g.add(z, h);
    }
    let h = linear_p(g, z, "upsampler.neo.proj.fc1");
    let h = g.silu(h);
    let out = linear_p(g, h, "upsampler.neo.proj.fc2");
    let out = g.reshape(out, &[n]);
    g.ensure_finite(out, "neural operator")?;
    Ok(out)
}

/// Decodes `e` (`[h, w, C]`) at `queries`; returns `[K]` unclipped values.
pub fn upsample(g: &mut Graph<'_>, cfg: &UpsamplerConfig, e: Var, s: f64, queries: &[(f64, f64)]) -> Result<Var> {
    let shape = g.shape(e).to_vec();
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let k = queries.len();
    let e_flat = g.reshape(e, &[h * w, c]);
    let mut parts = Vec::with_capacity(8);
    let mut extra = vec![0.0; k * 9];
    for (l, corner) in Corner::ALL.into_iter().enumerate() {
        let lift = lift_corner(h, w, queries, corner);
        let codes = gather_codes(g, e_flat, &lift);
        let codes = if cfg.use_lle {
            let wts = rbf_weights(g, cfg, l, &lift);
            weight_codes(g, codes, wts)
        } else {
            codes
        };
        let offsets = lift.cell_offsets(h, w);
        let refined = if cfg.use_orm {
            offset_refine(g, cfg, &offsets, codes)?
        } else {
            codes
        };
        parts.push(codes);
        parts.push(refined);
        for (r, off) in offsets.data().chunks(2).enumerate() {
            extra[r * 9 + 2 * l] = off[0];
            extra[r * 9 + 2 * l + 1] = off[1];
        }
    }
    for r in 0..k {
        extra[r * 9 + 8] = s;
    }
    parts.push(g.constant(Tensor::new(&[k, 9], extra)));
    let features = g.concat_cols(&parts);
    neo_reconstruct(g, cfg, features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::make_coord_grid;

    #[test]
    fn neighbour_index_sides_and_clamping() {
        // n = 4: centres at -0.75, -0.25, 0.25, 0.75.
        assert_eq!(neighbour_index(-0.1, 4, true), 1);
        assert_eq!(neighbour_index(-0.1, 4, false), 2);
        assert_eq!(neighbour_index(0.25, 4, true), 2);
        assert_eq!(neighbour_index(0.25, 4, false), 2);
        assert_eq!(neighbour_index(-0.9, 4, true), 0);
        assert_eq!(neighbour_index(-0.9, 4, false), 0);
        assert_eq!(neighbour_index(0.95, 4, false), 3);
    }

    #[test]
    fn identity_lift_at_unit_scale() {
        let grid = make_coord_grid(5, 3);
        let lift = lift_corner(5, 3, &grid.coords, Corner::TopLeft);
        assert_eq!(lift.index, (0..15).collect::<Vec<_>>());
        assert!(lift.delta.iter().all(|&(a, b)| a < 1e-12 && b < 1e-12));
    }

    #[test]
    fn rbf_reference_values() {
        assert_eq!(rbf_weight(0.0, 0.3), 1.0);
        assert!((rbf_weight(1.0, 1.0) - 0.606_530_659_712_633_4).abs() < 1e-15);
    }

    use crate::config::{ModelConfig, Preset};
    use crate::model::AnyTsr;

    #[test]
    fn two_by_two_to_four_by_four_indices() {
        // Per axis the lower neighbour is [0, 0, 0, 1] and the upper one
        // [0, 1, 1, 1] for the four output rows (or columns).
        let lower = [0, 0, 0, 1];
        let upper = [0, 1, 1, 1];
        let grid = make_coord_grid(4, 4);
        for corner in Corner::ALL {
            let lift = lift_corner(2, 2, &grid.coords, corner);
            let rows = if corner.is_top() { lower } else { upper };
            let cols = if corner.is_left() { lower } else { upper };
            let want: Vec<usize> = (0..16).map(|k| rows[k / 4] * 2 + cols[k % 4]).collect();
            assert_eq!(lift.index, want, "{corner:?}");
        }
    }

    #[test]
    fn offsets_stay_within_one_cell() {
        for h in [7usize, 16] {
            for s in [1.3, 2.0, 3.7, 6.0] {
                let n = (h as f64 * s).round() as usize;
                let grid = make_coord_grid(n, n);
                for corner in Corner::ALL {
                    let lift = lift_corner(h, h, &grid.coords, corner);
                    let off = lift.cell_offsets(h, h);
                    assert!(off.data().iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)), "h {h} s {s}");
                    assert!(lift.delta.iter().all(|&(a, b)| a <= 2.0 / h as f64 + 1e-12 && b <= 2.0 / h as f64 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn interior_queries_lie_between_their_corners() {
        let (h, w) = (6, 9);
        let grid = make_coord_grid(17, 23);
        let tl = lift_corner(h, w, &grid.coords, Corner::TopLeft);
        let br = lift_corner(h, w, &grid.coords, Corner::BottomRight);
        let (y0, y1) = (cell_center(0, h), cell_center(h - 1, h));
        let (x0, x1) = (cell_center(0, w), cell_center(w - 1, w));
        for (k, &(y, x)) in grid.coords.iter().enumerate() {
            if !(y0..=y1).contains(&y) || !(x0..=x1).contains(&x) {
                continue;
            }
            assert!(tl.source[k].0 <= y + 1e-12 && y <= br.source[k].0 + 1e-12);
            assert!(tl.source[k].1 <= x + 1e-12 && x <= br.source[k].1 + 1e-12);
        }
    }

    #[test]
    fn attention_matches_hand_softmax() {
        let q = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.5, -1.0]);
        let k = Tensor::new(&[4, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let v = Tensor::new(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let mut g = Graph::detached();
        let (qv, kv, vv) = (g.constant(q), g.constant(k), g.constant(v));
        let out = g.attention(qv, kv, vv, 0.5, AttentionWindow::Global);
        // Row 0 logits 0.5·(1, 0, -1, 0); row 1 logits 0.5·(0.5, -1, -0.5, 1).
        for (r, logits) in [[0.5, 0.0, -0.5, 0.0], [0.25, -0.5, -0.25, 0.5]].iter().enumerate() {
            let e: Vec<f64> = logits.iter().map(|l: &f64| l.exp()).collect();
            let z: f64 = e.iter().sum();
            let want: f64 = e.iter().zip([1.0, 2.0, 3.0, 4.0]).map(|(a, b)| a * b).sum::<f64>() / z;
            assert!((g.value(out).data()[r] - want).abs() < 1e-12);
        }
    }

    fn small_model() -> AnyTsr {
        let mut cfg = ModelConfig::preset(Preset::Tiny);
        cfg.encoder.channels = 8;
        cfg.upsampler.neo_width = 8;
        AnyTsr::new(cfg, 6).unwrap()
    }

    fn lr_image() -> crate::imaging::ImageGray {
        crate::imaging::ImageGray::from_fn(6, 7, |i, j| ((i * 3 + j * 5) % 11) as f64 / 10.0).unwrap()
    }

    #[test]
    fn outputs_follow_query_order() {
        let model = small_model();
        let lr = lr_image();
        let q = make_coord_grid(9, 11).coords;
        let perm: Vec<usize> = (0..q.len()).map(|i| (i * 37) % q.len()).collect();
        let shuffled: Vec<(f64, f64)> = perm.iter().map(|&i| q[i]).collect();
        let a = model.infer_points(&lr, 1.5, &q).unwrap();
        let b = model.infer_points(&lr, 1.5, &shuffled).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert!((b[k] - a[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_operator_outputs_its_final_bias() {
        let mut model = small_model();
        for (name, t) in model.params.iter_mut() {
            if name.starts_with("upsampler.neo.") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        model.params.get_mut("upsampler.neo.proj.fc2.bias").unwrap().data_mut()[0] = 0.375;
        let mut g = Graph::inference(&model.params);
        let q = make_coord_grid(10, 10).coords;
        let out = model.forward_points(&mut g, &lr_image(), 1.4, &q).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.375));
    }

    #[test]
    fn bicubic_skip_starts_at_bicubic() {
        let mut cfg = ModelConfig::preset(Preset::Tiny);
        cfg.encoder.channels = 8;
        cfg.upsampler.bicubic_skip = true;
        let model = AnyTsr::new(cfg, 6).unwrap();
        let lr = lr_image();
        let q = make_coord_grid(12, 14).coords;
        let got = model.infer_points(&lr, 2.0, &q).unwrap();
        let want = crate::imaging::bicubic_resample(&lr, 12, 14).unwrap();
        for (a, b) in got.iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
