//! Softmax attention `softmax(scale · Q Kᵀ) V` evaluated in row blocks so the
//! full attention matrix is never materialised. Only the per-row
//! log-sum-exp is kept for the backward pass.

use super::{Backward, BackwardCtx, Graph, Var};
use crate::tensor::{gemm, Tensor};

const BLOCK_ROWS: usize = 64;

/// Which keys each query may attend to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttentionWindow {
    /// Every query attends to every key.
    #[default]
    Global,
    /// Queries and keys are split into consecutive runs of this many rows;
    /// a query only attends to keys in its own run.
    Tiled(usize),
}

impl AttentionWindow {
    fn segments(self, queries: usize, keys: usize) -> Vec<((usize, usize), (usize, usize))> {
        match self {
            AttentionWindow::Global => vec![((0, queries), (0, keys))],
            AttentionWindow::Tiled(size) => {
                assert_eq!(queries, keys, "tiled attention needs one key per query");
                let size = size.max(1);
                (0..queries)
                    .step_by(size)
                    .map(|s| {
                        let e = (s + size).min(queries);
                        ((s, e), (s, e))
                    })
                    .collect()
            }
        }
    }
}

struct Attention {
    width: usize,
    value_width: usize,
    scale: f64,
    window: AttentionWindow,
    lse: Vec<f64>,
}

fn logits(q: &[f64], k: &[f64], rows: usize, keys: usize, width: usize, scale: f64) -> Vec<f64> {
    let mut s = vec![0.0; rows * keys];
    gemm(rows, width, keys, scale, q, false, k, true, 0.0, &mut s);
    s
}

impl Backward for Attention {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let (q, k, v) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.inputs[2].data());
        let o = ctx.output.data();
        let (c, cv) = (self.width, self.value_width);
        let m = q.len() / c;
        let nk = k.len() / c;
        let gd = g.data();
        let mut dq = vec![0.0; q.len()];
        let mut dk = vec![0.0; k.len()];
        let mut dv = vec![0.0; v.len()];
        let row_dot: Vec<f64> = (0..m)
            .map(|i| (0..cv).map(|j| gd[i * cv + j] * o[i * cv + j]).sum())
            .collect();
        for ((qs, qe), (ks, ke)) in self.window.segments(m, nk) {
            let keys = ke - ks;
            let kseg = &k[ks * c..ke * c];
            let vseg = &v[ks * cv..ke * cv];
            for r0 in (qs..qe).step_by(BLOCK_ROWS) {
                let r1 = (r0 + BLOCK_ROWS).min(qe);
                let rows = r1 - r0;
                let qb = &q[r0 * c..r1 * c];
                let gb = &gd[r0 * cv..r1 * cv];
                let mut p = logits(qb, kseg, rows, keys, c, self.scale);
                for (i, row) in p.chunks_mut(keys).enumerate() {
                    let lse = self.lse[r0 + i];
                    for x in row.iter_mut() {
                        *x = (*x - lse).exp();
                    }
                }
                gemm(keys, rows, cv, 1.0, &p, true, gb, false, 1.0, &mut dv[ks * cv..ke * cv]);
                let mut ds = vec![0.0; rows * keys];
                gemm(rows, cv, keys, 1.0, gb, false, vseg, true, 0.0, &mut ds);
                for (i, (dsr, pr)) in ds.chunks_mut(keys).zip(p.chunks(keys)).enumerate() {
                    let di = row_dot[r0 + i];
                    for (x, pv) in dsr.iter_mut().zip(pr) {
                        *x = pv * (*x - di);
                    }
                }
                gemm(rows, keys, c, self.scale, &ds, false, kseg, false, 0.0, &mut dq[r0 * c..r1 * c]);
                gemm(keys, rows, c, self.scale, &ds, true, qb, false, 1.0, &mut dk[ks * c..ke * c]);
            }
        }
        vec![
            ctx.needs[0].then(|| Tensor::new(ctx.inputs[0].shape(), dq)),
            ctx.needs[1].then(|| Tensor::new(ctx.inputs[1].shape(), dk)),
            ctx.needs[2].then(|| Tensor::new(ctx.inputs[2].shape(), dv)),
        ]
    }
}

impl Graph<'_> {
    /// `softmax(scale · Q Kᵀ) V` with the softmax taken over keys.
    ///
    /// `q` is `[M, C]`, `k` is `[Nk, C]`, `v` is `[Nk, Cv]`; returns
    /// `[M, Cv]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, scale: f64, window: AttentionWindow) -> Var {
        let (m, c) = self.value(q).as_matrix();
        let (nk, ck) = self.value(k).as_matrix();
        let (nv, cv) = self.value(v).as_matrix();
        assert_eq!(c, ck, "attention query/key width");
        assert_eq!(nk, nv, "attention key/value count");
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; m * cv];
        let mut lse = vec![0.0; m];
        for ((qs, qe), (ks, ke)) in window.segments(m, nk) {
            let keys = ke - ks;
            let kseg = &kd[ks * c..ke * c];
            let vseg = &vd[ks * cv..ke * cv];
            for r0 in (qs..qe).step_by(BLOCK_ROWS) {
                let r1 = (r0 + BLOCK_ROWS).min(qe);
                let rows = r1 - r0;
                let mut p = logits(&qd[r0 * c..r1 * c], kseg, rows, keys, c, scale);
                for (i, row) in p.chunks_mut(keys).enumerate() {
                    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let mut sum = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x - max).exp();
                        sum += *x;
                    }
                    for x in row.iter_mut() {
                        *x /= sum;
                    }
                    lse[r0 + i] = max + sum.ln();
                }
                gemm(rows, keys, cv, 1.0, &p, false, vseg, false, 0.0, &mut out[r0 * cv..r1 * cv]);
            }
        }
        let out = Tensor::new(&[m, cv], out);
        self.push_op(
            out,
            &[q, k, v],
            Attention {
                width: c,
                value_width: cv,
                scale,
                window,
                lse,
            },
        )
    }
}
