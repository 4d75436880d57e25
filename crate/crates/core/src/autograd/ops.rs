use super::{Backward, BackwardCtx, Graph, Var};
use crate::tensor::{gemm, Tensor};

fn with_last(shape: &[usize], last: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    *s.last_mut().expect("rank >= 1") = last;
    s
}

struct MatMul {
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
}

impl Backward for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        let da = ctx.needs[0].then(|| {
            let mut out = Tensor::zeros(a.shape());
            if self.ta {
                gemm(k, n, m, 1.0, b.data(), self.tb, g.data(), true, 0.0, out.data_mut());
            } else {
                gemm(m, n, k, 1.0, g.data(), false, b.data(), !self.tb, 0.0, out.data_mut());
            }
            out
        });
        let db = ctx.needs[1].then(|| {
            let mut out = Tensor::zeros(b.shape());
            if self.tb {
                gemm(n, m, k, 1.0, g.data(), true, a.data(), self.ta, 0.0, out.data_mut());
            } else {
                gemm(k, m, n, 1.0, a.data(), !self.ta, g.data(), false, 0.0, out.data_mut());
            }
            out
        });
        vec![da, db]
    }
}

struct Linear {
    rows: usize,
    fan_in: usize,
    fan_out: usize,
    has_bias: bool,
}

impl Backward for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let (l, i, o) = (self.rows, self.fan_in, self.fan_out);
        let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
        let dx = ctx.needs[0].then(|| {
            let mut out = Tensor::zeros(x.shape());
            gemm(l, o, i, 1.0, g.data(), false, w.data(), true, 0.0, out.data_mut());
            out
        });
        let dw = ctx.needs[1].then(|| {
            let mut out = Tensor::zeros(w.shape());
            gemm(i, l, o, 1.0, x.data(), true, g.data(), false, 0.0, out.data_mut());
            out
        });
        let mut grads = vec![dx, dw];
        if self.has_bias {
            grads.push(ctx.needs[2].then(|| column_sums(g.data(), l, o, ctx.inputs[2].shape())));
        }
        grads
    }
}

fn column_sums(data: &[f64], rows: usize, cols: usize, shape: &[usize]) -> Tensor {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (acc, v) in out.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
            *acc += v;
        }
    }
    Tensor::new(shape, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Silu,
    Relu,
    Softplus,
    Exp,
    Scale,
}

struct Unary {
    kind: UnaryKind,
    k: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Backward for Unary {
    fn name(&self) -> &'static str {
        match self.kind {
            UnaryKind::Silu => "silu",
            UnaryKind::Relu => "relu",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Exp => "exp",
            UnaryKind::Scale => "scale",
        }
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let x = ctx.inputs[0].data();
        let y = ctx.output.data();
        let gd = g.data();
        let data: Vec<f64> = match self.kind {
            UnaryKind::Silu => (0..x.len())
                .map(|i| {
                    let s = sigmoid(x[i]);
                    gd[i] * (s + x[i] * s * (1.0 - s))
                })
                .collect(),
            UnaryKind::Relu => (0..x.len())
                .map(|i| if x[i] > 0.0 { gd[i] } else { 0.0 })
                .collect(),
            UnaryKind::Softplus => (0..x.len()).map(|i| gd[i] * sigmoid(x[i])).collect(),
            UnaryKind::Exp => (0..x.len()).map(|i| gd[i] * y[i]).collect(),
            UnaryKind::Scale => gd.iter().map(|v| v * self.k).collect(),
        };
        vec![Some(Tensor::new(ctx.inputs[0].shape(), data))]
    }
}

struct Add;

impl Backward for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![
            ctx.needs[0].then(|| g.clone()),
            ctx.needs[1].then(|| g.clone()),
        ]
    }
}

struct Mul;

impl Backward for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        let prod = |other: &Tensor, shape: &[usize]| {
            Tensor::new(
                shape,
                g.data().iter().zip(other.data()).map(|(g, o)| g * o).collect(),
            )
        };
        vec![
            ctx.needs[0].then(|| prod(b, a.shape())),
            ctx.needs[1].then(|| prod(a, b.shape())),
        ]
    }
}

/// `x[r, c] * v[c]`.
struct MulCols {
    rows: usize,
    cols: usize,
}

impl Backward for MulCols {
    fn name(&self) -> &'static str {
        "mul_cols"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let (x, v) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let c = self.cols;
        let dx = ctx.needs[0].then(|| {
            let data = g
                .data()
                .iter()
                .enumerate()
                .map(|(i, gv)| gv * v[i % c])
                .collect();
            Tensor::new(ctx.inputs[0].shape(), data)
        });
        let dv = ctx.needs[1].then(|| {
            let mut acc = vec![0.0; c];
            for r in 0..self.rows {
                for j in 0..c {
                    acc[j] += g.data()[r * c + j] * x[r * c + j];
                }
            }
            Tensor::new(ctx.inputs[1].shape(), acc)
        });
        vec![dx, dv]
    }
}

/// `x[r, c] * w[r]`.
struct MulRows {
    cols: usize,
}

impl Backward for MulRows {
    fn name(&self) -> &'static str {
        "mul_rows"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let (x, w) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let c = self.cols;
        let dx = ctx.needs[0].then(|| {
            let data = g
                .data()
                .iter()
                .enumerate()
                .map(|(i, gv)| gv * w[i / c])
                .collect();
            Tensor::new(ctx.inputs[0].shape(), data)
        });
        let dw = ctx.needs[1].then(|| {
            let data = (0..w.len())
                .map(|r| {
                    (0..c)
                        .map(|j| g.data()[r * c + j] * x[r * c + j])
                        .sum::<f64>()
                })
                .collect();
            Tensor::new(ctx.inputs[1].shape(), data)
        });
        vec![dx, dw]
    }
}

struct LayerNorm {
    cols: usize,
    eps: f64,
}

impl LayerNorm {
    fn stats(&self, row: &[f64]) -> (f64, f64) {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, 1.0 / (var + self.eps).sqrt())
    }
}

impl Backward for LayerNorm {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let (x, gamma) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let c = self.cols;
        let rows = x.len() / c;
        let mut dx = vec![0.0; x.len()];
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        let mut xhat = vec![0.0; c];
        let mut gxh = vec![0.0; c];
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let grow = &g.data()[r * c..(r + 1) * c];
            let (mean, inv) = self.stats(row);
            for j in 0..c {
                xhat[j] = (row[j] - mean) * inv;
                dgamma[j] += grow[j] * xhat[j];
                dbeta[j] += grow[j];
                gxh[j] = grow[j] * gamma[j];
            }
            let m1 = gxh.iter().sum::<f64>() / c as f64;
            let m2 = gxh.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
            for j in 0..c {
                dx[r * c + j] = inv * (gxh[j] - m1 - xhat[j] * m2);
            }
        }
        vec![
            ctx.needs[0].then(|| Tensor::new(ctx.inputs[0].shape(), dx)),
            ctx.needs[1].then(|| Tensor::new(ctx.inputs[1].shape(), dgamma)),
            ctx.needs[2].then(|| Tensor::new(ctx.inputs[2].shape(), dbeta)),
        ]
    }
}

struct SoftmaxRows {
    cols: usize,
}

impl Backward for SoftmaxRows {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let y = ctx.output.data();
        let c = self.cols;
        let mut dx = vec![0.0; y.len()];
        for r in 0..y.len() / c {
            let yr = &y[r * c..(r + 1) * c];
            let gr = &g.data()[r * c..(r + 1) * c];
            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for j in 0..c {
                dx[r * c + j] = yr[j] * (gr[j] - dot);
            }
        }
        vec![Some(Tensor::new(ctx.inputs[0].shape(), dx))]
    }
}

struct GatherRows {
    index: Vec<usize>,
    cols: usize,
}

impl Backward for GatherRows {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let c = self.cols;
        let mut dx = Tensor::zeros(ctx.inputs[0].shape());
        let out = dx.data_mut();
        for (k, &src) in self.index.iter().enumerate() {
            for j in 0..c {
                out[src * c + j] += g.data()[k * c + j];
            }
        }
        vec![Some(dx)]
    }
}

struct ConcatCols {
    widths: Vec<usize>,
}

impl Backward for ConcatCols {
    fn name(&self) -> &'static str {
        "concat_cols"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let total: usize = self.widths.iter().sum();
        let rows = g.len() / total;
        let mut offset = 0;
        let mut grads = Vec::with_capacity(self.widths.len());
        for (i, &w) in self.widths.iter().enumerate() {
            grads.push(ctx.needs[i].then(|| {
                let mut data = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                }
                Tensor::new(ctx.inputs[i].shape(), data)
            }));
            offset += w;
        }
        grads
    }
}

struct Reshape;

impl Backward for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.clone().reshaped(ctx.inputs[0].shape()))]
    }
}

/// `Σ x ⊙ w` for a fixed weight tensor.
struct WeightedSum {
    weights: Tensor,
}

impl Backward for WeightedSum {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let k = g.data()[0];
        vec![Some(
            self.weights
                .map(|w| w * k)
                .reshaped(ctx.inputs[0].shape()),
        )]
    }
}

struct L1Loss {
    target: Vec<f64>,
}

impl Backward for L1Loss {
    fn name(&self) -> &'static str {
        "l1_loss"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let k = g.data()[0] / self.target.len() as f64;
        let pred = ctx.inputs[0].data();
        let data = pred
            .iter()
            .zip(&self.target)
            .map(|(p, t)| {
                let d = p - t;
                if d > 0.0 {
                    k
                } else if d < 0.0 {
                    -k
                } else {
                    0.0
                }
            })
            .collect();
        vec![Some(Tensor::new(ctx.inputs[0].shape(), data))]
    }
}

/// `exp(-d² / (2 σ²))` with `σ = exp(log_sigma)`.
struct GaussianRbf {
    dist_sq: Vec<f64>,
}

impl Backward for GaussianRbf {
    fn name(&self) -> &'static str {
        "gaussian_rbf"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let sigma = ctx.inputs[0].data()[0].exp();
        let inv_var = 1.0 / (sigma * sigma);
        // d/dlogσ of -d²/(2σ²) is d²/σ².
        let d: f64 = self
            .dist_sq
            .iter()
            .zip(ctx.output.data())
            .zip(g.data())
            .map(|((d2, w), gv)| gv * w * d2 * inv_var)
            .sum();
        vec![Some(Tensor::new(ctx.inputs[0].shape(), vec![d]))]
    }
}

impl Graph<'_> {
    /// Matrix product `op(a) · op(b)` of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Var {
        let (ar, ac) = self.value(a).as_matrix();
        let (br, bc) = self.value(b).as_matrix();
        let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            trans_a,
            self.value(b).data(),
            trans_b,
            0.0,
            out.data_mut(),
        );
        self.push_op(
            out,
            &[a, b],
            MatMul {
                m,
                k,
                n,
                ta: trans_a,
                tb: trans_b,
            },
        )
    }

    /// `x · w + b` applied along the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (rows, fan_in) = self.value(x).as_matrix();
        let wshape = self.value(w).shape();
        assert_eq!(wshape.len(), 2);
        assert_eq!(wshape[0], fan_in, "linear fan-in mismatch");
        let fan_out = wshape[1];
        let mut out = Tensor::zeros(&with_last(self.value(x).shape(), fan_out));
        if let Some(b) = b {
            let bias = self.value(b).data();
            assert_eq!(bias.len(), fan_out);
            for row in out.data_mut().chunks_mut(fan_out) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            rows,
            fan_in,
            fan_out,
            1.0,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            if b.is_some() { 1.0 } else { 0.0 },
            out.data_mut(),
        );
        let op = Linear {
            rows,
            fan_in,
            fan_out,
            has_bias: b.is_some(),
        };
        match b {
            Some(b) => self.push_op(out, &[x, w, b], op),
            None => self.push_op(out, &[x, w], op),
        }
    }

    fn unary(&mut self, x: Var, kind: UnaryKind, k: f64) -> Var {
        let f: fn(f64, f64) -> f64 = match kind {
            UnaryKind::Silu => |v, _| v * sigmoid(v),
            UnaryKind::Relu => |v, _| v.max(0.0),
            UnaryKind::Softplus => |v, _| softplus(v),
            UnaryKind::Exp => |v, _| v.exp(),
            UnaryKind::Scale => |v, k| v * k,
        };
        let out = self.value(x).map(|v| f(v, k));
        self.push_op(out, &[x], Unary { kind, k })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Silu, 0.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Relu, 0.0)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Softplus, 0.0)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Exp, 0.0)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, UnaryKind::Scale, k)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "add: {:?} vs {:?}", va.shape(), vb.shape());
        let out = Tensor::new(
            va.shape(),
            va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect(),
        );
        self.push_op(out, &[a, b], Add)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "mul: {:?} vs {:?}", va.shape(), vb.shape());
        let out = Tensor::new(
            va.shape(),
            va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect(),
        );
        self.push_op(out, &[a, b], Mul)
    }

    /// Scales column `j` of `x` by `v[j]`; `v` has as many elements as `x`
    /// has columns.
    pub fn mul_cols(&mut self, x: Var, v: Var) -> Var {
        let (rows, cols) = self.value(x).as_matrix();
        let vv = self.value(v).data();
        assert_eq!(vv.len(), cols);
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, a)| a * vv[i % cols])
            .collect();
        let out = Tensor::new(self.value(x).shape(), data);
        self.push_op(out, &[x, v], MulCols { rows, cols })
    }

    /// Scales row `r` of `x` by `w[r]`.
    pub fn mul_rows(&mut self, x: Var, w: Var) -> Var {
        let (rows, cols) = self.value(x).as_matrix();
        let wv = self.value(w).data();
        assert_eq!(wv.len(), rows);
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, a)| a * wv[i / cols])
            .collect();
        let out = Tensor::new(self.value(x).shape(), data);
        self.push_op(out, &[x, w], MulRows { cols })
    }

    /// Normalises each row over its last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (_, cols) = self.value(x).as_matrix();
        let op = LayerNorm { cols, eps: 1e-5 };
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut data = vec![0.0; self.value(x).len()];
        for (row, out) in self
            .value(x)
            .data()
            .chunks(cols)
            .zip(data.chunks_mut(cols))
        {
            let (mean, inv) = op.stats(row);
            for j in 0..cols {
                out[j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        let out = Tensor::new(self.value(x).shape(), data);
        self.push_op(out, &[x, gamma, beta], op)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (_, cols) = self.value(x).as_matrix();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::new(self.value(x).shape(), data);
        self.push_op(out, &[x], SoftmaxRows { cols })
    }

    /// Row `k` of the result is row `index[k]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Var {
        let (rows, cols) = self.value(x).as_matrix();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &r in index {
            assert!(r < rows, "gather index {r} out of {rows} rows");
            data.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let out = Tensor::new(&[index.len(), cols], data);
        self.push_op(
            out,
            &[x],
            GatherRows {
                index: index.to_vec(),
                cols,
            },
        )
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).as_matrix().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.value(p).as_matrix();
                assert_eq!(r, rows, "concat_cols row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::new(&[rows, total], data);
        self.push_op(out, parts, ConcatCols { widths })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshaped(shape);
        self.push_op(out, &[x], Reshape)
    }

    /// Scalar `Σ x ⊙ weights`.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Var {
        assert_eq!(self.value(x).len(), weights.len());
        let s: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        self.push_op(Tensor::scalar(s), &[x], WeightedSum { weights })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        self.weighted_sum(x, Tensor::full(&[n], 1.0))
    }

    /// Mean absolute error against a fixed target.
    pub fn l1_loss(&mut self, pred: Var, target: &[f64]) -> Var {
        let p = self.value(pred).data();
        assert_eq!(p.len(), target.len(), "l1_loss length mismatch");
        assert!(!target.is_empty());
        let loss = p
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / target.len() as f64;
        self.push_op(
            Tensor::scalar(loss),
            &[pred],
            L1Loss {
                target: target.to_vec(),
            },
        )
    }

    /// Gaussian radial basis weights `exp(-d²/(2σ²))` for squared distances
    /// `dist_sq`, with `σ = exp(log_sigma)`.
    pub fn gaussian_rbf(&mut self, log_sigma: Var, dist_sq: &[f64]) -> Var {
        let sigma = self.value(log_sigma).data()[0].exp();
        let k = 1.0 / (2.0 * sigma * sigma);
        let data = dist_sq.iter().map(|d2| (-d2 * k).exp()).collect();
        let out = Tensor::new(&[dist_sq.len()], data);
        self.push_op(
            out,
            &[log_sigma],
            GaussianRbf {
                dist_sq: dist_sq.to_vec(),
            },
        )
    }
}
