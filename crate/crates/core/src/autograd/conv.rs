//! 3×3 stride-1 convolutions over channels-last `[H, W, C]` maps with zero
//! padding.

use super::{Backward, BackwardCtx, Graph, Var};
use crate::tensor::{gemm, Tensor};

/// Unfolds `x` into `[H·W, 9·C]` columns ordered `(ky, kx, c)`.
fn im2col(x: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let k = 9 * c;
    let mut cols = vec![0.0; h * w * k];
    for i in 0..h {
        for j in 0..w {
            let row = &mut cols[(i * w + j) * k..(i * w + j + 1) * k];
            for ky in 0..3 {
                let yi = i as isize + ky as isize - 1;
                if yi < 0 || yi >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let xj = j as isize + kx as isize - 1;
                    if xj < 0 || xj >= w as isize {
                        continue;
                    }
                    let src = (yi as usize * w + xj as usize) * c;
                    let dst = (ky * 3 + kx) * c;
                    row[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let k = 9 * c;
    let mut x = vec![0.0; h * w * c];
    for i in 0..h {
        for j in 0..w {
            let row = &cols[(i * w + j) * k..(i * w + j + 1) * k];
            for ky in 0..3 {
                let yi = i as isize + ky as isize - 1;
                if yi < 0 || yi >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let xj = j as isize + kx as isize - 1;
                    if xj < 0 || xj >= w as isize {
                        continue;
                    }
                    let dst = (yi as usize * w + xj as usize) * c;
                    let src = (ky * 3 + kx) * c;
                    for ch in 0..c {
                        x[dst + ch] += row[src + ch];
                    }
                }
            }
        }
    }
    x
}

struct Conv3x3 {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
}

impl Backward for Conv3x3 {
    fn name(&self) -> &'static str {
        "conv3x3"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let (x, weight) = (ctx.inputs[0], ctx.inputs[1]);
        let l = self.h * self.w;
        let k = 9 * self.cin;
        let dw = ctx.needs[1].then(|| {
            let cols = im2col(x.data(), self.h, self.w, self.cin);
            let mut out = Tensor::zeros(weight.shape());
            gemm(k, l, self.cout, 1.0, &cols, true, g.data(), false, 0.0, out.data_mut());
            out
        });
        let dx = ctx.needs[0].then(|| {
            let mut dcols = vec![0.0; l * k];
            gemm(l, self.cout, k, 1.0, g.data(), false, weight.data(), true, 0.0, &mut dcols);
            Tensor::new(x.shape(), col2im(&dcols, self.h, self.w, self.cin))
        });
        let db = ctx.needs[2].then(|| {
            let mut acc = vec![0.0; self.cout];
            for row in g.data().chunks(self.cout) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            Tensor::new(ctx.inputs[2].shape(), acc)
        });
        vec![dx, dw, db]
    }
}

struct DepthwiseConv3x3 {
    h: usize,
    w: usize,
    c: usize,
}

impl DepthwiseConv3x3 {
    /// Calls `f(out_index, in_index, tap)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (h, w) = (self.h as isize, self.w as isize);
        for i in 0..h {
            for j in 0..w {
                for ky in 0..3isize {
                    let yi = i + ky - 1;
                    if yi < 0 || yi >= h {
                        continue;
                    }
                    for kx in 0..3isize {
                        let xj = j + kx - 1;
                        if xj < 0 || xj >= w {
                            continue;
                        }
                        f(
                            (i * w + j) as usize,
                            (yi * w + xj) as usize,
                            (ky * 3 + kx) as usize,
                        );
                    }
                }
            }
        }
    }
}

impl Backward for DepthwiseConv3x3 {
    fn name(&self) -> &'static str {
        "dwconv3x3"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let (x, wt) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let c = self.c;
        let gd = g.data();
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; wt.len()];
        self.for_each_tap(|o, i, t| {
            for ch in 0..c {
                let gv = gd[o * c + ch];
                dx[i * c + ch] += gv * wt[t * c + ch];
                dw[t * c + ch] += gv * x[i * c + ch];
            }
        });
        let mut db = vec![0.0; c];
        for row in gd.chunks(c) {
            for (a, v) in db.iter_mut().zip(row) {
                *a += v;
            }
        }
        vec![
            ctx.needs[0].then(|| Tensor::new(ctx.inputs[0].shape(), dx)),
            ctx.needs[1].then(|| Tensor::new(ctx.inputs[1].shape(), dw)),
            ctx.needs[2].then(|| Tensor::new(ctx.inputs[2].shape(), db)),
        ]
    }
}

impl Graph<'_> {
    /// Full 3×3 convolution. `x` is `[H, W, Cin]`, `weight` is
    /// `[9·Cin, Cout]` with rows ordered `(ky, kx, cin)` and `bias` is
    /// `[Cout]`. The output is `[H, W, Cout]`.
    pub fn conv3x3(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let xs = self.value(x).shape();
        assert_eq!(xs.len(), 3, "conv3x3 expects [H, W, C]");
        let (h, w, cin) = (xs[0], xs[1], xs[2]);
        let ws = self.value(weight).shape();
        assert_eq!(ws[0], 9 * cin, "conv3x3 weight rows");
        let cout = ws[1];
        let cols = im2col(self.value(x).data(), h, w, cin);
        let mut out = Tensor::zeros(&[h, w, cout]);
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(cout) {
            row.copy_from_slice(b);
        }
        gemm(
            h * w,
            9 * cin,
            cout,
            1.0,
            &cols,
            false,
            self.value(weight).data(),
            false,
            1.0,
            out.data_mut(),
        );
        self.push_op(out, &[x, weight, bias], Conv3x3 { h, w, cin, cout })
    }

    /// Per-channel 3×3 convolution. `weight` is `[9, C]`, `bias` is `[C]`.
    pub fn dwconv3x3(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let xs = self.value(x).shape();
        assert_eq!(xs.len(), 3, "dwconv3x3 expects [H, W, C]");
        let op = DepthwiseConv3x3 {
            h: xs[0],
            w: xs[1],
            c: xs[2],
        };
        let c = op.c;
        let (xv, wt) = (self.value(x).data(), self.value(weight).data());
        let mut out = vec![0.0; xv.len()];
        for row in out.chunks_mut(c) {
            row.copy_from_slice(self.value(bias).data());
        }
        op.for_each_tap(|o, i, t| {
            for ch in 0..c {
                out[o * c + ch] += wt[t * c + ch] * xv[i * c + ch];
            }
        });
        let out = Tensor::new(self.value(x).shape(), out);
        self.push_op(out, &[x, weight, bias], op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        let (h, w, c) = (3, 4, 2);
        let x: Vec<f64> = (0..h * w * c).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..h * w * 9 * c).map(|i| (i as f64 * 0.3).cos()).collect();
        let lhs: f64 = im2col(&x, h, w, c).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, h, w, c)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
