//! Fused selective scan over one ordered sequence.
//!
//! For every channel `d` the state `h[d, :]` (length `N`) evolves as
//!
//! ```text
//! h_t = exp(Δ_t[d] · A[d, :]) ⊙ h_{t-1} + Δ_t[d] · B_t · u_t[d]
//! y_t[d] = ⟨C_t, h_t⟩ + D[d] · u_t[d]
//! ```
//!
//! with `h_{-1} = 0`. States are not kept after the forward pass; the
//! backward rule replays the recurrence.

use super::{Backward, BackwardCtx, Graph, Var};
use crate::tensor::Tensor;

struct Dims {
    len: usize,
    channels: usize,
    state: usize,
}

/// Runs the recurrence, optionally recording every state `h_t`
/// into `states` (`[L, D, N]`).
#[allow(clippy::too_many_arguments)]
fn forward(
    dims: &Dims,
    u: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    skip: &[f64],
    mut states: Option<&mut [f64]>,
) -> Vec<f64> {
    let (l, dd, n) = (dims.len, dims.channels, dims.state);
    let mut h = vec![0.0; dd * n];
    let mut y = vec![0.0; l * dd];
    for t in 0..l {
        let bt = &b[t * n..(t + 1) * n];
        let ct = &c[t * n..(t + 1) * n];
        for d in 0..dd {
            let dt = delta[t * dd + d];
            let ut = u[t * dd + d];
            let hd = &mut h[d * n..(d + 1) * n];
            let ad = &a[d * n..(d + 1) * n];
            let mut acc = 0.0;
            for s in 0..n {
                hd[s] = (dt * ad[s]).exp() * hd[s] + dt * bt[s] * ut;
                acc += ct[s] * hd[s];
            }
            y[t * dd + d] = acc + skip[d] * ut;
        }
        if let Some(states) = states.as_deref_mut() {
            states[t * dd * n..(t + 1) * dd * n].copy_from_slice(&h);
        }
    }
    y
}

struct SelectiveScan {
    dims: Dims,
}

impl Backward for SelectiveScan {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Vec<Option<Tensor>> {
        let (l, dd, n) = (self.dims.len, self.dims.channels, self.dims.state);
        let [u, delta, a, b, c, skip] = [0, 1, 2, 3, 4, 5].map(|i| ctx.inputs[i].data());
        let mut states = vec![0.0; l * dd * n];
        forward(&self.dims, u, delta, a, b, c, skip, Some(&mut states));

        let gy = g.data();
        let mut du = vec![0.0; l * dd];
        let mut ddelta = vec![0.0; l * dd];
        let mut da = vec![0.0; dd * n];
        let mut db = vec![0.0; l * n];
        let mut dc = vec![0.0; l * n];
        let mut dskip = vec![0.0; dd];
        // Gradient flowing into h_t from later steps and from y_t.
        let mut gh = vec![0.0; dd * n];
        for t in (0..l).rev() {
            let bt = &b[t * n..(t + 1) * n];
            let ct = &c[t * n..(t + 1) * n];
            let h_t = &states[t * dd * n..(t + 1) * dd * n];
            for d in 0..dd {
                let idx = t * dd + d;
                let (dt, ut, gyt) = (delta[idx], u[idx], gy[idx]);
                dskip[d] += gyt * ut;
                let mut du_acc = gyt * skip[d];
                let mut ddelta_acc = 0.0;
                let ad = &a[d * n..(d + 1) * n];
                for s in 0..n {
                    let k = d * n + s;
                    dc[t * n + s] += gyt * h_t[k];
                    let ghk = gh[k] + gyt * ct[s];
                    let h_prev = if t > 0 { states[(t - 1) * dd * n + k] } else { 0.0 };
                    let decay = (dt * ad[s]).exp();
                    let g_decay = ghk * h_prev * decay;
                    ddelta_acc += g_decay * ad[s] + ghk * bt[s] * ut;
                    da[k] += g_decay * dt;
                    db[t * n + s] += ghk * dt * ut;
                    du_acc += ghk * dt * bt[s];
                    gh[k] = ghk * decay;
                }
                du[idx] = du_acc;
                ddelta[idx] = ddelta_acc;
            }
        }
        let grads = [du, ddelta, da, db, dc, dskip];
        grads
            .into_iter()
            .enumerate()
            .map(|(i, data)| ctx.needs[i].then(|| Tensor::new(ctx.inputs[i].shape(), data)))
            .collect()
    }
}

impl Graph<'_> {
    /// Selective scan along the row axis.
    ///
    /// Shapes: `u`, `delta` are `[L, D]`; `a` is `[D, N]`; `b`, `c` are
    /// `[L, N]`; `skip` is `[D]`. Returns `[L, D]`.
    pub fn selective_scan(
        &mut self,
        u: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        skip: Var,
    ) -> Var {
        let (l, dd) = self.value(u).as_matrix();
        let n = self.value(a).as_matrix().1;
        assert_eq!(self.value(delta).as_matrix(), (l, dd));
        assert_eq!(self.value(a).as_matrix(), (dd, n));
        assert_eq!(self.value(b).as_matrix(), (l, n));
        assert_eq!(self.value(c).as_matrix(), (l, n));
        assert_eq!(self.value(skip).len(), dd);
        let dims = Dims {
            len: l,
            channels: dd,
            state: n,
        };
        let y = forward(
            &dims,
            self.value(u).data(),
            self.value(delta).data(),
            self.value(a).data(),
            self.value(b).data(),
            self.value(c).data(),
            self.value(skip).data(),
            None,
        );
        let out = Tensor::new(&[l, dd], y);
        self.push_op(out, &[u, delta, a, b, c, skip], SelectiveScan { dims })
    }
}
