//! Central finite-difference checks of analytic gradients.
//!
//! A block under test is a closure that builds a scalar loss on a
//! [`Graph`] from the parameters of a [`ParamStore`]. Every element of every
//! parameter the closure touches is perturbed by `±FD_STEP` and the
//! resulting difference quotient is compared against the gradient from the
//! backward pass.
//!
//! The per-element relative error is `|a − n| / max(|a|, |n|, REL_FLOOR)`
//! where `a` is analytic and `n` numeric; the floor keeps near-zero
//! gradients from amplifying round-off.

use crate::autograd::{Graph, ParamStore, Var};
use crate::error::Result;

mod suites;
pub use suites::{run_suite, run_suites, suite_config, SUITES};

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOLERANCE: f64 = 1e-3;
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Largest analytic gradient magnitude, to spot all-zero gradients.
    pub max_grad: f64,
}

#[derive(Clone, Debug)]
pub struct BlockCheck {
    pub block: String,
    pub tensors: Vec<TensorCheck>,
}

impl BlockCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().fold(0.0, |m, t| m.max(t.max_rel_err))
    }

    pub fn passed(&self) -> bool {
        !self.tensors.is_empty() && self.max_rel_err() < REL_TOLERANCE
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks every parameter touched by `loss_fn`.
///
/// `fault` names a backward rule whose gradients get corrupted during the
/// analytic pass (see [`Graph::inject_backward_fault`]).
pub fn check_block<F>(
    block: &str,
    store: &ParamStore,
    fault: Option<&'static str>,
    loss_fn: F,
) -> Result<BlockCheck>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        if let Some(op) = fault {
            g.inject_backward_fault(op);
        }
        let loss = loss_fn(&mut g)?;
        g.param_grads(loss)
    };

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::inference(s);
        let loss = loss_fn(&mut g)?;
        Ok(g.value(loss).data()[0])
    };

    let mut probe = store.clone();
    let mut tensors = Vec::with_capacity(analytic.len());
    for (name, grad) in &analytic {
        let mut check = TensorCheck {
            name: name.clone(),
            elements: grad.len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            max_grad: grad.max_abs(),
        };
        for i in 0..grad.len() {
            let orig = probe.get(name).expect("checked parameter").data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + FD_STEP;
            let plus = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - FD_STEP;
            let minus = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grad.data()[i];
            check.max_abs_err = check.max_abs_err.max((a - numeric).abs());
            check.max_rel_err = check.max_rel_err.max(relative_error(a, numeric));
        }
        tensors.push(check);
    }
    Ok(BlockCheck {
        block: block.to_string(),
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::AttentionWindow;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect())
    }

    fn assert_block(check: &BlockCheck) {
        for t in &check.tensors {
            assert!(t.max_grad > 0.0, "{}: zero gradient for {}", check.block, t.name);
        }
        assert!(
            check.passed(),
            "{} failed: {:?}",
            check.block,
            check.worst()
        );
    }

    #[test]
    fn elementwise_ops_and_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.insert("x", random(&mut rng, &[5, 3], 1.0));
        store.insert("w", random(&mut rng, &[3, 4], 1.0));
        store.insert("b", random(&mut rng, &[4], 1.0));
        store.insert("v", random(&mut rng, &[4], 1.0));
        store.insert("r", random(&mut rng, &[5], 1.0));
        let proj = random(&mut rng, &[5, 4], 1.0);
        let check = check_block("ops", &store, None, |g| {
            let (x, w, b, v, r) = (g.param("x"), g.param("w"), g.param("b"), g.param("v"), g.param("r"));
            let y = g.linear(x, w, Some(b));
            let a = g.silu(y);
            let s = g.softplus(y);
            let e = g.exp(a);
            let m = g.mul(e, s);
            let m = g.mul_cols(m, v);
            let m = g.mul_rows(m, r);
            let m = g.scale(m, 0.7);
            let sum = g.add(m, y);
            Ok(g.weighted_sum(sum, proj.clone()))
        })
        .unwrap();
        assert_block(&check);
    }

    #[test]
    fn matmul_transposes_layer_norm_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        store.insert("a", random(&mut rng, &[4, 3], 1.0));
        store.insert("b", random(&mut rng, &[4, 2], 1.0));
        store.insert("gamma", random(&mut rng, &[3], 1.0));
        store.insert("beta", random(&mut rng, &[3], 1.0));
        let proj = random(&mut rng, &[3, 3], 1.0);
        let check = check_block("matmul", &store, None, |g| {
            let (a, b) = (g.param("a"), g.param("b"));
            let m = g.matmul(a, b, true, false);
            let bt = g.matmul(b, a, true, false);
            let back = g.matmul(bt, m, true, true);
            let (gamma, beta) = (g.param("gamma"), g.param("beta"));
            let ln = g.layer_norm(back, gamma, beta);
            let sm = g.softmax(ln);
            let t = g.add(sm, ln);
            Ok(g.weighted_sum(t, proj.clone()))
        })
        .unwrap();
        assert_block(&check);
    }

    #[test]
    fn gather_concat_reshape_and_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.insert("x", random(&mut rng, &[4, 2], 1.0));
        store.insert("y", random(&mut rng, &[6, 1], 1.0));
        store.insert("w", random(&mut rng, &[3, 1], 1.0));
        let target: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 0.8).collect();
        let check = check_block("gather", &store, None, |g| {
            let x = g.param("x");
            let rows = g.gather_rows(x, &[3, 0, 0, 2, 1, 3]);
            let (y, w) = (g.param("y"), g.param("w"));
            let cat = g.concat_cols(&[rows, y]);
            let lin = g.linear(cat, w, None);
            let flat = g.reshape(lin, &[6]);
            Ok(g.l1_loss(flat, &target))
        })
        .unwrap();
        assert_block(&check);
    }

    #[test]
    fn convolutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        store.insert("x", random(&mut rng, &[4, 5, 2], 1.0));
        store.insert("w", random(&mut rng, &[18, 3], 0.5));
        store.insert("b", random(&mut rng, &[3], 0.5));
        store.insert("dw", random(&mut rng, &[9, 3], 0.5));
        store.insert("db", random(&mut rng, &[3], 0.5));
        let proj = random(&mut rng, &[4, 5, 3], 1.0);
        let check = check_block("conv", &store, None, |g| {
            let (x, w, b) = (g.param("x"), g.param("w"), g.param("b"));
            let (dw, db) = (g.param("dw"), g.param("db"));
            let y = g.conv3x3(x, w, b);
            let z = g.dwconv3x3(y, dw, db);
            Ok(g.weighted_sum(z, proj.clone()))
        })
        .unwrap();
        assert_block(&check);
    }

    #[test]
    fn selective_scan_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (l, d, n) = (5, 3, 2);
        let mut store = ParamStore::new();
        store.insert("u", random(&mut rng, &[l, d], 1.0));
        store.insert("dpre", random(&mut rng, &[l, d], 1.0));
        store.insert("alog", random(&mut rng, &[d, n], 0.5));
        store.insert("b", random(&mut rng, &[l, n], 1.0));
        store.insert("c", random(&mut rng, &[l, n], 1.0));
        store.insert("skip", random(&mut rng, &[d], 1.0));
        let proj = random(&mut rng, &[l, d], 1.0);
        let check = check_block("scan", &store, None, |g| {
            let (u, dpre, alog) = (g.param("u"), g.param("dpre"), g.param("alog"));
            let (b, c, skip) = (g.param("b"), g.param("c"), g.param("skip"));
            let delta = g.softplus(dpre);
            let a = g.exp(alog);
            let a = g.scale(a, -1.0);
            let y = g.selective_scan(u, delta, a, b, c, skip);
            Ok(g.weighted_sum(y, proj.clone()))
        })
        .unwrap();
        assert_block(&check);
    }

    #[test]
    fn attention_gradients_global_and_tiled() {
        for window in [AttentionWindow::Global, AttentionWindow::Tiled(3)] {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut store = ParamStore::new();
            store.insert("q", random(&mut rng, &[7, 4], 1.0));
            store.insert("k", random(&mut rng, &[7, 4], 1.0));
            store.insert("v", random(&mut rng, &[7, 3], 1.0));
            store.insert("ls", Tensor::scalar(-0.3));
            let proj = random(&mut rng, &[7, 3], 1.0);
            let d2: Vec<f64> = (0..7).map(|i| 0.1 * i as f64).collect();
            let check = check_block("attention", &store, None, |g| {
                let (q, k, v, ls) = (g.param("q"), g.param("k"), g.param("v"), g.param("ls"));
                let o = g.attention(q, k, v, 0.5, window);
                let w = g.gaussian_rbf(ls, &d2);
                let o = g.mul_rows(o, w);
                Ok(g.weighted_sum(o, proj.clone()))
            })
            .unwrap();
            assert_block(&check);
        }
    }

    #[test]
    fn injected_fault_is_detected() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::new(&[2, 2], vec![0.3, -0.2, 0.5, 1.0]));
        store.insert("w", Tensor::new(&[2, 2], vec![1.0, 2.0, -1.0, 0.5]));
        let check = check_block("faulty", &store, Some("linear"), |g| {
            let (x, w) = (g.param("x"), g.param("w"));
            let y = g.linear(x, w, None);
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(!check.passed());
    }
}
