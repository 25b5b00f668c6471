//! Shared helpers for unit tests.

use crate::error::Result;
use crate::tensor::Tensor;

pub fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len(), "length mismatch");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!(
            (g - w).abs() <= tol,
            "index {i}: got {g}, want {w} (tol {tol})"
        );
    }
}

/// Max relative error between analytic gradients and central finite
/// differences over every coordinate of every parameter.
pub fn finite_diff_check(
    params: &[Tensor],
    loss_fn: impl Fn() -> Result<Tensor>,
    h: f64,
) -> f64 {
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn().expect("forward pass");
    loss.backward().expect("backward pass");
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad_vec().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let eval = || loss_fn().expect("forward pass").to_vec()[0];
    let mut max_rel: f64 = 0.0;
    for (p, grads) in params.iter().zip(&analytic) {
        let base = p.to_vec();
        for i in 0..base.len() {
            let mut up = base.clone();
            up[i] += h;
            p.set_data(&up).unwrap();
            let lp = eval();
            let mut down = base.clone();
            down[i] -= h;
            p.set_data(&down).unwrap();
            let lm = eval();
            p.set_data(&base).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let a = grads[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}
