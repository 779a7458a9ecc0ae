//! Central finite differences.

use profd_core::{Mat, Tape, Var};

pub const STEP: f64 = 1e-4;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the plain difference norm when both are
/// tiny (below 1e-8).
pub fn rel_err(a: &Mat, b: &Mat) -> f64 {
    let diff = (a - b).iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|v| v * v).sum::<f64>().sqrt());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Numerical gradient of a scalar function of a matrix.
pub fn numeric_grad(x: &Mat, mut f: impl FnMut(&Mat) -> f64) -> Mat {
    let mut g = Mat::zeros(x.dim());
    let mut xp = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = xp[idx];
        xp[idx] = orig + STEP;
        let up = f(&xp);
        xp[idx] = orig - STEP;
        let down = f(&xp);
        xp[idx] = orig;
        g[idx] = (up - down) / (2.0 * STEP);
    }
    g
}

/// Autodiff gradient of `f` at `x`, with `x` entering as the only parameter.
pub fn analytic_grad(x: &Mat, f: impl for<'t> Fn(Var<'t>) -> Var<'t>) -> Mat {
    let tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(v);
    assert_eq!(out.shape(), (1, 1), "scalar output expected");
    out.backward().get_or_zeros(v)
}

/// Relative error between autodiff and finite differences for `f` at `x`.
pub fn grad_check(x: &Mat, f: impl for<'t> Fn(Var<'t>) -> Var<'t>) -> f64 {
    let a = analytic_grad(x, &f);
    let n = numeric_grad(x, |m| {
        let tape = Tape::new();
        f(tape.constant(m.clone())).item()
    });
    rel_err(&a, &n)
}
