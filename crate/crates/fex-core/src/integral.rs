//! The nonlocal jump operator
//!
//! ```text
//! A u(t,x) = lambda * ( E[u(t, x (+) G)] - u(t,x) - E[G] . grad u(t,x) )
//! ```
//!
//! where the jump `z` has i.i.d. normal(mu, sigma^2) components and `(+)`
//! is either an additive shift `x + z` or, in the 1-D multiplicative form,
//! `x * e^z`. The expensive piece is `E[u]`; it is evaluated either with a
//! second-order Taylor estimate around the mean shift (exact for
//! quadratics) or, in one dimension, by trapezoid quadrature against the
//! normal density on a truncated interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expression, Jet, JetRequest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GForm {
    /// `G(x, z) = z`; the shifted argument is `x + z`.
    Additive,
    /// 1-D `G(x, z) = x (e^z - 1)`; the shifted argument is `x e^z`.
    Multiplicative1d,
}

/// Jump law of the driving process: Poisson intensity and the per-component
/// normal distribution of the jump size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec {
    pub lambda: f64,
    pub mu: f64,
    pub sigma2: f64,
    pub g_form: GForm,
}

impl JumpSpec {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum IntegralMethod {
    /// Second-order Taylor estimate of `E[u]` at `x + mu`, additive jumps.
    Taylor,
    /// 1-D trapezoid quadrature of `E[u(t, x e^z)]` on `[lo, hi]`.
    Trapezoid1d { lo: f64, hi: f64, n_points: usize },
}

impl IntegralMethod {
    /// The 1-D default: 50 evenly spaced points on [0, 1].
    pub fn default_trapezoid() -> Self {
        IntegralMethod::Trapezoid1d {
            lo: 0.0,
            hi: 1.0,
            n_points: 50,
        }
    }
}

pub fn normal_density(z: f64, mu: f64, sigma: f64) -> f64 {
    let u = (z - mu) / sigma;
    (-0.5 * u * u).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// A scalar plus (optionally) its derivative with respect to every
/// trainable parameter of the expression it was computed from.
#[derive(Clone, Debug)]
pub(crate) struct WithTangents {
    pub value: f64,
    pub dtheta: Option<Vec<f64>>,
}

fn diag_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).map(|i| (i, i)).collect()
}

/// `E[u(t, x + z)] ~= u(t, x + mu) + (sigma^2 / 2) * sum_i H_ii(t, x + mu)`,
/// from one jet at the shifted point requesting only diagonal Hessian
/// entries. Exact for expressions quadratic in `x`. Assumes additive jumps.
pub fn expected_shift_taylor(expr: &Expression, t: f64, x: &[f64], jump: &JumpSpec) -> f64 {
    debug_assert_eq!(jump.g_form, GForm::Additive);
    taylor_shift_parts(expr, t, x, jump, false).value
}

pub(crate) fn taylor_shift_parts(
    expr: &Expression,
    t: f64,
    x: &[f64],
    jump: &JumpSpec,
    with_params: bool,
) -> WithTangents {
    let d = expr.dim();
    let shifted: Vec<f64> = x.iter().map(|xi| xi + jump.mu).collect();
    let req = JetRequest {
        with_dt: false,
        with_grad: false, // forced on internally by the hessian request
        hess_pairs: diag_pairs(d),
        with_params,
    };
    let jet = expr.jet(t, &shifted, &req);
    let half_var = 0.5 * jump.sigma2;
    let value = jet.value + half_var * jet.hess.iter().sum::<f64>();
    let dtheta = jet.tangents.as_ref().map(|tg| {
        (0..tg.n_params())
            .map(|p| {
                let hsum: f64 = (0..d).map(|k| tg.hess(p, k)).sum();
                tg.value(p) + half_var * hsum
            })
            .collect()
    });
    WithTangents { value, dtheta }
}

/// Trapezoid rule for `int u(t, x e^z) phi(z; mu, sigma) dz` over
/// `[grid_lo, grid_hi]` with `n_points` evenly spaced nodes. One spatial
/// dimension only.
pub fn expected_shift_trapezoid_1d(
    expr: &Expression,
    t: f64,
    x: f64,
    jump: &JumpSpec,
    grid_lo: f64,
    grid_hi: f64,
    n_points: usize,
) -> f64 {
    trapezoid_shift_parts(expr, t, x, jump, grid_lo, grid_hi, n_points, false).value
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn trapezoid_shift_parts(
    expr: &Expression,
    t: f64,
    x: f64,
    jump: &JumpSpec,
    lo: f64,
    hi: f64,
    n: usize,
    with_params: bool,
) -> WithTangents {
    assert!(n >= 2, "trapezoid quadrature needs at least two points");
    assert_eq!(expr.dim(), 1, "trapezoid shift is one-dimensional");
    let sigma = jump.sigma();
    let h = (hi - lo) / (n - 1) as f64;
    let req = JetRequest {
        with_params,
        ..JetRequest::value_only()
    };
    let mut value = 0.0;
    let mut dtheta = with_params.then(|| vec![0.0; expr.parameter_count()]);
    for q in 0..n {
        let z = lo + h * q as f64;
        let w = if q == 0 || q == n - 1 { 0.5 * h } else { h };
        let weight = w * normal_density(z, jump.mu, sigma);
        let arg = [x * z.exp()];
        let jet = expr.jet(t, &arg, &req);
        value += weight * jet.value;
        if let (Some(acc), Some(tg)) = (dtheta.as_mut(), jet.tangents.as_ref()) {
            for (p, a) in acc.iter_mut().enumerate() {
                *a += weight * tg.value(p);
            }
        }
    }
    WithTangents { value, dtheta }
}

/// Truncated quadrature of `E[e^z]` with the same grid as the `E[u]`
/// quadrature, so that linear candidates cancel structurally.
pub(crate) fn trapezoid_mean_exp(jump: &JumpSpec, lo: f64, hi: f64, n: usize) -> f64 {
    let sigma = jump.sigma();
    let h = (hi - lo) / (n - 1) as f64;
    let mut acc = 0.0;
    for q in 0..n {
        let z = lo + h * q as f64;
        let w = if q == 0 || q == n - 1 { 0.5 * h } else { h };
        acc += w * normal_density(z, jump.mu, sigma) * z.exp();
    }
    acc
}

/// The full jump operator `A u(t, x)`, selecting the `E[u]` estimator by
/// `method`. Valid combinations are additive jumps with the Taylor
/// estimate and 1-D multiplicative jumps with trapezoid quadrature.
pub fn levy_operator(
    expr: &Expression,
    t: f64,
    x: &[f64],
    jump: &JumpSpec,
    method: &IntegralMethod,
) -> Result<f64> {
    let base = expr.jet(
        t,
        x,
        &JetRequest {
            with_grad: true,
            ..JetRequest::value_only()
        },
    );
    Ok(jump_term(expr, t, x, jump, method, &base)?.value)
}

/// Assembles `lambda * (E[u] - u - E[G] . grad u)` from a jet that already
/// carries the value and gradient at `(t, x)` (and their parameter
/// tangents, when the caller wants the term differentiated).
pub(crate) fn jump_term(
    expr: &Expression,
    t: f64,
    x: &[f64],
    jump: &JumpSpec,
    method: &IntegralMethod,
    base: &Jet,
) -> Result<WithTangents> {
    if jump.lambda == 0.0 {
        let dtheta = base
            .tangents
            .as_ref()
            .map(|tg| vec![0.0; tg.n_params()]);
        return Ok(WithTangents {
            value: 0.0,
            dtheta,
        });
    }
    let d = expr.dim();
    let with_params = base.tangents.is_some();
    let lambda = jump.lambda;

    let (expected, mean_g_dot_grad, mean_g_dot_grad_t): (WithTangents, f64, Option<Vec<f64>>) =
        match (jump.g_form, method) {
            (GForm::Additive, IntegralMethod::Taylor) => {
                let expected = taylor_shift_parts(expr, t, x, jump, with_params);
                // E[G] = mu * ones
                let dot = jump.mu * base.grad.iter().sum::<f64>();
                let dot_t = base.tangents.as_ref().map(|tg| {
                    (0..tg.n_params())
                        .map(|p| jump.mu * (0..d).map(|i| tg.grad(p, i)).sum::<f64>())
                        .collect()
                });
                (expected, dot, dot_t)
            }
            (GForm::Multiplicative1d, IntegralMethod::Trapezoid1d { lo, hi, n_points }) => {
                if d != 1 {
                    return Err(Error::Config(
                        "trapezoid-1d integral requires a one-dimensional problem".into(),
                    ));
                }
                let expected =
                    trapezoid_shift_parts(expr, t, x[0], jump, *lo, *hi, *n_points, with_params);
                // E[G] = x (E[e^z] - 1), with E[e^z] over the same grid.
                let mean_exp = trapezoid_mean_exp(jump, *lo, *hi, *n_points);
                let factor = x[0] * (mean_exp - 1.0);
                let dot = factor * base.grad[0];
                let dot_t = base.tangents.as_ref().map(|tg| {
                    (0..tg.n_params()).map(|p| factor * tg.grad(p, 0)).collect()
                });
                (expected, dot, dot_t)
            }
            (g_form, m) => {
                return Err(Error::Config(format!(
                    "integral method {m:?} does not support jump form {g_form:?}"
                )));
            }
        };

    let value = lambda * (expected.value - base.value - mean_g_dot_grad);
    let dtheta = match (&base.tangents, expected.dtheta, mean_g_dot_grad_t) {
        (Some(tg), Some(te), Some(tdot)) => Some(
            (0..tg.n_params())
                .map(|p| lambda * (te[p] - tg.value(p) - tdot[p]))
                .collect(),
        ),
        _ => None,
    };
    Ok(WithTangents { value, dtheta })
}
