//! Benchmark PIDE instances, collocation sampling, and the least-squares
//! functional.
//!
//! A problem is the terminal-value equation
//!
//! ```text
//! du/dt + b . grad u + (1/2) Tr(sigma sigma^T H(u)) + A u - f = 0,
//! u(T, .) = g(.)
//! ```
//!
//! with tagged closed forms for the drift `b`, the diffusion matrix, the
//! right-hand side `f` and the terminal condition `g`. The residual is
//! assembled from a single jet per point (requesting only the Hessian
//! entries in the diffusion sparsity pattern) plus the jump operator, and
//! can carry parameter tangents so the loss gradient comes out of the same
//! pass.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expression, JetRequest};
use crate::integral::{jump_term, GForm, IntegralMethod, JumpSpec};
use crate::rng::rng_from;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DriftForm {
    Zero,
    /// `b(x) = coef * x`
    Linear { coef: f64 },
    /// `b(x) = coef * ||x|| * x`
    NormLinear { coef: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DiffusionForm {
    None,
    /// `sigma = theta * I`, so the trace term is `(theta^2 / 2) * sum H_ii`.
    ScalarTheta { theta: f64 },
    /// `sigma = theta * B` with `B` lower bidiagonal (ones on the diagonal
    /// and subdiagonal), as in the high-dimensional second benchmark.
    /// `sigma sigma^T` has diagonal `theta^2 * (1, 2, ..., 2)` and first
    /// off-diagonals `theta^2`.
    Bidiagonal { theta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RhsForm {
    Zero,
    /// `f(t, x) = coef * x_1` (one-dimensional problems)
    LinearInX { coef: f64 },
    /// `f(t, x) = c0 + c2 * ||x||^2`
    ConstPlusNormSq { c0: f64, c2: f64 },
    /// `f(t, x) = c0 + c3 * ||x||^3`
    ConstPlusNormCube { c0: f64, c3: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ClosedForm {
    /// `x_1` (one-dimensional identity)
    IdentityX,
    /// `||x||^2 / d`
    NormSqOverD,
}

impl ClosedForm {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ClosedForm::IdentityX => x[0],
            ClosedForm::NormSqOverD => {
                x.iter().map(|xi| xi * xi).sum::<f64>() / x.len() as f64
            }
        }
    }
}

/// One PIDE instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    pub dim: usize,
    /// Terminal time `T`; the time domain is `[0, T]`.
    pub terminal_time: f64,
    /// Per-axis spatial bounds (the same for every axis).
    pub x_bounds: (f64, f64),
    pub drift: DriftForm,
    pub diffusion: DiffusionForm,
    pub jump: JumpSpec,
    pub integral: IntegralMethod,
    pub rhs: RhsForm,
    pub terminal: ClosedForm,
    pub true_solution: Option<ClosedForm>,
}

/// Collocation points: `interior` carries `(t_i, x_i)` pairs, `terminal`
/// carries the spatial points evaluated at `t = T`.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub interior: Vec<(f64, Vec<f64>)>,
    pub terminal: Vec<Vec<f64>>,
    pub rng_seed: u64,
}

/// The four benchmark problems. `d` must be 1 for the one-dimensional pair.
pub fn builtin_problem(name: &str, d: usize) -> Result<ProblemSpec> {
    match name {
        "ex1-1d" => {
            require_1d(name, d)?;
            Ok(ProblemSpec {
                name: name.into(),
                dim: 1,
                terminal_time: 1.0,
                x_bounds: (0.0, 1.0),
                drift: DriftForm::Zero,
                diffusion: DiffusionForm::None,
                jump: JumpSpec {
                    lambda: 0.3,
                    mu: 0.4,
                    sigma2: 0.0625,
                    g_form: GForm::Multiplicative1d,
                },
                integral: IntegralMethod::default_trapezoid(),
                rhs: RhsForm::Zero,
                terminal: ClosedForm::IdentityX,
                true_solution: Some(ClosedForm::IdentityX),
            })
        }
        "ex2-1d" => {
            require_1d(name, d)?;
            let eps = 0.25;
            Ok(ProblemSpec {
                name: name.into(),
                dim: 1,
                terminal_time: 1.0,
                x_bounds: (0.0, 1.0),
                drift: DriftForm::Linear { coef: eps },
                diffusion: DiffusionForm::ScalarTheta { theta: 0.0 },
                jump: JumpSpec {
                    lambda: 0.3,
                    mu: 0.4,
                    sigma2: 0.0625,
                    g_form: GForm::Multiplicative1d,
                },
                integral: IntegralMethod::default_trapezoid(),
                rhs: RhsForm::LinearInX { coef: eps },
                terminal: ClosedForm::IdentityX,
                true_solution: Some(ClosedForm::IdentityX),
            })
        }
        "ex1-hd" => {
            let (eps, theta, lambda, mu, sigma2) = (0.0, 0.3, 0.3, 1.0, 0.0001);
            Ok(ProblemSpec {
                name: name.into(),
                dim: d,
                terminal_time: 1.0,
                x_bounds: (0.0, 1.0),
                drift: DriftForm::Linear { coef: eps / 2.0 },
                diffusion: DiffusionForm::ScalarTheta { theta },
                jump: JumpSpec {
                    lambda,
                    mu,
                    sigma2,
                    g_form: GForm::Additive,
                },
                integral: IntegralMethod::Taylor,
                rhs: RhsForm::ConstPlusNormSq {
                    c0: lambda * (mu * mu + sigma2) + theta * theta,
                    c2: eps / 2.0,
                },
                terminal: ClosedForm::NormSqOverD,
                true_solution: Some(ClosedForm::NormSqOverD),
            })
        }
        "ex2-hd" => {
            let (eps, theta, lambda, mu) = (0.05, 0.2, 0.3, 1.0);
            let sigma2 = 1e-8; // jump sigma = 0.0001
            let dd = d as f64;
            // Tr(sigma sigma^T) for the bidiagonal matrix is theta^2 (2d - 1),
            // so the constant consistent with u = ||x||^2 / d being the exact
            // solution is ((2d - 1) / d) theta^2.
            Ok(ProblemSpec {
                name: name.into(),
                dim: d,
                terminal_time: 1.0,
                x_bounds: (0.0, 1.0),
                drift: DriftForm::NormLinear { coef: eps / 2.0 },
                diffusion: DiffusionForm::Bidiagonal { theta },
                jump: JumpSpec {
                    lambda,
                    mu,
                    sigma2,
                    g_form: GForm::Additive,
                },
                integral: IntegralMethod::Taylor,
                rhs: RhsForm::ConstPlusNormCube {
                    c0: lambda * (mu * mu + sigma2) + (2.0 * dd - 1.0) / dd * theta * theta,
                    c3: eps / dd,
                },
                terminal: ClosedForm::NormSqOverD,
                true_solution: Some(ClosedForm::NormSqOverD),
            })
        }
        other => Err(Error::UnknownProblem(other.into())),
    }
}

fn require_1d(name: &str, d: usize) -> Result<()> {
    if d != 1 {
        return Err(Error::Config(format!(
            "problem {name} is one-dimensional, got d={d}"
        )));
    }
    Ok(())
}

pub fn builtin_names() -> [&'static str; 4] {
    ["ex1-1d", "ex2-1d", "ex1-hd", "ex2-hd"]
}

impl ProblemSpec {
    /// Changes the jump variance and keeps the right-hand side consistent,
    /// so the stated true solution stays exact. Used for variance sweeps.
    pub fn with_jump_variance(mut self, sigma2: f64) -> Self {
        let old = self.jump.sigma2;
        self.jump.sigma2 = sigma2;
        let delta = self.jump.lambda * (sigma2 - old);
        match &mut self.rhs {
            RhsForm::ConstPlusNormSq { c0, .. } | RhsForm::ConstPlusNormCube { c0, .. } => {
                *c0 += delta;
            }
            _ => {}
        }
        self
    }

    pub fn drift_at(&self, x: &[f64], out: &mut [f64]) {
        match self.drift {
            DriftForm::Zero => out.fill(0.0),
            DriftForm::Linear { coef } => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = coef * xi;
                }
            }
            DriftForm::NormLinear { coef } => {
                let norm = x.iter().map(|xi| xi * xi).sum::<f64>().sqrt();
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = coef * norm * xi;
                }
            }
        }
    }

    pub fn rhs_at(&self, _t: f64, x: &[f64]) -> f64 {
        match self.rhs {
            RhsForm::Zero => 0.0,
            RhsForm::LinearInX { coef } => coef * x[0],
            RhsForm::ConstPlusNormSq { c0, c2 } => {
                if c2 == 0.0 {
                    c0
                } else {
                    c0 + c2 * x.iter().map(|xi| xi * xi).sum::<f64>()
                }
            }
            RhsForm::ConstPlusNormCube { c0, c3 } => {
                let norm_sq = x.iter().map(|xi| xi * xi).sum::<f64>();
                c0 + c3 * norm_sq * norm_sq.sqrt()
            }
        }
    }

    pub fn terminal_at(&self, x: &[f64]) -> f64 {
        self.terminal.eval(x)
    }

    pub fn has_drift(&self) -> bool {
        !matches!(self.drift, DriftForm::Zero)
    }

    /// Hessian entries the diffusion term needs, with their weights:
    /// the trace term equals `sum_k weight_k * H(pair_k)`.
    pub fn hessian_terms(&self) -> Vec<((usize, usize), f64)> {
        match self.diffusion {
            DiffusionForm::None => vec![],
            DiffusionForm::ScalarTheta { theta } => {
                if theta == 0.0 {
                    vec![]
                } else {
                    let w = 0.5 * theta * theta;
                    (0..self.dim).map(|i| ((i, i), w)).collect()
                }
            }
            DiffusionForm::Bidiagonal { theta } => {
                let t2 = theta * theta;
                let mut terms = Vec::with_capacity(2 * self.dim - 1);
                terms.push(((0, 0), 0.5 * t2));
                for i in 1..self.dim {
                    terms.push(((i, i), t2)); // (sigma sigma^T)_ii = 2 theta^2
                }
                // symmetric off-diagonal pair counted once with weight
                // (sigma sigma^T)_{i,i-1} = theta^2
                for i in 1..self.dim {
                    terms.push(((i, i - 1), t2));
                }
                terms
            }
        }
    }

    pub fn true_solution_at(&self, _t: f64, x: &[f64]) -> Option<f64> {
        self.true_solution.as_ref().map(|f| f.eval(x))
    }
}

/// Uniform i.i.d. collocation points over the space-time domain, with the
/// terminal batch pinned at `t = T`. Reproducible from the seed.
pub fn sample_points(
    problem: &ProblemSpec,
    n_interior: usize,
    m_terminal: usize,
    rng_seed: u64,
) -> SampleBatch {
    let mut rng = rng_from(rng_seed);
    let (lo, hi) = problem.x_bounds;
    let d = problem.dim;
    let interior = (0..n_interior)
        .map(|_| {
            let t = rng.random_range(0.0..problem.terminal_time);
            let x = (0..d).map(|_| rng.random_range(lo..hi)).collect();
            (t, x)
        })
        .collect();
    let terminal = (0..m_terminal)
        .map(|_| (0..d).map(|_| rng.random_range(lo..hi)).collect())
        .collect();
    SampleBatch {
        interior,
        terminal,
        rng_seed,
    }
}

pub(crate) struct ResidualParts {
    pub value: f64,
    pub dtheta: Option<Vec<f64>>,
}

/// `D(u)(t, x)`, optionally with its parameter gradient from the same pass.
pub(crate) fn residual_parts(
    problem: &ProblemSpec,
    expr: &Expression,
    t: f64,
    x: &[f64],
    with_params: bool,
) -> Result<ResidualParts> {
    let d = problem.dim;
    let hess_terms = problem.hessian_terms();
    let pairs: Vec<(usize, usize)> = hess_terms.iter().map(|&(p, _)| p).collect();
    let req = JetRequest {
        with_dt: true,
        with_grad: true,
        hess_pairs: pairs,
        with_params,
    };
    let jet = expr.jet(t, x, &req);

    let mut value = jet.dt;
    if problem.has_drift() {
        let mut b = vec![0.0; d];
        problem.drift_at(x, &mut b);
        value += b.iter().zip(&jet.grad).map(|(bi, gi)| bi * gi).sum::<f64>();
    }
    for (k, &(_, w)) in hess_terms.iter().enumerate() {
        value += w * jet.hess[k];
    }
    let jump = jump_term(expr, t, x, &problem.jump, &problem.integral, &jet)?;
    value += jump.value;
    value -= problem.rhs_at(t, x);

    let dtheta = if with_params {
        let tg = jet.tangents.as_ref().expect("tangents requested");
        let jump_t = jump.dtheta.as_ref().expect("jump tangents requested");
        let mut b = vec![0.0; d];
        if problem.has_drift() {
            problem.drift_at(x, &mut b);
        }
        let out = (0..tg.n_params())
            .map(|p| {
                let mut acc = tg.dt(p) + jump_t[p];
                if problem.has_drift() {
                    for (i, bi) in b.iter().enumerate() {
                        acc += bi * tg.grad(p, i);
                    }
                }
                for (k, &(_, w)) in hess_terms.iter().enumerate() {
                    acc += w * tg.hess(p, k);
                }
                acc
            })
            .collect();
        Some(out)
    } else {
        None
    };
    Ok(ResidualParts { value, dtheta })
}

/// The PIDE residual `D(u)` at one point.
pub fn residual(problem: &ProblemSpec, expr: &Expression, t: f64, x: &[f64]) -> Result<f64> {
    Ok(residual_parts(problem, expr, t, x, false)?.value)
}

/// Least-squares functional:
/// `(1/N) sum |D(u)(t_i, x_i)|^2 + (1/M) sum |u(T, x_j) - g(x_j)|^2`.
/// Returns `f64::INFINITY` if any term is non-finite.
pub fn loss(problem: &ProblemSpec, expr: &Expression, batch: &SampleBatch) -> f64 {
    match loss_impl(problem, expr, batch, false) {
        Ok((l, _)) => l,
        Err(_) => f64::INFINITY,
    }
}

/// Loss and its gradient with respect to every trainable parameter,
/// computed in one pass. `None` when anything goes non-finite.
pub fn loss_and_grad(
    problem: &ProblemSpec,
    expr: &Expression,
    batch: &SampleBatch,
) -> Option<(f64, Vec<f64>)> {
    match loss_impl(problem, expr, batch, true) {
        Ok((l, Some(g))) if l.is_finite() && g.iter().all(|gi| gi.is_finite()) => Some((l, g)),
        _ => None,
    }
}

fn loss_impl(
    problem: &ProblemSpec,
    expr: &Expression,
    batch: &SampleBatch,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let n_params = if with_grad { expr.parameter_count() } else { 0 };
    let mut grad = vec![0.0; n_params];

    let mut interior_sum = 0.0;
    if !batch.interior.is_empty() {
        let scale = 1.0 / batch.interior.len() as f64;
        for (t, x) in &batch.interior {
            let parts = residual_parts(problem, expr, *t, x, with_grad)?;
            if !parts.value.is_finite() {
                return Ok((f64::INFINITY, None));
            }
            interior_sum += parts.value * parts.value;
            if let Some(dtheta) = parts.dtheta {
                let w = 2.0 * scale * parts.value;
                for (g, dp) in grad.iter_mut().zip(&dtheta) {
                    *g += w * dp;
                }
            }
        }
        interior_sum *= scale;
    }

    let mut terminal_sum = 0.0;
    if !batch.terminal.is_empty() {
        let scale = 1.0 / batch.terminal.len() as f64;
        let req = JetRequest {
            with_params: with_grad,
            ..JetRequest::value_only()
        };
        for x in &batch.terminal {
            let jet = expr.jet(problem.terminal_time, x, &req);
            if !jet.value.is_finite() {
                return Ok((f64::INFINITY, None));
            }
            let diff = jet.value - problem.terminal_at(x);
            terminal_sum += diff * diff;
            if let Some(tg) = jet.tangents {
                let w = 2.0 * scale * diff;
                for (p, g) in grad.iter_mut().enumerate() {
                    *g += w * tg.value(p);
                }
            }
        }
        terminal_sum *= scale;
    }

    let total = interior_sum + terminal_sum;
    Ok((total, with_grad.then_some(grad)))
}

/// The problem's true solution encoded as an expression, when one is
/// known. Used by the validation suite and by grouping experiments.
pub fn true_expression(problem: &ProblemSpec) -> Option<Expression> {
    use crate::expr::{build_expression, LeafParams, LeafWeights, OperatorSequence, TreeTemplate};
    let template = TreeTemplate::single_leaf();
    match problem.true_solution.as_ref()? {
        ClosedForm::IdentityX => {
            let mut e = build_expression(&template, &OperatorSequence(vec![2]), 1, 0).ok()?;
            e.set_leaves(vec![LeafWeights::Free(LeafParams {
                alpha: vec![0.0, 1.0],
                beta: 0.0,
            })])
            .ok()?;
            Some(e)
        }
        ClosedForm::NormSqOverD => {
            let d = problem.dim;
            let mut e = build_expression(&template, &OperatorSequence(vec![3]), d, 0).ok()?;
            let mut alpha = vec![1.0 / d as f64; d + 1];
            alpha[0] = 0.0;
            e.set_leaves(vec![LeafWeights::Free(LeafParams { alpha, beta: 0.0 })])
                .ok()?;
            Some(e)
        }
    }
}

/// Relative L2 error of `expr` against the problem's true solution over
/// `n_test` uniform space-time points:
/// `sqrt( sum (u_hat - u)^2 / sum u^2 )`.
pub fn relative_error(
    expr: &Expression,
    problem: &ProblemSpec,
    n_test: usize,
    rng_seed: u64,
) -> Result<f64> {
    let truth = problem
        .true_solution
        .as_ref()
        .ok_or_else(|| Error::MissingTrueSolution(problem.name.clone()))?;
    let mut rng = rng_from(rng_seed);
    let (lo, hi) = problem.x_bounds;
    let mut num = 0.0;
    let mut den = 0.0;
    for _ in 0..n_test {
        let t = rng.random_range(0.0..problem.terminal_time);
        let x: Vec<f64> = (0..problem.dim).map(|_| rng.random_range(lo..hi)).collect();
        let u = truth.eval(&x);
        let u_hat = expr.evaluate(t, &x);
        num += (u_hat - u) * (u_hat - u);
        den += u * u;
    }
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{build_expression, OperatorSequence, TreeTemplate};
    use crate::rng::rng_from;

    fn true_expr(problem: &ProblemSpec) -> Expression {
        true_expression(problem).unwrap()
    }

    fn zero_expression(d: usize) -> Expression {
        let template = TreeTemplate::single_leaf();
        let mut e = build_expression(&template, &OperatorSequence(vec![0]), d, 0).unwrap();
        let zeros = vec![0.0; e.parameter_count()];
        e.set_params(&zeros);
        e
    }

    #[test]
    fn builtin_configurations() {
        let p = builtin_problem("ex1-hd", 100).unwrap();
        let ones = vec![1.0; 100];
        assert_eq!(p.true_solution_at(0.3, &ones), Some(1.0));

        let p1 = builtin_problem("ex1-1d", 1).unwrap();
        assert_eq!(p1.rhs_at(0.5, &[0.7]), 0.0);
        assert_eq!(p1.terminal_at(&[0.7]), 0.7);

        assert!(builtin_problem("ex1-1d", 3).is_err());
        assert!(builtin_problem("no-such", 1).is_err());
    }

    #[test]
    fn bidiagonal_hessian_terms() {
        let p = builtin_problem("ex2-hd", 4).unwrap();
        let terms = p.hessian_terms();
        let t2 = 0.2 * 0.2;
        // diagonal weights: theta^2/2 once, theta^2 for the rest
        assert_eq!(terms[0], ((0, 0), 0.5 * t2));
        assert_eq!(terms[1], ((1, 1), t2));
        assert_eq!(terms[3], ((3, 3), t2));
        // off-diagonal pairs carry the symmetric factor already
        assert!(terms.contains(&((1, 0), t2)));
        assert_eq!(terms.len(), 2 * 4 - 1);
        // trace consistency with u = ||x||^2/d: sum of diagonal weights * 2/d
        // equals ((2d-1)/d) theta^2
        let d = 4.0;
        let diag_sum: f64 = terms
            .iter()
            .filter(|((i, j), _)| i == j)
            .map(|(_, w)| w * 2.0 / d)
            .sum();
        assert!((diag_sum - (2.0 * d - 1.0) / d * t2).abs() < 1e-15);
    }

    #[test]
    fn sampling_respects_domain_and_seed() {
        let p = builtin_problem("ex1-hd", 5).unwrap();
        let a = sample_points(&p, 200, 50, 42);
        assert_eq!(a.interior.len(), 200);
        assert_eq!(a.terminal.len(), 50);
        for (t, x) in &a.interior {
            assert!((0.0..=1.0).contains(t));
            assert!(x.iter().all(|xi| (0.0..=1.0).contains(xi)));
        }
        let b = sample_points(&p, 200, 50, 42);
        assert_eq!(a.interior, b.interior);
        assert_eq!(a.terminal, b.terminal);
        let c = sample_points(&p, 200, 50, 43);
        assert_ne!(a.interior, c.interior);
    }

    #[test]
    fn residual_vanishes_at_truth_taylor_problems() {
        let mut rng = rng_from(3);
        for (name, d) in [("ex1-hd", 10), ("ex1-hd", 50), ("ex2-hd", 25)] {
            let p = builtin_problem(name, d).unwrap();
            let truth = true_expr(&p);
            for _ in 0..50 {
                let t = rng.random_range(0.0..1.0);
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
                let r = residual(&p, &truth, t, &x).unwrap();
                assert!(r.abs() < 1e-10, "{name} d={d}: residual {r}");
            }
        }
    }

    #[test]
    fn residual_vanishes_at_truth_quadrature_problems() {
        let mut rng = rng_from(4);
        for name in ["ex1-1d", "ex2-1d"] {
            let p = builtin_problem(name, 1).unwrap();
            let truth = true_expr(&p);
            for _ in 0..50 {
                let t = rng.random_range(0.0..1.0);
                let x = [rng.random_range(0.0..1.0)];
                let r = residual(&p, &truth, t, &x).unwrap();
                assert!(r.abs() < 1e-6, "{name}: residual {r}");
            }
        }
    }

    #[test]
    fn residual_of_zero_expression_is_minus_rhs() {
        let d = 6;
        let p = builtin_problem("ex1-hd", d).unwrap();
        let zero = zero_expression(d);
        let x = vec![0.5; d];
        let r = residual(&p, &zero, 0.25, &x).unwrap();
        let want = -(0.3 * (1.0 + 0.0001) + 0.09);
        assert!((r - want).abs() < 1e-14, "got {r}, want {want}");
    }

    #[test]
    fn loss_decomposes_and_is_nonnegative() {
        let d = 4;
        let p = builtin_problem("ex1-hd", d).unwrap();
        let expr = build_expression(
            &TreeTemplate::depth2(),
            &OperatorSequence(vec![0, 3, 2]),
            d,
            7,
        )
        .unwrap();
        let batch = sample_points(&p, 64, 32, 5);
        let full = loss(&p, &expr, &batch);
        assert!(full >= 0.0);
        let interior_only = SampleBatch {
            interior: batch.interior.clone(),
            terminal: vec![],
            rng_seed: batch.rng_seed,
        };
        let terminal_only = SampleBatch {
            interior: vec![],
            terminal: batch.terminal.clone(),
            rng_seed: batch.rng_seed,
        };
        let li = loss(&p, &expr, &interior_only);
        let lt = loss(&p, &expr, &terminal_only);
        assert!(li >= 0.0 && lt >= 0.0);
        assert!((full - (li + lt)).abs() < 1e-12 * full.max(1.0));
    }

    #[test]
    fn loss_at_truth_is_tiny() {
        let p = builtin_problem("ex1-hd", 10).unwrap();
        let truth = true_expr(&p);
        let batch = sample_points(&p, 256, 64, 9);
        assert!(loss(&p, &truth, &batch) <= 1e-12);
    }

    #[test]
    fn zero_expression_loss_matches_direct_substitution() {
        // interior: rhs constant squared; terminal: mean of ||x||^4 (d=1)
        let p = builtin_problem("ex1-hd", 1).unwrap();
        let zero = zero_expression(1);
        let batch = sample_points(&p, 128, 64, 13);
        let c = 0.3 * (1.0 + 0.0001) + 0.09;
        let term: f64 = batch
            .terminal
            .iter()
            .map(|x| x[0].powi(4))
            .sum::<f64>()
            / batch.terminal.len() as f64;
        let want = c * c + term;
        let got = loss(&p, &zero, &batch);
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
    }

    #[test]
    fn non_finite_candidate_gets_sentinel_loss() {
        let p = builtin_problem("ex1-hd", 2).unwrap();
        let template = TreeTemplate::single_leaf();
        let mut e = build_expression(&template, &OperatorSequence(vec![6]), 2, 0).unwrap();
        e.set_params(&[0.0, 1e308, 1e308, 0.0]);
        let batch = sample_points(&p, 16, 8, 1);
        assert_eq!(loss(&p, &e, &batch), f64::INFINITY);
        assert!(loss_and_grad(&p, &e, &batch).is_none());
    }

    #[test]
    fn relative_error_basics() {
        let p = builtin_problem("ex1-hd", 8).unwrap();
        let truth = true_expr(&p);
        assert_eq!(relative_error(&truth, &p, 500, 3).unwrap(), 0.0);

        // scaling by (1 + delta) gives exactly delta
        let delta = 0.01;
        let mut scaled = truth.clone();
        let theta: Vec<f64> = scaled.get_params().iter().map(|v| v * (1.0 + delta)).collect();
        scaled.set_params(&theta);
        let err = relative_error(&scaled, &p, 500, 3).unwrap();
        assert!((err - delta).abs() < 1e-12, "err {err}");

        let no_truth = ProblemSpec {
            true_solution: None,
            ..p
        };
        assert!(relative_error(&truth, &no_truth, 10, 3).is_err());
    }

    #[test]
    fn loss_is_deterministic_for_seeded_batch() {
        let p = builtin_problem("ex2-hd", 6).unwrap();
        let expr = build_expression(
            &TreeTemplate::depth2(),
            &OperatorSequence(vec![2, 3, 3]),
            6,
            11,
        )
        .unwrap();
        let a = loss(&p, &expr, &sample_points(&p, 100, 40, 77));
        let b = loss(&p, &expr, &sample_points(&p, 100, 40, 77));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn variance_override_keeps_truth_exact() {
        for sigma2 in [0.001, 0.01, 0.1, 1.0] {
            let p = builtin_problem("ex1-hd", 10)
                .unwrap()
                .with_jump_variance(sigma2);
            let truth = true_expr(&p);
            let mut rng = rng_from(8);
            for _ in 0..20 {
                let t = rng.random_range(0.0..1.0);
                let x: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
                let r = residual(&p, &truth, t, &x).unwrap();
                assert!(r.abs() < 1e-10, "sigma2={sigma2}: residual {r}");
            }
        }
    }
}
