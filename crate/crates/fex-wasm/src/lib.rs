//! Browser bindings for the finite-expression PIDE solver.
//!
//! Three interactive surfaces, all returning JSON strings for plain-JS
//! plotting:
//! - [`SearchSession`]: step the 1-D symbolic search live and watch the
//!   best candidate expression and pool loss evolve.
//! - [`SearchSession::finetune_best`] / [`SearchSession::solution_curve`]:
//!   fine-tune the best candidate and compare it against the true
//!   solution over `x`.
//! - [`taylor_vs_quadrature`]: the second-order Taylor estimate of
//!   `E[u(t, x + z)]` against a dense quadrature reference as the jump
//!   variance grows.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use fex_core::expr::{build_expression, Expression, OperatorSequence, TreeTemplate};
use fex_core::integral::{expected_shift_taylor, normal_density, GForm, JumpSpec};
use fex_core::optim::{finetune, OptimizerConfig};
use fex_core::problems::{builtin_problem, relative_error, ProblemSpec};
use fex_core::search::{candidate_expression, SearchConfig, SearchDriver};

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, JsValue> {
    serde_json::to_string(value).map_err(err)
}

/// Browser-budget search configuration: small batches keep one iteration
/// well under a second so the page stays responsive.
fn demo_config(iterations: usize) -> SearchConfig {
    SearchConfig {
        iterations,
        samples_per_iter: 8,
        pool_capacity: 5,
        grouping: false,
        workers: 1,
        optimizer: OptimizerConfig {
            t1: 15,
            t2: 15,
            t4: 4000,
            n_interior: 220,
            m_terminal: 60,
            ..OptimizerConfig::default()
        },
        ..SearchConfig::default()
    }
}

#[derive(Serialize)]
struct StepOut {
    iteration: usize,
    total_iterations: usize,
    best_pool_loss: f64,
    best_expression: String,
    done: bool,
}

#[derive(Serialize)]
struct FinetuneOut {
    expression: String,
    loss_trace: Vec<f64>,
    relative_error: Option<f64>,
    steps: usize,
}

#[derive(Serialize)]
struct CurveOut {
    xs: Vec<f64>,
    u_hat: Vec<f64>,
    u_true: Vec<f64>,
}

/// One live search over a 1-D benchmark problem.
#[wasm_bindgen]
pub struct SearchSession {
    problem: ProblemSpec,
    cfg: SearchConfig,
    driver: SearchDriver,
    seed: u64,
    tuned: Option<Expression>,
}

#[wasm_bindgen]
impl SearchSession {
    /// `problem` is `ex1-1d` or `ex2-1d`.
    #[wasm_bindgen(constructor)]
    pub fn new(problem: &str, seed: u32, iterations: u32) -> Result<SearchSession, JsValue> {
        let problem = builtin_problem(problem, 1).map_err(err)?;
        let cfg = demo_config(iterations as usize);
        let driver = SearchDriver::new(&problem, &cfg, seed as u64).map_err(err)?;
        Ok(SearchSession {
            problem,
            cfg,
            driver,
            seed: seed as u64,
            tuned: None,
        })
    }

    /// Runs one search iteration; returns a JSON digest.
    pub fn step(&mut self) -> Result<String, JsValue> {
        if self.driver.iteration() >= self.cfg.iterations {
            let out = StepOut {
                iteration: self.driver.iteration(),
                total_iterations: self.cfg.iterations,
                best_pool_loss: self.driver.trace().last().copied().unwrap_or(f64::INFINITY),
                best_expression: String::new(),
                done: true,
            };
            return to_json(&out);
        }
        let summary = self.driver.step().map_err(err)?;
        self.tuned = None;
        let out = StepOut {
            iteration: summary.iteration,
            total_iterations: self.cfg.iterations,
            best_pool_loss: summary.best_pool_loss,
            best_expression: summary.best_expression,
            done: self.driver.iteration() >= self.cfg.iterations,
        };
        to_json(&out)
    }

    /// Fine-tunes the best pool candidate for up to `max_steps` Adam
    /// iterations (with the usual early stop) and returns the loss trace.
    pub fn finetune_best(&mut self, max_steps: u32) -> Result<String, JsValue> {
        let best = self
            .driver
            .pool()
            .best()
            .ok_or_else(|| err("no candidate yet: run at least one search step"))?;
        let expr = candidate_expression(&self.problem, &self.cfg, best).map_err(err)?;
        let cfg = OptimizerConfig {
            t4: max_steps as usize,
            ..self.cfg.optimizer.clone()
        };
        let (tuned, trace) = finetune(&self.problem, expr, &cfg, self.seed ^ 0x5eed);
        let rel = relative_error(&tuned, &self.problem, 2000, 17).ok();
        let out = FinetuneOut {
            expression: tuned.to_infix(),
            steps: trace.len(),
            loss_trace: trace,
            relative_error: rel,
        };
        self.tuned = Some(tuned);
        to_json(&out)
    }

    /// Samples the learned solution (after `finetune_best`, or the raw best
    /// candidate otherwise) against the true solution at time `t`.
    pub fn solution_curve(&self, t: f64, n: u32) -> Result<String, JsValue> {
        let expr = match &self.tuned {
            Some(e) => e.clone(),
            None => {
                let best = self
                    .driver
                    .pool()
                    .best()
                    .ok_or_else(|| err("no candidate yet: run at least one search step"))?;
                candidate_expression(&self.problem, &self.cfg, best).map_err(err)?
            }
        };
        let n = n.max(2) as usize;
        let (lo, hi) = self.problem.x_bounds;
        let mut out = CurveOut {
            xs: Vec::with_capacity(n),
            u_hat: Vec::with_capacity(n),
            u_true: Vec::with_capacity(n),
        };
        for i in 0..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            out.xs.push(x);
            out.u_hat.push(expr.evaluate(t, &[x]));
            out.u_true
                .push(self.problem.true_solution_at(t, &[x]).unwrap_or(f64::NAN));
        }
        to_json(&out)
    }
}

#[derive(Serialize)]
struct TaylorOut {
    xs: Vec<f64>,
    taylor: Vec<f64>,
    reference: Vec<f64>,
    expression: String,
}

/// Compares the second-order Taylor estimate of `E[u(t, x + z)]`,
/// `z ~ N(mu, sigma2)`, against a dense trapezoid reference over
/// `[mu - 8 sigma, mu + 8 sigma]`, for a one-dimensional expression built
/// from the named unary operator (`u(t,x) = phi(x)`); exact whenever `phi`
/// is quadratic.
#[wasm_bindgen]
pub fn taylor_vs_quadrature(
    op: &str,
    mu: f64,
    sigma2: f64,
    t: f64,
    n_points: u32,
) -> Result<String, JsValue> {
    let op_index = match op {
        "x" => 2,
        "x^2" => 3,
        "x^3" => 4,
        "x^4" => 5,
        "exp" => 6,
        "sin" => 7,
        "cos" => 8,
        other => return Err(err(format!("unknown operator `{other}`"))),
    };
    let template = TreeTemplate::single_leaf();
    let mut expr =
        build_expression(&template, &OperatorSequence(vec![op_index]), 1, 0).map_err(err)?;
    expr.set_params(&[0.0, 1.0, 0.0]); // u(t, x) = phi(x)
    let jump = JumpSpec {
        lambda: 0.3,
        mu,
        sigma2: sigma2.max(0.0),
        g_form: GForm::Additive,
    };
    let sigma = jump.sigma();
    let n = n_points.max(2) as usize;
    let mut out = TaylorOut {
        xs: Vec::with_capacity(n),
        taylor: Vec::with_capacity(n),
        reference: Vec::with_capacity(n),
        expression: expr.to_infix(),
    };
    for i in 0..n {
        let x = i as f64 / (n - 1) as f64;
        out.xs.push(x);
        out.taylor.push(expected_shift_taylor(&expr, t, &[x], &jump));
        out.reference.push(dense_shift_reference(&expr, t, x, &jump, sigma));
    }
    to_json(&out)
}

fn dense_shift_reference(expr: &Expression, t: f64, x: f64, jump: &JumpSpec, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return expr.evaluate(t, &[x + jump.mu]);
    }
    let (lo, hi) = (jump.mu - 8.0 * sigma, jump.mu + 8.0 * sigma);
    let n = 4001;
    let h = (hi - lo) / (n - 1) as f64;
    let mut acc = 0.0;
    for q in 0..n {
        let z = lo + h * q as f64;
        let w = if q == 0 || q == n - 1 { 0.5 * h } else { h };
        acc += w * normal_density(z, jump.mu, sigma) * expr.evaluate(t, &[x + z]);
    }
    acc
}

/// Names of the problems the demo can run.
#[wasm_bindgen]
pub fn demo_problems() -> String {
    r#"["ex1-1d","ex2-1d"]"#.to_string()
}
