//! Parameter optimization: Adam and BFGS runners, the two-stage candidate
//! scoring (coarse Adam then BFGS on a frozen batch), and high-precision
//! fine-tuning with an early stop on the loss threshold.

mod adam;
mod bfgs;

use serde::{Deserialize, Serialize};

use crate::expr::{build_expression_with, Expression, OperatorSequence, OperatorSet, TreeTemplate};
use crate::problems::{loss, loss_and_grad, sample_points, ProblemSpec, SampleBatch};
use crate::rng::{derive_seed, Stream};

pub use adam::{run_adam, Adam, AdamParams};
pub use bfgs::{run_bfgs, LineSearchParams};

/// Iteration budgets and optimizer constants for one search run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Coarse Adam iterations per candidate.
    pub t1: usize,
    /// BFGS iterations per candidate (on one frozen batch).
    pub t2: usize,
    /// Extra BFGS polish iterations before clustering the iteration's best
    /// candidate; the coarse fit alone leaves the leaf weights too spread
    /// out to cluster.
    pub t2_polish: usize,
    /// Adam iterations when rescoring a regrouped candidate.
    pub t3: usize,
    /// Fine-tune Adam iteration cap.
    pub t4: usize,
    pub adam_lr_coarse: f64,
    pub adam_lr_fine: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub bfgs_contraction: f64,
    pub bfgs_slope: f64,
    pub bfgs_max_backtracks: usize,
    /// Fine-tuning stops once this many consecutive losses sit below the
    /// threshold.
    pub early_stop_threshold: f64,
    pub early_stop_window: usize,
    /// Interior collocation points per batch.
    pub n_interior: usize,
    /// Terminal collocation points per batch.
    pub m_terminal: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            t1: 20,
            t2: 20,
            t2_polish: 80,
            t3: 100,
            t4: 20_000,
            adam_lr_coarse: 1e-2,
            adam_lr_fine: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            bfgs_contraction: 0.5,
            bfgs_slope: 1e-4,
            bfgs_max_backtracks: 40,
            early_stop_threshold: 1.5e-14,
            early_stop_window: 5,
            n_interior: 2000,
            m_terminal: 500,
        }
    }
}

impl OptimizerConfig {
    pub fn adam_coarse(&self) -> AdamParams {
        AdamParams {
            lr: self.adam_lr_coarse,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn adam_fine(&self) -> AdamParams {
        AdamParams {
            lr: self.adam_lr_fine,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn line_search(&self) -> LineSearchParams {
        LineSearchParams {
            contraction: self.bfgs_contraction,
            slope: self.bfgs_slope,
            max_backtracks: self.bfgs_max_backtracks,
        }
    }
}

/// Exact gradient of the loss with respect to all trainable parameters,
/// from parameter tangents carried through the jet recursion. `None` when
/// any term goes non-finite (the caller abandons the candidate).
pub fn grad_loss(
    problem: &ProblemSpec,
    expr: &Expression,
    batch: &SampleBatch,
) -> Option<Vec<f64>> {
    loss_and_grad(problem, expr, batch).map(|(_, g)| g)
}

/// `S = 1 / (1 + L)`, mapping losses in `[0, inf)` onto scores in `(0, 1]`;
/// non-finite losses score zero.
pub fn score_from_loss(l: f64) -> f64 {
    if l.is_finite() && l >= 0.0 {
        1.0 / (1.0 + l)
    } else {
        0.0
    }
}

/// Result of coarse-tuning one operator sequence.
#[derive(Clone, Debug)]
pub struct ScoredSequence {
    pub score: f64,
    pub loss: f64,
    pub theta: Vec<f64>,
}

/// Builds a fresh expression for `ops`, coarse-tunes it with `t1` Adam
/// steps on freshly resampled batches followed by `t2` BFGS steps on one
/// frozen batch, and scores the final loss. Candidates that go non-finite
/// score zero.
pub fn score_sequence(
    problem: &ProblemSpec,
    template: &TreeTemplate,
    opset: &OperatorSet,
    ops: &OperatorSequence,
    cfg: &OptimizerConfig,
    rng_seed: u64,
) -> ScoredSequence {
    let mut expr = match build_expression_with(
        template,
        opset,
        ops,
        problem.dim,
        derive_seed(rng_seed, Stream::ExprInit, 0),
    ) {
        Ok(e) => e,
        Err(_) => {
            return ScoredSequence {
                score: 0.0,
                loss: f64::INFINITY,
                theta: vec![],
            }
        }
    };
    let theta0 = expr.get_params();

    let mut step = 0u64;
    let adam_objective = |theta: &[f64]| {
        let batch = sample_points(
            problem,
            cfg.n_interior,
            cfg.m_terminal,
            derive_seed(rng_seed, Stream::CoarseBatch, step),
        );
        step += 1;
        expr.set_params(theta);
        loss_and_grad(problem, &expr, &batch)
    };
    let (theta, _) = run_adam(adam_objective, &theta0, cfg.t1, cfg.adam_coarse());

    let frozen = sample_points(
        problem,
        cfg.n_interior,
        cfg.m_terminal,
        derive_seed(rng_seed, Stream::FrozenBatch, 0),
    );
    let bfgs_objective = |theta: &[f64]| {
        expr.set_params(theta);
        loss_and_grad(problem, &expr, &frozen)
    };
    let (theta, _) = run_bfgs(bfgs_objective, &theta, cfg.t2, cfg.line_search());

    expr.set_params(&theta);
    let final_loss = loss(problem, &expr, &frozen);
    ScoredSequence {
        score: score_from_loss(final_loss),
        loss: final_loss,
        theta,
    }
}

/// Fine-tunes an expression (grouped or not) with up to `t4` Adam steps at
/// the fine learning rate, resampling the batch each step. Stops early once
/// the last `early_stop_window` losses all fall below
/// `early_stop_threshold`. Returns the tuned expression and the loss trace.
pub fn finetune(
    problem: &ProblemSpec,
    mut expr: Expression,
    cfg: &OptimizerConfig,
    rng_seed: u64,
) -> (Expression, Vec<f64>) {
    let mut theta = expr.get_params();
    let mut adam = Adam::new(theta.len(), cfg.adam_fine());
    let mut trace: Vec<f64> = Vec::new();
    let mut best = (f64::INFINITY, theta.clone());
    for step in 0..cfg.t4 {
        let batch = sample_points(
            problem,
            cfg.n_interior,
            cfg.m_terminal,
            derive_seed(rng_seed, Stream::FinetuneBatch, step as u64),
        );
        expr.set_params(&theta);
        let Some((value, grad)) = loss_and_grad(problem, &expr, &batch) else {
            theta = best.1.clone();
            break;
        };
        trace.push(value);
        if value < best.0 {
            best = (value, theta.clone());
        }
        let w = cfg.early_stop_window;
        if w > 0
            && trace.len() >= w
            && trace[trace.len() - w..]
                .iter()
                .all(|l| *l < cfg.early_stop_threshold)
        {
            break;
        }
        // Below the stop threshold the parameters are already past the
        // precision target; updating would only let optimizer noise kick a
        // converged candidate back out while the window fills.
        if value >= cfg.early_stop_threshold {
            adam.update(&mut theta, &grad);
        }
    }
    expr.set_params(&theta);
    (expr, trace)
}
