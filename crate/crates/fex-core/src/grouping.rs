//! Parameter grouping: clustering of leaf coefficients and regrouped
//! rescoring.
//!
//! After coarse tuning, coefficients that converged to similar values are
//! merged into shared groups by single-linkage agglomerative clustering on
//! the scalar weights. A regrouped leaf keeps the tree and operators but
//! re-learns one coefficient per group (plus the bias) from scratch, which
//! shrinks the optimization problem from `d + 1` parameters per leaf to a
//! handful and makes high-dimensional fine-tuning dramatically cheaper.

use rand::Rng as _;

use crate::error::Result;
use crate::expr::{Expression, GroupedLeafParams, LeafWeights};
use crate::optim::{score_from_loss, Adam, OptimizerConfig};
use crate::problems::{loss, loss_and_grad, sample_points, ProblemSpec};
use crate::rng::{derive_seed, rng_from, Stream};

/// Single-linkage agglomerative clustering of scalar weights, cut so that
/// no two members of a group sit at cophenetic distance above `eta`. For
/// scalars this equals splitting the sorted values at gaps larger than
/// `eta`. Group ids are contiguous and ordered by first occurrence.
pub fn cluster_weights(alpha: &[f64], eta: f64) -> Vec<usize> {
    assert!(eta > 0.0, "clustering threshold must be positive");
    let n = alpha.len();
    if n == 0 {
        return vec![];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| alpha[a].total_cmp(&alpha[b]));

    // provisional labels along the sorted order
    let mut sorted_label = vec![0usize; n];
    let mut label = 0;
    for w in 1..n {
        if alpha[order[w]] - alpha[order[w - 1]] > eta {
            label += 1;
        }
        sorted_label[order[w]] = label;
    }
    sorted_label[order[0]] = 0;

    // relabel by first occurrence in the original order
    let mut remap = vec![usize::MAX; label + 1];
    let mut next = 0;
    let mut out = vec![0usize; n];
    for (i, &l) in sorted_label.iter().enumerate() {
        if remap[l] == usize::MAX {
            remap[l] = next;
            next += 1;
        }
        out[i] = remap[l];
    }
    out
}

/// Replaces every leaf's weights with a grouped layout derived from
/// clustering its current coefficients. All group coefficients and the
/// bias are re-initialized uniform on [-1, 1] (re-learned from scratch);
/// the operator sequence and template are untouched.
pub fn regroup_expression(expr: &Expression, eta: f64, rng_seed: u64) -> Result<Expression> {
    regroup_with_init(expr, eta, ReInit::Scratch { rng_seed })
}

/// Warm-started variant for ablation: each group coefficient starts at the
/// mean of the weights it merged, and the bias is kept.
pub fn regroup_expression_warm(expr: &Expression, eta: f64) -> Result<Expression> {
    regroup_with_init(expr, eta, ReInit::Warm)
}

enum ReInit {
    Scratch { rng_seed: u64 },
    Warm,
}

fn regroup_with_init(expr: &Expression, eta: f64, init: ReInit) -> Result<Expression> {
    let d = expr.dim();
    let mut rng = match &init {
        ReInit::Scratch { rng_seed } => Some(rng_from(derive_seed(
            *rng_seed,
            Stream::RegroupInit,
            0,
        ))),
        ReInit::Warm => None,
    };
    let mut new_leaves = Vec::with_capacity(expr.leaves().len());
    for leaf in expr.leaves() {
        let alpha: Vec<f64> = (0..=d).map(|k| leaf.alpha(k)).collect();
        let assignment = cluster_weights(&alpha, eta);
        let g = assignment.iter().max().map_or(0, |m| m + 1);
        let (coeffs, beta) = match (&mut rng, &init) {
            (Some(rng), _) => (
                (0..g).map(|_| rng.random_range(-1.0..1.0)).collect(),
                rng.random_range(-1.0..1.0),
            ),
            (None, _) => {
                let mut sums = vec![(0.0, 0usize); g];
                for (k, &gid) in assignment.iter().enumerate() {
                    sums[gid].0 += alpha[k];
                    sums[gid].1 += 1;
                }
                (
                    sums.iter().map(|(s, c)| s / *c as f64).collect(),
                    leaf.beta(),
                )
            }
        };
        new_leaves.push(LeafWeights::Grouped(GroupedLeafParams {
            assignment,
            coeffs,
            beta,
        }));
    }
    let mut grouped = expr.clone();
    grouped.set_leaves(new_leaves)?;
    Ok(grouped)
}

/// Outcome of the grouped rescoring step.
#[derive(Clone, Debug)]
pub struct GroupRescore {
    /// The regrouped expression after its `t3` tuning steps.
    pub grouped: Expression,
    /// Fresh-batch loss of the tuned grouped expression.
    pub grouped_loss: f64,
    /// Whether the grouped loss improves on the recorded loss.
    pub accepted: bool,
    /// Polished ungrouped parameters (never worse than the input).
    pub polished_theta: Vec<f64>,
    pub polished_loss: f64,
    /// The candidate's loss after this step: the grouped loss when
    /// accepted, otherwise the best ungrouped loss seen.
    pub new_loss: f64,
    pub new_score: f64,
}

/// Restructures the iteration's best candidate: polishes its coarse fit
/// with extra BFGS steps so the leaf weights are tight enough to cluster,
/// regroups, tunes the regrouped parameters for `t3` Adam steps, and
/// accepts the grouped version only if its loss improves on
/// `recorded_loss` (the candidate's coarse-tune loss); otherwise the
/// grouped update is discarded and the original loss stands.
pub fn group_rescore(
    problem: &ProblemSpec,
    expr: &Expression,
    recorded_loss: f64,
    eta: f64,
    cfg: &OptimizerConfig,
    rng_seed: u64,
) -> Result<GroupRescore> {
    // Polish: the coarse weights carry spread much larger than eta, which
    // would shatter the clusters. A deeper quasi-Newton pass on one frozen
    // batch tightens them first.
    let frozen = sample_points(
        problem,
        cfg.n_interior,
        cfg.m_terminal,
        derive_seed(rng_seed, Stream::PolishBatch, 0),
    );
    let mut work = expr.clone();
    let objective = |theta: &[f64]| {
        work.set_params(theta);
        loss_and_grad(problem, &work, &frozen)
    };
    let (polished_theta, _) = crate::optim::run_bfgs(
        objective,
        &expr.get_params(),
        cfg.t2_polish,
        cfg.line_search(),
    );
    let mut polished = expr.clone();
    polished.set_params(&polished_theta);
    let polished_loss = loss(problem, &polished, &frozen);
    let (cluster_source, best_ungrouped) = if polished_loss.is_finite() && polished_loss < recorded_loss
    {
        (&polished, polished_loss)
    } else {
        (expr, recorded_loss)
    };

    let reject = |grouped: Expression, grouped_loss: f64| GroupRescore {
        grouped,
        grouped_loss,
        accepted: false,
        polished_theta: cluster_source.get_params(),
        polished_loss: best_ungrouped,
        new_loss: best_ungrouped,
        new_score: score_from_loss(best_ungrouped),
    };

    let mut grouped = regroup_expression(cluster_source, eta, rng_seed)?;
    let mut theta = grouped.get_params();
    let mut adam = Adam::new(theta.len(), cfg.adam_coarse());
    for step in 0..cfg.t3 {
        let batch = sample_points(
            problem,
            cfg.n_interior,
            cfg.m_terminal,
            derive_seed(rng_seed, Stream::RegroupBatch, step as u64),
        );
        grouped.set_params(&theta);
        let Some((_, grad)) = loss_and_grad(problem, &grouped, &batch) else {
            return Ok(reject(grouped, f64::INFINITY));
        };
        adam.update(&mut theta, &grad);
    }
    grouped.set_params(&theta);
    let eval_batch = sample_points(
        problem,
        cfg.n_interior,
        cfg.m_terminal,
        derive_seed(rng_seed, Stream::EvalBatch, 0),
    );
    let grouped_loss = loss(problem, &grouped, &eval_batch);
    let accepted = grouped_loss.is_finite() && grouped_loss < recorded_loss;
    if !accepted {
        return Ok(reject(grouped, grouped_loss));
    }
    Ok(GroupRescore {
        polished_theta: cluster_source.get_params(),
        polished_loss: best_ungrouped,
        new_loss: grouped_loss.min(best_ungrouped),
        new_score: score_from_loss(grouped_loss.min(best_ungrouped)),
        grouped,
        grouped_loss,
        accepted,
    })
}
