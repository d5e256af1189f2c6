//! Finite expressions on a fixed tree template.
//!
//! An expression is a template, one operator per node, and trainable
//! parameters: each leaf carries per-input weights `alpha` (index 0 weights
//! `t`, indices `1..=d` weight `x_1..x_d`) plus a bias `beta`; each internal
//! node carries a scale and bias applied after its operator. A leaf with
//! unary op `phi` evaluates to
//!
//! ```text
//! alpha[0]*phi(t) + alpha[1]*phi(x_1) + ... + alpha[d]*phi(x_d) + beta
//! ```
//!
//! which also covers the constant ops `0` and `1`: a `0`-leaf returns
//! exactly `beta`, a `1`-leaf returns the sum of its weights plus `beta`.
//!
//! Expressions are immutable during evaluation and differentiation; only
//! the explicit parameter setters mutate them, and an optimizer is expected
//! to own its expression while tuning it.

mod jet;
pub mod operators;
mod printing;
mod template;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

pub use jet::{Jet, JetRequest, ParamTangents};
pub use operators::{BinaryOp, OperatorSet, UnaryOp, DEFAULT_BINARY, DEFAULT_UNARY};
pub use template::{NodeKind, TemplateNode, TreeTemplate};

/// One operator index per template node, in node order. Binary nodes index
/// into the binary list, unary/leaf nodes into the unary list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSequence(pub Vec<usize>);

impl OperatorSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Free (ungrouped) leaf weights: `d + 1` coefficients and a bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafParams {
    pub alpha: Vec<f64>,
    pub beta: f64,
}

/// Grouped leaf weights: inputs whose assignment ids match share one
/// coefficient. Evaluating a grouped leaf equals evaluating a free leaf
/// with `alpha[k] = coeffs[assignment[k]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupedLeafParams {
    pub assignment: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LeafWeights {
    Free(LeafParams),
    Grouped(GroupedLeafParams),
}

impl LeafWeights {
    /// Effective weight of input `k` (0 is `t`, `1..=d` are `x` components).
    pub fn alpha(&self, k: usize) -> f64 {
        match self {
            LeafWeights::Free(p) => p.alpha[k],
            LeafWeights::Grouped(p) => p.coeffs[p.assignment[k]],
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            LeafWeights::Free(p) => p.beta,
            LeafWeights::Grouped(p) => p.beta,
        }
    }

    pub fn input_count(&self) -> usize {
        match self {
            LeafWeights::Free(p) => p.alpha.len(),
            LeafWeights::Grouped(p) => p.assignment.len(),
        }
    }

    /// Trainable parameter count including the bias.
    pub fn param_count(&self) -> usize {
        match self {
            LeafWeights::Free(p) => p.alpha.len() + 1,
            LeafWeights::Grouped(p) => p.coeffs.len() + 1,
        }
    }

    pub fn grouping(&self) -> Option<&[usize]> {
        match self {
            LeafWeights::Free(_) => None,
            LeafWeights::Grouped(p) => Some(&p.assignment),
        }
    }
}

/// Scale and bias applied after an internal node's operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub scale: f64,
    pub bias: f64,
}

impl Default for NodeParams {
    fn default() -> Self {
        NodeParams {
            scale: 1.0,
            bias: 0.0,
        }
    }
}

/// A finite expression `u(t, x; template, ops, params)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expression {
    template: TreeTemplate,
    opset: OperatorSet,
    ops: OperatorSequence,
    /// Per-leaf weights, indexed by the template's leaf order.
    leaves: Vec<LeafWeights>,
    /// Per-internal-node parameters, indexed by the template's internal order.
    nodes: Vec<NodeParams>,
    dim: usize,
}

/// Builds an expression with the default operator vocabulary. Leaf weights
/// are drawn i.i.d. uniform on [-1, 1] from the seed; leaf biases start at
/// zero and internal nodes start at identity (scale 1, bias 0).
pub fn build_expression(
    template: &TreeTemplate,
    ops: &OperatorSequence,
    dim: usize,
    rng_seed: u64,
) -> Result<Expression> {
    build_expression_with(template, &OperatorSet::default(), ops, dim, rng_seed)
}

pub fn build_expression_with(
    template: &TreeTemplate,
    opset: &OperatorSet,
    ops: &OperatorSequence,
    dim: usize,
    rng_seed: u64,
) -> Result<Expression> {
    if dim == 0 {
        return Err(Error::Structural("dimension must be at least 1".into()));
    }
    validate_ops(template, opset, ops)?;
    let mut rng = rng_from(rng_seed);
    let leaves = template
        .leaf_ids()
        .iter()
        .map(|_| {
            let alpha: Vec<f64> = (0..=dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            LeafWeights::Free(LeafParams { alpha, beta: 0.0 })
        })
        .collect();
    let nodes = template
        .internal_ids()
        .iter()
        .map(|_| NodeParams::default())
        .collect();
    Ok(Expression {
        template: template.clone(),
        opset: opset.clone(),
        ops: ops.clone(),
        leaves,
        nodes,
        dim,
    })
}

fn validate_ops(template: &TreeTemplate, opset: &OperatorSet, ops: &OperatorSequence) -> Result<()> {
    if ops.len() != template.node_count() {
        return Err(Error::Structural(format!(
            "operator sequence has length {}, template has {} nodes",
            ops.len(),
            template.node_count()
        )));
    }
    for (id, &op_idx) in ops.0.iter().enumerate() {
        let bound = match template.node(id).kind {
            NodeKind::Binary => opset.binary.len(),
            NodeKind::UnaryInternal | NodeKind::Leaf => opset.unary.len(),
        };
        if op_idx >= bound {
            return Err(Error::Structural(format!(
                "operator index {op_idx} out of range for node {id}"
            )));
        }
    }
    Ok(())
}

impl Expression {
    pub fn template(&self) -> &TreeTemplate {
        &self.template
    }

    pub fn opset(&self) -> &OperatorSet {
        &self.opset
    }

    pub fn ops(&self) -> &OperatorSequence {
        &self.ops
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn leaves(&self) -> &[LeafWeights] {
        &self.leaves
    }

    pub fn node_params(&self) -> &[NodeParams] {
        &self.nodes
    }

    pub fn binary_op(&self, node_id: usize) -> BinaryOp {
        self.opset.binary[self.ops.0[node_id]]
    }

    pub fn unary_op(&self, node_id: usize) -> UnaryOp {
        self.opset.unary[self.ops.0[node_id]]
    }

    /// Per-leaf grouping assignments, `None` for free leaves.
    pub fn grouping(&self) -> Vec<Option<Vec<usize>>> {
        self.leaves
            .iter()
            .map(|l| l.grouping().map(|a| a.to_vec()))
            .collect()
    }

    pub fn is_grouped(&self) -> bool {
        self.leaves
            .iter()
            .any(|l| matches!(l, LeafWeights::Grouped(_)))
    }

    /// Replaces the leaf weights wholesale (used by the grouping step).
    /// The new weights must keep the same input count.
    pub fn set_leaves(&mut self, leaves: Vec<LeafWeights>) -> Result<()> {
        if leaves.len() != self.leaves.len() {
            return Err(Error::Structural("leaf count mismatch".into()));
        }
        for l in &leaves {
            if l.input_count() != self.dim + 1 {
                return Err(Error::Structural("leaf input count mismatch".into()));
            }
        }
        self.leaves = leaves;
        Ok(())
    }

    /// Total trainable parameter count: leaf coefficients and biases plus
    /// two per internal node.
    pub fn parameter_count(&self) -> usize {
        self.leaves.iter().map(|l| l.param_count()).sum::<usize>() + 2 * self.nodes.len()
    }

    /// Flattens all trainable parameters. The layout is preorder with each
    /// node's own parameters first: internal nodes contribute
    /// `[scale, bias]`, leaves contribute `[coeffs..., beta]`. Subtrees
    /// therefore occupy contiguous spans, which the jet propagation relies
    /// on.
    pub fn get_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        self.visit_params(0, &mut out);
        out
    }

    fn visit_params(&self, node_id: usize, out: &mut Vec<f64>) {
        let node = self.template.node(node_id);
        match node.kind {
            NodeKind::Leaf => {
                let leaf = &self.leaves[self.template.leaf_index(node_id)];
                match leaf {
                    LeafWeights::Free(p) => {
                        out.extend_from_slice(&p.alpha);
                        out.push(p.beta);
                    }
                    LeafWeights::Grouped(p) => {
                        out.extend_from_slice(&p.coeffs);
                        out.push(p.beta);
                    }
                }
            }
            NodeKind::Binary | NodeKind::UnaryInternal => {
                let np = self.nodes[self.template.internal_index(node_id)];
                out.push(np.scale);
                out.push(np.bias);
                for &c in &node.children {
                    self.visit_params(c, out);
                }
            }
        }
    }

    pub fn set_params(&mut self, theta: &[f64]) {
        assert_eq!(
            theta.len(),
            self.parameter_count(),
            "parameter vector length mismatch"
        );
        self.assign_params(0, theta, 0);
    }

    fn assign_params(&mut self, node_id: usize, theta: &[f64], offset: usize) -> usize {
        let node = self.template.node(node_id).clone();
        match node.kind {
            NodeKind::Leaf => {
                let leaf = &mut self.leaves[self.template.leaf_index(node_id)];
                match leaf {
                    LeafWeights::Free(p) => {
                        let n = p.alpha.len();
                        p.alpha.copy_from_slice(&theta[offset..offset + n]);
                        p.beta = theta[offset + n];
                        offset + n + 1
                    }
                    LeafWeights::Grouped(p) => {
                        let n = p.coeffs.len();
                        p.coeffs.copy_from_slice(&theta[offset..offset + n]);
                        p.beta = theta[offset + n];
                        offset + n + 1
                    }
                }
            }
            NodeKind::Binary | NodeKind::UnaryInternal => {
                let idx = self.template.internal_index(node_id);
                self.nodes[idx].scale = theta[offset];
                self.nodes[idx].bias = theta[offset + 1];
                let mut cur = offset + 2;
                for &c in &node.children {
                    cur = self.assign_params(c, theta, cur);
                }
                cur
            }
        }
    }

    /// Evaluates `u(t, x)`. Non-finite intermediates (for example an
    /// overflowing `exp`) propagate into a non-finite result; callers treat
    /// such candidates as scoring zero rather than aborting.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.eval_node(0, t, x)
    }

    fn eval_node(&self, node_id: usize, t: f64, x: &[f64]) -> f64 {
        let node = self.template.node(node_id);
        match node.kind {
            NodeKind::Leaf => {
                let leaf = &self.leaves[self.template.leaf_index(node_id)];
                let phi = self.unary_op(node_id);
                let mut acc = leaf.alpha(0) * phi.eval(t);
                for (k, &xk) in x.iter().enumerate() {
                    acc += leaf.alpha(k + 1) * phi.eval(xk);
                }
                acc + leaf.beta()
            }
            NodeKind::UnaryInternal => {
                let child = self.eval_node(node.children[0], t, x);
                let np = self.nodes[self.template.internal_index(node_id)];
                np.scale * self.unary_op(node_id).eval(child) + np.bias
            }
            NodeKind::Binary => {
                let a = self.eval_node(node.children[0], t, x);
                let b = self.eval_node(node.children[1], t, x);
                let np = self.nodes[self.template.internal_index(node_id)];
                np.scale * self.binary_op(node_id).apply(a, b) + np.bias
            }
        }
    }

    /// Serializes to the canonical JSON document. Parameters survive the
    /// round trip bit-exactly.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Expression> {
        let expr: Expression = serde_json::from_str(json)?;
        validate_ops(&expr.template, &expr.opset, &expr.ops)?;
        Ok(expr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ops_for(template: &TreeTemplate, root: BinaryOp, leaf: UnaryOp) -> OperatorSequence {
        let set = OperatorSet::default();
        let b = set.binary.iter().position(|&o| o == root).unwrap();
        let u = set.unary.iter().position(|&o| o == leaf).unwrap();
        OperatorSequence(
            template
                .nodes()
                .iter()
                .map(|n| if n.kind == NodeKind::Binary { b } else { u })
                .collect(),
        )
    }

    #[test]
    fn depth2_parameter_count() {
        // two leaves of (2 alphas + beta) plus root scale/bias = 8
        let template = TreeTemplate::depth2();
        let ops = ops_for(&template, BinaryOp::Mul, UnaryOp::Identity);
        let expr = build_expression(&template, &ops, 1, 0).unwrap();
        assert_eq!(expr.parameter_count(), 8);
    }

    #[test]
    fn alpha_length_is_dim_plus_one() {
        let template = TreeTemplate::depth2();
        let ops = ops_for(&template, BinaryOp::Add, UnaryOp::Square);
        let expr = build_expression(&template, &ops, 10, 0).unwrap();
        match &expr.leaves()[0] {
            LeafWeights::Free(p) => assert_eq!(p.alpha.len(), 11),
            _ => panic!("fresh expression has free leaves"),
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let template = TreeTemplate::depth2();
        let ops = ops_for(&template, BinaryOp::Add, UnaryOp::Exp);
        let a = build_expression(&template, &ops, 4, 99).unwrap();
        let b = build_expression(&template, &ops, 4, 99).unwrap();
        assert_eq!(a.get_params(), b.get_params());
        let c = build_expression(&template, &ops, 4, 100).unwrap();
        assert_ne!(a.get_params(), c.get_params());
    }

    #[test]
    fn mismatched_sequence_rejected() {
        let template = TreeTemplate::depth2();
        let short = OperatorSequence(vec![0, 0]);
        assert!(build_expression(&template, &short, 1, 0).is_err());
        let out_of_range = OperatorSequence(vec![7, 0, 0]);
        assert!(build_expression(&template, &out_of_range, 1, 0).is_err());
    }

    #[test]
    fn identity_leaf_is_identity_map() {
        let template = TreeTemplate::single_leaf();
        let ops = OperatorSequence(vec![2]); // Identity
        let mut expr = build_expression(&template, &ops, 1, 0).unwrap();
        expr.set_params(&[0.0, 1.0, 0.0]);
        assert_eq!(expr.evaluate(0.5, &[0.3]), 0.3);
        assert_eq!(expr.evaluate(0.9, &[-2.0]), -2.0);
    }

    #[test]
    fn zero_leaf_returns_beta() {
        let template = TreeTemplate::single_leaf();
        let ops = OperatorSequence(vec![0]); // Zero
        let mut expr = build_expression(&template, &ops, 3, 1).unwrap();
        let mut theta = expr.get_params();
        let n = theta.len();
        theta[n - 1] = 2.5; // beta
        expr.set_params(&theta);
        assert_eq!(expr.evaluate(0.7, &[1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn grouped_leaf_hand_value() {
        // assignment (0,0), coeffs (0.5), op x^2, d=1: u = 0.5 t^2 + 0.5 x^2
        let template = TreeTemplate::single_leaf();
        let ops = OperatorSequence(vec![3]); // Square
        let mut expr = build_expression(&template, &ops, 1, 0).unwrap();
        expr.set_leaves(vec![LeafWeights::Grouped(GroupedLeafParams {
            assignment: vec![0, 0],
            coeffs: vec![0.5],
            beta: 0.0,
        })])
        .unwrap();
        assert!((expr.evaluate(1.0, &[2.0]) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn leaf_output_linear_in_weights() {
        let template = TreeTemplate::single_leaf();
        let ops = OperatorSequence(vec![7]); // Sin
        let mut expr = build_expression(&template, &ops, 2, 5).unwrap();
        let theta = expr.get_params();
        let v1 = expr.evaluate(0.3, &[0.1, 0.9]);
        let doubled: Vec<f64> = theta.iter().map(|p| 2.0 * p).collect();
        expr.set_params(&doubled);
        let v2 = expr.evaluate(0.3, &[0.1, 0.9]);
        assert!((v2 - 2.0 * v1).abs() < 1e-12);
    }

    #[test]
    fn params_round_trip_through_flat_vector() {
        let template = TreeTemplate::depth3();
        let ops = ops_for(&template, BinaryOp::Sub, UnaryOp::Cos);
        let mut expr = build_expression(&template, &ops, 3, 11).unwrap();
        let theta = expr.get_params();
        assert_eq!(theta.len(), expr.parameter_count());
        let perturbed: Vec<f64> = theta.iter().enumerate().map(|(i, p)| p + i as f64).collect();
        expr.set_params(&perturbed);
        assert_eq!(expr.get_params(), perturbed);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let template = TreeTemplate::depth2();
        let ops = ops_for(&template, BinaryOp::Mul, UnaryOp::Exp);
        let expr = build_expression(&template, &ops, 4, 123).unwrap();
        let json = expr.to_json().unwrap();
        let back = Expression::from_json(&json).unwrap();
        let (a, b) = (expr.get_params(), back.get_params());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(back.to_json().unwrap(), json);
    }

    #[test]
    fn overflow_propagates_as_non_finite() {
        let template = TreeTemplate::single_leaf();
        let ops = OperatorSequence(vec![6]); // Exp
        let mut expr = build_expression(&template, &ops, 1, 0).unwrap();
        expr.set_params(&[0.0, 1e6, 0.0]);
        assert!(!expr.evaluate(0.0, &[1000.0]).is_finite());
    }
}
