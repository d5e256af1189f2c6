//! Fixed tree skeletons for finite expressions.
//!
//! A template fixes the shape of the tree for a whole search run; the
//! controller only chooses which operator sits on each node. Nodes are
//! stored in preorder (node 0 is the root), which makes operator-sequence
//! indices and parameter layouts stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    /// Two children, combined by a binary operator, then scaled and shifted.
    Binary,
    /// One child, mapped through a unary operator, then scaled and shifted.
    UnaryInternal,
    /// No children; applies a unary operator element-wise to the inputs
    /// `(t, x_1, ..., x_d)` with per-input weights and a bias.
    Leaf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateNode {
    pub kind: NodeKind,
    pub children: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeTemplate {
    nodes: Vec<TemplateNode>,
    /// Node ids that are leaves, in preorder.
    leaf_ids: Vec<usize>,
    /// Node ids that are internal (binary or unary), in preorder.
    internal_ids: Vec<usize>,
}

impl TreeTemplate {
    /// Validates and indexes a node list. Node 0 must be the root and every
    /// child id must point forward (preorder storage).
    pub fn new(nodes: Vec<TemplateNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Structural("template has no nodes".into()));
        }
        let mut seen_as_child = vec![false; nodes.len()];
        for (id, node) in nodes.iter().enumerate() {
            let expected = match node.kind {
                NodeKind::Binary => 2,
                NodeKind::UnaryInternal => 1,
                NodeKind::Leaf => 0,
            };
            if node.children.len() != expected {
                return Err(Error::Structural(format!(
                    "node {id} has {} children, expected {expected}",
                    node.children.len()
                )));
            }
            for &c in &node.children {
                if c <= id || c >= nodes.len() {
                    return Err(Error::Structural(format!(
                        "node {id} has out-of-order child {c}"
                    )));
                }
                if seen_as_child[c] {
                    return Err(Error::Structural(format!("node {c} has two parents")));
                }
                seen_as_child[c] = true;
            }
        }
        if seen_as_child[0] {
            return Err(Error::Structural("root appears as a child".into()));
        }
        if seen_as_child.iter().skip(1).any(|s| !s) {
            return Err(Error::Structural("unreachable node in template".into()));
        }
        let leaf_ids = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == NodeKind::Leaf)
            .map(|(i, _)| i)
            .collect();
        let internal_ids = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind != NodeKind::Leaf)
            .map(|(i, _)| i)
            .collect();
        Ok(TreeTemplate {
            nodes,
            leaf_ids,
            internal_ids,
        })
    }

    /// A single parameterized leaf, no internal nodes. Mostly useful in
    /// tests and toy controller problems.
    pub fn single_leaf() -> Self {
        TreeTemplate::new(vec![TemplateNode {
            kind: NodeKind::Leaf,
            children: vec![],
        }])
        .expect("static template")
    }

    /// One binary root over two unary leaves (3 nodes). The default shape.
    pub fn depth2() -> Self {
        TreeTemplate::full_binary(2)
    }

    /// One more binary/unary layer: three binary nodes over four leaves.
    pub fn depth3() -> Self {
        TreeTemplate::full_binary(3)
    }

    /// Full binary tree of the given depth: `2^(depth-1) - 1` binary nodes
    /// over `2^(depth-1)` leaves.
    pub fn full_binary(depth: usize) -> Self {
        assert!(depth >= 2, "full binary template needs depth >= 2");
        let mut nodes = Vec::new();
        build_full(&mut nodes, depth);
        TreeTemplate::new(nodes).expect("constructed preorder tree is valid")
    }

    pub fn by_depth(depth: usize) -> Result<Self> {
        match depth {
            1 => Ok(TreeTemplate::single_leaf()),
            2..=4 => Ok(TreeTemplate::full_binary(depth)),
            _ => Err(Error::Config(format!("unsupported tree depth {depth}"))),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: usize) -> &TemplateNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TemplateNode] {
        &self.nodes
    }

    pub fn leaf_ids(&self) -> &[usize] {
        &self.leaf_ids
    }

    pub fn internal_ids(&self) -> &[usize] {
        &self.internal_ids
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_ids.len()
    }

    /// Position of `node_id` within the leaf list. Panics if not a leaf.
    pub fn leaf_index(&self, node_id: usize) -> usize {
        self.leaf_ids
            .iter()
            .position(|&l| l == node_id)
            .expect("node is a leaf")
    }

    /// Position of `node_id` within the internal list. Panics if a leaf.
    pub fn internal_index(&self, node_id: usize) -> usize {
        self.internal_ids
            .iter()
            .position(|&l| l == node_id)
            .expect("node is internal")
    }
}

fn build_full(nodes: &mut Vec<TemplateNode>, depth: usize) -> usize {
    let id = nodes.len();
    if depth == 1 {
        nodes.push(TemplateNode {
            kind: NodeKind::Leaf,
            children: vec![],
        });
        return id;
    }
    nodes.push(TemplateNode {
        kind: NodeKind::Binary,
        children: vec![],
    });
    let left = build_full(nodes, depth - 1);
    let right = build_full(nodes, depth - 1);
    nodes[id].children = vec![left, right];
    id
}
