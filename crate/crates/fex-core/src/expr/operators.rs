//! Operator vocabularies for expression trees.
//!
//! The orders of `DEFAULT_BINARY` and `DEFAULT_UNARY` are fixed: operator
//! sequences store indices into these lists, and those indices must be
//! stable across runs and across serialized expressions.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
        }
    }
}

/// Unary operators applied element-wise by leaves (and by unary internal
/// nodes, when a template uses them). All are total on the reals; partial
/// operators such as division and log are deliberately absent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnaryOp {
    Zero,
    One,
    Identity,
    Square,
    Cube,
    Quartic,
    Exp,
    Sin,
    Cos,
}

impl UnaryOp {
    pub fn eval(self, v: f64) -> f64 {
        match self {
            UnaryOp::Zero => 0.0,
            UnaryOp::One => 1.0,
            UnaryOp::Identity => v,
            UnaryOp::Square => v * v,
            UnaryOp::Cube => v * v * v,
            UnaryOp::Quartic => (v * v) * (v * v),
            UnaryOp::Exp => v.exp(),
            UnaryOp::Sin => v.sin(),
            UnaryOp::Cos => v.cos(),
        }
    }

    /// First derivative.
    pub fn d1(self, v: f64) -> f64 {
        match self {
            UnaryOp::Zero | UnaryOp::One => 0.0,
            UnaryOp::Identity => 1.0,
            UnaryOp::Square => 2.0 * v,
            UnaryOp::Cube => 3.0 * v * v,
            UnaryOp::Quartic => 4.0 * v * v * v,
            UnaryOp::Exp => v.exp(),
            UnaryOp::Sin => v.cos(),
            UnaryOp::Cos => -v.sin(),
        }
    }

    /// Second derivative.
    pub fn d2(self, v: f64) -> f64 {
        match self {
            UnaryOp::Zero | UnaryOp::One | UnaryOp::Identity => 0.0,
            UnaryOp::Square => 2.0,
            UnaryOp::Cube => 6.0 * v,
            UnaryOp::Quartic => 12.0 * v * v,
            UnaryOp::Exp => v.exp(),
            UnaryOp::Sin => -v.sin(),
            UnaryOp::Cos => -v.cos(),
        }
    }

    /// Third derivative, needed when a unary op sits on an internal node and
    /// second-order jets are chained through it with parameter tangents.
    pub fn d3(self, v: f64) -> f64 {
        match self {
            UnaryOp::Zero | UnaryOp::One | UnaryOp::Identity | UnaryOp::Square => 0.0,
            UnaryOp::Cube => 6.0,
            UnaryOp::Quartic => 24.0 * v,
            UnaryOp::Exp => v.exp(),
            UnaryOp::Sin => -v.cos(),
            UnaryOp::Cos => v.sin(),
        }
    }

    pub fn is_constant(self) -> bool {
        matches!(self, UnaryOp::Zero | UnaryOp::One)
    }

    /// Rendering of `op(arg)` for infix output.
    pub fn render(self, arg: &str) -> String {
        match self {
            UnaryOp::Zero => "0".to_string(),
            UnaryOp::One => "1".to_string(),
            UnaryOp::Identity => arg.to_string(),
            UnaryOp::Square => format!("{arg}^2"),
            UnaryOp::Cube => format!("{arg}^3"),
            UnaryOp::Quartic => format!("{arg}^4"),
            UnaryOp::Exp => format!("exp({arg})"),
            UnaryOp::Sin => format!("sin({arg})"),
            UnaryOp::Cos => format!("cos({arg})"),
        }
    }
}

pub const DEFAULT_BINARY: [BinaryOp; 3] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul];

pub const DEFAULT_UNARY: [UnaryOp; 9] = [
    UnaryOp::Zero,
    UnaryOp::One,
    UnaryOp::Identity,
    UnaryOp::Square,
    UnaryOp::Cube,
    UnaryOp::Quartic,
    UnaryOp::Exp,
    UnaryOp::Sin,
    UnaryOp::Cos,
];

/// The operator vocabulary a search runs over. Indices in an
/// [`OperatorSequence`](crate::expr::OperatorSequence) refer to positions in
/// these lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSet {
    pub binary: Vec<BinaryOp>,
    pub unary: Vec<UnaryOp>,
}

impl Default for OperatorSet {
    fn default() -> Self {
        OperatorSet {
            binary: DEFAULT_BINARY.to_vec(),
            unary: DEFAULT_UNARY.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sets_have_documented_order() {
        let set = OperatorSet::default();
        assert_eq!(set.binary.len(), 3);
        assert_eq!(set.unary.len(), 9);
        assert_eq!(set.binary[2], BinaryOp::Mul);
        assert_eq!(set.unary[0], UnaryOp::Zero);
        assert_eq!(set.unary[2], UnaryOp::Identity);
        assert_eq!(set.unary[8], UnaryOp::Cos);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for op in DEFAULT_UNARY {
            for &v in &[-1.3, -0.2, 0.0, 0.4, 1.7] {
                let fd1 = (op.eval(v + h) - op.eval(v - h)) / (2.0 * h);
                let fd2 = (op.d1(v + h) - op.d1(v - h)) / (2.0 * h);
                let fd3 = (op.d2(v + h) - op.d2(v - h)) / (2.0 * h);
                assert!((op.d1(v) - fd1).abs() < 1e-6, "{op:?} d1 at {v}");
                assert!((op.d2(v) - fd2).abs() < 1e-6, "{op:?} d2 at {v}");
                assert!((op.d3(v) - fd3).abs() < 1e-5, "{op:?} d3 at {v}");
            }
        }
    }
}
