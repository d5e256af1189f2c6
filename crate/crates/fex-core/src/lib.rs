//! Finite-expression solver for partial integro-differential equations.
//!
//! The solver searches for a closed-form solution `u(t, x)` to a PIDE by
//! combinatorial optimization over a fixed expression-tree template: a
//! policy-gradient controller proposes operator sequences, each sequence's
//! trainable coefficients are tuned against a least-squares collocation
//! functional, and the best candidates are fine-tuned to high precision.
//! Leaf coefficients can be clustered into shared groups, which cuts the
//! parameter count dramatically in high dimensions.
//!
//! Module map:
//! - [`expr`]: expression trees, evaluation, jets (derivatives), printing
//! - [`integral`]: the nonlocal jump operator (Taylor estimate / quadrature)
//! - [`problems`]: benchmark PIDE instances, sampling, residual and loss
//! - [`optim`]: Adam and BFGS, candidate scoring, fine-tuning
//! - [`grouping`]: leaf-coefficient clustering and regrouped rescoring
//! - [`search`]: the controller, candidate pool, search loop and solver
//! - [`validate`]: self-contained oracle checks used by `fex validate`

pub mod error;
pub mod expr;
pub mod grouping;
pub mod integral;
pub mod optim;
pub mod problems;
pub mod search;
pub mod validate;
pub mod rng;

pub use error::{Error, Result};
