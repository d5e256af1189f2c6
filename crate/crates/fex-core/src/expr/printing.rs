//! Infix rendering of expressions.
//!
//! The string is a human-readable companion to the JSON serialization, not
//! the canonical form: coefficients are printed to 7 significant digits, so
//! re-parsing the string reproduces values to roughly that precision while
//! the JSON document round-trips bit-exactly.

use std::fmt;

use super::{Expression, LeafWeights, NodeKind, UnaryOp};

/// Formats `v` with 7 significant digits, using plain decimal notation for
/// moderate exponents and scientific notation otherwise.
pub fn format_coefficient(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-7..7).contains(&exp) {
        let decimals = (6 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        trim_zeros(&s)
    } else {
        format!("{v:.6e}")
    }
}

fn trim_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    if t.is_empty() || t == "-" {
        "0".to_string()
    } else {
        t.to_string()
    }
}

/// A signed additive term; keeps sign handling out of the string assembly.
struct Term {
    negative: bool,
    body: String,
}

fn join_terms(terms: Vec<Term>) -> String {
    if terms.is_empty() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (i, term) in terms.iter().enumerate() {
        if i == 0 {
            if term.negative {
                out.push('-');
            }
        } else if term.negative {
            out.push_str(" - ");
        } else {
            out.push_str(" + ");
        }
        out.push_str(&term.body);
    }
    out
}

fn input_name(k: usize) -> String {
    if k == 0 {
        "t".to_string()
    } else {
        format!("x{k}")
    }
}

fn coeff_times(c: f64, rendered: &str) -> Term {
    let negative = c < 0.0;
    let mag = c.abs();
    let body = if mag == 1.0 {
        rendered.to_string()
    } else {
        format!("{}*{}", format_coefficient(mag), rendered)
    };
    Term { negative, body }
}

fn render_leaf(expr: &Expression, node_id: usize) -> String {
    let leaf = &expr.leaves[expr.template.leaf_index(node_id)];
    let phi = expr.unary_op(node_id);
    let dim = expr.dim;

    if phi.is_constant() {
        // The whole leaf collapses to one number.
        let c = if phi == UnaryOp::One {
            (0..=dim).map(|k| leaf.alpha(k)).sum::<f64>() + leaf.beta()
        } else {
            leaf.beta()
        };
        return format_coefficient(c);
    }

    let mut terms: Vec<Term> = Vec::new();
    match leaf {
        LeafWeights::Free(p) => {
            for (k, &a) in p.alpha.iter().enumerate() {
                if a != 0.0 {
                    terms.push(coeff_times(a, &phi.render(&input_name(k))));
                }
            }
        }
        LeafWeights::Grouped(p) => {
            // Shared coefficients distribute over a parenthesized sum of the
            // group's inputs, e.g. `0.02*(x1^2 + x2^2)`.
            for (g, &c) in p.coeffs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let members: Vec<String> = p
                    .assignment
                    .iter()
                    .enumerate()
                    .filter(|&(_, &a)| a == g)
                    .map(|(k, _)| phi.render(&input_name(k)))
                    .collect();
                match members.len() {
                    0 => {}
                    1 => terms.push(coeff_times(c, &members[0])),
                    _ => terms.push(coeff_times(c, &format!("({})", members.join(" + ")))),
                }
            }
        }
    }
    let beta = leaf.beta();
    if beta != 0.0 {
        terms.push(Term {
            negative: beta < 0.0,
            body: format_coefficient(beta.abs()),
        });
    }
    join_terms(terms)
}

fn render_node(expr: &Expression, node_id: usize) -> String {
    let node = expr.template.node(node_id);
    match node.kind {
        NodeKind::Leaf => render_leaf(expr, node_id),
        NodeKind::UnaryInternal => {
            let np = expr.nodes[expr.template.internal_index(node_id)];
            let inner = render_node(expr, node.children[0]);
            let applied = expr.unary_op(node_id).render(&format!("({inner})"));
            wrap_scale_bias(&applied, np.scale, np.bias)
        }
        NodeKind::Binary => {
            let np = expr.nodes[expr.template.internal_index(node_id)];
            let left = render_node(expr, node.children[0]);
            let right = render_node(expr, node.children[1]);
            let combined = format!("({left}) {} ({right})", expr.binary_op(node_id).symbol());
            wrap_scale_bias(&combined, np.scale, np.bias)
        }
    }
}

fn wrap_scale_bias(inner: &str, scale: f64, bias: f64) -> String {
    if scale == 0.0 {
        return format_coefficient(bias);
    }
    let scaled = if scale == 1.0 {
        inner.to_string()
    } else {
        format!("{}*{}", format_coefficient(scale), inner)
    };
    if bias == 0.0 {
        scaled
    } else if bias < 0.0 {
        format!("{scaled} - {}", format_coefficient(-bias))
    } else {
        format!("{scaled} + {}", format_coefficient(bias))
    }
}

impl Expression {
    /// Infix rendering with coefficients at 7 significant digits.
    pub fn to_infix(&self) -> String {
        render_node(self, 0)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_infix())
    }
}
