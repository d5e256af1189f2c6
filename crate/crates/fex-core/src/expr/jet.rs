//! Forward-mode jets: value, time derivative, spatial gradient and selected
//! second derivatives, propagated together through the expression tree in
//! one bottom-up pass (no finite differences). Optionally the jet also
//! carries the derivative of every component with respect to every
//! trainable parameter ("parameter tangents"), which is what the loss
//! gradient is assembled from.
//!
//! Parameter tangents exploit the flat parameter layout: it is preorder
//! with each node's own parameters first, so every subtree owns a
//! contiguous span and a child's tangent block can be combined into its
//! parent without touching parameters from the sibling subtree.

use super::{Expression, LeafWeights, NodeKind};

/// What to compute. `value` is always included. Requesting Hessian entries
/// forces the gradient on, since second-order product rules need first
/// derivatives of the children.
#[derive(Clone, Debug, Default)]
pub struct JetRequest {
    pub with_dt: bool,
    pub with_grad: bool,
    pub hess_pairs: Vec<(usize, usize)>,
    pub with_params: bool,
}

impl JetRequest {
    pub fn value_only() -> Self {
        JetRequest::default()
    }

    pub fn full(hess_pairs: Vec<(usize, usize)>, with_params: bool) -> Self {
        JetRequest {
            with_dt: true,
            with_grad: true,
            hess_pairs,
            with_params,
        }
    }
}

/// Derivatives of every jet component with respect to the flat parameter
/// vector, stored parameter-major over the packed component block. The
/// backing buffer is recycled through a thread-local pool on drop, which
/// keeps the hot per-collocation-point path allocation-free.
#[derive(Clone, Debug)]
pub struct ParamTangents {
    rows: Vec<f64>,
    n_comps: usize,
    dim: usize,
    n_pairs: usize,
    dt_off: Option<usize>,
    grad_off: Option<usize>,
    hess_off: usize,
}

impl ParamTangents {
    pub fn n_params(&self) -> usize {
        self.rows.len().checked_div(self.n_comps).unwrap_or(0)
    }

    /// d(value)/d(theta_p)
    pub fn value(&self, p: usize) -> f64 {
        self.rows[p * self.n_comps]
    }

    /// d(du/dt)/d(theta_p); zero when dt was not requested.
    pub fn dt(&self, p: usize) -> f64 {
        match self.dt_off {
            Some(off) => self.rows[p * self.n_comps + off],
            None => 0.0,
        }
    }

    /// d(du/dx_i)/d(theta_p); zero when the gradient was not requested.
    pub fn grad(&self, p: usize, i: usize) -> f64 {
        debug_assert!(i < self.dim);
        match self.grad_off {
            Some(off) => self.rows[p * self.n_comps + off + i],
            None => 0.0,
        }
    }

    /// d(hess_k)/d(theta_p) for the k-th requested pair.
    pub fn hess(&self, p: usize, k: usize) -> f64 {
        debug_assert!(k < self.n_pairs);
        self.rows[p * self.n_comps + self.hess_off + k]
    }
}

impl Drop for ParamTangents {
    fn drop(&mut self) {
        give_buf(std::mem::take(&mut self.rows));
    }
}

thread_local! {
    static BUF_POOL: std::cell::RefCell<Vec<Vec<f64>>> =
        const { std::cell::RefCell::new(Vec::new()) };
}

/// Grabs a recycled buffer of `len` entries. With `zeroed` the whole
/// buffer is cleared; otherwise the contents are arbitrary and the caller
/// must overwrite every slot it reads.
fn take_buf(len: usize, zeroed: bool) -> Vec<f64> {
    let mut v = BUF_POOL
        .with(|p| p.borrow_mut().pop())
        .unwrap_or_default();
    if zeroed {
        v.clear();
    }
    v.resize(len, 0.0);
    v
}

fn give_buf(v: Vec<f64>) {
    if v.capacity() > 0 {
        BUF_POOL.with(|p| {
            let mut pool = p.borrow_mut();
            if pool.len() < 32 {
                pool.push(v);
            }
        });
    }
}

/// A bundle of `u` and its requested derivatives at one point.
#[derive(Clone, Debug)]
pub struct Jet {
    pub value: f64,
    pub dt: f64,
    pub grad: Vec<f64>,
    /// Values aligned with `pairs`.
    pub hess: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub tangents: Option<ParamTangents>,
}

impl Jet {
    /// Looks up a requested second derivative; symmetric in (i, j).
    pub fn hess_at(&self, i: usize, j: usize) -> Option<f64> {
        self.pairs
            .iter()
            .position(|&(a, b)| (a, b) == (i, j) || (a, b) == (j, i))
            .map(|k| self.hess[k])
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.dt.is_finite()
            && self.grad.iter().all(|g| g.is_finite())
            && self.hess.iter().all(|h| h.is_finite())
    }
}

/// Component layout inside the flat `comps` vector used during propagation.
struct CompLayout {
    n: usize,
    dt: Option<usize>,
    grad: Option<usize>,
    hess: usize,
    dim: usize,
    n_pairs: usize,
}

impl CompLayout {
    fn new(dim: usize, req: &JetRequest) -> Self {
        let with_grad = req.with_grad || !req.hess_pairs.is_empty();
        let mut n = 1;
        let dt = req.with_dt.then(|| {
            let i = n;
            n += 1;
            i
        });
        let grad = with_grad.then(|| {
            let i = n;
            n += dim;
            i
        });
        let hess = n;
        n += req.hess_pairs.len();
        CompLayout {
            n,
            dt,
            grad,
            hess,
            dim,
            n_pairs: req.hess_pairs.len(),
        }
    }

    fn g(&self, i: usize) -> usize {
        self.grad.expect("gradient requested") + i
    }

    fn h(&self, k: usize) -> usize {
        self.hess + k
    }
}

struct NodeJet {
    comps: Vec<f64>,
    /// Parameter tangents for this subtree's span, parameter-major:
    /// `tang[p * n_comps + c]`. Empty when tangents are off.
    tang: Vec<f64>,
}

struct Ctx<'a> {
    expr: &'a Expression,
    t: f64,
    x: &'a [f64],
    pairs: &'a [(usize, usize)],
    layout: CompLayout,
    with_params: bool,
}

impl Expression {
    /// Full jet: value, time derivative, whole spatial gradient, and the
    /// requested second derivatives, with parameter tangents on demand.
    pub fn derivatives(
        &self,
        t: f64,
        x: &[f64],
        hess_pairs: &[(usize, usize)],
        with_params: bool,
    ) -> Jet {
        self.jet(
            t,
            x,
            &JetRequest::full(hess_pairs.to_vec(), with_params),
        )
    }

    /// Tailored jet; cheaper when only some components are needed (for
    /// example value-only evaluations inside a quadrature).
    pub fn jet(&self, t: f64, x: &[f64], req: &JetRequest) -> Jet {
        debug_assert_eq!(x.len(), self.dim);
        for &(i, j) in &req.hess_pairs {
            debug_assert!(i < self.dim && j < self.dim, "hessian pair out of range");
        }
        let layout = CompLayout::new(self.dim, req);
        let ctx = Ctx {
            expr: self,
            t,
            x,
            pairs: &req.hess_pairs,
            layout,
            with_params: req.with_params,
        };
        let NodeJet { comps, tang } = node_jet(&ctx, 0);
        let l = &ctx.layout;
        let tangents = if req.with_params {
            Some(ParamTangents {
                rows: tang,
                n_comps: l.n,
                dim: l.dim,
                n_pairs: l.n_pairs,
                dt_off: l.dt,
                grad_off: l.grad,
                hess_off: l.hess,
            })
        } else {
            give_buf(tang);
            None
        };
        let jet = Jet {
            value: comps[0],
            dt: l.dt.map(|i| comps[i]).unwrap_or(0.0),
            grad: l
                .grad
                .map(|g0| comps[g0..g0 + l.dim].to_vec())
                .unwrap_or_default(),
            hess: (0..l.n_pairs).map(|k| comps[l.h(k)]).collect(),
            pairs: req.hess_pairs.clone(),
            tangents,
        };
        give_buf(comps);
        jet
    }
}

fn node_jet(ctx: &Ctx, node_id: usize) -> NodeJet {
    match ctx.expr.template.node(node_id).kind {
        NodeKind::Leaf => leaf_jet(ctx, node_id),
        NodeKind::UnaryInternal => unary_jet(ctx, node_id),
        NodeKind::Binary => binary_jet(ctx, node_id),
    }
}

fn leaf_jet(ctx: &Ctx, node_id: usize) -> NodeJet {
    let l = &ctx.layout;
    let leaf = &ctx.expr.leaves[ctx.expr.template.leaf_index(node_id)];
    let phi = ctx.expr.unary_op(node_id);
    let dim = l.dim;

    let mut comps = take_buf(l.n, true);
    // phi and its derivatives at each input: slot 0 is t, slot k+1 is x_k.
    let input = |k: usize| if k == 0 { ctx.t } else { ctx.x[k - 1] };

    let mut value = leaf.beta();
    for k in 0..=dim {
        value += leaf.alpha(k) * phi.eval(input(k));
    }
    comps[0] = value;
    if let Some(di) = l.dt {
        comps[di] = leaf.alpha(0) * phi.d1(ctx.t);
    }
    if l.grad.is_some() {
        for i in 0..dim {
            comps[l.g(i)] = leaf.alpha(i + 1) * phi.d1(ctx.x[i]);
        }
    }
    for (k, &(i, j)) in ctx.pairs.iter().enumerate() {
        if i == j {
            comps[l.h(k)] = leaf.alpha(i + 1) * phi.d2(ctx.x[i]);
        }
    }

    let n_rows = if ctx.with_params { leaf.param_count() } else { 0 };
    let mut tang = take_buf(n_rows * l.n, true);
    if ctx.with_params {
        // Row of the coefficient that weights input k, and the beta row.
        let row_of = |k: usize| match leaf {
            LeafWeights::Free(_) => k,
            LeafWeights::Grouped(p) => p.assignment[k],
        };
        let g0 = l.grad.unwrap_or(0);
        for k in 0..=dim {
            let r = row_of(k);
            let row = &mut tang[r * l.n..(r + 1) * l.n];
            row[0] += phi.eval(input(k));
            if k == 0 {
                if let Some(di) = l.dt {
                    row[di] += phi.d1(ctx.t);
                }
            } else if l.grad.is_some() {
                row[g0 + k - 1] += phi.d1(ctx.x[k - 1]);
            }
        }
        for (kk, &(pi, pj)) in ctx.pairs.iter().enumerate() {
            if pi == pj {
                let r = row_of(pi + 1);
                tang[r * l.n + l.hess + kk] += phi.d2(ctx.x[pi]);
            }
        }
        let beta_row = n_rows - 1;
        tang[beta_row * l.n] = 1.0;
    }
    NodeJet { comps, tang }
}

fn unary_jet(ctx: &Ctx, node_id: usize) -> NodeJet {
    let l = &ctx.layout;
    let node = ctx.expr.template.node(node_id);
    let a = node_jet(ctx, node.children[0]);
    let phi = ctx.expr.unary_op(node_id);
    let np = ctx.expr.nodes[ctx.expr.template.internal_index(node_id)];

    let av = a.comps[0];
    let (f, f1, f2, f3) = (phi.eval(av), phi.d1(av), phi.d2(av), phi.d3(av));

    // Raw chain-rule comps before scale/bias; every slot is written below.
    let mut raw = take_buf(l.n, false);
    raw[0] = f;
    if let Some(di) = l.dt {
        raw[di] = f1 * a.comps[di];
    }
    if l.grad.is_some() {
        for i in 0..l.dim {
            raw[l.g(i)] = f1 * a.comps[l.g(i)];
        }
    }
    for (k, &(i, j)) in ctx.pairs.iter().enumerate() {
        raw[l.h(k)] = f1 * a.comps[l.h(k)] + f2 * a.comps[l.g(i)] * a.comps[l.g(j)];
    }

    let child_rows = a.tang.len() / l.n.max(1);
    let n_rows = if ctx.with_params { 2 + child_rows } else { 0 };
    let mut tang = take_buf(n_rows * l.n, false);
    if ctx.with_params {
        tang[..l.n].copy_from_slice(&raw); // d/d(scale)
        tang[l.n..2 * l.n].fill(0.0);
        tang[l.n] = 1.0; // d(value)/d(bias)
        for p in 0..child_rows {
            let ta = &a.tang[p * l.n..(p + 1) * l.n];
            let out = (2 + p) * l.n;
            let tv = ta[0];
            tang[out] = np.scale * f1 * tv;
            if let Some(di) = l.dt {
                tang[out + di] = np.scale * (f2 * tv * a.comps[di] + f1 * ta[di]);
            }
            if l.grad.is_some() {
                for i in 0..l.dim {
                    tang[out + l.g(i)] =
                        np.scale * (f2 * tv * a.comps[l.g(i)] + f1 * ta[l.g(i)]);
                }
            }
            for (k, &(i, j)) in ctx.pairs.iter().enumerate() {
                let (agi, agj) = (a.comps[l.g(i)], a.comps[l.g(j)]);
                tang[out + l.h(k)] = np.scale
                    * (f2 * tv * a.comps[l.h(k)]
                        + f1 * ta[l.h(k)]
                        + f3 * tv * agi * agj
                        + f2 * (ta[l.g(i)] * agj + agi * ta[l.g(j)]));
            }
        }
    }

    give_buf(a.comps);
    give_buf(a.tang);
    let mut comps = raw;
    for c in comps.iter_mut() {
        *c *= np.scale;
    }
    comps[0] += np.bias;
    NodeJet { comps, tang }
}

fn binary_jet(ctx: &Ctx, node_id: usize) -> NodeJet {
    let l = &ctx.layout;
    let node = ctx.expr.template.node(node_id);
    let a = node_jet(ctx, node.children[0]);
    let b = node_jet(ctx, node.children[1]);
    let op = ctx.expr.binary_op(node_id);
    let np = ctx.expr.nodes[ctx.expr.template.internal_index(node_id)];
    // hoisted comp offsets; the gradient block exists whenever pairs do
    let g0 = l.grad.unwrap_or(0);
    let h0 = l.hess;

    use super::BinaryOp::*;
    let mut raw = take_buf(l.n, false);
    match op {
        Add => {
            for (r, (ac, bc)) in raw.iter_mut().zip(a.comps.iter().zip(&b.comps)) {
                *r = ac + bc;
            }
        }
        Sub => {
            for (r, (ac, bc)) in raw.iter_mut().zip(a.comps.iter().zip(&b.comps)) {
                *r = ac - bc;
            }
        }
        Mul => {
            let (va, vb) = (a.comps[0], b.comps[0]);
            raw[0] = va * vb;
            if let Some(di) = l.dt {
                raw[di] = va * b.comps[di] + a.comps[di] * vb;
            }
            if l.grad.is_some() {
                for i in 0..l.dim {
                    raw[g0 + i] = va * b.comps[g0 + i] + a.comps[g0 + i] * vb;
                }
            }
            for (k, &(i, j)) in ctx.pairs.iter().enumerate() {
                raw[h0 + k] = va * b.comps[h0 + k]
                    + a.comps[h0 + k] * vb
                    + a.comps[g0 + i] * b.comps[g0 + j]
                    + a.comps[g0 + j] * b.comps[g0 + i];
            }
        }
    }

    let rows_a = a.tang.len() / l.n.max(1);
    let rows_b = b.tang.len() / l.n.max(1);
    let n_rows = if ctx.with_params { 2 + rows_a + rows_b } else { 0 };
    let mut tang = take_buf(n_rows * l.n, false);
    if ctx.with_params {
        tang[..l.n].copy_from_slice(&raw); // d/d(scale)
        tang[l.n..2 * l.n].fill(0.0);
        tang[l.n] = 1.0; // d(value)/d(bias)

        // One child's parameters never appear in the other child's subtree,
        // so each row only needs product-rule terms from its own side.
        let scale = np.scale;
        let mut emit = |rows: usize, side: &NodeJet, other: &NodeJet, sign: f64, base: usize| {
            let oc = &other.comps;
            let vo = oc[0];
            for p in 0..rows {
                let ts = &side.tang[p * l.n..(p + 1) * l.n];
                let out = &mut tang[(base + p) * l.n..(base + p + 1) * l.n];
                match op {
                    Add | Sub => {
                        let f = scale * sign;
                        for (o, t) in out.iter_mut().zip(ts) {
                            *o = f * t;
                        }
                    }
                    Mul => {
                        let tv = ts[0];
                        out[0] = scale * tv * vo;
                        if let Some(di) = l.dt {
                            out[di] = scale * (tv * oc[di] + ts[di] * vo);
                        }
                        if l.grad.is_some() {
                            for i in 0..l.dim {
                                out[g0 + i] = scale * (tv * oc[g0 + i] + ts[g0 + i] * vo);
                            }
                        }
                        for (k, &(i, j)) in ctx.pairs.iter().enumerate() {
                            out[h0 + k] = scale
                                * (tv * oc[h0 + k]
                                    + ts[h0 + k] * vo
                                    + ts[g0 + i] * oc[g0 + j]
                                    + ts[g0 + j] * oc[g0 + i]);
                        }
                    }
                }
            }
        };
        emit(rows_a, &a, &b, 1.0, 2);
        let sign_b = if op == Sub { -1.0 } else { 1.0 };
        emit(rows_b, &b, &a, sign_b, 2 + rows_a);
    }
    let NodeJet { comps: ac, tang: at } = a;
    let NodeJet { comps: bc, tang: bt } = b;
    give_buf(ac);
    give_buf(at);
    give_buf(bc);
    give_buf(bt);

    let mut comps = raw;
    for c in comps.iter_mut() {
        *c *= np.scale;
    }
    comps[0] += np.bias;
    NodeJet { comps, tang }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{
        build_expression, GroupedLeafParams, LeafParams, OperatorSequence, TreeTemplate,
    };
    use crate::rng::rng_from;
    use rand::Rng as _;

    fn all_pairs(d: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..d {
            for j in i..d {
                out.push((i, j));
            }
        }
        out
    }

    /// Central finite differences of evaluate(), the independent oracle for
    /// every analytic derivative here.
    fn fd_jet(expr: &Expression, t: f64, x: &[f64], pairs: &[(usize, usize)]) -> Jet {
        let h = 1e-5;
        let d = x.len();
        let f = |t: f64, x: &[f64]| expr.evaluate(t, x);
        let dt = (f(t + h, x) - f(t - h, x)) / (2.0 * h);
        let mut grad = vec![0.0; d];
        for i in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            grad[i] = (f(t, &xp) - f(t, &xm)) / (2.0 * h);
        }
        // Second differences of evaluate() are noise-limited right at the
        // tolerance, so difference the first-order jet (itself checked
        // against evaluate() above) instead; this stays independent of the
        // second-order propagation path.
        let mut hess = Vec::new();
        for &(i, j) in pairs {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let gp = expr.jet(t, &xp, &JetRequest { with_grad: true, ..Default::default() });
            let gm = expr.jet(t, &xm, &JetRequest { with_grad: true, ..Default::default() });
            hess.push((gp.grad[j] - gm.grad[j]) / (2.0 * h));
        }
        Jet {
            value: f(t, x),
            dt,
            grad,
            hess,
            pairs: pairs.to_vec(),
            tangents: None,
        }
    }

    fn assert_close(label: &str, got: f64, want: f64) {
        let denom = want.abs().max(1e-8 / 1e-5); // relative with absolute floor
        assert!(
            (got - want).abs() <= 1e-5 * denom.max(1.0) || (got - want).abs() <= 1e-7,
            "{label}: got {got}, oracle {want}"
        );
    }

    #[test]
    fn identity_leaf_jet() {
        let template = TreeTemplate::single_leaf();
        let mut expr = build_expression(&template, &OperatorSequence(vec![2]), 1, 0).unwrap();
        expr.set_params(&[0.0, 1.0, 0.0]);
        let jet = expr.derivatives(0.7, &[0.4], &[(0, 0)], false);
        assert_eq!(jet.grad, vec![1.0]);
        assert_eq!(jet.dt, 0.0);
        assert_eq!(jet.hess_at(0, 0), Some(0.0));
    }

    #[test]
    fn norm_squared_jet() {
        // u = (1/d) ||x||^2 through a square leaf
        let d = 6;
        let template = TreeTemplate::single_leaf();
        let mut expr = build_expression(&template, &OperatorSequence(vec![3]), d, 0).unwrap();
        let mut theta = vec![1.0 / d as f64; d + 2];
        theta[0] = 0.0; // no t^2 term
        theta[d + 1] = 0.0; // beta
        expr.set_params(&theta);
        let x: Vec<f64> = (0..d).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        let pairs = all_pairs(d);
        let jet = expr.derivatives(0.3, &x, &pairs, false);
        for i in 0..d {
            assert!((jet.grad[i] - 2.0 * x[i] / d as f64).abs() < 1e-14);
            for j in i..d {
                let want = if i == j { 2.0 / d as f64 } else { 0.0 };
                assert!((jet.hess_at(i, j).unwrap() - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn random_expressions_match_finite_differences() {
        let mut rng = rng_from(2024);
        for case in 0..60 {
            let d = [1, 4, 10][case % 3];
            let depth = if case % 2 == 0 { 2 } else { 3 };
            let template = TreeTemplate::full_binary(depth);
            let ops = OperatorSequence(
                template
                    .nodes()
                    .iter()
                    .map(|n| match n.kind {
                        NodeKind::Binary => rng.random_range(0..3),
                        _ => rng.random_range(0..9usize),
                    })
                    .collect(),
            );
            let expr = build_expression(&template, &ops, d, rng.random::<u64>()).unwrap();
            let t = rng.random_range(0.0..1.0);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut pairs = vec![(0, 0)];
            if d > 1 {
                pairs.push((0, 1));
                pairs.push((d - 1, d - 1));
            }
            let jet = expr.derivatives(t, &x, &pairs, false);
            if !jet.is_finite() {
                continue;
            }
            let fd = fd_jet(&expr, t, &x, &pairs);
            assert_close("dt", jet.dt, fd.dt);
            for i in 0..d {
                assert_close("grad", jet.grad[i], fd.grad[i]);
            }
            for k in 0..pairs.len() {
                assert_close("hess", jet.hess[k], fd.hess[k]);
            }
        }
    }

    #[test]
    fn unary_internal_chain_rule_matches_fd() {
        // sin over a square leaf: exercises the internal-node chain rule,
        // including the third-derivative path for hessian tangents.
        let template = TreeTemplate::new(vec![
            crate::expr::TemplateNode {
                kind: NodeKind::UnaryInternal,
                children: vec![1],
            },
            crate::expr::TemplateNode {
                kind: NodeKind::Leaf,
                children: vec![],
            },
        ])
        .unwrap();
        let ops = OperatorSequence(vec![7, 3]); // sin(square-leaf)
        let mut expr = build_expression(&template, &ops, 2, 3).unwrap();
        expr.set_params(&[1.3, -0.2, 0.4, 0.7, -0.5, 0.1]);
        let (t, x) = (0.3, [0.6, 0.2]);
        let pairs = all_pairs(2);
        let jet = expr.derivatives(t, &x, &pairs, true);
        let fd = fd_jet(&expr, t, &x, &pairs);
        assert_close("dt", jet.dt, fd.dt);
        for i in 0..2 {
            assert_close("grad", jet.grad[i], fd.grad[i]);
        }
        for k in 0..pairs.len() {
            assert_close("hess", jet.hess[k], fd.hess[k]);
        }
        // parameter tangents of the value against FD on theta
        let tang = jet.tangents.as_ref().unwrap();
        let theta = expr.get_params();
        let h = 1e-6;
        for p in 0..theta.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[p] += h;
            tm[p] -= h;
            let mut ep = expr.clone();
            let mut em = expr.clone();
            ep.set_params(&tp);
            em.set_params(&tm);
            let want = (ep.evaluate(t, &x) - em.evaluate(t, &x)) / (2.0 * h);
            assert_close("dvalue/dtheta", tang.value(p), want);
        }
    }

    #[test]
    fn param_tangents_match_fd_on_all_components() {
        let mut rng = rng_from(777);
        for case in 0..20 {
            let d = [1, 3][case % 2];
            let template = TreeTemplate::depth2();
            let ops = OperatorSequence(vec![
                rng.random_range(0..3),
                rng.random_range(0..9),
                rng.random_range(0..9),
            ]);
            let expr = build_expression(&template, &ops, d, rng.random::<u64>()).unwrap();
            let (t, x): (f64, Vec<f64>) = (
                rng.random_range(0.0..1.0),
                (0..d).map(|_| rng.random_range(0.0..1.0)).collect(),
            );
            let pairs = all_pairs(d);
            let jet = expr.derivatives(t, &x, &pairs, true);
            if !jet.is_finite() {
                continue;
            }
            let tang = jet.tangents.as_ref().unwrap();
            let theta = expr.get_params();
            let h = 1e-6;
            for p in 0..theta.len() {
                let mut ep = expr.clone();
                let mut em = expr.clone();
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[p] += h;
                tm[p] -= h;
                ep.set_params(&tp);
                em.set_params(&tm);
                let jp = ep.derivatives(t, &x, &pairs, false);
                let jm = em.derivatives(t, &x, &pairs, false);
                assert_close(
                    "t_value",
                    tang.value(p),
                    (jp.value - jm.value) / (2.0 * h),
                );
                assert_close("t_dt", tang.dt(p), (jp.dt - jm.dt) / (2.0 * h));
                for i in 0..d {
                    assert_close(
                        "t_grad",
                        tang.grad(p, i),
                        (jp.grad[i] - jm.grad[i]) / (2.0 * h),
                    );
                }
                for k in 0..pairs.len() {
                    assert_close(
                        "t_hess",
                        tang.hess(p, k),
                        (jp.hess[k] - jm.hess[k]) / (2.0 * h),
                    );
                }
            }
        }
    }

    #[test]
    fn grouped_and_expanded_jets_agree() {
        let d = 5;
        let template = TreeTemplate::depth2();
        let ops = OperatorSequence(vec![0, 3, 6]);
        let mut grouped = build_expression(&template, &ops, d, 9).unwrap();
        let assignment = vec![0, 1, 1, 0, 2, 1];
        let coeffs = vec![0.3, -0.8, 0.55];
        grouped
            .set_leaves(vec![
                LeafWeights::Grouped(GroupedLeafParams {
                    assignment: assignment.clone(),
                    coeffs: coeffs.clone(),
                    beta: 0.2,
                }),
                LeafWeights::Free(LeafParams {
                    alpha: vec![0.1; d + 1],
                    beta: -0.4,
                }),
            ])
            .unwrap();
        let mut expanded = grouped.clone();
        expanded
            .set_leaves(vec![
                LeafWeights::Free(LeafParams {
                    alpha: assignment.iter().map(|&g| coeffs[g]).collect(),
                    beta: 0.2,
                }),
                LeafWeights::Free(LeafParams {
                    alpha: vec![0.1; d + 1],
                    beta: -0.4,
                }),
            ])
            .unwrap();
        let pairs = all_pairs(d);
        let mut rng = rng_from(4);
        for _ in 0..50 {
            let t = rng.random_range(0.0..1.0);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            assert_eq!(grouped.evaluate(t, &x), expanded.evaluate(t, &x));
            let jg = grouped.derivatives(t, &x, &pairs, false);
            let je = expanded.derivatives(t, &x, &pairs, false);
            assert_eq!(jg.dt, je.dt);
            assert_eq!(jg.grad, je.grad);
            assert_eq!(jg.hess, je.hess);
        }
    }

    #[test]
    fn hessian_is_symmetric_on_requested_pairs() {
        let template = TreeTemplate::depth2();
        let ops = OperatorSequence(vec![2, 3, 6]);
        let expr = build_expression(&template, &ops, 3, 17).unwrap();
        let jet = expr.derivatives(0.2, &[0.3, 0.6, 0.9], &[(0, 1), (1, 0)], false);
        assert_eq!(jet.hess[0].to_bits(), jet.hess[1].to_bits());
    }
}
