//! Adam with bias correction.

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    p: AdamParams,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, p: AdamParams) -> Self {
        Adam {
            p,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.p.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.p.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.p.beta1 * self.m[i] + (1.0 - self.p.beta1) * grads[i];
            self.v[i] = self.p.beta2 * self.v[i] + (1.0 - self.p.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.p.lr * m_hat / (v_hat.sqrt() + self.p.eps);
        }
    }
}

/// Runs `steps` Adam iterations on an objective returning `(value, grad)`.
/// The value in the trace is the objective at the pre-update parameters. On
/// a non-finite objective the run stops and the best parameters seen so far
/// are returned; otherwise the final parameters are returned.
pub fn run_adam<F>(
    mut objective: F,
    theta0: &[f64],
    steps: usize,
    p: AdamParams,
) -> (Vec<f64>, Vec<f64>)
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut theta = theta0.to_vec();
    let mut adam = Adam::new(theta.len(), p);
    let mut trace = Vec::with_capacity(steps);
    let mut best = (f64::INFINITY, theta.clone());
    for _ in 0..steps {
        match objective(&theta) {
            Some((value, grad)) if value.is_finite() => {
                trace.push(value);
                if value < best.0 {
                    best = (value, theta.clone());
                }
                adam.update(&mut theta, &grad);
            }
            _ => return (best.1, trace),
        }
    }
    (theta, trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let d = theta[0] - 3.0;
        Some((d * d, vec![2.0 * d]))
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        let (theta, trace) = run_adam(quadratic, &[0.0], 500, AdamParams::with_lr(0.1));
        assert!((theta[0] - 3.0).abs() <= 1e-3, "theta {}", theta[0]);
        assert_eq!(trace.len(), 500);
    }

    #[test]
    fn zero_steps_is_identity() {
        let (theta, trace) = run_adam(quadratic, &[1.5], 0, AdamParams::with_lr(0.1));
        assert_eq!(theta, vec![1.5]);
        assert!(trace.is_empty());
    }

    #[test]
    fn trace_descends_after_warmup_on_convex_objective() {
        // 60 steps at lr 0.05 keeps the run in the approach phase, where the
        // trace decreases monotonically once the moments warm up.
        let (_, trace) = run_adam(quadratic, &[0.0], 60, AdamParams::with_lr(0.05));
        for w in trace[10..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trace rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn non_finite_objective_returns_best_so_far() {
        let mut calls = 0;
        let objective = |theta: &[f64]| {
            calls += 1;
            if calls > 3 {
                None
            } else {
                quadratic(theta)
            }
        };
        let (theta, trace) = run_adam(objective, &[0.0], 100, AdamParams::with_lr(0.1));
        assert_eq!(trace.len(), 3);
        assert!(theta[0].is_finite());
    }
}
