//! BFGS with an inverse-Hessian approximation and Armijo backtracking.

#[derive(Clone, Copy, Debug)]
pub struct LineSearchParams {
    /// Step contraction factor per backtrack.
    pub contraction: f64,
    /// Armijo sufficient-decrease slope.
    pub slope: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        LineSearchParams {
            contraction: 0.5,
            slope: 1e-4,
            max_backtracks: 40,
        }
    }
}

/// Minimizes a deterministic objective with BFGS. The inverse Hessian starts
/// at the identity; updates are skipped when the curvature `y . s` is not
/// safely positive. Returns the best parameters seen, so the result never
/// has a higher objective value than the starting point.
pub fn run_bfgs<F>(
    mut objective: F,
    theta0: &[f64],
    steps: usize,
    ls: LineSearchParams,
) -> (Vec<f64>, Vec<f64>)
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = theta0.len();
    let mut theta = theta0.to_vec();
    let mut trace = Vec::new();

    let Some((mut fx, mut grad)) = eval_finite(&mut objective, &theta) else {
        return (theta, trace);
    };
    let mut best = (fx, theta.clone());
    trace.push(fx);

    // inverse Hessian approximation, row-major
    let mut h_inv = identity(n);

    for _ in 0..steps {
        // p = -H^{-1} g
        let mut dir = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc -= h_inv[i * n + j] * grad[j];
            }
            dir[i] = acc;
        }
        let slope0: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        if !slope0.is_finite() || slope0 >= 0.0 {
            // not a descent direction; reset the approximation and retry
            // along steepest descent once, otherwise stop
            h_inv = identity(n);
            for i in 0..n {
                dir[i] = -grad[i];
            }
        }
        let slope0: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        if slope0 >= 0.0 {
            break;
        }

        // Armijo backtracking from a unit step
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=ls.max_backtracks {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&dir)
                .map(|(t, d)| t + alpha * d)
                .collect();
            if let Some((fc, gc)) = eval_finite(&mut objective, &cand) {
                if fc <= fx + ls.slope * alpha * slope0 {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            alpha *= ls.contraction;
        }
        let Some((theta_new, f_new, grad_new)) = accepted else {
            break; // line search failed; return best so far
        };

        let s: Vec<f64> = theta_new.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let ys: f64 = y.iter().zip(&s).map(|(a, b)| a * b).sum();
        if ys > 1e-12 {
            let rho = 1.0 / ys;
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let mut hy = vec![0.0; n];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += h_inv[i * n + j] * y[j];
                }
                hy[i] = acc;
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h_inv[i * n + j] += rho * (1.0 + rho * yhy) * s[i] * s[j]
                        - rho * (s[i] * hy[j] + hy[i] * s[j]);
                }
            }
        }

        theta = theta_new;
        fx = f_new;
        grad = grad_new;
        trace.push(fx);
        if fx < best.0 {
            best = (fx, theta.clone());
        }
    }
    (best.1, trace)
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn eval_finite<F>(objective: &mut F, theta: &[f64]) -> Option<(f64, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    match objective(theta) {
        Some((f, g)) if f.is_finite() && g.iter().all(|gi| gi.is_finite()) => Some((f, g)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (x, y) = (theta[0], theta[1]);
        let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
        let g = vec![
            -2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
            200.0 * (y - x * x),
        ];
        Some((f, g))
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let (theta, trace) = run_bfgs(
            rosenbrock,
            &[-1.2, 1.0],
            100,
            LineSearchParams::default(),
        );
        let f = rosenbrock(&theta).unwrap().0;
        assert!(f <= 1e-8, "f = {f} after {} accepted steps", trace.len());
    }

    #[test]
    fn spd_quadratic_converges_within_two_n_steps() {
        // 1/2 theta^T A theta with a fixed SPD matrix, n = 5
        let n = 5;
        let a: Vec<f64> = {
            // A = M^T M + I for a deterministic M
            let m: Vec<f64> = (0..n * n)
                .map(|k| ((k * 37 + 11) % 17) as f64 / 17.0 - 0.4)
                .collect();
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut acc = if i == j { 1.0 } else { 0.0 };
                    for k in 0..n {
                        acc += m[k * n + i] * m[k * n + j];
                    }
                    a[i * n + j] = acc;
                }
            }
            a
        };
        let objective = |theta: &[f64]| {
            let mut g = vec![0.0; n];
            let mut f = 0.0;
            for i in 0..n {
                let mut gi = 0.0;
                for j in 0..n {
                    gi += a[i * n + j] * theta[j];
                }
                g[i] = gi;
                f += 0.5 * theta[i] * gi;
            }
            Some((f, g))
        };
        let theta0 = vec![1.0, -2.0, 0.5, 3.0, -1.5];
        let (theta, _) = run_bfgs(objective, &theta0, 2 * n, LineSearchParams::default());
        let f = objective(&theta).unwrap().0;
        assert!(f <= 1e-10, "f = {f}");
    }

    #[test]
    fn zero_steps_returns_start() {
        let (theta, _) = run_bfgs(rosenbrock, &[0.3, 0.7], 0, LineSearchParams::default());
        assert_eq!(theta, vec![0.3, 0.7]);
    }

    #[test]
    fn never_returns_worse_than_start() {
        // objective with a cliff: line search failures must not degrade
        let nasty = |theta: &[f64]| {
            let x = theta[0];
            if x.abs() > 2.0 {
                None
            } else {
                Some((x * x, vec![2.0 * x]))
            }
        };
        let (theta, _) = run_bfgs(nasty, &[1.9], 50, LineSearchParams::default());
        assert!(theta[0].abs() <= 1.9);
    }
}
