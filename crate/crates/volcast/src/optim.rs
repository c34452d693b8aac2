//! Unconstrained minimization used by the econometric fits: BFGS with
//! backtracking line search, falling back to Nelder-Mead when BFGS stalls.

/// Result of a minimization run.
#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub struct Options {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options { max_iters: 200, grad_tol: 1e-7, step_tol: 1e-12 }
    }
}

/// BFGS with an analytic gradient. `f` returns the objective, `grad` its
/// gradient. Falls back to Nelder-Mead when no descent is achieved within the
/// first five iterations.
pub fn minimize(
    f: &dyn Fn(&[f64]) -> f64,
    grad: &dyn Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    opts: &Options,
) -> OptimResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return OptimResult { x, value: fx, iterations: 0, converged: false };
    }
    let mut g = grad(&x);
    // Inverse Hessian approximation, started at identity.
    let mut hinv = vec![vec![0.0; n]; n];
    for (i, row) in hinv.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    let f0 = fx;
    let mut stalled = true;
    for iter in 0..opts.max_iters {
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < opts.grad_tol {
            return OptimResult { x, value: fx, iterations: iter, converged: true };
        }

        // Search direction d = -Hinv g.
        let mut d = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                d[i] -= hinv[i][j] * g[j];
            }
        }
        let mut descent: f64 = d.iter().zip(g.iter()).map(|(di, gi)| di * gi).sum();
        if descent >= 0.0 {
            // Reset to steepest descent if curvature info went bad.
            for i in 0..n {
                d[i] = -g[i];
                for (j, row) in hinv.iter_mut().enumerate() {
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = if j == k { 1.0 } else { 0.0 };
                    }
                }
            }
            descent = -g.iter().map(|v| v * v).sum::<f64>();
        }

        // Backtracking Armijo line search.
        let mut step = 1.0;
        let mut x_new = x.clone();
        let mut f_new = f64::INFINITY;
        let mut ok = false;
        for _ in 0..40 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            f_new = f(&x_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * descent {
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if !ok {
            break;
        }

        let g_new = grad(&x_new);
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let yv: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(yv.iter()).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            // Standard BFGS inverse update.
            let rho = 1.0 / sy;
            let mut hy = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    hy[i] += hinv[i][j] * yv[j];
                }
            }
            let yhy: f64 = yv.iter().zip(hy.iter()).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j]
                        - rho * (s[i] * hy[j] + hy[i] * s[j]);
                }
            }
        }

        let moved: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        x = x_new;
        fx = f_new;
        g = g_new;
        if fx < f0 {
            stalled = false;
        }
        if moved < opts.step_tol {
            return OptimResult { x, value: fx, iterations: iter + 1, converged: true };
        }
        if iter >= 5 && stalled {
            break;
        }
    }

    if stalled && fx >= f0 {
        // Simplex fallback for objectives BFGS could not reduce.
        return nelder_mead(f, &x, opts);
    }
    OptimResult { x, value: fx, iterations: opts.max_iters, converged: false }
}

/// Nelder-Mead simplex; derivative-free fallback.
pub fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], opts: &Options) -> OptimResult {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if v[i].abs() > 1e-4 { 0.05 * v[i].abs() } else { 0.00025 };
        simplex.push(v);
    }
    let guard = |v: f64| if v.is_finite() { v } else { f64::INFINITY };
    let mut values: Vec<f64> = simplex.iter().map(|v| guard(f(v))).collect();

    let max_iters = opts.max_iters * 4;
    for iter in 0..max_iters {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        if (values[worst] - values[best]).abs() <= 1e-12 * (values[best].abs() + 1e-12) {
            return OptimResult {
                x: simplex[best].clone(),
                value: values[best],
                iterations: iter,
                converged: true,
            };
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (k, v) in simplex.iter().enumerate() {
            if k != worst {
                for i in 0..n {
                    centroid[i] += v[i] / n as f64;
                }
            }
        }

        let mix = |a: f64| -> Vec<f64> {
            (0..n).map(|i| centroid[i] + a * (simplex[worst][i] - centroid[i])).collect()
        };
        let reflected = mix(-1.0);
        let fr = guard(f(&reflected));
        if fr < values[best] {
            let expanded = mix(-2.0);
            let fe = guard(f(&expanded));
            if fe < fr {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
        } else if fr < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = fr;
        } else {
            let contracted = mix(0.5);
            let fc = guard(f(&contracted));
            if fc < values[worst] {
                simplex[worst] = contracted;
                values[worst] = fc;
            } else {
                // Shrink toward the best vertex.
                let best_point = simplex[best].clone();
                for (k, v) in simplex.iter_mut().enumerate() {
                    if k != best {
                        for i in 0..n {
                            v[i] = best_point[i] + 0.5 * (v[i] - best_point[i]);
                        }
                    }
                }
                for (k, v) in simplex.iter().enumerate() {
                    values[k] = guard(f(v));
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..=n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    OptimResult {
        x: simplex[order[0]].clone(),
        value: values[order[0]],
        iterations: max_iters,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bfgs_solves_quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2);
        let g = |x: &[f64]| vec![2.0 * (x[0] - 3.0), 20.0 * (x[1] + 1.0)];
        let r = minimize(&f, &g, &[0.0, 0.0], &Options::default());
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-5 && (r.x[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn bfgs_solves_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let g = |x: &[f64]| {
            vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ]
        };
        let r = minimize(&f, &g, &[-1.2, 1.0], &Options { max_iters: 500, ..Options::default() });
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_handles_nonsmooth() {
        let f = |x: &[f64]| x[0].abs() + (x[1] - 2.0).abs();
        let r = nelder_mead(&f, &[1.0, 0.0], &Options::default());
        assert!(r.x[0].abs() < 1e-3 && (r.x[1] - 2.0).abs() < 1e-3);
    }
}
