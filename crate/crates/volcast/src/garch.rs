//! ARMA(p,q)/ARMAX(p,q) mean equation on log-volume with GARCH(1,1) residual
//! variance.
//!
//! Estimation is two-stage: the mean equation by conditional sum of squares
//! (pre-sample values at the centered-series mean, pre-sample residuals
//! zero), then a Gaussian GARCH(1,1) MLE on the stage-1 residuals under a
//! softmax-style reparameterization that enforces omega > 0, alpha, beta >= 0
//! and alpha + beta < 1. Both stages use analytic gradients inside BFGS with
//! a simplex fallback. Standard errors come from the inverse numerical
//! Hessian of the GARCH log-likelihood in natural parameters.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{solve_linear, two_sided_p_value, Mat};
use crate::optim::{minimize, Options};

#[derive(Debug, Error)]
pub enum GarchError {
    #[error("fitted AR polynomial is non-stationary")]
    NonStationaryFit,
    #[error("optimizer failed: {0}")]
    OptimizerFailed(String),
    #[error("series too short: need more than {required}, got {actual}")]
    InsufficientData { required: usize, actual: usize },
    #[error("exogenous matrix missing or misshapen")]
    BadExog,
    #[error("every candidate order failed to fit")]
    AllFitsFailed,
    #[error("model file error: {0}")]
    ModelIo(String),
}

/// Mean-equation order specification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmaxSpec {
    pub p: usize,
    pub q: usize,
    pub use_exog: bool,
    pub exog_dim: usize,
}

impl ArmaxSpec {
    pub fn arma(p: usize, q: usize) -> Self {
        ArmaxSpec { p, q, use_exog: false, exog_dim: 0 }
    }

    pub fn armax(p: usize, q: usize, exog_dim: usize) -> Self {
        ArmaxSpec { p, q, use_exog: true, exog_dim }
    }

    fn n_mean_params(&self) -> usize {
        1 + self.p + self.q + if self.use_exog { self.exog_dim } else { 0 }
    }

    /// Total free parameters including the three GARCH coefficients.
    pub fn n_params(&self) -> usize {
        self.n_mean_params() + 3
    }
}

/// GARCH(1,1) coefficients with standard errors (omega, alpha, beta order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub std_errors: [f64; 3],
}

impl GarchParams {
    pub fn p_values(&self) -> [f64; 3] {
        [
            two_sided_p_value(self.omega / self.std_errors[0]),
            two_sided_p_value(self.alpha / self.std_errors[1]),
            two_sided_p_value(self.beta / self.std_errors[2]),
        ]
    }
}

/// A fitted ARMAX-GARCH model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedArmaxGarch {
    pub spec: ArmaxSpec,
    pub mu: f64,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
    pub garch: GarchParams,
    /// Gaussian log-likelihood of the GARCH stage over the fitted residuals.
    pub loglik: f64,
    /// 2k - 2 loglik with k counting every free parameter of both stages.
    pub aic: f64,
    /// Pre-sample value of the centered series (its in-sample mean).
    pub w_bar: f64,
    /// Variance-recursion initialization (sample variance of residuals).
    pub sigma2_init: f64,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    #[serde(skip)]
    pub sigma2: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Stage 1: conditional sum of squares for the ARMA(X) mean equation.
// ---------------------------------------------------------------------------

/// Parameter layout: [mu, phi_1..p, theta_1..q, psi_1..exog_dim].
struct CssProblem<'a> {
    log_y: &'a [f64],
    exog: Option<&'a Mat>,
    exog_means: Vec<f64>,
    p: usize,
    q: usize,
}

impl<'a> CssProblem<'a> {
    fn new(log_y: &'a [f64], exog: Option<&'a Mat>, p: usize, q: usize) -> Self {
        let exog_means = match exog {
            Some(x) => {
                let mut m = vec![0.0; x.cols()];
                for t in 0..x.rows() {
                    for (j, acc) in m.iter_mut().enumerate() {
                        *acc += x.at(t, j);
                    }
                }
                m.iter_mut().for_each(|v| *v /= x.rows() as f64);
                m
            }
            None => Vec::new(),
        };
        CssProblem { log_y, exog, exog_means, p, q }
    }

    fn k(&self) -> usize {
        1 + self.p + self.q + self.exog_means.len()
    }

    /// Centered series w_t = log_y - mu - psi'x_{t-1} and its mean.
    fn centered(&self, params: &[f64]) -> (Vec<f64>, f64) {
        let mu = params[0];
        let psi = &params[1 + self.p + self.q..];
        let mut w = Vec::with_capacity(self.log_y.len());
        for (t, &ly) in self.log_y.iter().enumerate() {
            let mut m = mu;
            if let Some(x) = self.exog {
                for (j, &pj) in psi.iter().enumerate() {
                    m += pj * x.at(t, j);
                }
            }
            w.push(ly - m);
        }
        let w_bar = w.iter().sum::<f64>() / w.len() as f64;
        (w, w_bar)
    }

    /// Residuals under the CSS recursion.
    fn residuals(&self, params: &[f64]) -> (Vec<f64>, f64) {
        let (w, w_bar) = self.centered(params);
        let phi = &params[1..1 + self.p];
        let theta = &params[1 + self.p..1 + self.p + self.q];
        let n = w.len();
        let mut eps = vec![0.0; n];
        for t in 0..n {
            let mut e = w[t];
            for (i, &ph) in phi.iter().enumerate() {
                let w_lag = if t > i { w[t - i - 1] } else { w_bar };
                e -= ph * w_lag;
            }
            for (j, &th) in theta.iter().enumerate() {
                let e_lag = if t > j { eps[t - j - 1] } else { 0.0 };
                e -= th * e_lag;
            }
            eps[t] = e;
        }
        (eps, w_bar)
    }

    fn objective(&self, params: &[f64]) -> f64 {
        let (eps, _) = self.residuals(params);
        let ss: f64 = eps.iter().map(|e| e * e).sum();
        if ss.is_finite() {
            ss
        } else {
            f64::INFINITY
        }
    }

    /// Analytic gradient of the sum of squared residuals via the derivative
    /// recursions of the CSS filter.
    fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let (w, w_bar) = self.centered(params);
        let phi = &params[1..1 + self.p];
        let theta = &params[1 + self.p..1 + self.p + self.q];
        let k = self.k();
        let n = w.len();
        let n_exog = self.exog_means.len();
        let phi_sum: f64 = phi.iter().sum();

        let mut eps = vec![0.0; n];
        // Ring of the last q gradient vectors d eps_{t-j}.
        let mut deps_ring: Vec<Vec<f64>> = vec![vec![0.0; k]; self.q];
        let mut ring_pos = 0usize;
        let mut grad = vec![0.0; k];
        let mut deps = vec![0.0; k];

        for t in 0..n {
            let mut e = w[t];
            for (i, &ph) in phi.iter().enumerate() {
                e -= ph * if t > i { w[t - i - 1] } else { w_bar };
            }
            for (j, &th) in theta.iter().enumerate() {
                e -= th * if t > j { eps[t - j - 1] } else { 0.0 };
            }
            eps[t] = e;

            // d eps / d mu: every w (and w_bar) moves by -1.
            deps[0] = -1.0 + phi_sum;
            // d eps / d phi_i = -w_{t-i}.
            for i in 0..self.p {
                deps[1 + i] = -if t > i { w[t - i - 1] } else { w_bar };
            }
            // d eps / d theta_j = -eps_{t-j}.
            for j in 0..self.q {
                deps[1 + self.p + j] = -if t > j { eps[t - j - 1] } else { 0.0 };
            }
            // d eps / d psi_m: w_t moves by -x_t(m), lagged w by -x_lag(m).
            if let Some(x) = self.exog {
                for m in 0..n_exog {
                    let mut d = -x.at(t, m);
                    for (i, &ph) in phi.iter().enumerate() {
                        let x_lag = if t > i { x.at(t - i - 1, m) } else { self.exog_means[m] };
                        d += ph * x_lag;
                    }
                    deps[1 + self.p + self.q + m] = d;
                }
            }
            // MA feedback: -theta_j * d eps_{t-j}.
            for (j, &th) in theta.iter().enumerate() {
                if t > j {
                    let past = &deps_ring[(ring_pos + self.q - 1 - j) % self.q];
                    for (dv, pv) in deps.iter_mut().zip(past.iter()) {
                        *dv -= th * pv;
                    }
                }
            }

            for (g, &dv) in grad.iter_mut().zip(deps.iter()) {
                *g += 2.0 * e * dv;
            }
            if self.q > 0 {
                deps_ring[ring_pos].copy_from_slice(&deps);
                ring_pos = (ring_pos + 1) % self.q;
            }
        }
        grad
    }
}

// ---------------------------------------------------------------------------
// Stage 2: GARCH(1,1) Gaussian MLE on the stage-1 residuals.
// ---------------------------------------------------------------------------

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Natural parameters from the unconstrained vector
/// u = (ln omega, a, b) with (alpha, beta) = (e^a, e^b) / (1 + e^a + e^b).
fn garch_natural(u: &[f64]) -> (f64, f64, f64) {
    let omega = u[0].exp();
    let ea = u[1].exp();
    let eb = u[2].exp();
    let denom = 1.0 + ea + eb;
    (omega, ea / denom, eb / denom)
}

fn garch_nll_natural(omega: f64, alpha: f64, beta: f64, eps: &[f64], sigma2_init: f64) -> f64 {
    let mut sigma2 = sigma2_init;
    let mut nll = 0.0;
    for (t, &e) in eps.iter().enumerate() {
        if t > 0 {
            let prev = eps[t - 1];
            sigma2 = omega + alpha * prev * prev + beta * sigma2;
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return f64::INFINITY;
        }
        nll += 0.5 * (LN_2PI + sigma2.ln() + e * e / sigma2);
    }
    nll
}

/// NLL and gradient in the unconstrained parameterization.
fn garch_nll_grad(u: &[f64], eps: &[f64], sigma2_init: f64) -> (f64, Vec<f64>) {
    let (omega, alpha, beta) = garch_natural(u);
    let mut sigma2 = sigma2_init;
    // d sigma2 / d (omega, alpha, beta).
    let mut ds = [0.0f64; 3];
    let mut nll = 0.0;
    let mut grad_nat = [0.0f64; 3];
    for (t, &e) in eps.iter().enumerate() {
        if t > 0 {
            let prev = eps[t - 1];
            ds[0] = 1.0 + beta * ds[0];
            ds[1] = prev * prev + beta * ds[1];
            ds[2] = sigma2 + beta * ds[2];
            sigma2 = omega + alpha * prev * prev + beta * sigma2;
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return (f64::INFINITY, vec![0.0; 3]);
        }
        nll += 0.5 * (LN_2PI + sigma2.ln() + e * e / sigma2);
        let dnll_ds = 0.5 * (1.0 / sigma2 - e * e / (sigma2 * sigma2));
        for i in 0..3 {
            grad_nat[i] += dnll_ds * ds[i];
        }
    }
    // Chain through the reparameterization Jacobian.
    let d_omega_du0 = omega;
    let d_alpha_da = alpha * (1.0 - alpha);
    let d_alpha_db = -alpha * beta;
    let d_beta_da = -alpha * beta;
    let d_beta_db = beta * (1.0 - beta);
    let grad = vec![
        grad_nat[0] * d_omega_du0,
        grad_nat[1] * d_alpha_da + grad_nat[2] * d_beta_da,
        grad_nat[1] * d_alpha_db + grad_nat[2] * d_beta_db,
    ];
    (nll, grad)
}

/// Standard errors from the inverse numerical Hessian (central differences,
/// relative step 1e-4) in natural parameters.
fn garch_std_errors(omega: f64, alpha: f64, beta: f64, eps: &[f64], sigma2_init: f64) -> [f64; 3] {
    let theta = [omega, alpha, beta];
    let steps: Vec<f64> = theta.iter().map(|v| 1e-4 * v.abs().max(1e-4)).collect();
    let f = |v: &[f64]| garch_nll_natural(v[0], v[1], v[2], eps, sigma2_init);
    let mut hess = [[0.0f64; 3]; 3];
    let base = f(&theta);
    for i in 0..3 {
        for j in i..3 {
            let mut x = theta;
            let hij = if i == j {
                x[i] = theta[i] + steps[i];
                let fp = f(&x);
                x[i] = theta[i] - steps[i];
                let fm = f(&x);
                (fp - 2.0 * base + fm) / (steps[i] * steps[i])
            } else {
                x[i] = theta[i] + steps[i];
                x[j] = theta[j] + steps[j];
                let fpp = f(&x);
                x[j] = theta[j] - steps[j];
                let fpm = f(&x);
                x[i] = theta[i] - steps[i];
                x[j] = theta[j] + steps[j];
                let fmp = f(&x);
                x[j] = theta[j] - steps[j];
                let fmm = f(&x);
                (fpp - fpm - fmp + fmm) / (4.0 * steps[i] * steps[j])
            };
            hess[i][j] = hij;
            hess[j][i] = hij;
        }
    }
    // Closed-form 3x3 inverse; non-positive diagonal entries become NaN.
    let h = &hess;
    let det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1])
        - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
    if det.abs() < 1e-300 {
        return [f64::NAN; 3];
    }
    let cof = |a: usize, b: usize| -> f64 {
        let (r1, r2) = match a {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let (c1, c2) = match b {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let minor = h[r1][c1] * h[r2][c2] - h[r1][c2] * h[r2][c1];
        if (a + b) % 2 == 0 {
            minor
        } else {
            -minor
        }
    };
    let mut se = [0.0f64; 3];
    for (i, out) in se.iter_mut().enumerate() {
        let inv_ii = cof(i, i) / det;
        *out = if inv_ii > 0.0 { inv_ii.sqrt() } else { f64::NAN };
    }
    se
}

/// Hannan-Rissanen starting values for (phi, theta): a long-AR OLS supplies
/// proxy residuals, then OLS of the centered series on its own lags and the
/// lagged proxy residuals. Keeps CSS away from the AR/MA cancellation ridge
/// that a zero start can wander onto.
fn hannan_rissanen_init(w: &[f64], p: usize, q: usize) -> (Vec<f64>, Vec<f64>) {
    let zeros = (vec![0.0; p], vec![0.0; q]);
    if p + q == 0 {
        return zeros;
    }
    let n = w.len();
    let m = (p.max(q) + 5).min(n / 4);
    if m == 0 || n <= m + q + p + 1 {
        return zeros;
    }

    let ols = |rows: &mut dyn Iterator<Item = (Vec<f64>, f64)>, k: usize| -> Option<Vec<f64>> {
        let mut xtx = vec![vec![0.0; k]; k];
        let mut xty = vec![0.0; k];
        for (x, y) in rows {
            for i in 0..k {
                xty[i] += x[i] * y;
                for j in i..k {
                    xtx[i][j] += x[i] * x[j];
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                xtx[i][j] = xtx[j][i];
            }
        }
        solve_linear(xtx, xty)
    };

    let long_ar = {
        let mut rows = (m..n).map(|t| ((1..=m).map(|i| w[t - i]).collect::<Vec<_>>(), w[t]));
        match ols(&mut rows, m) {
            Some(c) => c,
            None => return zeros,
        }
    };
    let mut eps_hat = vec![0.0; n];
    for t in m..n {
        let mut e = w[t];
        for (i, &c) in long_ar.iter().enumerate() {
            e -= c * w[t - i - 1];
        }
        eps_hat[t] = e;
    }

    let start = m + q.max(p);
    let k = p + q;
    let mut rows = (start..n).map(|t| {
        let mut x = Vec::with_capacity(k);
        for i in 1..=p {
            x.push(w[t - i]);
        }
        for j in 1..=q {
            x.push(eps_hat[t - j]);
        }
        (x, w[t])
    });
    match ols(&mut rows, k) {
        Some(c) => (c[..p].to_vec(), c[p..].to_vec()),
        None => zeros,
    }
}

/// AR stationarity via the inverse Levinson-Durbin recursion: the polynomial
/// has all roots outside the unit circle iff every reflection coefficient has
/// modulus below one.
fn ar_is_stationary(phi: &[f64]) -> bool {
    let mut a = phi.to_vec();
    for k in (1..=a.len()).rev() {
        let kappa = a[k - 1];
        if kappa.abs() >= 1.0 {
            return false;
        }
        if k == 1 {
            break;
        }
        let denom = 1.0 - kappa * kappa;
        let prev = a.clone();
        for j in 0..k - 1 {
            a[j] = (prev[j] + kappa * prev[k - 2 - j]) / denom;
        }
        a.truncate(k - 1);
    }
    true
}

/// Fit the two-stage model. `exog`, when used, must have one row per
/// observation holding the time t-1 feature vector for target t.
pub fn fit(log_y: &[f64], exog: Option<&Mat>, spec: &ArmaxSpec) -> Result<FittedArmaxGarch, GarchError> {
    let required = 10 * (spec.p + spec.q + 2);
    if log_y.len() <= required {
        return Err(GarchError::InsufficientData { required, actual: log_y.len() });
    }
    let exog = if spec.use_exog {
        match exog {
            Some(x) if x.rows() == log_y.len() && x.cols() == spec.exog_dim => Some(x),
            _ => return Err(GarchError::BadExog),
        }
    } else {
        None
    };

    // Stage 1: CSS from Hannan-Rissanen starting values.
    let problem = CssProblem::new(log_y, exog, spec.p, spec.q);
    let mut x0 = vec![0.0; problem.k()];
    let ly_mean = log_y.iter().sum::<f64>() / log_y.len() as f64;
    x0[0] = ly_mean;
    let centered: Vec<f64> = log_y.iter().map(|v| v - ly_mean).collect();
    let (phi0, theta0) = hannan_rissanen_init(&centered, spec.p, spec.q);
    let stationary_start = ar_is_stationary(&phi0);
    if stationary_start {
        x0[1..1 + spec.p].copy_from_slice(&phi0);
        x0[1 + spec.p..1 + spec.p + spec.q].copy_from_slice(&theta0);
    }
    let obj = |x: &[f64]| problem.objective(x);
    let grd = |x: &[f64]| problem.gradient(x);
    let css = minimize(&obj, &grd, &x0, &Options { max_iters: 300, ..Options::default() });
    if !css.value.is_finite() {
        return Err(GarchError::OptimizerFailed("CSS objective not finite".into()));
    }
    let mean_params = css.x;
    let (residuals, w_bar) = problem.residuals(&mean_params);
    let phi = mean_params[1..1 + spec.p].to_vec();
    let theta = mean_params[1 + spec.p..1 + spec.p + spec.q].to_vec();
    let psi = mean_params[1 + spec.p + spec.q..].to_vec();
    if !ar_is_stationary(&phi) {
        return Err(GarchError::NonStationaryFit);
    }

    // Stage 2: GARCH(1,1) MLE.
    let n = residuals.len() as f64;
    let res_mean = residuals.iter().sum::<f64>() / n;
    let sigma2_init = residuals.iter().map(|e| (e - res_mean) * (e - res_mean)).sum::<f64>() / (n - 1.0);
    if !(sigma2_init > 0.0) {
        return Err(GarchError::OptimizerFailed("degenerate residual variance".into()));
    }
    let (a0, b0) = (0.05f64, 0.85f64);
    let u0 = vec![
        (sigma2_init * (1.0 - a0 - b0)).max(1e-12).ln(),
        (a0 / (1.0 - a0 - b0)).ln(),
        (b0 / (1.0 - a0 - b0)).ln(),
    ];
    let res_ref = &residuals;
    let nf = |u: &[f64]| garch_nll_grad(u, res_ref, sigma2_init).0;
    let ng = |u: &[f64]| garch_nll_grad(u, res_ref, sigma2_init).1;
    let mle = minimize(&nf, &ng, &u0, &Options { max_iters: 300, ..Options::default() });
    if !mle.value.is_finite() {
        return Err(GarchError::OptimizerFailed("GARCH likelihood not finite".into()));
    }
    let (omega, alpha, beta) = garch_natural(&mle.x);
    let std_errors = garch_std_errors(omega, alpha, beta, &residuals, sigma2_init);

    // Filtered conditional variances under the final parameters.
    let mut sigma2 = Vec::with_capacity(residuals.len());
    let mut s2 = sigma2_init;
    for (t, _) in residuals.iter().enumerate() {
        if t > 0 {
            let prev = residuals[t - 1];
            s2 = omega + alpha * prev * prev + beta * s2;
        }
        sigma2.push(s2);
    }

    let loglik = -mle.value;
    let k = spec.n_params() as f64;
    let aic = 2.0 * k - 2.0 * loglik;
    Ok(FittedArmaxGarch {
        spec: *spec,
        mu: mean_params[0],
        phi,
        theta,
        psi,
        garch: GarchParams { omega, alpha, beta, std_errors },
        loglik,
        aic,
        w_bar,
        sigma2_init,
        residuals,
        sigma2,
    })
}

/// One grid cell of the order search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AicCell {
    pub p: usize,
    pub q: usize,
    /// None when the fit failed for this order.
    pub aic: Option<f64>,
}

/// Exhaustive AIC grid over the order ranges (fits run in parallel). Ties
/// break toward smaller p+q, then smaller p.
pub fn select_order(
    log_y: &[f64],
    exog: Option<&Mat>,
    p_range: std::ops::RangeInclusive<usize>,
    q_range: std::ops::RangeInclusive<usize>,
    use_exog: bool,
) -> Result<(FittedArmaxGarch, Vec<AicCell>), GarchError> {
    assert!(*p_range.start() >= 1 && *p_range.end() <= 10, "p range within [1, 10]");
    assert!(*q_range.start() >= 1 && *q_range.end() <= 10, "q range within [1, 10]");
    let cells: Vec<(usize, usize)> =
        p_range.flat_map(|p| q_range.clone().map(move |q| (p, q))).collect();
    let fits: Vec<(usize, usize, Option<FittedArmaxGarch>)> = cells
        .par_iter()
        .map(|&(p, q)| {
            let spec = ArmaxSpec {
                p,
                q,
                use_exog,
                exog_dim: if use_exog { exog.map(|x| x.cols()).unwrap_or(0) } else { 0 },
            };
            (p, q, fit(log_y, exog, &spec).ok())
        })
        .collect();

    let table: Vec<AicCell> = fits
        .iter()
        .map(|(p, q, f)| AicCell { p: *p, q: *q, aic: f.as_ref().map(|m| m.aic) })
        .collect();
    let best = fits
        .into_iter()
        .filter_map(|(p, q, f)| f.map(|m| (p, q, m)))
        .min_by(|a, b| {
            (a.2.aic, a.0 + a.1, a.0)
                .partial_cmp(&(b.2.aic, b.0 + b.1, b.0))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|(_, _, m)| m)
        .ok_or(GarchError::AllFitsFailed)?;
    Ok((best, table))
}

/// Rolling state for the mean/variance recursions.
#[derive(Debug, Clone)]
pub struct GarchFilter {
    mu: f64,
    phi: Vec<f64>,
    theta: Vec<f64>,
    psi: Vec<f64>,
    omega: f64,
    alpha: f64,
    beta: f64,
    /// Most recent first.
    w_hist: Vec<f64>,
    eps_hist: Vec<f64>,
    sigma2: f64,
    eps_last: f64,
    started: bool,
}

impl GarchFilter {
    pub fn new(fit: &FittedArmaxGarch) -> Self {
        GarchFilter {
            mu: fit.mu,
            phi: fit.phi.clone(),
            theta: fit.theta.clone(),
            psi: fit.psi.clone(),
            omega: fit.garch.omega,
            alpha: fit.garch.alpha,
            beta: fit.garch.beta,
            w_hist: vec![fit.w_bar; fit.phi.len()],
            eps_hist: vec![0.0; fit.theta.len()],
            sigma2: fit.sigma2_init,
            eps_last: 0.0,
            started: false,
        }
    }

    fn mean_t(&self, exog_now: Option<&[f64]>) -> f64 {
        let mut m = self.mu;
        if let Some(x) = exog_now {
            for (pj, xj) in self.psi.iter().zip(x.iter()) {
                m += pj * xj;
            }
        }
        m
    }

    fn sigma2_next(&self) -> f64 {
        if self.started {
            self.omega + self.alpha * self.eps_last * self.eps_last + self.beta * self.sigma2
        } else {
            self.sigma2
        }
    }

    /// One-step-ahead conditional mean and variance of the next log-volume,
    /// given the exogenous features observed at the last interval.
    pub fn predict_next(&self, exog_now: Option<&[f64]>) -> (f64, f64) {
        let mut w_hat = 0.0;
        for (ph, w) in self.phi.iter().zip(self.w_hist.iter()) {
            w_hat += ph * w;
        }
        for (th, e) in self.theta.iter().zip(self.eps_hist.iter()) {
            w_hat += th * e;
        }
        (self.mean_t(exog_now) + w_hat, self.sigma2_next())
    }

    /// Advance the filter with an observed log-volume.
    pub fn update(&mut self, observed_log_y: f64, exog_now: Option<&[f64]>) {
        let (mean, _) = self.predict_next(exog_now);
        let w = observed_log_y - self.mean_t(exog_now);
        let eps = observed_log_y - mean;
        self.sigma2 = self.sigma2_next();
        self.eps_last = eps;
        self.started = true;
        if !self.phi.is_empty() {
            self.w_hist.rotate_right(1);
            self.w_hist[0] = w;
        }
        if !self.theta.is_empty() {
            self.eps_hist.rotate_right(1);
            self.eps_hist[0] = eps;
        }
    }
}

/// Explicit one-step forecast from recent history: `recent_w` and
/// `recent_eps` are most-recent-first slices of the centered series and the
/// residuals (at least p and q entries), `sigma2_prev` and `eps_prev` the
/// last conditional variance and residual.
pub fn forecast(
    fit: &FittedArmaxGarch,
    recent_w: &[f64],
    recent_eps: &[f64],
    eps_prev: f64,
    sigma2_prev: f64,
    exog_now: Option<&[f64]>,
) -> (f64, f64) {
    assert!(recent_w.len() >= fit.phi.len(), "need at least p lagged values");
    assert!(recent_eps.len() >= fit.theta.len(), "need at least q lagged residuals");
    let mut w_hat = 0.0;
    for (ph, w) in fit.phi.iter().zip(recent_w.iter()) {
        w_hat += ph * w;
    }
    for (th, e) in fit.theta.iter().zip(recent_eps.iter()) {
        w_hat += th * e;
    }
    let mut m = fit.mu;
    if let Some(x) = exog_now {
        for (pj, xj) in fit.psi.iter().zip(x.iter()) {
            m += pj * xj;
        }
    }
    let var = fit.garch.omega + fit.garch.alpha * eps_prev * eps_prev + fit.garch.beta * sigma2_prev;
    (m + w_hat, var)
}

/// Sample autocorrelations at lags 1..=max_lag with the +-1.96/sqrt(n) band.
#[derive(Debug, Clone, PartialEq)]
pub struct Acf {
    /// acf[k-1] is the lag-k autocorrelation; lag 0 is 1 by definition.
    pub values: Vec<f64>,
    pub band: f64,
}

pub fn residual_acf(residuals: &[f64], max_lag: usize) -> Acf {
    assert!(residuals.len() > max_lag, "need more observations than lags");
    let n = residuals.len();
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let denom: f64 = residuals.iter().map(|x| (x - mean) * (x - mean)).sum();
    let values = (1..=max_lag)
        .map(|k| {
            let mut num = 0.0;
            for t in 0..n - k {
                num += (residuals[t] - mean) * (residuals[t + k] - mean);
            }
            num / denom
        })
        .collect();
    Acf { values, band: 1.96 / (n as f64).sqrt() }
}

/// Write `lag,acf,band` rows (lag 0 included as the definitional 1).
pub fn write_acf_csv<W: std::io::Write>(mut w: W, acf: &Acf) -> std::io::Result<()> {
    writeln!(w, "lag,acf,band")?;
    writeln!(w, "0,1,{}", acf.band)?;
    for (k, v) in acf.values.iter().enumerate() {
        writeln!(w, "{},{},{}", k + 1, v, acf.band)?;
    }
    Ok(())
}

/// Serialized fit report / model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GarchModelFile {
    pub kind: String,
    pub dataset_hash: String,
    pub fit: FittedArmaxGarch,
    pub p_values: [f64; 3],
    pub aic_table: Option<Vec<AicCell>>,
}

impl GarchModelFile {
    pub fn new(fit: FittedArmaxGarch, dataset_hash: &str, aic_table: Option<Vec<AicCell>>) -> Self {
        let p_values = fit.garch.p_values();
        GarchModelFile { kind: "garch".into(), dataset_hash: dataset_hash.into(), fit, p_values, aic_table }
    }

    pub fn save(&self, path: &Path) -> Result<(), GarchError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| GarchError::ModelIo(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| GarchError::ModelIo(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GarchError> {
        let json = std::fs::read_to_string(path).map_err(|e| GarchError::ModelIo(e.to_string()))?;
        let file: GarchModelFile =
            serde_json::from_str(&json).map_err(|e| GarchError::ModelIo(e.to_string()))?;
        if file.kind != "garch" {
            return Err(GarchError::ModelIo(format!("expected garch model file, found {}", file.kind)));
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{fd_gradient, gen_garch_series, ArmaMean, GarchSimSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn css_gradient_matches_finite_differences() {
        let spec = GarchSimSpec {
            omega: 0.1,
            alpha: 0.05,
            beta: 0.8,
            n: 400,
            seed: 2,
            arma: Some(ArmaMean { mu: 0.3, phi: vec![0.5, -0.2], theta: vec![0.4] }),
        };
        let series = gen_garch_series(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let exog_data: Vec<f64> = (0..series.len() * 2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let exog = Mat::from_vec(series.len(), 2, exog_data);
        let problem = CssProblem::new(&series, Some(&exog), 2, 1);

        let params = vec![0.2, 0.3, -0.1, 0.2, 0.05, -0.03];
        let analytic = problem.gradient(&params);
        let numeric = fd_gradient(|x| problem.objective(x), &params, 1e-6);
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!((a - n).abs() <= 1e-5 * n.abs().max(1.0), "{a} vs {n}");
        }
    }

    #[test]
    fn garch_gradient_matches_finite_differences() {
        let spec = GarchSimSpec { omega: 0.2, alpha: 0.1, beta: 0.7, n: 500, seed: 3, arma: None };
        let eps = gen_garch_series(&spec);
        let sigma2_init = 0.9;
        let u = vec![0.4f64.ln(), -2.0, 1.0];
        let (_, analytic) = garch_nll_grad(&u, &eps, sigma2_init);
        let numeric = fd_gradient(|x| garch_nll_grad(x, &eps, sigma2_init).0, &u, 1e-6);
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!((a - n).abs() <= 1e-5 * n.abs().max(1.0), "{a} vs {n}");
        }
    }

    #[test]
    fn white_noise_leaves_small_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let series: Vec<f64> = (0..20_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let fitted = fit(&series, None, &ArmaxSpec::arma(1, 1)).unwrap();
        assert!(fitted.phi[0].abs() < 0.1, "phi = {}", fitted.phi[0]);
        assert!(fitted.theta[0].abs() < 0.1, "theta = {}", fitted.theta[0]);
        assert!(fitted.garch.alpha < 0.02, "alpha = {}", fitted.garch.alpha);
        assert!(fitted.garch.alpha + fitted.garch.beta < 1.0);
    }

    #[test]
    fn arma21_coefficients_recovered() {
        let spec = GarchSimSpec {
            omega: 0.05,
            alpha: 0.0,
            beta: 0.0,
            n: 20_000,
            seed: 7,
            arma: Some(ArmaMean { mu: 0.5, phi: vec![0.6, -0.2], theta: vec![0.4] }),
        };
        let series = gen_garch_series(&spec);
        let fitted = fit(&series, None, &ArmaxSpec::arma(2, 1)).unwrap();
        assert!((fitted.phi[0] - 0.6).abs() < 0.05, "phi1 = {}", fitted.phi[0]);
        assert!((fitted.phi[1] + 0.2).abs() < 0.05, "phi2 = {}", fitted.phi[1]);
        assert!((fitted.theta[0] - 0.4).abs() < 0.05, "theta1 = {}", fitted.theta[0]);
        assert!((fitted.mu - 0.5).abs() < 0.05, "mu = {}", fitted.mu);
    }

    #[test]
    fn garch_recovery_single_seed() {
        let truth = (0.1f64, 0.08f64, 0.85f64);
        let spec = GarchSimSpec { omega: truth.0, alpha: truth.1, beta: truth.2, n: 20_000, seed: 4, arma: None };
        let series = gen_garch_series(&spec);
        let fitted = fit(&series, None, &ArmaxSpec { p: 0, q: 0, use_exog: false, exog_dim: 0 }).unwrap();
        let g = &fitted.garch;
        assert!((g.alpha - truth.1).abs() < 0.3 * truth.1, "alpha {}", g.alpha);
        assert!((g.beta - truth.2).abs() < 0.1 * truth.2, "beta {}", g.beta);
        assert!(g.alpha + g.beta < 1.0);
        assert!(g.std_errors.iter().all(|se| se.is_finite() && *se > 0.0));
    }

    #[test]
    fn forecast_degenerate_cases() {
        let fitted = FittedArmaxGarch {
            spec: ArmaxSpec::arma(1, 1),
            mu: 0.7,
            phi: vec![0.0],
            theta: vec![0.0],
            psi: vec![],
            garch: GarchParams { omega: 0.3, alpha: 0.0, beta: 0.0, std_errors: [0.0; 3] },
            loglik: 0.0,
            aic: 0.0,
            w_bar: 0.0,
            sigma2_init: 0.3,
            residuals: vec![],
            sigma2: vec![],
        };
        // alpha = beta = 0: variance is always omega; zero mean coefficients:
        // mean is mu.
        let (m, v) = forecast(&fitted, &[1.0], &[0.5], 2.0, 5.0, None);
        assert_eq!(v, 0.3);
        assert_eq!(m, 0.7);
        // Variance never falls below omega.
        let mut filter = GarchFilter::new(&fitted);
        for obs in [0.5, 1.5, -0.2, 0.9] {
            let (_, v) = filter.predict_next(None);
            assert!(v >= 0.3 - 1e-15);
            filter.update(obs, None);
        }
    }

    #[test]
    fn filter_matches_in_sample_residuals() {
        // Replaying the training series through the filter must reproduce the
        // CSS residuals and variance path.
        let spec = GarchSimSpec {
            omega: 0.1,
            alpha: 0.05,
            beta: 0.8,
            n: 500,
            seed: 9,
            arma: Some(ArmaMean { mu: 0.2, phi: vec![0.5], theta: vec![0.3] }),
        };
        let series = gen_garch_series(&spec);
        let fitted = fit(&series, None, &ArmaxSpec::arma(1, 1)).unwrap();
        let mut filter = GarchFilter::new(&fitted);
        for (t, &ly) in series.iter().enumerate() {
            let (mean, var) = filter.predict_next(None);
            let eps = ly - mean;
            assert!(
                (eps - fitted.residuals[t]).abs() < 1e-8,
                "t={t}: {eps} vs {}",
                fitted.residuals[t]
            );
            assert!((var - fitted.sigma2[t]).abs() < 1e-8);
            filter.update(ly, None);
        }
    }

    #[test]
    fn select_order_single_candidate_and_table() {
        let spec = GarchSimSpec { omega: 0.05, alpha: 0.0, beta: 0.0, n: 800, seed: 13, arma: None };
        let series = gen_garch_series(&spec);
        let (best, table) = select_order(&series, None, 2..=2, 1..=1, false).unwrap();
        assert_eq!((best.spec.p, best.spec.q), (2, 1));
        assert_eq!(table.len(), 1);

        let (_, table) = select_order(&series, None, 1..=2, 1..=3, false).unwrap();
        assert_eq!(table.len(), 6);
    }

    #[test]
    fn irrelevant_exog_does_not_win_on_aic() {
        let mut wins = 0;
        for seed in 0..10u64 {
            let spec = GarchSimSpec {
                omega: 0.05,
                alpha: 0.05,
                beta: 0.8,
                n: 3000,
                seed: 100 + seed,
                arma: Some(ArmaMean { mu: 0.1, phi: vec![0.4], theta: vec![0.2] }),
            };
            let series = gen_garch_series(&spec);
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let noise: Vec<f64> = (0..series.len() * 2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let exog = Mat::from_vec(series.len(), 2, noise);
            let plain = fit(&series, None, &ArmaxSpec::arma(1, 1)).unwrap();
            let with_exog = fit(&series, Some(&exog), &ArmaxSpec::armax(1, 1, 2)).unwrap();
            if with_exog.aic >= plain.aic {
                wins += 1;
            }
        }
        assert!(wins >= 8, "exog-free AIC preferred only {wins}/10 times");
    }

    #[test]
    fn acf_reference_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let iid: Vec<f64> = (0..10_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let acf = residual_acf(&iid, 20);
        let inside = acf.values.iter().filter(|v| v.abs() <= acf.band).count();
        assert!(inside >= 17, "only {inside}/20 lags inside the band");

        // Constant plus alternating sign: lag-1 autocorrelation near -1.
        let alt: Vec<f64> = (0..1000).map(|t| 5.0 + if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let acf = residual_acf(&alt, 2);
        assert!(acf.values[0] < -0.99);
        assert!(acf.values[1] > 0.99);
    }

    #[test]
    fn stationarity_detector() {
        assert!(ar_is_stationary(&[0.5]));
        assert!(!ar_is_stationary(&[1.01]));
        assert!(ar_is_stationary(&[0.6, -0.2, 0.1]));
        // Root on/inside the unit circle: phi = (2, -1) factors as (1-L)^2.
        assert!(!ar_is_stationary(&[2.0, -1.0]));
    }
}
