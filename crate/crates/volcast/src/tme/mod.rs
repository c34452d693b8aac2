//! Temporal mixture ensemble.
//!
//! One log-normal regression component per data source, each parameterized by
//! a bilinear form over that source's lag window, mixed through a
//! softmax-gated latent source indicator whose logits are bilinear forms of
//! the same windows. Training minimizes the mixture negative log-likelihood
//! with L2 regularization by mini-batch Adam; an ensemble of parameter
//! snapshots from independent trajectories provides the epistemic part of the
//! predictive variance.

mod grad;
mod train;

pub use grad::loss_gradient;
pub use train::{
    collect_ensemble, train_trajectory, EpochIterate, TrainConfig, Trajectory,
};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{logsumexp, Mat};
use crate::preprocess::{Horizon, ModelInstance};

/// Bilinear-form exponent clamp for the variance link.
pub const EXP_CLAMP: f64 = 30.0;
/// Variance floor inside density evaluation.
pub const SIGMA2_FLOOR: f64 = 1e-8;
/// Largest exponent allowed inside the log-normal moment map.
const MOMENT_EXP_BOUND: f64 = 700.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum TmeError {
    #[error("window shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("target volume must be positive, got {0}")]
    NonPositiveTarget(f64),
    #[error("log-normal moment overflow at mu={mu}, sigma2={sigma2}")]
    Overflow { mu: f64, sigma2: f64 },
    #[error("loss diverged (non-finite) at epoch {0}")]
    DivergedLoss(usize),
    #[error("training split is empty")]
    EmptyTrainSet,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("model file error: {0}")]
    ModelIo(String),
}

/// Source dimensions shared by parameters, windows, and generators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    /// Feature dimensionality per source.
    pub dims: Vec<usize>,
    /// Lag-window length, shared across sources.
    pub h: usize,
}

impl ModelShape {
    pub fn n_sources(&self) -> usize {
        self.dims.len()
    }
}

/// Component parameters for one source: bilinear mean and log-variance links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    pub l_mu: Vec<f64>,
    pub r_mu: Vec<f64>,
    pub b_mu: f64,
    pub l_sigma: Vec<f64>,
    pub r_sigma: Vec<f64>,
    pub b_sigma: f64,
}

/// Gate parameters for one source's logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSourceParams {
    pub l_z: Vec<f64>,
    pub r_z: Vec<f64>,
    pub b_z: f64,
}

/// The full trainable parameter set: per-source components plus the gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmeParams {
    pub sources: Vec<SourceParams>,
    pub gate: Vec<GateSourceParams>,
}

impl TmeParams {
    pub fn zeros(shape: &ModelShape) -> Self {
        let sources = shape
            .dims
            .iter()
            .map(|&d| SourceParams {
                l_mu: vec![0.0; d],
                r_mu: vec![0.0; shape.h],
                b_mu: 0.0,
                l_sigma: vec![0.0; d],
                r_sigma: vec![0.0; shape.h],
                b_sigma: 0.0,
            })
            .collect();
        let gate = shape
            .dims
            .iter()
            .map(|&d| GateSourceParams { l_z: vec![0.0; d], r_z: vec![0.0; shape.h], b_z: 0.0 })
            .collect();
        TmeParams { sources, gate }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            dims: self.sources.iter().map(|s| s.l_mu.len()).collect(),
            h: self.sources.first().map(|s| s.r_mu.len()).unwrap_or(0),
        }
    }

    pub fn n_params(&self) -> usize {
        self.flatten().len()
    }

    /// Flat layout, documented and stable: for each source
    /// `L_mu, R_mu, b_mu, L_sigma, R_sigma, b_sigma`, then for each source
    /// `L_z, R_z, b_z`. Model files and the finite-difference oracle share it.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.sources {
            out.extend_from_slice(&s.l_mu);
            out.extend_from_slice(&s.r_mu);
            out.push(s.b_mu);
            out.extend_from_slice(&s.l_sigma);
            out.extend_from_slice(&s.r_sigma);
            out.push(s.b_sigma);
        }
        for g in &self.gate {
            out.extend_from_slice(&g.l_z);
            out.extend_from_slice(&g.r_z);
            out.push(g.b_z);
        }
        out
    }

    pub fn from_flat(shape: &ModelShape, flat: &[f64]) -> Result<Self, TmeError> {
        let mut params = TmeParams::zeros(shape);
        let expected = params.n_params();
        if flat.len() != expected {
            return Err(TmeError::ModelIo(format!(
                "flat parameter vector has {} entries, shape needs {}",
                flat.len(),
                expected
            )));
        }
        let mut it = flat.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        for (s, &d) in shape.dims.iter().enumerate() {
            params.sources[s].l_mu = take(d);
            params.sources[s].r_mu = take(shape.h);
            params.sources[s].b_mu = take(1)[0];
            params.sources[s].l_sigma = take(d);
            params.sources[s].r_sigma = take(shape.h);
            params.sources[s].b_sigma = take(1)[0];
        }
        for (s, &d) in shape.dims.iter().enumerate() {
            params.gate[s].l_z = take(d);
            params.gate[s].r_z = take(shape.h);
            params.gate[s].b_z = take(1)[0];
        }
        Ok(params)
    }

    /// Sum of squares over every weight, optionally including bias terms.
    pub fn squared_norm(&self, include_bias: bool) -> f64 {
        let mut acc = 0.0;
        for s in &self.sources {
            acc += s.l_mu.iter().map(|x| x * x).sum::<f64>();
            acc += s.r_mu.iter().map(|x| x * x).sum::<f64>();
            acc += s.l_sigma.iter().map(|x| x * x).sum::<f64>();
            acc += s.r_sigma.iter().map(|x| x * x).sum::<f64>();
            if include_bias {
                acc += s.b_mu * s.b_mu + s.b_sigma * s.b_sigma;
            }
        }
        for g in &self.gate {
            acc += g.l_z.iter().map(|x| x * x).sum::<f64>();
            acc += g.r_z.iter().map(|x| x * x).sum::<f64>();
            if include_bias {
                acc += g.b_z * g.b_z;
            }
        }
        acc
    }
}

fn check_window(expected_d: usize, expected_h: usize, window: &Mat) -> Result<(), TmeError> {
    if window.rows() != expected_d || window.cols() != expected_h {
        return Err(TmeError::ShapeMismatch {
            expected: (expected_d, expected_h),
            got: (window.rows(), window.cols()),
        });
    }
    Ok(())
}

/// Per-source conditional log-moments of ln(y): the bilinear mean and the
/// exp-linked variance, with the exponent clamped to [-30, 30].
pub fn source_log_moments(theta: &SourceParams, window: &Mat) -> Result<(f64, f64), TmeError> {
    check_window(theta.l_mu.len(), theta.r_mu.len(), window)?;
    let mu = window.bilinear(&theta.l_mu, &theta.r_mu) + theta.b_mu;
    let c = window.bilinear(&theta.l_sigma, &theta.r_sigma) + theta.b_sigma;
    let sigma2 = c.clamp(-EXP_CLAMP, EXP_CLAMP).exp();
    Ok((mu, sigma2))
}

/// Mean and variance of a log-normal with log-scale parameters (mu, sigma2).
/// Exponent overflow is reported, never saturated.
pub fn lognormal_moments(mu: f64, sigma2: f64) -> Result<(f64, f64), TmeError> {
    assert!(sigma2 > 0.0, "sigma2 must be positive");
    let mean_exp = mu + 0.5 * sigma2;
    let var_exp = 2.0 * mu + 2.0 * sigma2;
    if mean_exp > MOMENT_EXP_BOUND || var_exp > MOMENT_EXP_BOUND {
        return Err(TmeError::Overflow { mu, sigma2 });
    }
    let mean = mean_exp.exp();
    let variance = (sigma2.exp() - 1.0) * (2.0 * mu + sigma2).exp();
    Ok((mean, variance))
}

/// Gate logits f_s for every source.
pub fn gate_logits(gate: &[GateSourceParams], windows: &[Mat]) -> Result<Vec<f64>, TmeError> {
    if gate.len() != windows.len() {
        return Err(TmeError::ShapeMismatch {
            expected: (gate.len(), 0),
            got: (windows.len(), 0),
        });
    }
    gate.iter()
        .zip(windows.iter())
        .map(|(g, w)| {
            check_window(g.l_z.len(), g.r_z.len(), w)?;
            Ok(w.bilinear(&g.l_z, &g.r_z) + g.b_z)
        })
        .collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|f| f - lse).collect()
}

/// Softmax gate probabilities over the source logits (max-subtracted, so
/// arbitrary logit magnitudes cannot overflow).
pub fn gate_probs(gate: &[GateSourceParams], windows: &[Mat]) -> Result<Vec<f64>, TmeError> {
    let logits = gate_logits(gate, windows)?;
    Ok(log_softmax(&logits).iter().map(|lp| lp.exp()).collect())
}

/// Log-density of a log-normal at y, with the variance floored at 1e-8.
#[inline]
pub(crate) fn lognormal_log_pdf(y_ln: f64, mu: f64, sigma2: f64) -> f64 {
    let s2 = sigma2.max(SIGMA2_FLOOR);
    let diff = y_ln - mu;
    -y_ln - 0.5 * (LN_2PI + s2.ln()) - diff * diff / (2.0 * s2)
}

/// Shared per-instance forward pass used by the loss, the gradient, and the
/// pointwise likelihood.
pub(crate) struct InstanceForward {
    pub mu: Vec<f64>,
    /// Pre-clamp exponent of the variance link.
    pub c_raw: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub log_gate: Vec<f64>,
    pub ln_pdf: Vec<f64>,
    /// Instance negative log-likelihood.
    pub nll: f64,
    /// Mixture responsibilities (posterior over the latent source).
    pub resp: Vec<f64>,
}

pub(crate) fn forward_instance(params: &TmeParams, inst: &ModelInstance) -> Result<InstanceForward, TmeError> {
    if inst.y <= 0.0 {
        return Err(TmeError::NonPositiveTarget(inst.y));
    }
    if inst.windows.len() != params.sources.len() {
        return Err(TmeError::ShapeMismatch {
            expected: (params.sources.len(), 0),
            got: (inst.windows.len(), 0),
        });
    }
    let y_ln = inst.y.ln();
    let n = params.sources.len();
    let mut mu = Vec::with_capacity(n);
    let mut c_raw = Vec::with_capacity(n);
    let mut sigma2 = Vec::with_capacity(n);
    let mut ln_pdf = Vec::with_capacity(n);
    for (theta, w) in params.sources.iter().zip(inst.windows.iter()) {
        check_window(theta.l_mu.len(), theta.r_mu.len(), w)?;
        let m = w.bilinear(&theta.l_mu, &theta.r_mu) + theta.b_mu;
        let c = w.bilinear(&theta.l_sigma, &theta.r_sigma) + theta.b_sigma;
        let s2 = c.clamp(-EXP_CLAMP, EXP_CLAMP).exp();
        mu.push(m);
        c_raw.push(c);
        sigma2.push(s2);
        ln_pdf.push(lognormal_log_pdf(y_ln, m, s2));
    }
    let logits = gate_logits(&params.gate, &inst.windows)?;
    let log_gate = log_softmax(&logits);
    let joint: Vec<f64> = log_gate.iter().zip(ln_pdf.iter()).map(|(lg, lp)| lg + lp).collect();
    let lse = logsumexp(&joint);
    let resp = joint.iter().map(|g| (g - lse).exp()).collect();
    Ok(InstanceForward { mu, c_raw, sigma2, log_gate, ln_pdf, nll: -lse, resp })
}

/// Mixture negative log-likelihood over a batch plus the L2 penalty
/// `lambda * ||Theta||^2` (biases included).
pub fn nll_loss(params: &TmeParams, batch: &[ModelInstance], l2_lambda: f64) -> Result<f64, TmeError> {
    nll_loss_impl(params, batch.iter(), l2_lambda, true)
}

pub(crate) fn nll_loss_impl<'a>(
    params: &TmeParams,
    batch: impl Iterator<Item = &'a ModelInstance>,
    l2_lambda: f64,
    include_bias: bool,
) -> Result<f64, TmeError> {
    let mut total = 0.0;
    for inst in batch {
        total += forward_instance(params, inst)?.nll;
    }
    Ok(total + l2_lambda * params.squared_norm(include_bias))
}

/// One ensemble member's origin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberProvenance {
    pub trajectory: usize,
    pub epoch: usize,
    pub seed: u64,
}

/// A set of parameter realizations drawn from independent training
/// trajectories (post burn-in epoch-end iterates plus each trajectory's
/// best-validation iterate).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub shape: ModelShape,
    pub members: Vec<TmeParams>,
    pub provenance: Vec<MemberProvenance>,
}

impl Ensemble {
    pub fn from_members(members: Vec<TmeParams>, provenance: Vec<MemberProvenance>) -> Self {
        assert!(!members.is_empty(), "ensemble needs at least one member");
        assert_eq!(members.len(), provenance.len());
        let shape = members[0].shape();
        Ensemble { shape, members, provenance }
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Predictive distribution summary on the deseasonalized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub mean: f64,
    pub var_total: f64,
    pub var_aleatoric: f64,
    pub var_epistemic: f64,
    /// Gate probabilities per member (rows) and source (columns).
    pub gate_probs: Vec<Vec<f64>>,
    /// Member-averaged gate probabilities; sums to one.
    pub gate_mean: Vec<f64>,
}

/// Ensemble prediction: member-averaged mixture mean, with the predictive
/// variance split into the member-averaged mixture variance (aleatoric) and
/// the dispersion of component means around the overall mean (epistemic).
pub fn predict(ensemble: &Ensemble, inst: &ModelInstance) -> Result<Forecast, TmeError> {
    let m_count = ensemble.size() as f64;
    let n_sources = ensemble.shape.n_sources();
    let mut mean = 0.0;
    let mut aleatoric = 0.0;
    let mut second_moment = 0.0;
    let mut gate_rows = Vec::with_capacity(ensemble.size());
    let mut gate_mean = vec![0.0; n_sources];

    for member in &ensemble.members {
        if inst.windows.len() != member.sources.len() {
            return Err(TmeError::ShapeMismatch {
                expected: (member.sources.len(), 0),
                got: (inst.windows.len(), 0),
            });
        }
        let probs = gate_probs(&member.gate, &inst.windows)?;
        for s in 0..n_sources {
            let (mu, sigma2) = source_log_moments(&member.sources[s], &inst.windows[s])?;
            let (m_s, v_s) = lognormal_moments(mu, sigma2)?;
            mean += probs[s] * m_s / m_count;
            aleatoric += probs[s] * v_s / m_count;
            second_moment += probs[s] * m_s * m_s / m_count;
            gate_mean[s] += probs[s] / m_count;
        }
        gate_rows.push(probs);
    }

    let mut epistemic = second_moment - mean * mean;
    if epistemic < 0.0 {
        let tol = 1e-12 * second_moment.max(1.0);
        if epistemic >= -tol {
            epistemic = 0.0;
        } else {
            return Err(TmeError::Numerical(format!(
                "epistemic variance {epistemic} below the numerical floor"
            )));
        }
    }
    Ok(Forecast {
        mean,
        var_total: aleatoric + epistemic,
        var_aleatoric: aleatoric,
        var_epistemic: epistemic,
        gate_probs: gate_rows,
        gate_mean,
    })
}

/// Ensemble negative log-likelihood of one instance on the deseasonalized
/// scale: `-ln[(1/M) sum_m sum_s p CdotPdf]` via log-sum-exp.
pub fn nll_point(ensemble: &Ensemble, inst: &ModelInstance) -> Result<f64, TmeError> {
    if inst.y <= 0.0 {
        return Err(TmeError::NonPositiveTarget(inst.y));
    }
    let y_ln = inst.y.ln();
    let mut terms = Vec::with_capacity(ensemble.size() * ensemble.shape.n_sources());
    for member in &ensemble.members {
        let logits = gate_logits(&member.gate, &inst.windows)?;
        let log_gate = log_softmax(&logits);
        for (s, lg) in log_gate.iter().enumerate() {
            let (mu, sigma2) = source_log_moments(&member.sources[s], &inst.windows[s])?;
            terms.push(lg + lognormal_log_pdf(y_ln, mu, sigma2));
        }
    }
    Ok(-(logsumexp(&terms) - (ensemble.size() as f64).ln()))
}

/// Raw-volume negative log-likelihood: the density transform v = a*y adds
/// ln a to the deseasonalized NLL.
pub fn nll_point_raw(ensemble: &Ensemble, inst: &ModelInstance) -> Result<f64, TmeError> {
    Ok(nll_point(ensemble, inst)? + inst.a.ln())
}

/// Serialized model: manifest linkage, shape, flattened members, provenance,
/// and the training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TmeModelFile {
    pub kind: String,
    pub dataset_hash: String,
    pub horizon: Horizon,
    pub shape: ModelShape,
    /// Flat member layout: per source L_mu, R_mu, b_mu, L_sigma, R_sigma,
    /// b_sigma; then per source L_z, R_z, b_z.
    pub members: Vec<Vec<f64>>,
    pub provenance: Vec<MemberProvenance>,
    pub config: TrainConfig,
}

impl TmeModelFile {
    pub fn from_ensemble(ensemble: &Ensemble, dataset_hash: &str, horizon: Horizon, config: &TrainConfig) -> Self {
        TmeModelFile {
            kind: "tme".into(),
            dataset_hash: dataset_hash.into(),
            horizon,
            shape: ensemble.shape.clone(),
            members: ensemble.members.iter().map(|m| m.flatten()).collect(),
            provenance: ensemble.provenance.clone(),
            config: config.clone(),
        }
    }

    pub fn to_ensemble(&self) -> Result<Ensemble, TmeError> {
        if self.members.is_empty() {
            return Err(TmeError::ModelIo("model file has no members".into()));
        }
        let members = self
            .members
            .iter()
            .map(|flat| TmeParams::from_flat(&self.shape, flat))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Ensemble { shape: self.shape.clone(), members, provenance: self.provenance.clone() })
    }

    pub fn save(&self, path: &Path) -> Result<(), TmeError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| TmeError::ModelIo(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| TmeError::ModelIo(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TmeError> {
        let json = std::fs::read_to_string(path).map_err(|e| TmeError::ModelIo(e.to_string()))?;
        let file: TmeModelFile =
            serde_json::from_str(&json).map_err(|e| TmeError::ModelIo(e.to_string()))?;
        if file.kind != "tme" {
            return Err(TmeError::ModelIo(format!("expected tme model file, found kind {}", file.kind)));
        }
        Ok(file)
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape2() -> ModelShape {
        ModelShape { dims: vec![3, 2], h: 4 }
    }

    #[test]
    fn source_log_moments_zero_window_gives_biases() {
        let shape = shape2();
        let mut params = TmeParams::zeros(&shape);
        params.sources[0].b_mu = 0.7;
        params.sources[0].b_sigma = -0.4;
        let w = Mat::zeros(3, 4);
        let (mu, sigma2) = source_log_moments(&params.sources[0], &w).unwrap();
        assert_eq!(mu, 0.7);
        assert!((sigma2 - (-0.4f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn source_log_moments_single_entry_selection() {
        let shape = ModelShape { dims: vec![3], h: 3 };
        let mut params = TmeParams::zeros(&shape);
        params.sources[0].l_mu[1] = 1.0;
        params.sources[0].r_mu[1] = 1.0;
        let mut w = Mat::zeros(3, 3);
        w.set(1, 1, 3.0);
        let (mu, _) = source_log_moments(&params.sources[0], &w).unwrap();
        assert_eq!(mu, 3.0);
    }

    #[test]
    fn source_log_moments_matches_double_loop() {
        let shape = shape2();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let params = test_support::random_params(&shape, &mut rng, 0.8);
            let inst = test_support::random_instance(&shape, &mut rng);
            for s in 0..2 {
                let theta = &params.sources[s];
                let w = &inst.windows[s];
                let mut mu_brute = theta.b_mu;
                let mut c_brute = theta.b_sigma;
                for i in 0..w.rows() {
                    for j in 0..w.cols() {
                        mu_brute += theta.l_mu[i] * w.at(i, j) * theta.r_mu[j];
                        c_brute += theta.l_sigma[i] * w.at(i, j) * theta.r_sigma[j];
                    }
                }
                let (mu, sigma2) = source_log_moments(theta, w).unwrap();
                assert!((mu - mu_brute).abs() <= 1e-12 * mu_brute.abs().max(1.0));
                let s2_brute = c_brute.clamp(-EXP_CLAMP, EXP_CLAMP).exp();
                assert!((sigma2 - s2_brute).abs() <= 1e-12 * s2_brute);
            }
        }
    }

    #[test]
    fn source_log_moments_shape_mismatch() {
        let shape = shape2();
        let params = TmeParams::zeros(&shape);
        let bad = Mat::zeros(2, 4);
        assert!(matches!(
            source_log_moments(&params.sources[0], &bad),
            Err(TmeError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn lognormal_moment_identities() {
        // Degenerate limit.
        let (mean, var) = lognormal_moments(0.0, 1e-12).unwrap();
        assert!((mean - 1.0).abs() < 1e-9);
        assert!(var < 1e-9);
        // Standard values: e^{1/2}, (e-1)e.
        let (mean, var) = lognormal_moments(0.0, 1.0).unwrap();
        assert!((mean - 0.5f64.exp()).abs() < 1e-12);
        assert!((var - (1f64.exp() - 1.0) * 1f64.exp()).abs() < 1e-12);
        // Overflow is an error, not a saturation.
        assert!(matches!(lognormal_moments(400.0, 1.0), Err(TmeError::Overflow { .. })));
    }

    #[test]
    fn gate_probs_uniform_and_shift_invariant() {
        let shape = ModelShape { dims: vec![2, 2, 2, 2], h: 3 };
        let params = TmeParams::zeros(&shape);
        let inst = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            test_support::random_instance(&shape, &mut rng)
        };
        // All logits equal -> uniform.
        let p = gate_probs(&params.gate, &inst.windows).unwrap();
        for &pi in &p {
            assert!((pi - 0.25).abs() < 1e-15);
        }

        // f = (ln 2, 0, 0, 0) -> (0.4, 0.2, 0.2, 0.2).
        let mut params = params;
        params.gate[0].b_z = 2f64.ln();
        let p = gate_probs(&params.gate, &inst.windows).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-14);
        for &pi in &p[1..] {
            assert!((pi - 0.2).abs() < 1e-14);
        }

        // Adding a constant to every logit changes nothing.
        let mut shifted = params.clone();
        for g in &mut shifted.gate {
            g.b_z += 13.5;
        }
        let q = gate_probs(&shifted.gate, &inst.windows).unwrap();
        for (a, b) in p.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let sum: f64 = q.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(q.iter().all(|&x| x > 0.0));
    }

    fn single_source_instance(y: f64) -> (TmeParams, ModelInstance) {
        let shape = ModelShape { dims: vec![1], h: 1 };
        let mut params = TmeParams::zeros(&shape);
        params.sources[0].b_mu = 0.0;
        params.sources[0].b_sigma = 0.0; // sigma2 = 1
        let inst = ModelInstance { t: 0, v: y, a: 1.0, y, windows: vec![Mat::zeros(1, 1)] };
        (params, inst)
    }

    #[test]
    fn nll_single_gaussian_reference() {
        // y=1, mu=0, sigma2=1: NLL = 0.5 ln(2 pi).
        let (params, inst) = single_source_instance(1.0);
        let nll = nll_loss(&params, std::slice::from_ref(&inst), 0.0).unwrap();
        let expect = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((nll - expect).abs() < 1e-12);
        assert!((expect - 0.918_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn nll_regularizer_vanishes_at_zero_params() {
        let shape = shape2();
        let params = TmeParams::zeros(&shape);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inst = test_support::random_instance(&shape, &mut rng);
        let base = nll_loss(&params, std::slice::from_ref(&inst), 0.0).unwrap();
        let reg = nll_loss(&params, std::slice::from_ref(&inst), 3.0).unwrap();
        assert_eq!(base, reg);
    }

    #[test]
    fn nll_mixture_bounded_by_best_source_plus_gate_penalty() {
        let shape = ModelShape { dims: vec![2, 3, 2, 3], h: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let params = test_support::random_params(&shape, &mut rng, 0.6);
            let inst = test_support::random_instance(&shape, &mut rng);
            let fwd = forward_instance(&params, &inst).unwrap();
            let (best, _) = fwd
                .ln_pdf
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            let single_nll = -fwd.ln_pdf[best];
            let p_best = fwd.log_gate[best].exp();
            assert!(fwd.nll <= single_nll + (1.0 / p_best).ln() + 1e-12);
        }
    }

    #[test]
    fn nll_rejects_non_positive_target() {
        let (params, mut inst) = single_source_instance(1.0);
        inst.y = 0.0;
        assert!(matches!(
            nll_loss(&params, std::slice::from_ref(&inst), 0.0),
            Err(TmeError::NonPositiveTarget(_))
        ));
    }

    #[test]
    fn predict_single_member_single_source_has_zero_epistemic() {
        let (params, inst) = single_source_instance(1.0);
        let ens = Ensemble::from_members(
            vec![params],
            vec![MemberProvenance { trajectory: 0, epoch: 1, seed: 0 }],
        );
        let f = predict(&ens, &inst).unwrap();
        assert_eq!(f.var_epistemic, 0.0);
        assert_eq!(f.var_total, f.var_aleatoric);
    }

    #[test]
    fn predict_two_source_hand_expansion() {
        // Gate (0.3, 0.7), component means (1, 2), vanishing variances:
        // mean 1.7, aleatoric ~0, epistemic 0.3*1 + 0.7*4 - 1.7^2 = 0.21.
        let shape = ModelShape { dims: vec![1, 1], h: 1 };
        let mut params = TmeParams::zeros(&shape);
        params.sources[0].b_mu = 0.0;
        params.sources[0].b_sigma = -EXP_CLAMP;
        params.sources[1].b_mu = 2f64.ln();
        params.sources[1].b_sigma = -EXP_CLAMP;
        params.gate[0].b_z = 0.3f64.ln();
        params.gate[1].b_z = 0.7f64.ln();
        let inst = ModelInstance {
            t: 0,
            v: 1.0,
            a: 1.0,
            y: 1.0,
            windows: vec![Mat::zeros(1, 1), Mat::zeros(1, 1)],
        };
        let ens = Ensemble::from_members(
            vec![params],
            vec![MemberProvenance { trajectory: 0, epoch: 1, seed: 0 }],
        );
        let f = predict(&ens, &inst).unwrap();
        assert!((f.mean - 1.7).abs() < 1e-9);
        assert!(f.var_aleatoric < 1e-9);
        assert!((f.var_epistemic - 0.21).abs() < 1e-9);
        assert!((f.var_total - (f.var_aleatoric + f.var_epistemic)).abs() <= 1e-10 * f.var_total);
        let gsum: f64 = f.gate_mean.iter().sum();
        assert!((gsum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nll_point_matches_loss_and_scales_with_seasonal_factor() {
        let (params, inst) = single_source_instance(1.0);
        let ens = Ensemble::from_members(
            vec![params.clone(), params],
            vec![
                MemberProvenance { trajectory: 0, epoch: 1, seed: 0 },
                MemberProvenance { trajectory: 1, epoch: 1, seed: 1 },
            ],
        );
        let nll_y = nll_point(&ens, &inst).unwrap();
        assert!((nll_y - 0.918_938_533_204_672_7).abs() < 1e-12);

        // Identical members match the single-member value.
        let single = Ensemble::from_members(
            vec![ens.members[0].clone()],
            vec![MemberProvenance { trajectory: 0, epoch: 1, seed: 0 }],
        );
        assert!((nll_point(&single, &inst).unwrap() - nll_y).abs() < 1e-12);

        // a = 2 adds ln 2 on the raw scale.
        let mut scaled = inst.clone();
        scaled.a = 2.0;
        let raw = nll_point_raw(&ens, &scaled).unwrap();
        assert!((raw - (nll_y + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn flatten_round_trip() {
        let shape = ModelShape { dims: vec![6, 13, 6, 13], h: 10 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = test_support::random_params(&shape, &mut rng, 0.3);
        let flat = params.flatten();
        let back = TmeParams::from_flat(&shape, &flat).unwrap();
        assert_eq!(params, back);
    }
}
