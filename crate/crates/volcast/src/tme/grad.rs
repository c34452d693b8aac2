//! Analytic gradient of the mixture negative log-likelihood.
//!
//! Chain rule through the mixture responsibilities, the log-normal density,
//! the softmax gate, and the bilinear forms. The clamp on the variance-link
//! exponent and the density variance floor are mirrored exactly, so the
//! gradient is the true derivative of the loss as implemented.

use super::{forward_instance, GateSourceParams, SourceParams, TmeError, TmeParams, EXP_CLAMP, SIGMA2_FLOOR};
use crate::math::Mat;
use crate::preprocess::ModelInstance;

fn add_bilinear_grad(
    grad_l: &mut [f64],
    grad_r: &mut [f64],
    grad_b: &mut f64,
    scale: f64,
    window: &Mat,
    l: &[f64],
    r: &[f64],
) {
    if scale == 0.0 {
        return;
    }
    let xr = window.mul_right(r);
    for (g, x) in grad_l.iter_mut().zip(xr.iter()) {
        *g += scale * x;
    }
    let xtl = window.mul_left(l);
    for (g, x) in grad_r.iter_mut().zip(xtl.iter()) {
        *g += scale * x;
    }
    *grad_b += scale;
}

/// Gradient of [`super::nll_loss`] with respect to every parameter, returned
/// in a structure congruent to the parameters.
pub fn loss_gradient(
    params: &TmeParams,
    batch: &[ModelInstance],
    l2_lambda: f64,
) -> Result<TmeParams, TmeError> {
    loss_gradient_impl(params, batch.iter(), l2_lambda, true)
}

pub(crate) fn loss_gradient_impl<'a>(
    params: &TmeParams,
    batch: impl Iterator<Item = &'a ModelInstance>,
    l2_lambda: f64,
    include_bias: bool,
) -> Result<TmeParams, TmeError> {
    let shape = params.shape();
    let mut grad = TmeParams::zeros(&shape);

    for inst in batch {
        let fwd = forward_instance(params, inst)?;
        let y_ln = inst.y.ln();
        let probs: Vec<f64> = fwd.log_gate.iter().map(|lg| lg.exp()).collect();

        for s in 0..shape.n_sources() {
            let w = &inst.windows[s];
            let theta: &SourceParams = &params.sources[s];
            let gs: &mut SourceParams = &mut grad.sources[s];
            let r_s = fwd.resp[s];

            let s2_eff = fwd.sigma2[s].max(SIGMA2_FLOOR);
            let diff = y_ln - fwd.mu[s];

            // d(-l)/d mu = r_s * dlnpdf/dmu; loss gradient flips the sign.
            let dmu = -r_s * diff / s2_eff;
            add_bilinear_grad(&mut gs.l_mu, &mut gs.r_mu, &mut gs.b_mu, dmu, w, &theta.l_mu, &theta.r_mu);

            // Through sigma2 = exp(clamp(c)) and the density floor.
            let clamped = fwd.c_raw[s] <= -EXP_CLAMP || fwd.c_raw[s] >= EXP_CLAMP;
            let floored = fwd.sigma2[s] < SIGMA2_FLOOR;
            if !clamped && !floored {
                let dlnpdf_dc = -0.5 + diff * diff / (2.0 * s2_eff);
                let dc = -r_s * dlnpdf_dc;
                add_bilinear_grad(
                    &mut gs.l_sigma,
                    &mut gs.r_sigma,
                    &mut gs.b_sigma,
                    dc,
                    w,
                    &theta.l_sigma,
                    &theta.r_sigma,
                );
            }
        }

        // Gate: dl/df_k = p_k - r_k.
        for s in 0..shape.n_sources() {
            let df = probs[s] - fwd.resp[s];
            let w = &inst.windows[s];
            let omega: &GateSourceParams = &params.gate[s];
            let gg: &mut GateSourceParams = &mut grad.gate[s];
            add_bilinear_grad(&mut gg.l_z, &mut gg.r_z, &mut gg.b_z, df, w, &omega.l_z, &omega.r_z);
        }
    }

    if l2_lambda != 0.0 {
        for (gs, ps) in grad.sources.iter_mut().zip(params.sources.iter()) {
            for (g, p) in gs.l_mu.iter_mut().zip(ps.l_mu.iter()) {
                *g += 2.0 * l2_lambda * p;
            }
            for (g, p) in gs.r_mu.iter_mut().zip(ps.r_mu.iter()) {
                *g += 2.0 * l2_lambda * p;
            }
            for (g, p) in gs.l_sigma.iter_mut().zip(ps.l_sigma.iter()) {
                *g += 2.0 * l2_lambda * p;
            }
            for (g, p) in gs.r_sigma.iter_mut().zip(ps.r_sigma.iter()) {
                *g += 2.0 * l2_lambda * p;
            }
            if include_bias {
                gs.b_mu += 2.0 * l2_lambda * ps.b_mu;
                gs.b_sigma += 2.0 * l2_lambda * ps.b_sigma;
            }
        }
        for (gg, pg) in grad.gate.iter_mut().zip(params.gate.iter()) {
            for (g, p) in gg.l_z.iter_mut().zip(pg.l_z.iter()) {
                *g += 2.0 * l2_lambda * p;
            }
            for (g, p) in gg.r_z.iter_mut().zip(pg.r_z.iter()) {
                *g += 2.0 * l2_lambda * p;
            }
            if include_bias {
                gg.b_z += 2.0 * l2_lambda * pg.b_z;
            }
        }
    }

    Ok(grad)
}
