//! Probabilistic intraday volume forecasting toolkit.
//!
//! Core pieces:
//! - [`market_data`]: trade/book parsing and per-interval feature extraction.
//! - [`preprocess`]: deseasonalization, lag windows, and time-ordered splits.
//! - [`tme`]: the temporal mixture ensemble (softmax-gated bilinear
//!   log-normal components, Adam training, aleatoric/epistemic variance).
//! - [`garch`]: ARMAX mean equation with GARCH(1,1) residual variance fitted
//!   by two-stage maximum likelihood, plus AIC order selection.
//! - [`gbm`]: gradient boosting over from-scratch regression trees.
//! - [`evaluate`]: RMSE/MAE/NNLL/IW and quartile-conditioned relative errors.
//! - [`synthetic`]: seeded generators and brute-force oracles.
//! - [`repro`]: the self-contained verification suite the `repro` CLI command
//!   and the acceptance test target both run.

pub mod evaluate;
pub mod garch;
pub mod gbm;
pub mod market_data;
pub mod math;
pub(crate) mod optim;
pub mod preprocess;
pub mod repro;
pub mod synthetic;
pub mod tme;
