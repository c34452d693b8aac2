//! Mini-batch Adam training and ensemble collection.
//!
//! Each trajectory is an independent Adam run from its own random
//! initialization over seeded epoch shuffles. Epoch-end parameter snapshots
//! form the candidate pool; after a burn-in prefix is skipped, each
//! trajectory contributes its best-validation iterate plus the latest
//! epoch-end iterates up to its share of the ensemble budget.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grad::loss_gradient_impl;
use super::{forward_instance, Ensemble, MemberProvenance, ModelShape, TmeError, TmeParams};
use crate::math::{derive_seed, mean, sample_variance};
use crate::preprocess::{DatasetSplit, ModelInstance};

/// Relative epoch-loss change below which training stops.
const CONVERGENCE_TOL: f64 = 1e-6;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Training hyperparameters. The documented search ranges (learning rate in
/// [1e-4, 1e-3], batch size in [10, 300], L2 strength in [0.1, 5.0]) are
/// enforced only by [`TrainConfig::validate`], which the CLI applies; library
/// callers may explore outside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2_lambda: f64,
    /// Whether bias terms enter the L2 penalty.
    pub l2_include_bias: bool,
    pub n_trajectories: usize,
    /// Ensemble members kept per trajectory; total M = n_trajectories * this.
    pub keep_per_trajectory: usize,
    pub burn_in_epochs: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 100,
            l2_lambda: 0.1,
            l2_include_bias: true,
            n_trajectories: 5,
            keep_per_trajectory: 4,
            burn_in_epochs: 5,
            max_epochs: 60,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn ensemble_target(&self) -> usize {
        self.n_trajectories * self.keep_per_trajectory
    }

    /// Range checks matching the documented hyperparameter search space.
    pub fn validate(&self) -> Result<(), TmeError> {
        if !(1e-4..=1e-3).contains(&self.learning_rate) {
            return Err(TmeError::InvalidConfig(format!(
                "learning_rate {} outside [0.0001, 0.001]",
                self.learning_rate
            )));
        }
        if !(10..=300).contains(&self.batch_size) {
            return Err(TmeError::InvalidConfig(format!(
                "batch_size {} outside [10, 300]",
                self.batch_size
            )));
        }
        if !(0.1..=5.0).contains(&self.l2_lambda) {
            return Err(TmeError::InvalidConfig(format!(
                "l2_lambda {} outside [0.1, 5.0]",
                self.l2_lambda
            )));
        }
        if self.n_trajectories == 0 || self.keep_per_trajectory == 0 || self.max_epochs == 0 {
            return Err(TmeError::InvalidConfig(
                "n_trajectories, keep_per_trajectory and max_epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Epoch-end snapshot of one trajectory.
#[derive(Debug, Clone)]
pub struct EpochIterate {
    /// 1-based epoch index.
    pub epoch: usize,
    pub params: TmeParams,
    /// Mean per-instance training objective over the epoch.
    pub train_loss: f64,
    /// Mean per-instance validation NLL (no penalty term).
    pub val_nnll: f64,
}

/// One full training run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub seed: u64,
    pub iterates: Vec<EpochIterate>,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl AdamState {
    fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let b1c = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let b2c = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1c;
            let v_hat = self.v[i] / b2c;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Initialization: weights uniform in (-0.05, 0.05); component biases pinned
/// to the marginal distribution of ln y on the training split (b_mu at its
/// mean, b_sigma at the log of its variance); gate biases zero.
fn init_params<R: Rng>(shape: &ModelShape, train: &[ModelInstance], rng: &mut R) -> TmeParams {
    let log_y: Vec<f64> = train.iter().map(|i| i.y.ln()).collect();
    let b_mu = mean(&log_y);
    let var = sample_variance(&log_y).max(1e-4);
    let b_sigma = var.ln();

    let mut params = TmeParams::zeros(shape);
    for s in &mut params.sources {
        for w in s
            .l_mu
            .iter_mut()
            .chain(s.r_mu.iter_mut())
            .chain(s.l_sigma.iter_mut())
            .chain(s.r_sigma.iter_mut())
        {
            *w = rng.random_range(-0.05..0.05);
        }
        s.b_mu = b_mu;
        s.b_sigma = b_sigma;
    }
    for g in &mut params.gate {
        for w in g.l_z.iter_mut().chain(g.r_z.iter_mut()) {
            *w = rng.random_range(-0.05..0.05);
        }
        g.b_z = 0.0;
    }
    params
}

fn validation_nnll(params: &TmeParams, validation: &[ModelInstance]) -> Result<f64, TmeError> {
    if validation.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for inst in validation {
        total += forward_instance(params, inst)?.nll;
    }
    Ok(total / validation.len() as f64)
}

/// Run one SGD trajectory: seeded shuffles, mini-batch Adam updates (the last
/// partial batch is kept), one recorded iterate per epoch end. Stops at
/// `max_epochs` or when the epoch loss changes by less than 1e-6 relatively.
/// The L2 penalty is scaled by each batch's share of the training set so one
/// epoch applies the full-strength penalty exactly once.
pub fn train_trajectory(
    config: &TrainConfig,
    split: &DatasetSplit,
    seed: u64,
) -> Result<Trajectory, TmeError> {
    if split.train.is_empty() {
        return Err(TmeError::EmptyTrainSet);
    }
    let shape = ModelShape {
        dims: split.train[0].windows.iter().map(|w| w.rows()).collect(),
        h: split.train[0].windows[0].cols(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params_struct = init_params(&shape, &split.train, &mut rng);
    let mut flat = params_struct.flatten();
    let mut adam = AdamState::new(flat.len());

    let n = split.train.len();
    let batch_size = config.batch_size.max(1).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut iterates = Vec::new();
    let mut prev_epoch_loss: Option<f64> = None;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let params = TmeParams::from_flat(&shape, &flat)?;
            let frac = chunk.len() as f64 / n as f64;
            let lambda_batch = config.l2_lambda * frac;
            let batch_iter = chunk.iter().map(|&i| &split.train[i]);
            let grad = loss_gradient_impl(&params, batch_iter, lambda_batch, config.l2_include_bias)?;
            let batch_iter = chunk.iter().map(|&i| &split.train[i]);
            let loss = super::nll_loss_impl(&params, batch_iter, lambda_batch, config.l2_include_bias)?;
            if !loss.is_finite() {
                return Err(TmeError::DivergedLoss(epoch));
            }
            epoch_loss_sum += loss;
            adam.update(&mut flat, &grad.flatten(), config.learning_rate);
        }
        let epoch_loss = epoch_loss_sum / n as f64;
        if !epoch_loss.is_finite() {
            return Err(TmeError::DivergedLoss(epoch));
        }

        let snapshot = TmeParams::from_flat(&shape, &flat)?;
        let val = validation_nnll(&snapshot, &split.validation)?;
        iterates.push(EpochIterate { epoch, params: snapshot, train_loss: epoch_loss, val_nnll: val });

        if let Some(prev) = prev_epoch_loss {
            let rel = (epoch_loss - prev).abs() / prev.abs().max(1e-12);
            if rel < CONVERGENCE_TOL {
                break;
            }
        }
        prev_epoch_loss = Some(epoch_loss);
    }
    Ok(Trajectory { seed, iterates })
}

/// Pick a trajectory's ensemble members: among post-burn-in epoch-end
/// iterates, the best-validation one (earliest epoch on ties) plus the latest
/// iterates until the per-trajectory budget is filled. Falls back to the
/// final iterate when burn-in swallowed the whole run.
fn select_members(traj: &Trajectory, burn_in: usize, budget: usize) -> Vec<usize> {
    let candidates: Vec<usize> = traj
        .iterates
        .iter()
        .enumerate()
        .filter(|(_, it)| it.epoch > burn_in)
        .map(|(i, _)| i)
        .collect();
    if candidates.is_empty() {
        return vec![traj.iterates.len() - 1];
    }
    let best = *candidates
        .iter()
        .min_by(|&&a, &&b| {
            let (va, vb) = (traj.iterates[a].val_nnll, traj.iterates[b].val_nnll);
            va.partial_cmp(&vb).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        })
        .expect("non-empty candidates");
    let mut selected = vec![best];
    for &idx in candidates.iter().rev() {
        if selected.len() >= budget {
            break;
        }
        if idx != best {
            selected.push(idx);
        }
    }
    selected.sort_unstable();
    selected
}

/// Train `n_trajectories` independent trajectories (in parallel) and pool
/// their selected iterates into the ensemble.
pub fn collect_ensemble(config: &TrainConfig, split: &DatasetSplit) -> Result<Ensemble, TmeError> {
    if config.n_trajectories == 0 {
        return Err(TmeError::InvalidConfig("n_trajectories must be at least 1".into()));
    }
    let trajectories: Vec<Result<Trajectory, TmeError>> = (0..config.n_trajectories)
        .into_par_iter()
        .map(|j| {
            let seed = derive_seed(config.seed, &format!("trajectory-{j}"));
            train_trajectory(config, split, seed)
        })
        .collect();

    let mut members = Vec::new();
    let mut provenance = Vec::new();
    for (j, traj) in trajectories.into_iter().enumerate() {
        let traj = traj?;
        for idx in select_members(&traj, config.burn_in_epochs, config.keep_per_trajectory) {
            let it = &traj.iterates[idx];
            members.push(it.params.clone());
            provenance.push(MemberProvenance { trajectory: j, epoch: it.epoch, seed: traj.seed });
        }
    }
    Ok(Ensemble::from_members(members, provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gen_tme_data, FeatureProcess, TmeGenerativeSpec};
    use crate::tme::nll_loss_impl;

    fn learnable_spec(seed: u64) -> TmeGenerativeSpec {
        let shape = ModelShape { dims: vec![2], h: 2 };
        let mut truth = TmeParams::zeros(&shape);
        truth.sources[0].l_mu = vec![0.8, -0.5];
        truth.sources[0].r_mu = vec![1.0, 0.4];
        truth.sources[0].b_mu = 0.2;
        truth.sources[0].b_sigma = (0.3f64).ln();
        TmeGenerativeSpec { shape, truth, feature_process: FeatureProcess::Iid, seed }
    }

    fn split_from_instances(mut instances: Vec<ModelInstance>) -> DatasetSplit {
        let n = instances.len();
        let test = instances.split_off(n * 8 / 10);
        let validation = instances.split_off(n * 7 / 10);
        DatasetSplit { train: instances, validation, test }
    }

    #[test]
    fn zero_learning_rate_freezes_iterates() {
        let spec = learnable_spec(3);
        let data = gen_tme_data(&spec, 60);
        let split = split_from_instances(data.instances);
        let config = TrainConfig {
            learning_rate: 0.0,
            batch_size: 16,
            max_epochs: 4,
            burn_in_epochs: 0,
            n_trajectories: 1,
            keep_per_trajectory: 2,
            ..TrainConfig::default()
        };
        let traj = train_trajectory(&config, &split, 5).unwrap();
        // Convergence fires after two identical epochs.
        assert!(traj.iterates.len() >= 2);
        let first = traj.iterates[0].params.flatten();
        for it in &traj.iterates[1..] {
            assert_eq!(it.params.flatten(), first);
        }
    }

    #[test]
    fn identical_seeds_give_bit_identical_runs() {
        let spec = learnable_spec(4);
        let data = gen_tme_data(&spec, 120);
        let split = split_from_instances(data.instances);
        let config = TrainConfig { max_epochs: 5, batch_size: 32, ..TrainConfig::default() };
        let a = train_trajectory(&config, &split, 99).unwrap();
        let b = train_trajectory(&config, &split, 99).unwrap();
        assert_eq!(a.iterates.len(), b.iterates.len());
        for (x, y) in a.iterates.iter().zip(b.iterates.iter()) {
            assert_eq!(x.params.flatten(), y.params.flatten());
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        }
    }

    #[test]
    fn training_loss_descends_on_learnable_data() {
        // Epoch-averaged loss at epoch 20 below epoch 1, for a fixed seed
        // suite; plus the generative-NLL proximity check on a longer run.
        let spec = learnable_spec(11);
        let data = gen_tme_data(&spec, 5000);
        let split = split_from_instances(data.instances);

        for seed in [1u64, 2, 3, 4, 5] {
            let config = TrainConfig {
                learning_rate: 1e-3,
                batch_size: 100,
                l2_lambda: 0.0,
                max_epochs: 20,
                ..TrainConfig::default()
            };
            let traj = train_trajectory(&config, &split, seed).unwrap();
            let last = traj.iterates.last().unwrap();
            assert!(
                last.train_loss < traj.iterates[0].train_loss,
                "seed {seed}: loss went {} -> {}",
                traj.iterates[0].train_loss,
                last.train_loss
            );
        }

        let config = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 100,
            l2_lambda: 0.0,
            max_epochs: 80,
            ..TrainConfig::default()
        };
        let traj = train_trajectory(&config, &split, 7).unwrap();
        let fitted = &traj.iterates.last().unwrap().params;
        let model_nll =
            nll_loss_impl(fitted, split.train.iter(), 0.0, true).unwrap() / split.train.len() as f64;
        let gen_nll = nll_loss_impl(&spec.truth, split.train.iter(), 0.0, true).unwrap()
            / split.train.len() as f64;
        assert!(
            model_nll <= gen_nll + 0.05 * gen_nll.abs(),
            "trained NLL {model_nll} not within 5% of generative NLL {gen_nll}"
        );
    }

    #[test]
    fn ensemble_budget_and_provenance() {
        let spec = learnable_spec(8);
        let data = gen_tme_data(&spec, 80);
        let split = split_from_instances(data.instances);

        // One trajectory, burn-in leaves exactly one candidate.
        let config = TrainConfig {
            n_trajectories: 1,
            keep_per_trajectory: 1,
            burn_in_epochs: 3,
            max_epochs: 4,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let ens = collect_ensemble(&config, &split).unwrap();
        assert_eq!(ens.size(), 1);
        assert_eq!(ens.provenance[0].epoch, 4);

        // 5 trajectories x 4 kept = 20 members; distinct seeds give distinct
        // members.
        let config = TrainConfig {
            n_trajectories: 5,
            keep_per_trajectory: 4,
            burn_in_epochs: 2,
            max_epochs: 8,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let ens = collect_ensemble(&config, &split).unwrap();
        assert_eq!(ens.size(), 20);
        let first = ens.members[0].flatten();
        assert!(ens.members.iter().any(|m| m.flatten() != first));
        // Provenance stays grouped by trajectory and ordered by epoch.
        for w in ens.provenance.windows(2) {
            assert!(w[0].trajectory <= w[1].trajectory);
            if w[0].trajectory == w[1].trajectory {
                assert!(w[0].epoch < w[1].epoch);
            }
        }
    }
}
