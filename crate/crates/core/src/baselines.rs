//! MAP matrix factorization baselines.
//!
//! Three trainers share one config and one model shape:
//!
//! * [`train_svd`]: per-interaction SGD on factors only.
//! * [`train_svd_bias`]: per-interaction SGD on a global mean, user/item biases,
//!   and factors.
//! * [`train_pmf`]: full-batch gradient descent with classical momentum on
//!   factors only.
//!
//! All of them minimize squared error with an L2 penalty. The SGD trainers apply
//! the penalty per occurrence (an interaction's factors shrink once per visit);
//! the batch trainer applies it once per epoch over the whole parameter set.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Interaction, RatingsDataset};
use crate::error::{Error, Result};
use crate::seeding::stage_seed;

/// Hyperparameters for the MAP trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    /// Number of latent dimensions.
    pub k: usize,
    pub learning_rate: f64,
    /// L2 penalty weight.
    pub regularization: f64,
    /// Momentum coefficient; used by the batch trainer only and must be zero
    /// for the SGD trainers.
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Half-width of the uniform factor initialization.
    pub init_scale: f64,
}

/// Default initialization half-width, `0.1 / sqrt(K)`, which keeps the scale of
/// an initial dot product independent of K.
pub fn default_init_scale(k: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        0.1 / (k as f64).sqrt()
    }
}

impl SgdConfig {
    /// Defaults for the SGD trainers: learning rate 0.001, penalty 0.01,
    /// 30 epochs.
    pub fn svd_defaults(k: usize) -> Self {
        Self {
            k,
            learning_rate: 0.001,
            regularization: 0.01,
            momentum: 0.0,
            epochs: 30,
            seed: 42,
            init_scale: default_init_scale(k),
        }
    }

    /// Defaults for the batch trainer: learning rate 0.005, penalty 0.01,
    /// momentum 0.9, 200 epochs.
    pub fn pmf_defaults(k: usize) -> Self {
        Self {
            k,
            learning_rate: 0.005,
            regularization: 0.01,
            momentum: 0.9,
            epochs: 200,
            seed: 42,
            init_scale: default_init_scale(k),
        }
    }

    fn validate(&self, min_k: usize, max_momentum_exclusive: f64) -> Result<()> {
        if self.k < min_k {
            return Err(Error::InvalidConfig(format!(
                "k must be at least {min_k}, got {}",
                self.k
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.regularization.is_finite() && self.regularization >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "regularization must be non-negative, got {}",
                self.regularization
            )));
        }
        if !(self.momentum.is_finite()
            && self.momentum >= 0.0
            && self.momentum < max_momentum_exclusive)
        {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, {max_momentum_exclusive}), got {}",
                self.momentum
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.k > 0 && !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "init_scale must be positive, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// Bias terms of a trained model: prediction adds
/// `global_mean + user[u] + item[i]` on top of the factor dot product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Biases {
    pub global_mean: f64,
    pub user: Vec<f64>,
    pub item: Vec<f64>,
}

/// A point-estimate factor model. Factor matrices are stored flat, row-major:
/// user `u`'s vector is `p[u*k .. (u+1)*k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub k: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub biases: Option<Biases>,
}

impl FactorModel {
    pub fn has_bias(&self) -> bool {
        self.biases.is_some()
    }

    pub fn user_factors(&self, user: u32) -> &[f64] {
        let u = user as usize;
        &self.p[u * self.k..(u + 1) * self.k]
    }

    pub fn item_factors(&self, item: u32) -> &[f64] {
        let i = item as usize;
        &self.q[i * self.k..(i + 1) * self.k]
    }

    /// Point prediction for a user-item pair.
    pub fn predict(&self, user: u32, item: u32) -> Result<f64> {
        self.check_pair(user, item)?;
        let dot: f64 = self
            .user_factors(user)
            .iter()
            .zip(self.item_factors(item))
            .map(|(a, b)| a * b)
            .sum();
        Ok(match &self.biases {
            Some(b) => b.global_mean + b.user[user as usize] + b.item[item as usize] + dot,
            None => dot,
        })
    }

    /// Prediction clamped into `[lo, hi]`, the observable rating range.
    pub fn predict_clamped(&self, user: u32, item: u32, lo: f64, hi: f64) -> Result<f64> {
        Ok(self.predict(user, item)?.clamp(lo, hi))
    }

    fn check_pair(&self, user: u32, item: u32) -> Result<()> {
        if (user as usize) >= self.num_users {
            return Err(Error::IndexOutOfBounds {
                entity: "user",
                index: user as usize,
                size: self.num_users,
            });
        }
        if (item as usize) >= self.num_items {
            return Err(Error::IndexOutOfBounds {
                entity: "item",
                index: item as usize,
                size: self.num_items,
            });
        }
        Ok(())
    }

    fn assert_finite(&self, epoch: usize) -> Result<()> {
        let finite = self.p.iter().chain(self.q.iter()).all(|v| v.is_finite())
            && self
                .biases
                .iter()
                .flat_map(|b| b.user.iter().chain(b.item.iter()))
                .all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::Diverged {
                unit: "epoch",
                at: epoch as u64,
                detail: "a parameter became non-finite".into(),
            })
        }
    }
}

/// A trained model plus the objective value recorded after every epoch.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: FactorModel,
    pub objective_trace: Vec<f64>,
}

/// The permutation in which epoch `epoch` visits the interactions.
///
/// Fisher-Yates driven by a ChaCha8 stream keyed on `(seed, epoch)`, so every
/// epoch reshuffles and the whole schedule is a pure function of the config.
pub fn epoch_permutation(seed: u64, epoch: usize, len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, epoch as u64));
    let mut order: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

fn init_model(train: &RatingsDataset, cfg: &SgdConfig, with_bias: bool) -> FactorModel {
    let m = train.num_users() as usize;
    let n = train.num_items() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = cfg.init_scale;
    // Draw order is fixed: all of P, then all of Q, row-major.
    let mut draw = |len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-s..s)).collect()
    };
    let p = draw(m * cfg.k);
    let q = draw(n * cfg.k);
    let biases = with_bias.then(|| Biases {
        global_mean: train.stats().r_mean,
        user: vec![0.0; m],
        item: vec![0.0; n],
    });
    FactorModel {
        k: cfg.k,
        num_users: m,
        num_items: n,
        p,
        q,
        biases,
    }
}

/// Squared error plus the per-occurrence L2 penalty the SGD trainers descend:
/// each interaction contributes `e^2 + reg * (|p_u|^2 + |q_i|^2 [+ b_u^2 + b_i^2])`.
pub fn sgd_objective(model: &FactorModel, data: &[Interaction], reg: f64) -> Result<f64> {
    let mut total = 0.0;
    for it in data {
        let e = it.rating - model.predict(it.user, it.item)?;
        let pu: f64 = model.user_factors(it.user).iter().map(|v| v * v).sum();
        let qi: f64 = model.item_factors(it.item).iter().map(|v| v * v).sum();
        let bias_sq = match &model.biases {
            Some(b) => {
                b.user[it.user as usize].powi(2) + b.item[it.item as usize].powi(2)
            }
            None => 0.0,
        };
        total += e * e + reg * (pu + qi + bias_sq);
    }
    Ok(total)
}

/// Squared error plus a whole-matrix L2 penalty, the batch trainer's objective:
/// `sum e^2 + reg * (|P|_F^2 + |Q|_F^2)`.
pub fn batch_objective(model: &FactorModel, data: &[Interaction], reg: f64) -> Result<f64> {
    let mut total = 0.0;
    for it in data {
        let e = it.rating - model.predict(it.user, it.item)?;
        total += e * e;
    }
    let norms: f64 = model.p.iter().chain(model.q.iter()).map(|v| v * v).sum();
    Ok(total + reg * norms)
}

/// Exact gradient of one interaction's term of the SGD objective with respect
/// to `(p_u, q_i, b_u, b_i)`. The bias components are zero for a model without
/// biases. Exposed so the update rules can be checked against finite
/// differences.
pub fn interaction_gradient(
    model: &FactorModel,
    it: &Interaction,
    reg: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
    let e = it.rating - model.predict(it.user, it.item)?;
    let pu = model.user_factors(it.user);
    let qi = model.item_factors(it.item);
    let dp: Vec<f64> = pu
        .iter()
        .zip(qi)
        .map(|(p, q)| -2.0 * e * q + 2.0 * reg * p)
        .collect();
    let dq: Vec<f64> = pu
        .iter()
        .zip(qi)
        .map(|(p, q)| -2.0 * e * p + 2.0 * reg * q)
        .collect();
    let (db_u, db_i) = match &model.biases {
        Some(b) => (
            -2.0 * e + 2.0 * reg * b.user[it.user as usize],
            -2.0 * e + 2.0 * reg * b.item[it.item as usize],
        ),
        None => (0.0, 0.0),
    };
    Ok((dp, dq, db_u, db_i))
}

/// Train factors by per-interaction SGD.
///
/// The update is the classical one, `p += lr * (e*q - reg*p)`, which steps along
/// half the exact gradient of [`sgd_objective`]; the factor of two is absorbed
/// into the learning-rate convention.
pub fn train_svd(train: &RatingsDataset, cfg: &SgdConfig) -> Result<TrainResult> {
    cfg.validate(1, f64::MIN_POSITIVE)?;
    run_sgd(train, cfg, false)
}

/// Train a global mean, user/item biases, and factors by per-interaction SGD.
///
/// The global mean is fixed to the training mean; biases update as
/// `b += lr * (e - reg*b)`. `k == 0` is allowed and trains biases alone.
pub fn train_svd_bias(train: &RatingsDataset, cfg: &SgdConfig) -> Result<TrainResult> {
    cfg.validate(0, f64::MIN_POSITIVE)?;
    run_sgd(train, cfg, true)
}

fn run_sgd(train: &RatingsDataset, cfg: &SgdConfig, with_bias: bool) -> Result<TrainResult> {
    let mut model = init_model(train, cfg, with_bias);
    let data = train.interactions();
    let k = cfg.k;
    let (lr, reg) = (cfg.learning_rate, cfg.regularization);
    let mut objective_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        for &idx in &epoch_permutation(cfg.seed, epoch, data.len()) {
            let it = &data[idx];
            let (u, i) = (it.user as usize, it.item as usize);
            let e = it.rating - model.predict(it.user, it.item)?;
            if let Some(b) = &mut model.biases {
                let bu = b.user[u];
                let bi = b.item[i];
                b.user[u] += lr * (e - reg * bu);
                b.item[i] += lr * (e - reg * bi);
            }
            for d in 0..k {
                let p = model.p[u * k + d];
                let q = model.q[i * k + d];
                model.p[u * k + d] += lr * (e * q - reg * p);
                model.q[i * k + d] += lr * (e * p - reg * q);
            }
        }
        model.assert_finite(epoch)?;
        let objective = sgd_objective(&model, data, reg)?;
        if !objective.is_finite() {
            return Err(Error::Diverged {
                unit: "epoch",
                at: epoch as u64,
                detail: format!("objective became {objective}"),
            });
        }
        objective_trace.push(objective);
    }
    Ok(TrainResult {
        model,
        objective_trace,
    })
}

/// Train factors by full-batch gradient descent with classical momentum:
/// `v = momentum*v + g; theta -= lr*v`, where `g` is half the exact gradient of
/// [`batch_objective`] (same learning-rate convention as the SGD trainers).
pub fn train_pmf(train: &RatingsDataset, cfg: &SgdConfig) -> Result<TrainResult> {
    cfg.validate(1, 1.0)?;
    let mut model = init_model(train, cfg, false);
    let data = train.interactions();
    let k = cfg.k;
    let (lr, reg, mu) = (cfg.learning_rate, cfg.regularization, cfg.momentum);
    let mut vel_p = vec![0.0; model.p.len()];
    let mut vel_q = vec![0.0; model.q.len()];
    let mut objective_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut grad_p = vec![0.0; model.p.len()];
        let mut grad_q = vec![0.0; model.q.len()];
        for it in data {
            let (u, i) = (it.user as usize, it.item as usize);
            let e = it.rating - model.predict(it.user, it.item)?;
            for d in 0..k {
                grad_p[u * k + d] -= e * model.q[i * k + d];
                grad_q[i * k + d] -= e * model.p[u * k + d];
            }
        }
        for (g, p) in grad_p.iter_mut().zip(&model.p) {
            *g += reg * p;
        }
        for (g, q) in grad_q.iter_mut().zip(&model.q) {
            *g += reg * q;
        }
        for (v, g) in vel_p.iter_mut().zip(&grad_p) {
            *v = mu * *v + g;
        }
        for (v, g) in vel_q.iter_mut().zip(&grad_q) {
            *v = mu * *v + g;
        }
        for (p, v) in model.p.iter_mut().zip(&vel_p) {
            *p -= lr * v;
        }
        for (q, v) in model.q.iter_mut().zip(&vel_q) {
            *q -= lr * v;
        }

        model.assert_finite(epoch)?;
        let objective = batch_objective(&model, data, reg)?;
        if !objective.is_finite() {
            return Err(Error::Diverged {
                unit: "epoch",
                at: epoch as u64,
                detail: format!("objective became {objective}"),
            });
        }
        objective_trace.push(objective);
    }
    Ok(TrainResult {
        model,
        objective_trace,
    })
}
