//! Mean-field variational inference for Bayesian matrix factorization.
//!
//! The model places independent Gaussian priors on every factor entry (and,
//! optionally, on user/item bias terms) and observes ratings through a Gaussian
//! likelihood centered on the factor dot product. The posterior is approximated
//! by a fully factorized Gaussian family, one `(mean, log-std)` pair per scalar
//! parameter. Because everything is Gaussian, both the evidence lower bound and
//! its gradient have closed forms; training is plain full-batch gradient ascent
//! with a safeguard that halves the step size whenever a checkpoint sees the
//! bound decrease.
//!
//! The log-std parametrization keeps standard deviations positive without
//! constraints and stays numerically defined even when the variance underflows.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Interaction, RatingsDataset};
use crate::error::{Error, Result};

/// Prior and likelihood scales of the Bayesian model.
///
/// Factor entries get `N(factor_mean, factor_var)` priors, optionally overridden
/// per latent dimension; bias terms get `N(0, bias_var)`; ratings are observed
/// with noise variance `noise_var`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub factor_mean: f64,
    pub factor_var: f64,
    pub bias_var: f64,
    pub noise_var: f64,
    /// Per-dimension prior means for factor entries; overrides `factor_mean`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_mean_by_dim: Option<Vec<f64>>,
    /// Per-dimension prior variances for factor entries; overrides `factor_var`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_var_by_dim: Option<Vec<f64>>,
}

impl PriorSpec {
    /// The hyperparameter choice used throughout the experiments: zero-mean
    /// factor priors whose variance, the bias variance, and the noise variance
    /// all equal the training-set mean rating.
    pub fn from_mean_rating(r_mean: f64) -> Result<Self> {
        if !(r_mean.is_finite() && r_mean > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "mean rating must be positive to serve as a variance, got {r_mean}"
            )));
        }
        Ok(Self {
            factor_mean: 0.0,
            factor_var: r_mean,
            bias_var: r_mean,
            noise_var: r_mean,
            factor_mean_by_dim: None,
            factor_var_by_dim: None,
        })
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        for (name, v) in [
            ("factor_var", self.factor_var),
            ("bias_var", self.bias_var),
            ("noise_var", self.noise_var),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !self.factor_mean.is_finite() {
            return Err(Error::InvalidConfig("factor_mean must be finite".into()));
        }
        if let Some(means) = &self.factor_mean_by_dim {
            if means.len() != k {
                return Err(Error::InvalidConfig(format!(
                    "factor_mean_by_dim has {} entries for k = {k}",
                    means.len()
                )));
            }
            if means.iter().any(|m| !m.is_finite()) {
                return Err(Error::InvalidConfig(
                    "factor_mean_by_dim entries must be finite".into(),
                ));
            }
        }
        if let Some(vars) = &self.factor_var_by_dim {
            if vars.len() != k {
                return Err(Error::InvalidConfig(format!(
                    "factor_var_by_dim has {} entries for k = {k}",
                    vars.len()
                )));
            }
            if vars.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidConfig(
                    "factor_var_by_dim entries must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Prior `(mean, var)` for factor dimension `d`, honoring overrides.
    fn factor_prior(&self, d: usize) -> (f64, f64) {
        let mean = self
            .factor_mean_by_dim
            .as_ref()
            .map_or(self.factor_mean, |m| m[d]);
        let var = self
            .factor_var_by_dim
            .as_ref()
            .map_or(self.factor_var, |v| v[d]);
        (mean, var)
    }
}

/// Settings for a variational inference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViConfig {
    /// Number of latent dimensions. Zero is allowed with `with_bias`, giving a
    /// bias-only model.
    pub k: usize,
    /// Gradient ascent iterations (each one is a full pass over the data).
    pub iterations: u64,
    /// Initial ascent step size; halved whenever a checkpoint ELBO decreases.
    pub step_size: f64,
    /// Sample count for Monte Carlo prediction.
    pub mc_samples: usize,
    pub seed: u64,
    /// Include user/item bias terms (and the global-mean offset).
    pub with_bias: bool,
    /// Checkpoint cadence, in iterations, for the ELBO trace and the step-size
    /// safeguard.
    pub eval_every: u64,
}

impl Default for ViConfig {
    fn default() -> Self {
        Self::defaults(8, false)
    }
}

impl ViConfig {
    /// Experiment defaults: 10000 iterations, step size 0.01, 2000 prediction
    /// samples, checkpoint every 100 iterations.
    pub fn defaults(k: usize, with_bias: bool) -> Self {
        Self {
            k,
            iterations: 10_000,
            step_size: 0.01,
            mc_samples: 2000,
            seed: 42,
            with_bias,
            eval_every: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 && !self.with_bias {
            return Err(Error::InvalidConfig(
                "k = 0 requires with_bias; the model would have no parameters".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidConfig("mc_samples must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Variational parameters of the bias terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasPosterior {
    pub user_mean: Vec<f64>,
    pub user_logstd: Vec<f64>,
    pub item_mean: Vec<f64>,
    pub item_logstd: Vec<f64>,
}

/// A fully factorized Gaussian posterior over all model parameters.
///
/// Factor tables are flat and row-major like [`crate::baselines::FactorModel`]:
/// user `u`, dimension `d` lives at `p_mean[u*k + d]`. Each scalar carries a
/// mean and the natural log of its standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalPosterior {
    pub k: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub p_mean: Vec<f64>,
    pub p_logstd: Vec<f64>,
    pub q_mean: Vec<f64>,
    pub q_logstd: Vec<f64>,
    pub bias: Option<BiasPosterior>,
    /// Training mean rating; enters predictions only when biases are present.
    pub global_mean: f64,
    pub prior: PriorSpec,
}

/// ELBO gradient; same layout as the posterior it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasGradient {
    pub user_mean: Vec<f64>,
    pub user_logstd: Vec<f64>,
    pub item_mean: Vec<f64>,
    pub item_logstd: Vec<f64>,
}

/// Gradient of the ELBO with respect to every variational parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGradient {
    pub p_mean: Vec<f64>,
    pub p_logstd: Vec<f64>,
    pub q_mean: Vec<f64>,
    pub q_logstd: Vec<f64>,
    pub bias: Option<BiasGradient>,
}

/// How [`VariationalPosterior::predict_expected`] integrates over the posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictMode {
    /// Closed-form posterior mean of the rating.
    Analytic,
    /// Average of `samples` posterior draws from the given stream.
    MonteCarlo { samples: usize, seed: u64 },
}

/// One checkpoint of a fit: the iteration and the ELBO before its update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: u64,
    pub elbo: f64,
}

/// Result of [`fit_vi`]: the fitted posterior and the checkpointed ELBO trace.
/// The trace always contains iteration 0 and a final entry evaluated after the
/// last update.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub posterior: VariationalPosterior,
    pub trace: Vec<TracePoint>,
}

/// KL divergence between two univariate Gaussians given as (mean, variance).
pub fn kl_gaussian(q_mean: f64, q_var: f64, p_mean: f64, p_var: f64) -> Result<f64> {
    for v in [q_var, p_var] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::NonPositiveVariance(v));
        }
    }
    let ratio = q_var / p_var;
    Ok(0.5 * (ratio + (q_mean - p_mean).powi(2) / p_var - 1.0 - ratio.ln()))
}

/// KL of `N(mean, exp(logstd)^2)` from `N(prior_mean, prior_var)`.
///
/// Same quantity as [`kl_gaussian`], but written in the log-std parametrization
/// so it stays finite even when the variance underflows to zero.
fn kl_logstd(mean: f64, logstd: f64, prior_mean: f64, prior_var: f64) -> f64 {
    let var = (2.0 * logstd).exp();
    0.5 * ((var + (mean - prior_mean).powi(2)) / prior_var - 1.0 + prior_var.ln()) - logstd
}

/// Initialize a posterior: means uniform in (-0.05, 0.05), standard deviations
/// at one tenth of the prior scale (so the fit starts confident relative to the
/// prior but far from collapsed).
///
/// Draw order is fixed: user factor means, item factor means, then (with bias)
/// user and item bias means.
pub fn init_posterior(
    num_users: usize,
    num_items: usize,
    cfg: &ViConfig,
    prior: &PriorSpec,
    global_mean: f64,
) -> Result<VariationalPosterior> {
    cfg.validate()?;
    prior.validate(cfg.k)?;
    let k = cfg.k;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw_means = |len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-0.05..0.05)).collect()
    };
    let p_mean = draw_means(num_users * k);
    let q_mean = draw_means(num_items * k);
    let bias_means = cfg
        .with_bias
        .then(|| (draw_means(num_users), draw_means(num_items)));

    let factor_logstd: Vec<f64> = (0..k)
        .map(|d| (0.1 * prior.factor_prior(d).1.sqrt()).ln())
        .collect();
    let tile = |len: usize| -> Vec<f64> {
        (0..len).map(|idx| factor_logstd[idx % k.max(1)]).collect()
    };
    let p_logstd = tile(num_users * k);
    let q_logstd = tile(num_items * k);

    let bias = bias_means.map(|(user_mean, item_mean)| {
        let logstd = (0.1 * prior.bias_var.sqrt()).ln();
        BiasPosterior {
            user_logstd: vec![logstd; user_mean.len()],
            item_logstd: vec![logstd; item_mean.len()],
            user_mean,
            item_mean,
        }
    });

    Ok(VariationalPosterior {
        k,
        num_users,
        num_items,
        p_mean,
        p_logstd,
        q_mean,
        q_logstd,
        bias,
        global_mean,
        prior: prior.clone(),
    })
}

/// Per-scalar variances, materialized once per pass so the exponentials are not
/// recomputed for every interaction.
struct VarTables {
    p: Vec<f64>,
    q: Vec<f64>,
    bias_user: Vec<f64>,
    bias_item: Vec<f64>,
}

impl VariationalPosterior {
    pub fn has_bias(&self) -> bool {
        self.bias.is_some()
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

    fn var_tables(&self) -> VarTables {
        let sq = |ls: &[f64]| ls.iter().map(|l| (2.0 * l).exp()).collect::<Vec<f64>>();
        VarTables {
            p: sq(&self.p_logstd),
            q: sq(&self.q_logstd),
            bias_user: self.bias.as_ref().map(|b| sq(&b.user_logstd)).unwrap_or_default(),
            bias_item: self.bias.as_ref().map(|b| sq(&b.item_logstd)).unwrap_or_default(),
        }
    }

    /// Posterior mean and variance of the score `s(u, i)` whose noisy version
    /// is the observed rating.
    ///
    /// With independent factors the mean is the dot product of mean vectors and
    /// the variance sums `mp^2*vq + mq^2*vp + vp*vq` over dimensions; bias terms
    /// add their means and variances on top.
    pub fn moments(&self, user: u32, item: u32) -> Result<(f64, f64)> {
        self.check_pair(user, item)?;
        let tables = self.var_tables();
        Ok(self.moments_with(&tables, user, item))
    }

    fn moments_with(&self, tables: &VarTables, user: u32, item: u32) -> (f64, f64) {
        let (u, i) = (user as usize, item as usize);
        let k = self.k;
        let mut mean = 0.0;
        let mut var = 0.0;
        for d in 0..k {
            let mp = self.p_mean[u * k + d];
            let mq = self.q_mean[i * k + d];
            let vp = tables.p[u * k + d];
            let vq = tables.q[i * k + d];
            mean += mp * mq;
            var += mp * mp * vq + mq * mq * vp + vp * vq;
        }
        if let Some(b) = &self.bias {
            mean += self.global_mean + b.user_mean[u] + b.item_mean[i];
            var += tables.bias_user[u] + tables.bias_item[i];
        }
        (mean, var)
    }

    /// Posterior expectation of the squared residual `(r - s)^2`, which splits
    /// into squared bias plus score variance: `(r - E[s])^2 + Var[s]`.
    pub fn expected_sq_err(&self, user: u32, item: u32, rating: f64) -> Result<f64> {
        let (mean, var) = self.moments(user, item)?;
        Ok((rating - mean).powi(2) + var)
    }

    /// Expected log likelihood of `data` under the posterior (the data term of
    /// the ELBO).
    pub fn expected_log_likelihood(&self, data: &[Interaction]) -> Result<f64> {
        for it in data {
            self.check_pair(it.user, it.item)?;
        }
        let tables = self.var_tables();
        let noise = self.prior.noise_var;
        let log_norm = -0.5 * (2.0 * std::f64::consts::PI * noise).ln();
        let mut total = 0.0;
        for it in data {
            let (mean, var) = self.moments_with(&tables, it.user, it.item);
            let resid = (it.rating - mean).powi(2) + var;
            total += log_norm - resid / (2.0 * noise);
        }
        Ok(total)
    }

    /// KL divergence from the posterior to the prior, summed over every scalar.
    pub fn kl_to_prior(&self) -> f64 {
        let k = self.k;
        let mut total = 0.0;
        for (table_mean, table_logstd) in [
            (&self.p_mean, &self.p_logstd),
            (&self.q_mean, &self.q_logstd),
        ] {
            for (idx, (&m, &l)) in table_mean.iter().zip(table_logstd.iter()).enumerate() {
                let (pm, pv) = self.prior.factor_prior(idx % k.max(1));
                total += kl_logstd(m, l, pm, pv);
            }
        }
        if let Some(b) = &self.bias {
            for (means, logstds) in [
                (&b.user_mean, &b.user_logstd),
                (&b.item_mean, &b.item_logstd),
            ] {
                for (&m, &l) in means.iter().zip(logstds.iter()) {
                    total += kl_logstd(m, l, 0.0, self.prior.bias_var);
                }
            }
        }
        total
    }

    /// The evidence lower bound on `data`: expected log likelihood minus the KL
    /// penalty. For an empty slice this is exactly `-kl_to_prior()`.
    pub fn elbo(&self, data: &[Interaction]) -> Result<f64> {
        Ok(self.expected_log_likelihood(data)? - self.kl_to_prior())
    }

    /// ELBO and its gradient in one pass over the data.
    pub fn elbo_and_gradient(&self, data: &[Interaction]) -> Result<(f64, PosteriorGradient)> {
        for it in data {
            self.check_pair(it.user, it.item)?;
        }
        let k = self.k;
        let tables = self.var_tables();
        let noise = self.prior.noise_var;
        let log_norm = -0.5 * (2.0 * std::f64::consts::PI * noise).ln();

        let mut grad = PosteriorGradient {
            p_mean: vec![0.0; self.p_mean.len()],
            p_logstd: vec![0.0; self.p_logstd.len()],
            q_mean: vec![0.0; self.q_mean.len()],
            q_logstd: vec![0.0; self.q_logstd.len()],
            bias: self.bias.as_ref().map(|b| BiasGradient {
                user_mean: vec![0.0; b.user_mean.len()],
                user_logstd: vec![0.0; b.user_logstd.len()],
                item_mean: vec![0.0; b.item_mean.len()],
                item_logstd: vec![0.0; b.item_logstd.len()],
            }),
        };

        let mut ell = 0.0;
        for it in data {
            let (u, i) = (it.user as usize, it.item as usize);
            let (mean, var) = self.moments_with(&tables, it.user, it.item);
            let err = it.rating - mean;
            ell += log_norm - (err * err + var) / (2.0 * noise);

            for d in 0..k {
                let (up, iq) = (u * k + d, i * k + d);
                let mp = self.p_mean[up];
                let mq = self.q_mean[iq];
                let vp = tables.p[up];
                let vq = tables.q[iq];
                grad.p_mean[up] += (err * mq - mp * vq) / noise;
                grad.q_mean[iq] += (err * mp - mq * vp) / noise;
                grad.p_logstd[up] -= vp * (mq * mq + vq) / noise;
                grad.q_logstd[iq] -= vq * (mp * mp + vp) / noise;
            }
            if let Some(bg) = &mut grad.bias {
                bg.user_mean[u] += err / noise;
                bg.item_mean[i] += err / noise;
                bg.user_logstd[u] -= tables.bias_user[u] / noise;
                bg.item_logstd[i] -= tables.bias_item[i] / noise;
            }
        }

        // KL penalty: value and gradient. For a Gaussian in log-std form,
        // d(KL)/d(mean) = (mean - prior_mean) / prior_var and
        // d(KL)/d(logstd) = var / prior_var - 1.
        let mut kl = 0.0;
        for (table_mean, table_logstd, g_mean, g_logstd, vars) in [
            (
                &self.p_mean,
                &self.p_logstd,
                &mut grad.p_mean,
                &mut grad.p_logstd,
                &tables.p,
            ),
            (
                &self.q_mean,
                &self.q_logstd,
                &mut grad.q_mean,
                &mut grad.q_logstd,
                &tables.q,
            ),
        ] {
            for idx in 0..table_mean.len() {
                let (pm, pv) = self.prior.factor_prior(idx % k.max(1));
                kl += kl_logstd(table_mean[idx], table_logstd[idx], pm, pv);
                g_mean[idx] -= (table_mean[idx] - pm) / pv;
                g_logstd[idx] -= vars[idx] / pv - 1.0;
            }
        }
        if let (Some(b), Some(bg)) = (&self.bias, &mut grad.bias) {
            let pv = self.prior.bias_var;
            for (means, logstds, g_mean, g_logstd, vars) in [
                (
                    &b.user_mean,
                    &b.user_logstd,
                    &mut bg.user_mean,
                    &mut bg.user_logstd,
                    &tables.bias_user,
                ),
                (
                    &b.item_mean,
                    &b.item_logstd,
                    &mut bg.item_mean,
                    &mut bg.item_logstd,
                    &tables.bias_item,
                ),
            ] {
                for idx in 0..means.len() {
                    kl += kl_logstd(means[idx], logstds[idx], 0.0, pv);
                    g_mean[idx] -= means[idx] / pv;
                    g_logstd[idx] -= vars[idx] / pv - 1.0;
                }
            }
        }

        Ok((ell - kl, grad))
    }

    /// Gradient of the ELBO with respect to every variational parameter.
    pub fn elbo_gradient(&self, data: &[Interaction]) -> Result<PosteriorGradient> {
        Ok(self.elbo_and_gradient(data)?.1)
    }

    /// Draw `n` independent rating predictions from the posterior predictive
    /// mean (noise excluded): each draw samples every factor (and bias) scalar
    /// and evaluates the score.
    pub fn sample_predictions(
        &self,
        user: u32,
        item: u32,
        n: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        self.check_pair(user, item)?;
        let (u, i) = (user as usize, item as usize);
        let k = self.k;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut score = 0.0;
            for d in 0..k {
                let zp: f64 = rng.sample(StandardNormal);
                let zq: f64 = rng.sample(StandardNormal);
                let p = self.p_mean[u * k + d] + self.p_logstd[u * k + d].exp() * zp;
                let q = self.q_mean[i * k + d] + self.q_logstd[i * k + d].exp() * zq;
                score += p * q;
            }
            if let Some(b) = &self.bias {
                let zu: f64 = rng.sample(StandardNormal);
                let zi: f64 = rng.sample(StandardNormal);
                score += self.global_mean
                    + b.user_mean[u]
                    + b.user_logstd[u].exp() * zu
                    + b.item_mean[i]
                    + b.item_logstd[i].exp() * zi;
            }
            out.push(score);
        }
        Ok(out)
    }

    /// Posterior-expected rating, either in closed form or by Monte Carlo.
    pub fn predict_expected(&self, user: u32, item: u32, mode: PredictMode) -> Result<f64> {
        match mode {
            PredictMode::Analytic => Ok(self.moments(user, item)?.0),
            PredictMode::MonteCarlo { samples, seed } => {
                if samples == 0 {
                    return Err(Error::InvalidConfig(
                        "Monte Carlo prediction needs at least one sample".into(),
                    ));
                }
                let draws = self.sample_predictions(user, item, samples, seed)?;
                Ok(draws.iter().sum::<f64>() / samples as f64)
            }
        }
    }

    /// [`Self::predict_expected`] clamped into the observable rating range.
    pub fn predict_clamped(
        &self,
        user: u32,
        item: u32,
        mode: PredictMode,
        lo: f64,
        hi: f64,
    ) -> Result<f64> {
        Ok(self.predict_expected(user, item, mode)?.clamp(lo, hi))
    }

    fn apply_step(&mut self, grad: &PosteriorGradient, step: f64) {
        let ascend = |params: &mut [f64], g: &[f64]| {
            for (p, g) in params.iter_mut().zip(g) {
                *p += step * g;
            }
        };
        ascend(&mut self.p_mean, &grad.p_mean);
        ascend(&mut self.p_logstd, &grad.p_logstd);
        ascend(&mut self.q_mean, &grad.q_mean);
        ascend(&mut self.q_logstd, &grad.q_logstd);
        if let (Some(b), Some(bg)) = (&mut self.bias, &grad.bias) {
            ascend(&mut b.user_mean, &bg.user_mean);
            ascend(&mut b.user_logstd, &bg.user_logstd);
            ascend(&mut b.item_mean, &bg.item_mean);
            ascend(&mut b.item_logstd, &bg.item_logstd);
        }
    }
}

/// Fit a posterior to the training set by full-batch gradient ascent on the
/// ELBO.
///
/// Every `eval_every` iterations the ELBO is checkpointed into the trace; if a
/// checkpoint comes out below the previous one the step size is halved before
/// continuing. A non-finite ELBO aborts with a divergence error naming the
/// iteration.
pub fn fit_vi(
    train: &RatingsDataset,
    cfg: &ViConfig,
    prior: &PriorSpec,
) -> Result<FitOutcome> {
    let mut posterior = init_posterior(
        train.num_users() as usize,
        train.num_items() as usize,
        cfg,
        prior,
        train.stats().r_mean,
    )?;
    let data = train.interactions();
    let mut step = cfg.step_size;
    let mut trace = Vec::new();
    let mut last_checkpoint: Option<f64> = None;

    for iteration in 0..cfg.iterations {
        let (elbo, grad) = posterior.elbo_and_gradient(data)?;
        if !elbo.is_finite() {
            return Err(Error::Diverged {
                unit: "iteration",
                at: iteration,
                detail: format!("ELBO became {elbo}"),
            });
        }
        if iteration % cfg.eval_every == 0 {
            if let Some(prev) = last_checkpoint {
                if elbo < prev {
                    step *= 0.5;
                }
            }
            last_checkpoint = Some(elbo);
            trace.push(TracePoint { iteration, elbo });
        }
        posterior.apply_step(&grad, step);
    }

    let final_elbo = posterior.elbo(data)?;
    if !final_elbo.is_finite() {
        return Err(Error::Diverged {
            unit: "iteration",
            at: cfg.iterations,
            detail: format!("ELBO became {final_elbo}"),
        });
    }
    trace.push(TracePoint {
        iteration: cfg.iterations,
        elbo: final_elbo,
    });
    Ok(FitOutcome { posterior, trace })
}
