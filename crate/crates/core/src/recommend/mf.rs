//! Biased explicit-rating matrix factorization trained by SGD:
//! `r̂ = μ + b_u + b_i + p_u·q_i`, with `μ` fixed to the training mean.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FactorModel, FitContext, ModelKind};
use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MfConfig {
    pub dim: usize,
    pub epochs: usize,
    pub reg: f64,
    pub lr: f64,
    pub init_std: f64,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            epochs: 20,
            reg: 0.02,
            lr: 0.005,
            init_std: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfParams {
    pub mu: f64,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub p: Mat,
    pub q: Mat,
}

impl MfParams {
    pub fn predict(&self, u: usize, i: usize) -> f64 {
        self.mu + self.user_bias[u] + self.item_bias[i] + dot(self.p.row(u), self.q.row(i))
    }
}

/// `½ Σ [(r - r̂)² + reg (b_u² + b_i² + ‖p_u‖² + ‖q_i‖²)]` over rated
/// triples; the per-sample regularizer matches the SGD update.
pub fn mf_loss(params: &MfParams, ratings: &[(usize, usize, f64)], reg: f64) -> f64 {
    ratings
        .iter()
        .map(|&(u, i, r)| {
            let e = r - params.predict(u, i);
            let pen = params.user_bias[u].powi(2)
                + params.item_bias[i].powi(2)
                + dot(params.p.row(u), params.p.row(u))
                + dot(params.q.row(i), params.q.row(i));
            0.5 * (e * e + reg * pen)
        })
        .sum()
}

/// Analytic gradient of [`mf_loss`] (μ is not a parameter).
pub fn mf_loss_grad(params: &MfParams, ratings: &[(usize, usize, f64)], reg: f64) -> MfParams {
    let mut g = MfParams {
        mu: 0.0,
        user_bias: vec![0.0; params.user_bias.len()],
        item_bias: vec![0.0; params.item_bias.len()],
        p: Mat::zeros(params.p.rows, params.p.cols),
        q: Mat::zeros(params.q.rows, params.q.cols),
    };
    for &(u, i, r) in ratings {
        let e = r - params.predict(u, i);
        g.user_bias[u] += -e + reg * params.user_bias[u];
        g.item_bias[i] += -e + reg * params.item_bias[i];
        for k in 0..params.p.cols {
            let (pu, qi) = (params.p.at(u, k), params.q.at(i, k));
            *g.p.at_mut(u, k) += -e * qi + reg * pu;
            *g.q.at_mut(i, k) += -e * pu + reg * qi;
        }
    }
    g
}

fn sgd_step(params: &mut MfParams, u: usize, i: usize, r: f64, cfg: &MfConfig) {
    let e = r - params.predict(u, i);
    params.user_bias[u] += cfg.lr * (e - cfg.reg * params.user_bias[u]);
    params.item_bias[i] += cfg.lr * (e - cfg.reg * params.item_bias[i]);
    for k in 0..params.p.cols {
        let (pu, qi) = (params.p.at(u, k), params.q.at(i, k));
        *params.p.at_mut(u, k) += cfg.lr * (e * qi - cfg.reg * pu);
        *params.q.at_mut(i, k) += cfg.lr * (e * pu - cfg.reg * qi);
    }
}

pub fn fit_explicit_mf(ctx: &FitContext, cfg: &MfConfig) -> Result<(FactorModel, MfParams)> {
    let mut ratings: Vec<(usize, usize, f64)> = ctx
        .train
        .interactions
        .iter()
        .filter_map(|it| it.rating.map(|r| (it.user, it.book, r)))
        .collect();
    if ratings.is_empty() {
        return Err(Error::NoRatings);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mu = ratings.iter().map(|x| x.2).sum::<f64>() / ratings.len() as f64;
    let mut params = MfParams {
        mu,
        user_bias: vec![0.0; ctx.train.num_users],
        item_bias: vec![0.0; ctx.train.num_books],
        p: Mat::normal(ctx.train.num_users, cfg.dim, cfg.init_std, &mut rng),
        q: Mat::normal(ctx.train.num_books, cfg.dim, cfg.init_std, &mut rng),
    };
    for epoch in 0..cfg.epochs {
        ratings.shuffle(&mut rng);
        for &(u, i, r) in &ratings {
            sgd_step(&mut params, u, i, r, cfg);
        }
        if !params.p.is_finite() || !params.q.is_finite() {
            return Err(Error::Diverged {
                model: "explicit_mf".into(),
                detail: format!("non-finite factors after epoch {epoch}"),
            });
        }
    }
    let mut model = FactorModel::new(ModelKind::ExplicitMf, params.p.clone(), params.q.clone());
    model.global_bias = params.mu;
    model.user_bias = Some(params.user_bias.clone());
    model.item_bias = Some(params.item_bias.clone());
    model
        .extra
        .hparam("dim", cfg.dim as f64)
        .hparam("epochs", cfg.epochs as f64)
        .hparam("reg", cfg.reg)
        .hparam("lr", cfg.lr)
        .hparam("seed", ctx.seed as f64);
    Ok((model, params))
}
