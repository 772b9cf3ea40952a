//! LightGCN: parameter-free propagation over the normalized user–book
//! bipartite graph, trained with BPR.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::autograd::{SpMat, Tape};
use super::bpr_triples;
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::recommend::{FactorModel, FitContext, ModelKind};
use crate::sparse::TrainSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LightGcnConfig {
    pub dim: usize,
    pub layers: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub reg: f64,
    pub init_std: f64,
}

impl Default for LightGcnConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            lr: 0.01,
            epochs: 10,
            batch: 4096,
            reg: 1e-4,
            init_std: 0.1,
        }
    }
}

/// Symmetric `(U+I)×(U+I)` matrix with `1/√(deg u · deg i)` on every
/// training edge. Users occupy rows `0..U`, books `U..U+I`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    pub num_users: usize,
    pub num_books: usize,
    pub matrix: SpMat,
}

pub fn build_norm_adjacency(train: &TrainSet) -> NormalizedAdjacency {
    let m = &train.matrix;
    let (nu, nb) = (m.num_users, m.num_books);
    let mut t = Vec::with_capacity(2 * m.nnz());
    for u in 0..nu {
        let du = m.rows[u].len() as f64;
        for b in m.user_items(u) {
            let w = 1.0 / (du * m.cols[b].len() as f64).sqrt();
            t.push((u, nu + b, w));
            t.push((nu + b, u, w));
        }
    }
    NormalizedAdjacency {
        num_users: nu,
        num_books: nb,
        matrix: SpMat::from_triplets(nu + nb, nu + nb, t),
    }
}

/// Mean of `E⁰, ÂE⁰, …, Â^L E⁰`.
pub fn propagate(adj: &SpMat, e0: &Mat, layers: usize) -> Mat {
    let mut acc = e0.clone();
    let mut cur = e0.clone();
    for _ in 0..layers {
        cur = adj.mul(&cur);
        acc.add_assign(&cur);
    }
    acc.scale(1.0 / (layers + 1) as f64);
    acc
}

pub fn fit_lightgcn(ctx: &FitContext, cfg: &LightGcnConfig) -> Result<FactorModel> {
    if cfg.dim == 0 || cfg.batch == 0 {
        return Err(Error::Config(
            "lightgcn dim and batch must be positive".into(),
        ));
    }
    let t = ctx.train;
    let (nu, nb) = (t.num_users, t.num_books);
    let adj = Rc::new(build_norm_adjacency(t).matrix);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut params = vec![Mat::normal(nu + nb, cfg.dim, cfg.init_std, &mut rng)];
    let mut opt = Adam::new(cfg.lr);
    let seen: Vec<Vec<usize>> = (0..nu).map(|u| t.seen(u)).collect();
    for epoch in 0..cfg.epochs {
        let triples = bpr_triples(t, &seen, &mut rng);
        for chunk in triples.chunks(cfg.batch) {
            let us: Vec<usize> = chunk.iter().map(|x| x.0).collect();
            let is: Vec<usize> = chunk.iter().map(|x| nu + x.1).collect();
            let js: Vec<usize> = chunk.iter().map(|x| nu + x.2).collect();
            let mut tape = Tape::new();
            let e0 = tape.leaf(params[0].clone());
            let mut acc = e0;
            let mut cur = e0;
            for _ in 0..cfg.layers {
                cur = tape.spmm(adj.clone(), cur);
                acc = tape.add(acc, cur);
            }
            let fin = tape.scale(acc, 1.0 / (cfg.layers + 1) as f64);
            let (zu, zi, zj) = (
                tape.gather(fin, &us),
                tape.gather(fin, &is),
                tape.gather(fin, &js),
            );
            let pos = tape.row_dot(zu, zi);
            let neg = tape.row_dot(zu, zj);
            let bpr = tape.bpr(pos, neg);
            let raw: Vec<usize> = us.iter().chain(&is).chain(&js).copied().collect();
            let rows = tape.gather(e0, &raw);
            let sq = tape.sum_sq(rows);
            let pen = tape.scale(sq, 0.5 * cfg.reg / chunk.len() as f64);
            let loss = tape.add(bpr, pen);
            let l = tape.scalar(loss);
            if !l.is_finite() {
                return Err(Error::Diverged {
                    model: "lightgcn".into(),
                    detail: format!("loss {l} at epoch {epoch}"),
                });
            }
            let mut g = tape.backward(loss);
            opt.step(&mut params, &[g.take(e0)]);
        }
    }
    let fin = propagate(&adj, &params[0], cfg.layers);
    let users = Mat::from_vec(nu, cfg.dim, fin.data[..nu * cfg.dim].to_vec());
    let items = Mat::from_vec(nb, cfg.dim, fin.data[nu * cfg.dim..].to_vec());
    let mut model = FactorModel::new(ModelKind::Lightgcn, users, items);
    model
        .extra
        .hparam("dim", cfg.dim as f64)
        .hparam("layers", cfg.layers as f64)
        .hparam("lr", cfg.lr)
        .hparam("epochs", cfg.epochs as f64)
        .hparam("batch", cfg.batch as f64)
        .hparam("reg", cfg.reg)
        .hparam("seed", ctx.seed as f64);
    model.extra.put_mat("embedding", &params[0]);
    Ok(model)
}
