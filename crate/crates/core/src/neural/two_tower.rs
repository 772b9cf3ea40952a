//! Two-tower retrieval. The item tower encodes
//! `[e_i; p_i; a_i; c_i; n_i; t_i]`, the user tower `[e_u; h_u]` with `h_u`
//! the mean item embedding over recent history. Both end in an L2
//! normalization, so scores are cosines.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::autograd::{SpMat, Tape, Var};
use super::optim::{Adam, Params};
use super::{interaction_weight, validation_at_10, AblationFlags};
use crate::error::{Error, Result};
use crate::features::{CatalogStats, FeatureStore, NUMERIC_DIM};
use crate::graph::BookGraph;
use crate::linalg::Mat;
use crate::recommend::{FactorModel, FitContext, ModelKind};
use crate::sparse::TrainSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TowerConfig {
    pub id_dim: usize,
    pub text_proj_dim: usize,
    pub out_dim: usize,
    pub hidden: usize,
    /// Linear layers per tower MLP.
    pub layers: usize,
    pub dropout: f64,
    pub layer_norm: bool,
    pub max_history: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub tau: f64,
    pub init_std: f64,
}

impl Default for TowerConfig {
    fn default() -> Self {
        Self {
            id_dim: 128,
            text_proj_dim: 256,
            out_dim: 256,
            hidden: 256,
            layers: 2,
            dropout: 0.1,
            layer_norm: true,
            max_history: 50,
            batch: 256,
            epochs: 20,
            lr: 5e-4,
            weight_decay: 1e-5,
            patience: 4,
            tau: 0.05,
            init_std: 0.01,
        }
    }
}

impl TowerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.id_dim,
            self.text_proj_dim,
            self.out_dim,
            self.hidden,
            self.layers,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(
                "tower dimensions and layer count must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.batch < 2 {
            return Err(Error::BatchTooSmall(self.batch));
        }
        if !(self.tau > 0.0 && self.lr > 0.0) {
            return Err(Error::Config("tau and lr must be positive".into()));
        }
        Ok(())
    }
}

/// Catalog-side inputs of the item tower.
#[derive(Clone, Debug)]
pub struct TowerInputs {
    pub num_users: usize,
    pub num_books: usize,
    pub num_authors: usize,
    pub num_categories: usize,
    pub num_publishers: usize,
    pub authors: Vec<Vec<usize>>,
    pub categories: Vec<Vec<usize>>,
    pub publishers: Vec<Vec<usize>>,
    /// `num_books × 5` scaled numeric features.
    pub numeric: Mat,
    /// `num_books × text_dim`; zero columns when no text embeddings exist.
    pub text: Mat,
}

impl TowerInputs {
    pub fn new(graph: &BookGraph, num_users: usize, features: Option<&FeatureStore>) -> Self {
        let nb = graph.num_books();
        let (numeric, text) = match features {
            Some(f) => {
                let mut n = Mat::zeros(nb, NUMERIC_DIM);
                let mut t = Mat::zeros(nb, f.text_dim);
                for (b, bundle) in f.bundles.iter().enumerate() {
                    n.row_mut(b).copy_from_slice(&bundle.numeric);
                    t.row_mut(b).copy_from_slice(&bundle.text_embedding);
                }
                (n, t)
            }
            None => {
                let stats = CatalogStats::compute(graph);
                let mut n = Mat::zeros(nb, NUMERIC_DIM);
                for b in 0..nb {
                    n.row_mut(b).copy_from_slice(&stats.scale(graph, b));
                }
                (n, Mat::zeros(nb, 0))
            }
        };
        Self {
            num_users,
            num_books: nb,
            num_authors: graph.authors.len(),
            num_categories: graph.categories.len(),
            num_publishers: graph.publishers.len(),
            authors: (0..nb).map(|b| graph.book_authors(b).to_vec()).collect(),
            categories: (0..nb).map(|b| graph.book_categories(b).to_vec()).collect(),
            publishers: (0..nb).map(|b| graph.book_publishers(b).to_vec()).collect(),
            numeric,
            text,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    w: usize,
    b: usize,
    ln: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
struct Slots {
    item: usize,
    user: usize,
    author: Option<usize>,
    category: Option<usize>,
    publisher: Option<usize>,
    text: Option<(usize, usize)>,
    item_mlp: Vec<Layer>,
    user_mlp: Vec<Layer>,
}

/// Trainable tower parameters for one configuration and flag set.
#[derive(Clone, Debug, PartialEq)]
pub struct TowerParams {
    pub cfg: TowerConfig,
    pub flags: AblationFlags,
    pub params: Params,
    slots: Slots,
}

fn mlp_layers(
    p: &mut Params,
    name: &str,
    cfg: &TowerConfig,
    input: usize,
    rng: &mut impl Rng,
) -> Vec<Layer> {
    (0..cfg.layers)
        .map(|l| {
            let fan_in = if l == 0 { input } else { cfg.hidden };
            let fan_out = if l + 1 == cfg.layers {
                cfg.out_dim
            } else {
                cfg.hidden
            };
            let (w, b) = p.linear(&format!("{name}.{l}"), fan_in, fan_out, rng);
            let ln = (cfg.layer_norm && l + 1 < cfg.layers).then(|| {
                (
                    p.add(
                        &format!("{name}.{l}.ln.gamma"),
                        Mat::filled(1, fan_out, 1.0),
                    ),
                    p.add(&format!("{name}.{l}.ln.beta"), Mat::zeros(1, fan_out)),
                )
            });
            Layer { w, b, ln }
        })
        .collect()
}

impl TowerParams {
    pub fn new(
        cfg: TowerConfig,
        flags: AblationFlags,
        inputs: &TowerInputs,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.id_dim;
        let s = cfg.init_std;
        let mut p = Params::default();
        let item = p.add("item_embedding", Mat::normal(inputs.num_books, d, s, rng));
        let users = if flags.interaction {
            inputs.num_users
        } else {
            1
        };
        let user = p.add("user_embedding", Mat::normal(users, d, s, rng));
        let mut width = d;
        let (mut author, mut category, mut publisher) = (None, None, None);
        if flags.relations {
            publisher = Some(p.add(
                "publisher_embedding",
                Mat::normal(inputs.num_publishers, d, s, rng),
            ));
            author = Some(p.add(
                "author_embedding",
                Mat::normal(inputs.num_authors, d, s, rng),
            ));
            category = Some(p.add(
                "category_embedding",
                Mat::normal(inputs.num_categories, d, s, rng),
            ));
            width += 3 * d;
        }
        let mut text = None;
        if flags.side {
            width += NUMERIC_DIM;
            if inputs.text.cols > 0 {
                text = Some(p.linear("text_proj", inputs.text.cols, cfg.text_proj_dim, rng));
                width += cfg.text_proj_dim;
            }
        }
        let item_mlp = mlp_layers(&mut p, "item_mlp", &cfg, width, rng);
        let user_mlp = mlp_layers(&mut p, "user_mlp", &cfg, d + cfg.out_dim, rng);
        Ok(Self {
            cfg,
            flags,
            params: p,
            slots: Slots {
                item,
                user,
                author,
                category,
                publisher,
                text,
                item_mlp,
                user_mlp,
            },
        })
    }
}

/// One forward graph over leaves for every parameter.
struct Fwd<'a> {
    p: &'a TowerParams,
    inputs: &'a TowerInputs,
    tape: Tape,
    vars: Vec<Var>,
}

impl<'a> Fwd<'a> {
    fn new(p: &'a TowerParams, inputs: &'a TowerInputs) -> Self {
        let mut tape = Tape::new();
        let vars = p.params.mats.iter().map(|m| tape.leaf(m.clone())).collect();
        Self {
            p,
            inputs,
            tape,
            vars,
        }
    }

    fn pooled(
        &mut self,
        slot: Option<usize>,
        cols: usize,
        lists: &[Vec<usize>],
        books: &[usize],
    ) -> Option<Var> {
        let rows: Vec<Vec<usize>> = books.iter().map(|&b| lists[b].clone()).collect();
        let s = Rc::new(SpMat::row_mean(cols, &rows));
        slot.map(|k| self.tape.spmm(s, self.vars[k]))
    }

    fn item_input(&mut self, books: &[usize]) -> Var {
        let (sl, inp) = (&self.p.slots, self.inputs);
        let mut parts = vec![self.tape.gather(self.vars[sl.item], books)];
        if self.p.flags.relations {
            parts.extend(self.pooled(sl.publisher, inp.num_publishers, &inp.publishers, books));
            parts.extend(self.pooled(sl.author, inp.num_authors, &inp.authors, books));
            parts.extend(self.pooled(sl.category, inp.num_categories, &inp.categories, books));
        }
        if self.p.flags.side {
            parts.push(self.tape.leaf(inp.numeric.gather_rows(books)));
            if let Some((w, b)) = sl.text {
                let t = self.tape.leaf(inp.text.gather_rows(books));
                let t = self.tape.matmul(t, self.vars[w]);
                parts.push(self.tape.add_row(t, self.vars[b]));
            }
        }
        self.tape.concat_cols(&parts)
    }

    fn mlp(&mut self, user: bool, x: Var, rng: Option<&mut ChaCha8Rng>) -> Var {
        let layers = if user {
            &self.p.slots.user_mlp
        } else {
            &self.p.slots.item_mlp
        };
        let mut rng = rng;
        let mut h = x;
        for (l, layer) in layers.iter().enumerate() {
            h = self.tape.matmul(h, self.vars[layer.w]);
            h = self.tape.add_row(h, self.vars[layer.b]);
            if l + 1 < layers.len() {
                if let Some((g, b)) = layer.ln {
                    h = self.tape.layer_norm(h, self.vars[g], self.vars[b]);
                }
                h = self.tape.relu(h);
                if let Some(r) = rng.as_deref_mut() {
                    h = self.tape.dropout(h, self.p.cfg.dropout, r);
                }
            }
        }
        self.tape.l2_normalize_rows(h)
    }

    fn item_tower(&mut self, books: &[usize], rng: Option<&mut ChaCha8Rng>) -> Var {
        let x = self.item_input(books);
        self.mlp(false, x, rng)
    }

    /// `hist` is the B×out pooled history; ignored under interaction ablation.
    fn user_tower(&mut self, users: &[usize], hist: Var, rng: Option<&mut ChaCha8Rng>) -> Var {
        let table = self.vars[self.p.slots.user];
        let (e, h) = if self.p.flags.interaction {
            (self.tape.gather(table, users), hist)
        } else {
            let e = self.tape.gather(table, &vec![0; users.len()]);
            (
                e,
                self.tape.leaf(Mat::zeros(users.len(), self.p.cfg.out_dim)),
            )
        };
        let x = self.tape.concat_cols(&[e, h]);
        self.mlp(true, x, rng)
    }
}

/// Concatenated item-tower input rows for `books`, before the MLP.
pub fn item_input(p: &TowerParams, inputs: &TowerInputs, books: &[usize]) -> Mat {
    let mut f = Fwd::new(p, inputs);
    let x = f.item_input(books);
    f.tape.value(x).clone()
}

/// Inference-mode item embeddings (one unit row per book).
pub fn item_tower_forward(p: &TowerParams, inputs: &TowerInputs, books: &[usize]) -> Mat {
    let mut f = Fwd::new(p, inputs);
    let z = f.item_tower(books, None);
    f.tape.value(z).clone()
}

/// Inference-mode user embeddings. `histories[j]` lists the books pooled
/// for `users[j]` (rows of `item_table`); callers truncate to the most
/// recent `max_history`.
pub fn user_tower_forward(
    p: &TowerParams,
    inputs: &TowerInputs,
    item_table: &Mat,
    users: &[usize],
    histories: &[Vec<usize>],
) -> Mat {
    let h = if p.flags.interaction {
        SpMat::row_mean(item_table.rows, histories).mul(item_table)
    } else {
        Mat::zeros(users.len(), p.cfg.out_dim)
    };
    let mut f = Fwd::new(p, inputs);
    let hv = f.tape.leaf(h);
    let z = f.user_tower(users, hv, None);
    f.tape.value(z).clone()
}

fn duplicate_exclusions(items: &[usize]) -> Vec<Vec<usize>> {
    items
        .iter()
        .enumerate()
        .map(|(j, a)| {
            (0..items.len())
                .filter(|&k| k != j && items[k] == *a)
                .collect()
        })
        .collect()
}

fn check_batch(zu: &Mat, zi: &Mat, items: &[usize], weights: &[f64]) -> Result<()> {
    let b = zu.rows;
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    if zi.shape() != zu.shape() || items.len() != b || weights.len() != b {
        return Err(Error::Config(
            "in-batch loss inputs disagree in size".into(),
        ));
    }
    Ok(())
}

/// Weighted softmax cross-entropy with in-batch negatives. Row `j`'s
/// positive is column `j`; columns holding the same item as row `j`'s
/// positive are left out of its denominator.
pub fn in_batch_loss(
    zu: &Mat,
    zi: &Mat,
    items: &[usize],
    weights: &[f64],
    tau: f64,
) -> Result<f64> {
    in_batch_loss_grad(zu, zi, items, weights, tau).map(|x| x.0)
}

/// Loss with gradients towards `zu` and `zi`.
pub fn in_batch_loss_grad(
    zu: &Mat,
    zi: &Mat,
    items: &[usize],
    weights: &[f64],
    tau: f64,
) -> Result<(f64, Mat, Mat)> {
    check_batch(zu, zi, items, weights)?;
    let mut t = Tape::new();
    let (u, i) = (t.leaf(zu.clone()), t.leaf(zi.clone()));
    let s = t.matmul_bt(u, i);
    let loss = t.softmax_xent(s, weights, &duplicate_exclusions(items), tau);
    let mut g = t.backward(loss);
    let zero = || Mat::zeros(zu.rows, zu.cols);
    Ok((
        t.scalar(loss),
        g.take(u).unwrap_or_else(zero),
        g.take(i).unwrap_or_else(zero),
    ))
}

/// Per-epoch training trace.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
    /// Validation metric per epoch: NDCG@10 for the two-tower, MRR@10 for the HGNN.
    pub valid_metric: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
    /// Training stopped on a non-finite loss and fell back to the best epoch.
    pub diverged: bool,
}

struct Trainer<'a> {
    p: TowerParams,
    inputs: &'a TowerInputs,
    train: &'a TrainSet,
    opt: Adam,
}

impl Trainer<'_> {
    /// Loss and gradients of one batch of training-interaction indices.
    fn batch_grads(
        &self,
        batch: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<Option<Mat>>)> {
        let t = self.train;
        let rows: Vec<_> = batch.iter().map(|&k| &t.interactions[k]).collect();
        let users: Vec<usize> = rows.iter().map(|r| r.user).collect();
        let pos: Vec<usize> = rows.iter().map(|r| r.book).collect();
        let weights: Vec<f64> = rows
            .iter()
            .map(|r| interaction_weight(r.verified, r.rating))
            .collect();
        let k = self.p.cfg.max_history;
        let hist: Vec<Vec<usize>> = if self.p.flags.interaction {
            rows.iter()
                .map(|r| {
                    let h: Vec<usize> = t.history[r.user]
                        .iter()
                        .copied()
                        .filter(|&b| b != r.book)
                        .collect();
                    h[h.len().saturating_sub(k)..].to_vec()
                })
                .collect()
        } else {
            vec![Vec::new(); rows.len()]
        };
        let mut uniq: Vec<usize> = pos.iter().chain(hist.iter().flatten()).copied().collect();
        uniq.sort_unstable();
        uniq.dedup();
        let local = |b: usize| uniq.binary_search(&b).unwrap();
        let mut f = Fwd::new(&self.p, self.inputs);
        let z = f.item_tower(&uniq, Some(rng));
        let zi = f
            .tape
            .gather(z, &pos.iter().map(|&b| local(b)).collect::<Vec<_>>());
        let lists: Vec<Vec<usize>> = hist
            .iter()
            .map(|h| h.iter().map(|&b| local(b)).collect())
            .collect();
        let h = f.tape.spmm(Rc::new(SpMat::row_mean(uniq.len(), &lists)), z);
        let zu = f.user_tower(&users, h, Some(rng));
        let s = f.tape.matmul_bt(zu, zi);
        let loss = f
            .tape
            .softmax_xent(s, &weights, &duplicate_exclusions(&pos), self.p.cfg.tau);
        let value = f.tape.scalar(loss);
        let mut g = f.tape.backward(loss);
        Ok((value, f.vars.iter().map(|v| g.take(*v)).collect()))
    }

    fn step(&mut self, batch: &[usize], rng: &mut ChaCha8Rng) -> Result<f64> {
        let (loss, grads) = self.batch_grads(batch, rng)?;
        if loss.is_finite() {
            self.opt.step(&mut self.p.params.mats, &grads);
        }
        Ok(loss)
    }

    fn tables(&self) -> (Mat, Mat) {
        let books: Vec<usize> = (0..self.inputs.num_books).collect();
        let items = item_tower_forward(&self.p, self.inputs, &books);
        let users: Vec<usize> = (0..self.train.num_users).collect();
        let hist: Vec<Vec<usize>> = users
            .iter()
            .map(|&u| self.train.recent(u, self.p.cfg.max_history).to_vec())
            .collect();
        let u = user_tower_forward(&self.p, self.inputs, &items, &users, &hist);
        (u, items)
    }
}

/// Trains with AdamW on weighted in-batch softmax, early-stopping on
/// validation NDCG@10 when validation rows exist.
pub fn fit_two_tower(
    ctx: &FitContext,
    cfg: &TowerConfig,
    flags: AblationFlags,
) -> Result<(FactorModel, TrainLog)> {
    cfg.validate()?;
    let t = ctx.train;
    if t.interactions.len() < 2 {
        return Err(Error::BatchTooSmall(t.interactions.len()));
    }
    let inputs = TowerInputs::new(ctx.graph, t.num_users, ctx.features);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let p = TowerParams::new(*cfg, flags, &inputs, &mut rng)?;
    let mut tr = Trainer {
        p,
        inputs: &inputs,
        train: t,
        opt: Adam::adamw(cfg.lr, cfg.weight_decay),
    };
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Vec<Mat>)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..t.interactions.len()).collect();
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch).filter(|b| b.len() >= 2) {
            let l = tr.step(batch, &mut rng)?;
            if !l.is_finite() || !tr.p.params.all_finite() {
                if best.is_none() {
                    return Err(Error::Diverged {
                        model: "two_tower".into(),
                        detail: format!("loss {l} at epoch {epoch}"),
                    });
                }
                log.diverged = true;
                break 'epochs;
            }
            sum += l * batch.len() as f64;
            n += batch.len();
        }
        log.epoch_loss.push(sum / n.max(1) as f64);
        let score = if ctx.valid.is_empty() {
            epoch as f64
        } else {
            let (u, i) = tr.tables();
            validation_at_10(ModelKind::TwoTower, &u, &i, t, ctx.valid, |c| c.ndcg)?
        };
        if !ctx.valid.is_empty() {
            log.valid_metric.push(score);
        }
        if best.as_ref().map_or(true, |b| score > b.0) {
            best = Some((score, tr.p.params.mats.clone()));
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, mats)) = best {
        tr.p.params.mats = mats;
    }
    let (users, items) = tr.tables();
    let mut model = FactorModel::new(ModelKind::TwoTower, users, items);
    let c = &mut model.extra;
    c.hparam("id_dim", cfg.id_dim as f64)
        .hparam("text_proj_dim", cfg.text_proj_dim as f64)
        .hparam("out_dim", cfg.out_dim as f64)
        .hparam("hidden", cfg.hidden as f64)
        .hparam("layers", cfg.layers as f64)
        .hparam("dropout", cfg.dropout)
        .hparam("layer_norm", f64::from(u8::from(cfg.layer_norm)))
        .hparam("max_history", cfg.max_history as f64)
        .hparam("batch", cfg.batch as f64)
        .hparam("epochs", cfg.epochs as f64)
        .hparam("lr", cfg.lr)
        .hparam("weight_decay", cfg.weight_decay)
        .hparam("patience", cfg.patience as f64)
        .hparam("tau", cfg.tau)
        .hparam("seed", ctx.seed as f64)
        .hparam("best_epoch", log.best_epoch as f64);
    flags.record(c);
    tr.p.params.save_into(c);
    Ok((model, log))
}
