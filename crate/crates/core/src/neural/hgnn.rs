//! Relational heterogeneous GNN over six node types. Each layer sums, per
//! destination type, a self transform and one mean-aggregated linear
//! message per incoming directed relation.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::autograd::{SpMat, Tape, Var};
use super::optim::{Adam, Params};
use super::two_tower::TrainLog;
use super::{bpr_triples, validation_at_10, AblationFlags};
use crate::error::{Error, Result};
use crate::features::{CatalogStats, FeatureStore, NUMERIC_DIM};
use crate::graph::{BookGraph, EntityKind, Relation};
use crate::linalg::Mat;
use crate::recommend::{FactorModel, FitContext, ModelKind};
use crate::sparse::TrainSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HgnnConfig {
    pub dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub patience: usize,
    pub init_std: f64,
}

impl Default for HgnnConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            dropout: 0.2,
            lr: 0.01,
            epochs: 20,
            batch: 1024,
            patience: 3,
            init_std: 0.1,
        }
    }
}

/// A directed message relation: `matrix` is `count(dst) × count(src)` with
/// each row averaging the row's in-neighbors.
#[derive(Clone, Debug)]
pub struct HeteroRelation {
    pub name: String,
    pub src: EntityKind,
    pub dst: EntityKind,
    pub matrix: Rc<SpMat>,
}

/// Node inputs and training-only message structure. Review nodes are the
/// training interactions, in `train.interactions` order.
#[derive(Clone, Debug)]
pub struct HeteroGraph {
    pub counts: [usize; 6],
    /// Input features per node type; the user entry has zero columns
    /// because users start from a learnable embedding.
    pub inputs: Vec<Mat>,
    pub relations: Vec<HeteroRelation>,
    /// Relations dropped because they have no edges.
    pub skipped: Vec<String>,
    pub shared_user: bool,
}

fn slot(k: EntityKind) -> usize {
    k as usize
}

fn ln1p(v: Option<u64>) -> f64 {
    v.map_or(0.0, |x| (x as f64).ln_1p())
}

fn ones(n: usize) -> Mat {
    Mat::filled(n, 1, 1.0)
}

/// Builds the graph from catalog relations and training interactions only.
pub fn build_hetero_graph(
    graph: &BookGraph,
    train: &TrainSet,
    features: Option<&FeatureStore>,
    flags: AblationFlags,
) -> HeteroGraph {
    use EntityKind::*;
    let nb = graph.num_books();
    let counts = {
        let mut c = [0; 6];
        c[slot(Book)] = nb;
        c[slot(Author)] = graph.authors.len();
        c[slot(Category)] = graph.categories.len();
        c[slot(Publisher)] = graph.publishers.len();
        c[slot(Review)] = train.interactions.len();
        c[slot(User)] = train.num_users;
        c
    };
    let degree = |r: Relation, n: usize, fwd: bool| -> Vec<f64> {
        let lists = if fwd {
            graph.forward(r)
        } else {
            graph.backward(r)
        };
        (0..n)
            .map(|i| (lists.get(i).map_or(0, Vec::len) as f64).ln_1p())
            .collect()
    };
    let mut inputs = vec![Mat::zeros(0, 0); 6];
    if flags.side {
        let text_dim = features.map_or(0, |f| f.text_dim);
        let stats = CatalogStats::compute(graph);
        let mut m = Mat::zeros(nb, NUMERIC_DIM + text_dim);
        for b in 0..nb {
            let row = m.row_mut(b);
            match features {
                Some(f) => {
                    row[..NUMERIC_DIM].copy_from_slice(&f.bundles[b].numeric);
                    row[NUMERIC_DIM..].copy_from_slice(&f.bundles[b].text_embedding);
                }
                None => row.copy_from_slice(&stats.scale(graph, b)),
            }
        }
        inputs[slot(Book)] = m;
        let nbooks = degree(Relation::BookAuthor, counts[slot(Author)], false);
        inputs[slot(Author)] = Mat::from_rows(
            &graph
                .authors
                .iter()
                .zip(&nbooks)
                .map(|(a, &d)| vec![ln1p(a.follower_count), d])
                .collect::<Vec<_>>(),
        );
        let nbooks = degree(Relation::BookCategory, counts[slot(Category)], false);
        inputs[slot(Category)] = Mat::from_rows(
            &graph
                .categories
                .iter()
                .zip(&nbooks)
                .map(|(c, &d)| vec![ln1p(c.total_book_count), d])
                .collect::<Vec<_>>(),
        );
        let nbooks = degree(Relation::BookPublisher, counts[slot(Publisher)], false);
        inputs[slot(Publisher)] = Mat::from_rows(
            &graph
                .publishers
                .iter()
                .zip(&nbooks)
                .map(|(p, &d)| vec![ln1p(p.total_author_count), ln1p(p.total_book_count), d])
                .collect::<Vec<_>>(),
        );
    } else {
        for k in [Book, Author, Category, Publisher] {
            inputs[slot(k)] = ones(counts[slot(k)]);
        }
    }
    // Mat::from_rows on an empty slice yields 0 columns; keep widths fixed.
    for (k, w) in [(Author, 2), (Category, 2), (Publisher, 3)] {
        if counts[slot(k)] == 0 && flags.side {
            inputs[slot(k)] = Mat::zeros(0, w);
        }
    }
    inputs[slot(Review)] = Mat::from_vec(
        counts[slot(Review)],
        4,
        train
            .interactions
            .iter()
            .flat_map(|it| {
                let (up, down) = it
                    .review
                    .and_then(|r| graph.reviews.get(r))
                    .map_or((0, 0), |r| (r.upvotes, r.downvotes));
                [
                    it.rating.map_or(0.0, |r| r / 5.0),
                    f64::from(up).ln_1p(),
                    f64::from(down).ln_1p(),
                    f64::from(u8::from(it.verified)),
                ]
            })
            .collect(),
    );
    inputs[slot(User)] = Mat::zeros(counts[slot(User)], 0);

    let mut relations = Vec::new();
    let mut skipped = Vec::new();
    let mut push = |name: String, src: EntityKind, dst: EntityKind, lists: Vec<Vec<usize>>| {
        let m = SpMat::row_mean(counts[slot(src)], &lists);
        if m.nnz() == 0 {
            skipped.push(name);
        } else {
            relations.push(HeteroRelation {
                name,
                src,
                dst,
                matrix: Rc::new(m),
            });
        }
    };
    if flags.relations {
        for r in Relation::ALL.into_iter().filter(|r| !r.is_interaction()) {
            let (s, d) = r.endpoints();
            let pad = |lists: &[Vec<usize>], n: usize| -> Vec<Vec<usize>> {
                (0..n)
                    .map(|i| lists.get(i).cloned().unwrap_or_default())
                    .collect()
            };
            // messages into dst come from its src neighbors, and back
            push(
                r.name().to_string(),
                s,
                d,
                pad(graph.backward(r), counts[slot(d)]),
            );
            push(
                format!("rev_{}", r.name()),
                d,
                s,
                pad(graph.forward(r), counts[slot(s)]),
            );
        }
    }
    let nr = counts[slot(Review)];
    let mut user_reviews = vec![Vec::new(); counts[slot(User)]];
    let mut book_reviews = vec![Vec::new(); nb];
    for (k, it) in train.interactions.iter().enumerate() {
        user_reviews[it.user].push(k);
        book_reviews[it.book].push(k);
    }
    if flags.interaction {
        let users: Vec<Vec<usize>> = train.interactions.iter().map(|it| vec![it.user]).collect();
        push("user_review".into(), User, Review, users);
        push("rev_user_review".into(), Review, User, user_reviews);
    }
    let books: Vec<Vec<usize>> = train.interactions.iter().map(|it| vec![it.book]).collect();
    debug_assert_eq!(books.len(), nr);
    push("book_review".into(), Book, Review, books);
    push("rev_book_review".into(), Review, Book, book_reviews);
    HeteroGraph {
        counts,
        inputs,
        relations,
        skipped,
        shared_user: !flags.interaction,
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Slots {
    user_emb: usize,
    input: Vec<Option<(usize, usize)>>,
    /// `[layer][type]` self transform.
    root: Vec<Vec<(usize, usize)>>,
    /// `[layer][relation]` message weight.
    rel: Vec<Vec<usize>>,
    user_out: [(usize, usize); 2],
    book_out: [(usize, usize); 2],
}

fn init(hg: &HeteroGraph, cfg: &HgnnConfig, rng: &mut impl Rng) -> (Params, Slots) {
    let d = cfg.dim;
    let mut p = Params::default();
    let nu = if hg.shared_user {
        1
    } else {
        hg.counts[slot(EntityKind::User)]
    };
    let user_emb = p.add("user_embedding", Mat::normal(nu, d, cfg.init_std, rng));
    let input = EntityKind::ALL
        .iter()
        .map(|k| {
            let w = hg.inputs[slot(*k)].cols;
            (w > 0).then(|| p.linear(&format!("input.{}", k.name()), w, d, rng))
        })
        .collect();
    let mut root = Vec::new();
    let mut rel = Vec::new();
    for l in 0..cfg.layers {
        root.push(
            EntityKind::ALL
                .iter()
                .map(|k| p.linear(&format!("layer{l}.root.{}", k.name()), d, d, rng))
                .collect(),
        );
        let b = 1.0 / (d as f64).sqrt();
        rel.push(
            hg.relations
                .iter()
                .map(|r| {
                    p.add(
                        &format!("layer{l}.rel.{}", r.name),
                        Mat::uniform(d, d, b, rng),
                    )
                })
                .collect(),
        );
    }
    let user_out = [
        p.linear("user_out.0", d, d, rng),
        p.linear("user_out.1", d, d, rng),
    ];
    let book_out = [
        p.linear("book_out.0", d, d, rng),
        p.linear("book_out.1", d, d, rng),
    ];
    (
        p,
        Slots {
            user_emb,
            input,
            root,
            rel,
            user_out,
            book_out,
        },
    )
}

/// Final user and book representations on a tape. Dropout applies when
/// `rng` is given.
fn forward(
    tape: &mut Tape,
    vars: &[Var],
    hg: &HeteroGraph,
    s: &Slots,
    cfg: &HgnnConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Var, Var) {
    let mut h: Vec<Var> = EntityKind::ALL
        .iter()
        .map(|k| {
            let t = slot(*k);
            if *k == EntityKind::User {
                let e = vars[s.user_emb];
                return if hg.shared_user {
                    tape.gather(e, &vec![0; hg.counts[t]])
                } else {
                    e
                };
            }
            let x = tape.leaf(hg.inputs[t].clone());
            let (w, b) = s.input[t].expect("typed input");
            let y = tape.matmul(x, vars[w]);
            tape.add_row(y, vars[b])
        })
        .collect();
    for l in 0..cfg.layers {
        let last = l + 1 == cfg.layers;
        let mut next = Vec::with_capacity(6);
        for k in EntityKind::ALL {
            let t = slot(k);
            if last && !matches!(k, EntityKind::User | EntityKind::Book) {
                next.push(h[t]);
                continue;
            }
            let (w, b) = s.root[l][t];
            let y = tape.matmul(h[t], vars[w]);
            let mut acc = tape.add_row(y, vars[b]);
            for (ri, r) in hg.relations.iter().enumerate().filter(|(_, r)| r.dst == k) {
                let m = tape.spmm(r.matrix.clone(), h[slot(r.src)]);
                let m = tape.matmul(m, vars[s.rel[l][ri]]);
                acc = tape.add(acc, m);
            }
            if !last {
                acc = tape.relu(acc);
                if let Some(r) = rng.as_deref_mut() {
                    acc = tape.dropout(acc, cfg.dropout, r);
                }
            }
            next.push(acc);
        }
        h = next;
    }
    let mut head = |x: Var, layers: &[(usize, usize); 2]| {
        let y = tape.matmul(x, vars[layers[0].0]);
        let y = tape.add_row(y, vars[layers[0].1]);
        let y = tape.relu(y);
        let y = tape.matmul(y, vars[layers[1].0]);
        tape.add_row(y, vars[layers[1].1])
    };
    let u = head(h[slot(EntityKind::User)], &s.user_out);
    let b = head(h[slot(EntityKind::Book)], &s.book_out);
    (u, b)
}

fn tables(params: &Params, hg: &HeteroGraph, s: &Slots, cfg: &HgnnConfig) -> (Mat, Mat) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.mats.iter().map(|m| tape.leaf(m.clone())).collect();
    let (u, b) = forward(&mut tape, &vars, hg, s, cfg, None);
    (tape.value(u).clone(), tape.value(b).clone())
}

/// BPR training on the full-graph forward pass, early-stopping on
/// validation MRR@10 when validation rows exist.
pub fn fit_hgnn(
    ctx: &FitContext,
    cfg: &HgnnConfig,
    flags: AblationFlags,
) -> Result<(FactorModel, TrainLog)> {
    if cfg.dim == 0 || cfg.layers == 0 || cfg.batch == 0 || !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Config(
            "hgnn needs positive dim, layers, batch and dropout in [0, 1)".into(),
        ));
    }
    let t = ctx.train;
    let hg = build_hetero_graph(ctx.graph, t, ctx.features, flags);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let (mut params, s) = init(&hg, cfg, &mut rng);
    let mut opt = Adam::new(cfg.lr);
    let seen: Vec<Vec<usize>> = (0..t.num_users).map(|u| t.seen(u)).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Vec<Mat>)> = None;
    let mut stale = 0;
    'epochs: for epoch in 0..cfg.epochs {
        let triples = bpr_triples(t, &seen, &mut rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for chunk in triples.chunks(cfg.batch) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.mats.iter().map(|m| tape.leaf(m.clone())).collect();
            let (u, b) = forward(&mut tape, &vars, &hg, &s, cfg, Some(&mut rng));
            let us: Vec<usize> = chunk.iter().map(|x| x.0).collect();
            let is: Vec<usize> = chunk.iter().map(|x| x.1).collect();
            let js: Vec<usize> = chunk.iter().map(|x| x.2).collect();
            let (zu, zi, zj) = (
                tape.gather(u, &us),
                tape.gather(b, &is),
                tape.gather(b, &js),
            );
            let pos = tape.row_dot(zu, zi);
            let neg = tape.row_dot(zu, zj);
            let loss = tape.bpr(pos, neg);
            let l = tape.scalar(loss);
            if !l.is_finite() {
                if best.is_none() {
                    return Err(Error::Diverged {
                        model: "hgnn".into(),
                        detail: format!("loss {l} at epoch {epoch}"),
                    });
                }
                log.diverged = true;
                break 'epochs;
            }
            let mut g = tape.backward(loss);
            let grads: Vec<Option<Mat>> = vars.iter().map(|v| g.take(*v)).collect();
            opt.step(&mut params.mats, &grads);
            sum += l * chunk.len() as f64;
            n += chunk.len();
        }
        log.epoch_loss.push(sum / n.max(1) as f64);
        let score = if ctx.valid.is_empty() {
            epoch as f64
        } else {
            let (u, b) = tables(&params, &hg, &s, cfg);
            let v = validation_at_10(ModelKind::Hgnn, &u, &b, t, ctx.valid, |c| c.mrr)?;
            log.valid_metric.push(v);
            v
        };
        if best.as_ref().map_or(true, |b| score > b.0) {
            best = Some((score, params.mats.clone()));
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
        params.mats = mats;
    }
    let (users, books) = tables(&params, &hg, &s, cfg);
    let mut model = FactorModel::new(ModelKind::Hgnn, users, books);
    let c = &mut model.extra;
    c.hparam("dim", cfg.dim as f64)
        .hparam("layers", cfg.layers as f64)
        .hparam("dropout", cfg.dropout)
        .hparam("lr", cfg.lr)
        .hparam("epochs", cfg.epochs as f64)
        .hparam("batch", cfg.batch as f64)
        .hparam("patience", cfg.patience as f64)
        .hparam("seed", ctx.seed as f64)
        .hparam("best_epoch", log.best_epoch as f64);
    flags.record(c);
    params.save_into(c);
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_interactions;
    use crate::graph::{Author, Book, Category, GraphBuilder, Review, User};
    use crate::neural::Removal;
    use crate::recommend::Recommender;

    /// Books 0..n, two authors, two categories, users reviewing books.
    fn fixture(pairs: &[(usize, usize)], books: usize, users: usize) -> (BookGraph, TrainSet) {
        let mut g = GraphBuilder::new();
        for b in 0..books {
            g.add_book(Book {
                pages: Some(50 + b as u32),
                ..Book::titled(format!("B{b}"), format!("t{b}"))
            });
        }
        for a in 0..2 {
            g.add_author(Author {
                id: format!("A{a}"),
                name: format!("a{a}"),
                ..Default::default()
            });
            g.add_category(Category {
                id: format!("C{a}"),
                name: format!("c{a}"),
                ..Default::default()
            });
        }
        for u in 0..users {
            g.add_user(User {
                id: format!("U{u}"),
            });
        }
        for b in 0..books {
            let half = usize::from(b >= books / 2);
            g.add_edge_by_ids(Relation::BookAuthor, &format!("B{b}"), &format!("A{half}"));
            g.add_edge_by_ids(
                Relation::BookCategory,
                &format!("B{b}"),
                &format!("C{half}"),
            );
        }
        for (k, &(u, b)) in pairs.iter().enumerate() {
            g.add_review(Review {
                id: format!("R{k}"),
                rating: Some(4.0),
                upvotes: k as u32 % 3,
                ..Default::default()
            });
            g.add_edge_by_ids(Relation::UserReview, &format!("U{u}"), &format!("R{k}"));
            g.add_edge_by_ids(Relation::BookReview, &format!("B{b}"), &format!("R{k}"));
        }
        let g = g.build();
        let rows = build_interactions(&g).interactions;
        let t = TrainSet::new(users, books, rows);
        (g, t)
    }

    fn ctx<'a>(t: &'a TrainSet, g: &'a BookGraph, seed: u64) -> FitContext<'a> {
        FitContext {
            train: t,
            valid: &[],
            graph: g,
            features: None,
            review_texts: None,
            seed,
        }
    }

    #[test]
    fn review_nodes_are_training_rows_only() {
        let (g, full) = fixture(&[(0, 0), (0, 1), (1, 2), (1, 3)], 4, 2);
        let t = TrainSet::new(2, 4, full.interactions[..3].to_vec());
        let hg = build_hetero_graph(&g, &t, None, AblationFlags::FULL);
        assert_eq!(hg.counts[slot(EntityKind::Review)], 3);
        let into_book = hg
            .relations
            .iter()
            .find(|r| r.name == "rev_book_review")
            .unwrap();
        assert_eq!(into_book.matrix.row(3).count(), 0);
        // 6 catalog relations both ways, minus the empty ones, plus 4
        assert!(hg.skipped.iter().any(|s| s.contains("publisher")));
        assert_eq!(hg.relations.len() + hg.skipped.len(), 16);
    }

    #[test]
    fn single_neighbor_mean_is_identity() {
        let (g, t) = fixture(&[(0, 0), (1, 1)], 2, 2);
        let hg = build_hetero_graph(&g, &t, None, AblationFlags::FULL);
        let r = hg
            .relations
            .iter()
            .find(|r| r.name == "book_review")
            .unwrap();
        let x = Mat::from_rows(&[vec![3.0, -1.0], vec![0.5, 2.0]]);
        let m = r.matrix.mul(&x);
        // each review has exactly one book
        for k in 0..2 {
            let b = t.interactions[k].book;
            assert_eq!(m.row(k), x.row(b));
        }
    }

    #[test]
    fn relations_ablation_keeps_review_chain() {
        let pairs = [(0, 0), (0, 1), (1, 2), (2, 3), (2, 0)];
        let (g, t) = fixture(&pairs, 4, 3);
        let flags = AblationFlags::without(Removal::Relations);
        let hg = build_hetero_graph(&g, &t, None, flags);
        let names: Vec<&str> = hg.relations.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "user_review",
                "rev_user_review",
                "book_review",
                "rev_book_review"
            ]
        );
        let cfg = HgnnConfig {
            dim: 8,
            epochs: 3,
            ..Default::default()
        };
        let (m, _) = fit_hgnn(&ctx(&t, &g, 1), &cfg, flags).unwrap();
        for u in 0..3 {
            assert!(m.scores(u).iter().all(|s| s.is_finite()));
            let seen = t.seen(u);
            assert!(m.rank(u, &seen, 10).iter().all(|(b, _)| !seen.contains(b)));
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let (g, t) = fixture(&[(0, 0), (0, 1), (1, 2)], 4, 2);
        let hg = build_hetero_graph(&g, &t, None, AblationFlags::FULL);
        let cfg = HgnnConfig::default();
        let (p, s) = init(&hg, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(tables(&p, &hg, &s, &cfg), tables(&p, &hg, &s, &cfg));
    }

    #[test]
    fn planted_halves_separate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (users, books) = (30, 12);
        let mut pairs = Vec::new();
        for u in 0..users {
            let base = if u < users / 2 { 0 } else { books / 2 };
            for _ in 0..3 {
                pairs.push((u, base + rng.gen_range(0..books / 2)));
            }
        }
        let (g, t) = fixture(&pairs, books, users);
        let cfg = HgnnConfig {
            dim: 16,
            epochs: 40,
            batch: 32,
            dropout: 0.0,
            ..Default::default()
        };
        let (m, log) = fit_hgnn(&ctx(&t, &g, 3), &cfg, AblationFlags::FULL).unwrap();
        assert!(!log.diverged);
        let mut auc = 0.0;
        for u in 0..users {
            let base = if u < users / 2 { 0 } else { books / 2 };
            let s = m.scores(u);
            let seen = t.seen(u);
            let inside: Vec<f64> = (base..base + books / 2)
                .filter(|b| !seen.contains(b))
                .map(|b| s[b])
                .collect();
            let outside: Vec<f64> = (0..books)
                .filter(|b| *b < base || *b >= base + books / 2)
                .map(|b| s[b])
                .collect();
            let wins: f64 = inside
                .iter()
                .flat_map(|a| outside.iter().map(move |b| f64::from(u8::from(a > b))))
                .sum();
            auc += wins / (inside.len() * outside.len()).max(1) as f64;
        }
        auc /= users as f64;
        assert!(auc > 0.8, "auc {auc}");
    }
}
