//! Hybrid factorization with item side features trained under the WARP
//! (weighted approximate-rank pairwise) loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FactorModel, FitContext, ModelKind};
use crate::error::{Error, Result};
use crate::graph::BookGraph;
use crate::linalg::{axpy, dot, Mat};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub reg: f64,
    /// Negative samples drawn per positive before giving up.
    pub max_samples: usize,
    pub margin: f64,
    pub use_identity: bool,
    pub init_std: f64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            epochs: 30,
            lr: 0.01,
            reg: 1e-6,
            max_samples: 100,
            margin: 1.0,
            use_identity: true,
            init_std: 0.1,
        }
    }
}

/// Active feature columns per book: optional identity, then authors,
/// categories and publishers, each block offset by the preceding sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridFeatures {
    pub dim: usize,
    pub item_features: Vec<Vec<usize>>,
}

impl HybridFeatures {
    pub fn from_graph(graph: &BookGraph, num_books: usize, use_identity: bool) -> Self {
        let id_dim = if use_identity { num_books } else { 0 };
        let a_off = id_dim;
        let c_off = a_off + graph.authors.len();
        let p_off = c_off + graph.categories.len();
        let dim = p_off + graph.publishers.len();
        let item_features = (0..num_books)
            .map(|b| {
                let mut f = Vec::new();
                if use_identity {
                    f.push(b);
                }
                if b < graph.num_books() {
                    f.extend(graph.book_authors(b).iter().map(|a| a + a_off));
                    f.extend(graph.book_categories(b).iter().map(|c| c + c_off));
                    f.extend(graph.book_publishers(b).iter().map(|p| p + p_off));
                }
                f
            })
            .collect();
        Self { dim, item_features }
    }

    /// Item representations: mean of active feature embeddings.
    pub fn represent(&self, features: &Mat) -> Mat {
        let mut out = Mat::zeros(self.item_features.len(), features.cols);
        for (b, f) in self.item_features.iter().enumerate() {
            if f.is_empty() {
                continue;
            }
            let w = 1.0 / f.len() as f64;
            for &k in f {
                axpy(w, features.row(k), out.row_mut(b));
            }
        }
        out
    }
}

/// Loss weight after `q` negative draws among `num_items` items:
/// `ln(floor((I - 1) / q) + 1)`.
pub fn warp_weight(num_items: usize, q: usize) -> f64 {
    (((num_items.saturating_sub(1)) / q.max(1)) as f64 + 1.0).ln()
}

/// Draws negatives until one violates the margin; returns the negative and
/// the number of draws, or `None` when the cap is exhausted.
fn find_violation(
    pos_score: f64,
    margin: f64,
    cap: usize,
    mut draw: impl FnMut() -> Option<(usize, f64)>,
) -> Option<(usize, usize)> {
    for q in 1..=cap {
        let (j, s) = draw()?;
        if s > pos_score - margin {
            return Some((j, q));
        }
    }
    None
}

pub fn fit_hybrid_warp(ctx: &FitContext, cfg: &WarpConfig) -> Result<FactorModel> {
    let t = ctx.train;
    let n = t.num_books;
    let hf = HybridFeatures::from_graph(ctx.graph, n, cfg.use_identity);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut users = Mat::normal(t.num_users, cfg.dim, cfg.init_std, &mut rng);
    let mut feats = Mat::normal(hf.dim, cfg.dim, cfg.init_std, &mut rng);
    let mut pairs: Vec<(usize, usize)> = (0..t.num_users)
        .flat_map(|u| t.matrix.user_items(u).map(move |b| (u, b)))
        .collect();
    let seen: Vec<Vec<usize>> = (0..t.num_users).map(|u| t.seen(u)).collect();
    let repr = |feats: &Mat, b: usize, out: &mut [f64]| {
        out.iter_mut().for_each(|x| *x = 0.0);
        let f = &hf.item_features[b];
        if !f.is_empty() {
            let w = 1.0 / f.len() as f64;
            for &k in f {
                axpy(w, feats.row(k), out);
            }
        }
    };
    let d = cfg.dim;
    let (mut ri, mut rj, mut xu) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for epoch in 0..cfg.epochs {
        pairs.shuffle(&mut rng);
        for &(u, i) in &pairs {
            if seen[u].len() >= n {
                continue;
            }
            repr(&feats, i, &mut ri);
            xu.copy_from_slice(users.row(u));
            let pos = dot(&xu, &ri);
            let hit = find_violation(pos, cfg.margin, cfg.max_samples, || {
                let j = loop {
                    let j = rng.gen_range(0..n);
                    if seen[u].binary_search(&j).is_err() {
                        break j;
                    }
                };
                repr(&feats, j, &mut rj);
                Some((j, dot(&xu, &rj)))
            });
            let Some((j, q)) = hit else { continue };
            let w = warp_weight(n, q);
            // hinge gradient of w * (margin - x·r_i + x·r_j)
            for k in 0..d {
                let g = w * (rj[k] - ri[k]) + cfg.reg * xu[k];
                *users.at_mut(u, k) -= cfg.lr * g;
            }
            for (b, sign) in [(i, -1.0), (j, 1.0)] {
                let f = &hf.item_features[b];
                let share = 1.0 / f.len().max(1) as f64;
                for &fk in f {
                    let row = feats.row_mut(fk);
                    for k in 0..d {
                        row[k] -= cfg.lr * (sign * w * share * xu[k] + cfg.reg * row[k]);
                    }
                }
            }
        }
        if !users.is_finite() || !feats.is_finite() {
            return Err(Error::Diverged {
                model: "hybrid_warp".into(),
                detail: format!("non-finite embeddings after epoch {epoch}"),
            });
        }
    }
    let items = hf.represent(&feats);
    let mut model = FactorModel::new(ModelKind::HybridWarp, users, items);
    model
        .extra
        .hparam("dim", cfg.dim as f64)
        .hparam("epochs", cfg.epochs as f64)
        .hparam("lr", cfg.lr)
        .hparam("max_samples", cfg.max_samples as f64)
        .hparam("margin", cfg.margin)
        .hparam("feature_dim", hf.dim as f64)
        .hparam("seed", ctx.seed as f64);
    model.extra.put_mat("feature_embeddings", &feats);
    model.extra.put_lists("item_features", &hf.item_features);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::train;
    use super::super::Recommender;
    use super::*;
    use crate::graph::{Book, Category, GraphBuilder, Relation};

    #[test]
    fn weight_formula() {
        assert!((warp_weight(101, 1) - 101f64.ln()).abs() < 1e-15);
        assert!((warp_weight(101, 3) - 34f64.ln()).abs() < 1e-15);
        assert_eq!(warp_weight(101, 100), 2f64.ln());
        assert_eq!(warp_weight(1, 1), 0.0);
    }

    #[test]
    fn violation_search() {
        let mut scores = [0.1, 0.2, 0.95].into_iter().enumerate();
        assert_eq!(find_violation(1.5, 1.0, 10, || scores.next()), Some((2, 3)));
        let mut low = std::iter::repeat((0, -5.0));
        assert_eq!(find_violation(1.0, 1.0, 100, || low.next()), None);
    }

    #[test]
    fn planted_two_clusters() {
        let per = 20;
        let mut g = GraphBuilder::new();
        for b in 0..2 * per {
            g.add_book(Book::titled(format!("B{b}"), "t"));
        }
        for c in ["c0", "c1"] {
            g.add_category(Category {
                id: c.into(),
                name: c.into(),
                ..Default::default()
            });
        }
        for b in 0..2 * per {
            let c = if b < per { "c0" } else { "c1" };
            g.add_edge_by_ids(Relation::BookCategory, &format!("B{b}"), c);
        }
        let g = g.build();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let users = 60;
        let mut pairs = Vec::new();
        for u in 0..users {
            let base = (u % 2) * per;
            for _ in 0..5 {
                pairs.push((u, base + rng.gen_range(0..per)));
            }
        }
        let t = train(users, 2 * per, &pairs);
        let ctx = FitContext {
            train: &t,
            valid: &[],
            graph: &g,
            features: None,
            review_texts: None,
            seed: 3,
        };
        let cfg = WarpConfig {
            dim: 16,
            ..Default::default()
        };
        let m = fit_hybrid_warp(&ctx, &cfg).unwrap();
        let mut good = 0;
        for u in 0..users {
            let base = (u % 2) * per;
            let seen = t.seen(u);
            let s = m.scores(u);
            let inside: Vec<f64> = (base..base + per)
                .filter(|b| !seen.contains(b))
                .map(|b| s[b])
                .collect();
            let outside: Vec<f64> = (0..2 * per)
                .filter(|b| *b < base || *b >= base + per)
                .map(|b| s[b])
                .collect();
            let ordered = inside
                .iter()
                .flat_map(|a| outside.iter().map(move |b| a > b))
                .filter(|x| *x)
                .count();
            if ordered as f64 >= 0.9 * (inside.len() * outside.len()) as f64 {
                good += 1;
            }
        }
        assert!(good as f64 >= 0.9 * users as f64, "{good}/{users}");
    }

    #[test]
    fn seeded_runs_identical() {
        let t = train(4, 6, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 5)]);
        let g = crate::graph::BookGraph::default();
        let ctx = FitContext {
            train: &t,
            valid: &[],
            graph: &g,
            features: None,
            review_texts: None,
            seed: 5,
        };
        let cfg = WarpConfig {
            dim: 4,
            epochs: 3,
            ..Default::default()
        };
        let a = fit_hybrid_warp(&ctx, &cfg).unwrap();
        let b = fit_hybrid_warp(&ctx, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
