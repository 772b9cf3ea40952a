//! Pure content-based ranking: a candidate scores its maximum cosine
//! similarity to any book in the user's training history.

use super::{top_n, FitContext, ModelKind, Recommender};
use crate::error::Result;
use crate::features::{tfidf_fit, tokenize, SparseVec, TfidfModel};
use crate::persist::Checkpoint;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContentConfig {
    pub min_df: f64,
    pub max_df: f64,
    pub max_features: usize,
    /// Append the TF-IDF block of training review text.
    pub use_text: bool,
}

impl Default for ContentConfig {
    fn default() -> Self {
        Self {
            min_df: 0.2,
            max_df: 0.8,
            max_features: 5000,
            use_text: true,
        }
    }
}

/// `[authors | categories | publishers | tfidf]` per book, L2-normalized so
/// cosine is a dot product. Also returns the fitted TF-IDF model, if any.
pub fn content_item_vectors(
    ctx: &FitContext,
    cfg: &ContentConfig,
) -> Result<(Vec<SparseVec>, Option<TfidfModel>)> {
    let g = ctx.graph;
    let n = ctx.train.num_books;
    let tfidf = match (cfg.use_text, ctx.review_texts) {
        (true, Some(texts)) => {
            let mut docs = vec![Vec::new(); n];
            for (it, t) in ctx.train.interactions.iter().zip(texts) {
                if let Some(t) = t {
                    docs[it.book].extend(tokenize(t));
                }
            }
            let corpus: Vec<Vec<String>> = docs.iter().filter(|d| !d.is_empty()).cloned().collect();
            if corpus.is_empty() {
                None
            } else {
                let model = tfidf_fit(&corpus, cfg.min_df, cfg.max_df, cfg.max_features)?;
                let rows: Vec<SparseVec> = docs.iter().map(|d| model.transform(d)).collect();
                Some((model, rows))
            }
        }
        _ => None,
    };
    let vectors = (0..n)
        .map(|b| {
            let a = SparseVec::binary(g.authors.len(), g.book_authors(b).to_vec());
            let c = SparseVec::binary(g.categories.len(), g.book_categories(b).to_vec());
            let p = SparseVec::binary(g.publishers.len(), g.book_publishers(b).to_vec());
            let mut v = match &tfidf {
                Some((_, rows)) => SparseVec::concat(&[&a, &c, &p, &rows[b]]),
                None => SparseVec::concat(&[&a, &c, &p]),
            };
            let norm = v.norm();
            if norm > 0.0 {
                v.values.iter_mut().for_each(|x| *x /= norm);
            }
            v
        })
        .collect();
    Ok((vectors, tfidf.map(|t| t.0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContentBased {
    /// Unit-norm (or zero) item vectors.
    pub items: Vec<SparseVec>,
    pub history: Vec<Vec<usize>>,
    pub popularity: Vec<f64>,
    pub dim: usize,
}

pub fn fit_content_based(ctx: &FitContext, cfg: &ContentConfig) -> Result<ContentBased> {
    let (items, _) = content_item_vectors(ctx, cfg)?;
    let dim = items.first().map_or(0, |v| v.dim);
    let history = (0..ctx.train.num_users)
        .map(|u| ctx.train.seen(u))
        .collect();
    Ok(ContentBased {
        items,
        history,
        popularity: ctx.train.popularity.clone(),
        dim,
    })
}

impl ContentBased {
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let dim = c.get_hparam("dim")? as usize;
        let items = c
            .get_weighted_lists("items")?
            .into_iter()
            .map(|row| {
                let (indices, values) = row.into_iter().unzip();
                SparseVec {
                    dim,
                    indices,
                    values,
                }
            })
            .collect();
        Ok(Self {
            items,
            history: c.get_lists("history")?,
            popularity: c.get_vec("popularity")?,
            dim,
        })
    }
}

impl Recommender for ContentBased {
    fn kind(&self) -> ModelKind {
        ModelKind::Content
    }

    fn num_books(&self) -> usize {
        self.items.len()
    }

    fn scores(&self, user: usize) -> Vec<f64> {
        let hist = &self.history[user];
        let mut best = vec![0.0f64; self.items.len()];
        if hist.is_empty() {
            return best;
        }
        let mut dense = vec![0.0; self.dim];
        for &j in hist {
            let hj = &self.items[j];
            for (&k, &v) in hj.indices.iter().zip(&hj.values) {
                dense[k] = v;
            }
            for (i, x) in self.items.iter().enumerate() {
                let s: f64 = x
                    .indices
                    .iter()
                    .zip(&x.values)
                    .map(|(&k, &v)| v * dense[k])
                    .sum();
                best[i] = best[i].max(s);
            }
            for &k in &hj.indices {
                dense[k] = 0.0;
            }
        }
        best
    }

    fn rank(&self, user: usize, exclude: &[usize], n: usize) -> Vec<(usize, f64)> {
        if self.history[user].is_empty() {
            let zeros = vec![0.0; self.items.len()];
            return top_n(&zeros, Some(&self.popularity), exclude, n);
        }
        top_n(&self.scores(user), None, exclude, n)
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.kind().name());
        c.hparam("dim", self.dim as f64);
        let rows: Vec<Vec<(usize, f64)>> = self
            .items
            .iter()
            .map(|v| {
                v.indices
                    .iter()
                    .copied()
                    .zip(v.values.iter().copied())
                    .collect()
            })
            .collect();
        c.put_weighted_lists("items", &rows);
        c.put_lists("history", &self.history);
        c.put_vec("popularity", &self.popularity);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::train;
    use super::*;
    use crate::graph::{Author, Book, Category, GraphBuilder, Relation};

    fn graph() -> crate::graph::BookGraph {
        let mut g = GraphBuilder::new();
        for i in 0..4 {
            g.add_book(Book::titled(format!("B{i}"), "t"));
        }
        for a in ["a0", "a1", "a2"] {
            g.add_author(Author {
                id: a.into(),
                name: a.into(),
                ..Default::default()
            });
        }
        g.add_category(Category {
            id: "c0".into(),
            name: "c0".into(),
            ..Default::default()
        });
        // B0 and B1 identical; B2 shares nothing; B3 shares the category
        for (b, a) in [("B0", "a0"), ("B1", "a0"), ("B2", "a1"), ("B3", "a2")] {
            g.add_edge_by_ids(Relation::BookAuthor, b, a);
        }
        for b in ["B0", "B1", "B3"] {
            g.add_edge_by_ids(Relation::BookCategory, b, "c0");
        }
        g.build()
    }

    fn fit(pairs: &[(usize, usize)], texts: Option<&[Option<String>]>) -> ContentBased {
        let t = train(3, 4, pairs);
        let g = graph();
        let ctx = FitContext {
            train: &t,
            valid: &[],
            graph: &g,
            features: None,
            review_texts: texts,
            seed: 0,
        };
        fit_content_based(&ctx, &ContentConfig::default()).unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        let m = fit(&[(0, 0)], None);
        let s = m.scores(0);
        assert!((s[1] - 1.0).abs() < 1e-12);
        assert_eq!(s[2], 0.0);
        assert!((s[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn max_over_history() {
        let m = fit(&[(0, 2), (0, 3)], None);
        let s = m.scores(0);
        // B1 vs B2 = 0, B1 vs B3 = 0.5
        assert!((s[1] - 0.5).abs() < 1e-12);
        let only3 = fit(&[(0, 3)], None).scores(0);
        assert_eq!(s[1], only3[1].max(fit(&[(0, 2)], None).scores(0)[1]));
    }

    #[test]
    fn empty_history_uses_popularity() {
        let m = fit(&[(0, 3), (1, 3), (1, 2)], None);
        let order: Vec<usize> = m.rank(2, &[], 4).iter().map(|x| x.0).collect();
        assert_eq!(order, [3, 2, 0, 1]);
        assert_eq!(ContentBased::from_checkpoint(&m.checkpoint()).unwrap(), m);
    }

    #[test]
    fn review_text_block_is_used() {
        let texts = vec![
            Some("dragon ship".to_string()),
            Some("quiet garden".to_string()),
            Some("dragon ship".to_string()),
        ];
        let m = fit(&[(0, 2), (1, 3), (2, 1)], Some(&texts));
        assert!(m.dim > 4);
        // B2 and B1 share no metadata but share review text
        assert!(m.scores(0)[1] > 0.0);
    }
}
