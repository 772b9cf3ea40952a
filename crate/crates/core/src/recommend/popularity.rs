use super::{top_n, FitContext, ModelKind, Recommender};
use crate::error::Result;
use crate::persist::Checkpoint;

/// Same list for every user: books by training interaction count.
#[derive(Clone, Debug, PartialEq)]
pub struct Popularity {
    pub counts: Vec<f64>,
}

pub fn fit_popularity(ctx: &FitContext) -> Popularity {
    Popularity {
        counts: ctx.train.popularity.clone(),
    }
}

impl Popularity {
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        Ok(Self {
            counts: c.get_vec("counts")?,
        })
    }
}

impl Recommender for Popularity {
    fn kind(&self) -> ModelKind {
        ModelKind::Popularity
    }

    fn num_books(&self) -> usize {
        self.counts.len()
    }

    fn scores(&self, _user: usize) -> Vec<f64> {
        self.counts.clone()
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.kind().name());
        c.put_vec("counts", &self.counts);
        c
    }
}

/// Scores a book by how often the user read its categories; ties fall to
/// global popularity, so users without a profile get the popularity list.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryPopularity {
    pub popularity: Vec<f64>,
    pub book_categories: Vec<Vec<usize>>,
    /// Per user, `(category, count)` sorted by category.
    pub profiles: Vec<Vec<(usize, f64)>>,
}

pub fn fit_category_popularity(ctx: &FitContext) -> CategoryPopularity {
    let book_categories: Vec<Vec<usize>> = (0..ctx.train.num_books)
        .map(|b| ctx.graph.book_categories(b).to_vec())
        .collect();
    let mut profiles = vec![Vec::new(); ctx.train.num_users];
    let mut counts = vec![0.0; ctx.graph.categories.len()];
    for (u, items) in ctx.train.history.iter().enumerate() {
        let mut touched = Vec::new();
        for &b in items {
            for &c in &book_categories[b] {
                if counts[c] == 0.0 {
                    touched.push(c);
                }
                counts[c] += 1.0;
            }
        }
        touched.sort_unstable();
        profiles[u] = touched.iter().map(|&c| (c, counts[c])).collect();
        for c in touched {
            counts[c] = 0.0;
        }
    }
    CategoryPopularity {
        popularity: ctx.train.popularity.clone(),
        book_categories,
        profiles,
    }
}

impl CategoryPopularity {
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        Ok(Self {
            popularity: c.get_vec("popularity")?,
            book_categories: c.get_lists("book_categories")?,
            profiles: c.get_weighted_lists("profiles")?,
        })
    }
}

impl Recommender for CategoryPopularity {
    fn kind(&self) -> ModelKind {
        ModelKind::CategoryPop
    }

    fn num_books(&self) -> usize {
        self.popularity.len()
    }

    fn scores(&self, user: usize) -> Vec<f64> {
        let profile = &self.profiles[user];
        self.book_categories
            .iter()
            .map(|cats| {
                cats.iter()
                    .filter_map(|c| {
                        profile
                            .binary_search_by_key(c, |(pc, _)| *pc)
                            .ok()
                            .map(|i| profile[i].1)
                    })
                    .sum()
            })
            .collect()
    }

    fn rank(&self, user: usize, exclude: &[usize], n: usize) -> Vec<(usize, f64)> {
        top_n(&self.scores(user), Some(&self.popularity), exclude, n)
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.kind().name());
        c.put_vec("popularity", &self.popularity);
        c.put_lists("book_categories", &self.book_categories);
        c.put_weighted_lists("profiles", &self.profiles);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::train;
    use super::*;
    use crate::graph::{Book, Category, GraphBuilder, Relation};

    fn ctx_graph(n_books: usize) -> crate::graph::BookGraph {
        let mut g = GraphBuilder::new();
        for i in 0..n_books {
            g.add_book(Book::titled(format!("B{i}"), "t"));
        }
        for c in ["thriller", "poetry"] {
            g.add_category(Category {
                id: c.into(),
                name: c.into(),
                ..Default::default()
            });
        }
        // books 0,1,2 thrillers; 3 poetry; 4 uncategorized
        for b in 0..3 {
            g.add_edge_by_ids(Relation::BookCategory, &format!("B{b}"), "thriller");
        }
        g.add_edge_by_ids(Relation::BookCategory, "B3", "poetry");
        g.build()
    }

    #[test]
    fn popularity_order_and_mask() {
        let t = train(3, 3, &[(0, 0), (1, 0), (2, 0), (0, 1), (1, 2)]);
        let g = ctx_graph(3);
        let ctx = FitContext {
            train: &t,
            valid: &[],
            graph: &g,
            features: None,
            review_texts: None,
            seed: 0,
        };
        let m = fit_popularity(&ctx);
        let order: Vec<usize> = m.rank(2, &[], 3).iter().map(|x| x.0).collect();
        assert_eq!(order, [0, 1, 2]);
        let order: Vec<usize> = m.rank(2, &[0], 3).iter().map(|x| x.0).collect();
        assert_eq!(order, [1, 2]);
        let flat = Popularity {
            counts: vec![1.0; 4],
        };
        let order: Vec<usize> = flat.rank(0, &[], 4).iter().map(|x| x.0).collect();
        assert_eq!(order, [0, 1, 2, 3]);
    }

    #[test]
    fn category_profile_dominates() {
        // user 0 read two thrillers; book 2 (thriller) and book 3 (poetry)
        // are equally popular
        let t = train(2, 5, &[(0, 0), (0, 1), (1, 2), (1, 3)]);
        let g = ctx_graph(5);
        let ctx = FitContext {
            train: &t,
            valid: &[],
            graph: &g,
            features: None,
            review_texts: None,
            seed: 0,
        };
        let m = fit_category_popularity(&ctx);
        let r = m.rank(0, &t.seen(0), 3);
        assert_eq!(r[0], (2, 2.0));
        assert_eq!(r[1].0, 3);
        assert_eq!(r[2], (4, 0.0));

        // cold user gets the popularity list
        let t = train(3, 5, &[(0, 0), (0, 1), (1, 2), (1, 3), (1, 3)]);
        let ctx = FitContext { train: &t, ..ctx };
        let m = fit_category_popularity(&ctx);
        let pop = fit_popularity(&ctx);
        let a: Vec<usize> = m.rank(2, &[], 5).iter().map(|x| x.0).collect();
        let b: Vec<usize> = pop.rank(2, &[], 5).iter().map(|x| x.0).collect();
        assert_eq!(a, b);

        let back = CategoryPopularity::from_checkpoint(&m.checkpoint()).unwrap();
        assert_eq!(back, m);
    }
}
