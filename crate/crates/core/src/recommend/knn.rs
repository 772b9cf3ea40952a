//! Neighborhood models over the binary training matrix. Cosine
//! similarities are computed exactly and then truncated to the top-k.

use super::{top_n, FitContext, ModelKind, Recommender};
use crate::error::Result;
use crate::persist::Checkpoint;

pub const DEFAULT_K: usize = 50;

/// Exact cosine between binary rows `rows[a]` and every other row sharing
/// a column, truncated to the `k` largest (ties by index). Self and zero
/// similarities are dropped.
fn top_k_cosine(rows: &[Vec<usize>], cols: &[Vec<usize>], k: usize) -> Vec<Vec<(usize, f64)>> {
    let mut overlap = vec![0u32; rows.len()];
    let mut touched = Vec::new();
    rows.iter()
        .enumerate()
        .map(|(a, ra)| {
            for &c in ra {
                for &b in &cols[c] {
                    if b != a {
                        if overlap[b] == 0 {
                            touched.push(b);
                        }
                        overlap[b] += 1;
                    }
                }
            }
            let mut sims: Vec<(usize, f64)> = touched
                .drain(..)
                .map(|b| {
                    let s = overlap[b] as f64 / ((ra.len() * rows[b].len()) as f64).sqrt();
                    overlap[b] = 0;
                    (b, s)
                })
                .collect();
            sims.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            sims.truncate(k);
            sims.sort_by_key(|x| x.0);
            sims
        })
        .collect()
}

fn binary_rows(ctx: &FitContext) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let m = &ctx.train.matrix;
    let rows = (0..m.num_users)
        .map(|u| m.user_items(u).collect())
        .collect();
    let cols = (0..m.num_books)
        .map(|b| m.item_users(b).collect())
        .collect();
    (rows, cols)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserCf {
    pub k: usize,
    pub neighbors: Vec<Vec<(usize, f64)>>,
    pub user_items: Vec<Vec<usize>>,
    pub popularity: Vec<f64>,
}

pub fn fit_user_cf(ctx: &FitContext, k: usize) -> UserCf {
    let (rows, cols) = binary_rows(ctx);
    UserCf {
        k,
        neighbors: top_k_cosine(&rows, &cols, k),
        user_items: rows,
        popularity: ctx.train.popularity.clone(),
    }
}

impl UserCf {
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        Ok(Self {
            k: c.get_hparam("k")? as usize,
            neighbors: c.get_weighted_lists("neighbors")?,
            user_items: c.get_lists("user_items")?,
            popularity: c.get_vec("popularity")?,
        })
    }
}

impl Recommender for UserCf {
    fn kind(&self) -> ModelKind {
        ModelKind::UserCf
    }

    fn num_books(&self) -> usize {
        self.popularity.len()
    }

    fn scores(&self, user: usize) -> Vec<f64> {
        let mut s = vec![0.0; self.popularity.len()];
        for &(v, sim) in &self.neighbors[user] {
            for &b in &self.user_items[v] {
                s[b] += sim;
            }
        }
        s
    }

    fn rank(&self, user: usize, exclude: &[usize], n: usize) -> Vec<(usize, f64)> {
        if self.user_items[user].is_empty() {
            let zeros = vec![0.0; self.popularity.len()];
            return top_n(&zeros, Some(&self.popularity), exclude, n);
        }
        top_n(&self.scores(user), None, exclude, n)
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.kind().name());
        c.hparam("k", self.k as f64);
        c.put_weighted_lists("neighbors", &self.neighbors);
        c.put_lists("user_items", &self.user_items);
        c.put_vec("popularity", &self.popularity);
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemCf {
    pub k: usize,
    /// Per book, its top-k most similar books.
    pub neighbors: Vec<Vec<(usize, f64)>>,
    pub user_items: Vec<Vec<usize>>,
    pub popularity: Vec<f64>,
}

pub fn fit_item_cf(ctx: &FitContext, k: usize) -> ItemCf {
    let (rows, cols) = binary_rows(ctx);
    ItemCf {
        k,
        neighbors: top_k_cosine(&cols, &rows, k),
        user_items: rows,
        popularity: ctx.train.popularity.clone(),
    }
}

impl ItemCf {
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        Ok(Self {
            k: c.get_hparam("k")? as usize,
            neighbors: c.get_weighted_lists("neighbors")?,
            user_items: c.get_lists("user_items")?,
            popularity: c.get_vec("popularity")?,
        })
    }
}

impl Recommender for ItemCf {
    fn kind(&self) -> ModelKind {
        ModelKind::ItemCf
    }

    fn num_books(&self) -> usize {
        self.popularity.len()
    }

    /// Sum over the user's books `j` of `sim(i, j)` for each `i` in the
    /// top-k list of `j`.
    fn scores(&self, user: usize) -> Vec<f64> {
        let mut s = vec![0.0; self.popularity.len()];
        for &j in &self.user_items[user] {
            for &(i, sim) in &self.neighbors[j] {
                s[i] += sim;
            }
        }
        s
    }

    fn rank(&self, user: usize, exclude: &[usize], n: usize) -> Vec<(usize, f64)> {
        if self.user_items[user].is_empty() {
            let zeros = vec![0.0; self.popularity.len()];
            return top_n(&zeros, Some(&self.popularity), exclude, n);
        }
        top_n(&self.scores(user), None, exclude, n)
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.kind().name());
        c.hparam("k", self.k as f64);
        c.put_weighted_lists("neighbors", &self.neighbors);
        c.put_lists("user_items", &self.user_items);
        c.put_vec("popularity", &self.popularity);
        c
    }
}
