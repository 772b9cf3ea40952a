//! Training-split views shared by all recommenders.

use crate::graph::Interaction;

/// User × book matrix over distinct training pairs, held as both a
/// row-major (per user) and a column-major (per book) adjacency.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionMatrix {
    pub num_users: usize,
    pub num_books: usize,
    /// Sorted distinct books per user, with the summed interaction weight.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Sorted distinct users per book, with the summed interaction weight.
    pub cols: Vec<Vec<(usize, f64)>>,
}

impl InteractionMatrix {
    pub fn from_interactions(num_users: usize, num_books: usize, rows_in: &[Interaction]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_users];
        for it in rows_in {
            rows[it.user].push((it.book, it.weight));
        }
        for r in &mut rows {
            r.sort_by_key(|(b, _)| *b);
            r.dedup_by(|next, kept| {
                if next.0 == kept.0 {
                    kept.1 += next.1;
                    true
                } else {
                    false
                }
            });
        }
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_books];
        for (u, r) in rows.iter().enumerate() {
            for &(b, w) in r {
                cols[b].push((u, w));
            }
        }
        Self {
            num_users,
            num_books,
            rows,
            cols,
        }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn user_items(&self, user: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[user].iter().map(|(b, _)| *b)
    }

    pub fn item_users(&self, book: usize) -> impl Iterator<Item = usize> + '_ {
        self.cols[book].iter().map(|(u, _)| *u)
    }

    pub fn contains(&self, user: usize, book: usize) -> bool {
        self.rows[user]
            .binary_search_by_key(&book, |(b, _)| *b)
            .is_ok()
    }
}

/// Training interactions plus derived indices.
#[derive(Clone, Debug, Default)]
pub struct TrainSet {
    pub num_users: usize,
    pub num_books: usize,
    pub interactions: Vec<Interaction>,
    pub matrix: InteractionMatrix,
    /// Interaction count per book, duplicates included.
    pub popularity: Vec<f64>,
    /// Per user, training books from oldest to most recent.
    pub history: Vec<Vec<usize>>,
}

impl TrainSet {
    pub fn new(num_users: usize, num_books: usize, interactions: Vec<Interaction>) -> Self {
        let matrix = InteractionMatrix::from_interactions(num_users, num_books, &interactions);
        let mut popularity = vec![0.0; num_books];
        for it in &interactions {
            popularity[it.book] += 1.0;
        }
        let mut ordered: Vec<&Interaction> = interactions.iter().collect();
        ordered.sort_by_key(|it| it.seq);
        let mut history = vec![Vec::new(); num_users];
        for it in ordered {
            history[it.user].push(it.book);
        }
        Self {
            num_users,
            num_books,
            interactions,
            matrix,
            popularity,
            history,
        }
    }

    /// Sorted distinct training books of a user; the evaluation mask.
    pub fn seen(&self, user: usize) -> Vec<usize> {
        self.matrix.user_items(user).collect()
    }

    /// Up to `k` most recent training books of a user, oldest first.
    pub fn recent(&self, user: usize, k: usize) -> &[usize] {
        let h = &self.history[user];
        &h[h.len().saturating_sub(k)..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn it(user: usize, book: usize, seq: usize) -> Interaction {
        Interaction {
            user,
            book,
            weight: 1.0,
            date: None,
            rating: None,
            verified: false,
            seq,
            review: None,
        }
    }

    #[test]
    fn views_agree_and_dedup() {
        let rows = vec![it(0, 2, 0), it(0, 1, 1), it(1, 2, 2), it(0, 2, 3)];
        let t = TrainSet::new(2, 3, rows);
        assert_eq!(t.matrix.nnz(), 3);
        assert_eq!(t.matrix.rows[0], vec![(1, 1.0), (2, 2.0)]);
        assert_eq!(t.matrix.cols[2], vec![(0, 2.0), (1, 1.0)]);
        assert_eq!(t.popularity, vec![0.0, 1.0, 3.0]);
        assert_eq!(t.history[0], vec![2, 1, 2]);
        assert_eq!(t.recent(0, 2), &[1, 2]);
        for u in 0..2 {
            for b in t.matrix.user_items(u) {
                assert!(t.matrix.item_users(b).any(|x| x == u));
            }
        }
    }
}
