//! Seeded synthetic catalogs whose reading behavior follows author and
//! category structure. Titles carry no signal.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{
    Author, Book, BookGraph, Category, GraphBuilder, Publisher, Relation, Review, User,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub categories: usize,
    pub authors_per_category: usize,
    pub books_per_author: usize,
    pub publishers: usize,
    /// Inclusive range of distinct books read per user.
    pub reads: (usize, usize),
    /// Probability that a read comes from one of the user's favorite authors.
    pub p_author: f64,
    /// Probability that a read comes from the user's favorite category
    /// (any author); the remainder is catalog-wide.
    pub p_category: f64,
    /// Favorite authors per user, drawn from the favorite category.
    pub favorite_authors: usize,
    /// Spread of the log-normal book appeal weights.
    pub appeal_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 500,
            categories: 10,
            authors_per_category: 6,
            books_per_author: 8,
            publishers: 8,
            reads: (6, 12),
            p_author: 0.7,
            p_category: 0.2,
            favorite_authors: 2,
            appeal_sigma: 0.5,
            seed: 0,
        }
    }
}

/// Builds the catalog and one dated review per read.
pub fn generate(cfg: &SynthConfig) -> BookGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut g = GraphBuilder::new();
    let n_authors = cfg.categories * cfg.authors_per_category;
    let n_books = n_authors * cfg.books_per_author;
    for c in 0..cfg.categories {
        g.add_category(Category {
            id: format!("C{c:03}"),
            name: format!("category {c}"),
            ..Default::default()
        });
    }
    for p in 0..cfg.publishers {
        g.add_publisher(Publisher {
            id: format!("P{p:03}"),
            name: format!("publisher {p}"),
            ..Default::default()
        });
    }
    for a in 0..n_authors {
        g.add_author(Author {
            id: format!("A{a:04}"),
            name: format!("writer {a}"),
            follower_count: Some(rng.gen_range(0..5000)),
            ..Default::default()
        });
        let c = a / cfg.authors_per_category;
        g.add_edge_by_ids(
            Relation::AuthorCategory,
            &format!("A{a:04}"),
            &format!("C{c:03}"),
        );
    }
    let appeal: Vec<f64> = (0..n_books)
        .map(|_| (cfg.appeal_sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp())
        .collect();
    for b in 0..n_books {
        let a = b / cfg.books_per_author;
        let c = a / cfg.authors_per_category;
        let id = format!("B{b:05}");
        g.add_book(Book {
            pages: Some(rng.gen_range(80..600)),
            price: Some(rng.gen_range(100.0..900.0_f64).round()),
            ..Book::titled(id.clone(), format!("volume {b}"))
        });
        g.add_edge_by_ids(Relation::BookAuthor, &id, &format!("A{a:04}"));
        g.add_edge_by_ids(Relation::BookCategory, &id, &format!("C{c:03}"));
        if cfg.publishers > 0 {
            let p = rng.gen_range(0..cfg.publishers);
            g.add_edge_by_ids(Relation::BookPublisher, &id, &format!("P{p:03}"));
        }
    }
    let pick = |rng: &mut ChaCha8Rng, pool: &[usize], taken: &[usize]| -> Option<usize> {
        let free: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|b| !taken.contains(b))
            .collect();
        free.choose_weighted(rng, |&b| appeal[b]).ok().copied()
    };
    let all: Vec<usize> = (0..n_books).collect();
    let mut reads = Vec::new();
    for u in 0..cfg.users {
        g.add_user(User {
            id: format!("USER{u:06}"),
        });
        let c = rng.gen_range(0..cfg.categories);
        let cat_books: Vec<usize> = (0..n_books)
            .filter(|b| b / cfg.books_per_author / cfg.authors_per_category == c)
            .collect();
        let mut authors: Vec<usize> =
            (c * cfg.authors_per_category..(c + 1) * cfg.authors_per_category).collect();
        authors.shuffle(&mut rng);
        authors.truncate(cfg.favorite_authors.max(1));
        let fav_books: Vec<usize> = (0..n_books)
            .filter(|b| authors.contains(&(b / cfg.books_per_author)))
            .collect();
        let n = rng.gen_range(cfg.reads.0..=cfg.reads.1);
        let mut taken = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.gen();
            let pool = if x < cfg.p_author {
                &fav_books
            } else if x < cfg.p_author + cfg.p_category {
                &cat_books
            } else {
                &all
            };
            if let Some(b) = pick(&mut rng, pool, &taken).or_else(|| pick(&mut rng, &all, &taken)) {
                taken.push(b);
                reads.push((u, b, rng.gen_range(3..=5), rng.gen_bool(0.5)));
            }
        }
    }
    let day0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let mut days: Vec<u64> = (0..reads.len() as u64).collect();
    days.shuffle(&mut rng);
    for (k, (u, b, rating, verified)) in reads.into_iter().enumerate() {
        let id = format!("R{k:07}");
        g.add_review(Review {
            id: id.clone(),
            rating: Some(f64::from(rating)),
            date: day0.checked_add_days(chrono::Days::new(days[k])),
            verified,
            ..Default::default()
        });
        g.add_edge_by_ids(Relation::UserReview, &format!("USER{u:06}"), &id);
        g.add_edge_by_ids(Relation::BookReview, &format!("B{b:05}"), &id);
    }
    g.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_interactions, validate_graph};

    #[test]
    fn valid_and_seeded() {
        let cfg = SynthConfig {
            users: 30,
            ..Default::default()
        };
        let g = generate(&cfg);
        assert!(validate_graph(&g).is_valid());
        let a = build_interactions(&g).interactions;
        let b = build_interactions(&generate(&cfg)).interactions;
        assert_eq!(a, b);
        assert!(a.len() >= 30 * 6);
        let mut per_user = vec![Vec::new(); 30];
        for it in &a {
            per_user[it.user].push(it.book);
        }
        for books in &mut per_user {
            let n = books.len();
            books.sort_unstable();
            books.dedup();
            assert_eq!(books.len(), n);
        }
    }
}
