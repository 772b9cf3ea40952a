//! Dataset profiling: metadata completeness, engagement and activity
//! histograms, rating and review-language distributions, page-range
//! engagement and publisher affinity through shared authors.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{BookGraph, Relation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub label: String,
    pub count: usize,
    pub percent: f64,
}

fn bins(labels: &[&str], counts: &[usize]) -> Vec<Bin> {
    let total: usize = counts.iter().sum();
    labels
        .iter()
        .zip(counts)
        .map(|(l, &c)| Bin {
            label: (*l).to_string(),
            count: c,
            percent: if total == 0 {
                0.0
            } else {
                100.0 * c as f64 / total as f64
            },
        })
        .collect()
}

pub const ENGAGEMENT_BINS: [&str; 6] = [
    "0 reviews",
    "1 review",
    "2 reviews",
    "3 reviews",
    "4 reviews",
    "5 or more reviews",
];
pub const ACTIVITY_BINS: [&str; 6] = [
    "1 review",
    "2-4 reviews",
    "5-9 reviews",
    "10-19 reviews",
    "20-49 reviews",
    "50 or more reviews",
];
pub const PAGE_BINS: [&str; 6] = ["1-100", "101-200", "201-300", "301-400", "401-500", "500+"];
pub const RATING_BINS: [&str; 6] = ["0", "1", "2", "3", "4", "5"];

pub fn engagement_bin(reviews: usize) -> usize {
    reviews.min(5)
}

/// Users with zero reviews have no bin.
pub fn activity_bin(reviews: usize) -> Option<usize> {
    Some(match reviews {
        0 => return None,
        1 => 0,
        2..=4 => 1,
        5..=9 => 2,
        10..=19 => 3,
        20..=49 => 4,
        _ => 5,
    })
}

/// Pages of 0 have no bin.
pub fn page_bin(pages: u32) -> Option<usize> {
    Some(match pages {
        0 => return None,
        1..=100 => 0,
        101..=200 => 1,
        201..=300 => 2,
        301..=400 => 3,
        401..=500 => 4,
        _ => 5,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    Bangla,
    English,
    Mixed,
    Other,
}

impl Language {
    pub const ALL: [Language; 4] = [
        Language::Bangla,
        Language::English,
        Language::Mixed,
        Language::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Language::Bangla => "Bangla",
            Language::English => "English",
            Language::Mixed => "Bangla + English",
            Language::Other => "Other",
        }
    }
}

/// Script-share thresholds for [`classify_language`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageThresholds {
    pub dominant: f64,
    pub minor: f64,
}

impl Default for LanguageThresholds {
    fn default() -> Self {
        Self {
            dominant: 0.9,
            minor: 0.1,
        }
    }
}

fn is_bengali(c: char) -> bool {
    ('\u{0980}'..='\u{09FF}').contains(&c) && !('\u{09E6}'..='\u{09EF}').contains(&c)
}

/// Counts letters only: Bengali-block characters other than digits, ASCII
/// letters, and any other alphabetic character.
pub fn classify_language_with(text: &str, t: LanguageThresholds) -> Language {
    let (mut bn, mut en, mut total) = (0usize, 0usize, 0usize);
    for c in text.chars() {
        if is_bengali(c) {
            bn += 1;
            total += 1;
        } else if c.is_ascii_alphabetic() {
            en += 1;
            total += 1;
        } else if c.is_alphabetic() {
            total += 1;
        }
    }
    if total == 0 {
        return Language::Other;
    }
    let (b, e) = (bn as f64 / total as f64, en as f64 / total as f64);
    if b >= t.dominant {
        Language::Bangla
    } else if e >= t.dominant {
        Language::English
    } else if b >= t.minor && e >= t.minor {
        Language::Mixed
    } else {
        Language::Other
    }
}

pub fn classify_language(text: &str) -> Language {
    classify_language_with(text, LanguageThresholds::default())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldCompleteness {
    pub field: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageRange {
    pub label: String,
    pub books: usize,
    pub books_percent: f64,
    pub reviews: usize,
    pub reviews_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryEngagement {
    pub category: String,
    pub reviews: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub books: usize,
    pub users: usize,
    pub reviews: usize,
    pub completeness: Vec<FieldCompleteness>,
    pub book_engagement: Vec<Bin>,
    pub user_activity: Vec<Bin>,
    /// Rounded review ratings; bin "0" holds unrated reviews.
    pub ratings: Vec<Bin>,
    pub languages: Vec<Bin>,
    pub thresholds: LanguageThresholds,
    pub page_ranges: Vec<PageRange>,
    pub top_categories: Vec<CategoryEngagement>,
}

pub fn compute_profile(graph: &BookGraph) -> DatasetProfile {
    compute_profile_with(graph, LanguageThresholds::default())
}

pub fn compute_profile_with(graph: &BookGraph, thresholds: LanguageThresholds) -> DatasetProfile {
    let nb = graph.num_books();
    let books = &graph.books;
    let count = |f: &dyn Fn(usize) -> bool| (0..nb).filter(|&b| f(b)).count();
    let fields: [(&str, usize); 9] = [
        ("Title", count(&|b| !books[b].title.trim().is_empty())),
        ("Book ID", count(&|b| !books[b].id.is_empty())),
        ("Category", count(&|b| !graph.book_categories(b).is_empty())),
        (
            "Publisher",
            count(&|b| !graph.book_publishers(b).is_empty()),
        ),
        ("Rating", count(&|b| books[b].avg_rating.is_some())),
        ("Review Count", count(&|b| books[b].review_count.is_some())),
        ("Pages", count(&|b| books[b].pages.is_some())),
        ("ISBN", count(&|b| books[b].isbn.is_some())),
        ("Summary", count(&|b| books[b].summary.is_some())),
    ];
    let completeness = fields
        .iter()
        .map(|(f, c)| FieldCompleteness {
            field: (*f).to_string(),
            count: *c,
            percent: if nb == 0 {
                0.0
            } else {
                100.0 * *c as f64 / nb as f64
            },
        })
        .collect();

    let book_reviews: Vec<usize> = graph
        .forward(Relation::BookReview)
        .iter()
        .map(Vec::len)
        .collect();
    let mut engagement = [0usize; 6];
    for b in 0..nb {
        engagement[engagement_bin(book_reviews.get(b).copied().unwrap_or(0))] += 1;
    }
    let mut activity = [0usize; 6];
    for reviews in graph.forward(Relation::UserReview).iter().map(Vec::len) {
        if let Some(k) = activity_bin(reviews) {
            activity[k] += 1;
        }
    }
    let mut ratings = [0usize; 6];
    for r in &graph.reviews {
        let k = r.rating.map_or(0, |x| x.round().clamp(0.0, 5.0) as usize);
        ratings[k] += 1;
    }
    let langs: Vec<Language> = graph
        .reviews
        .par_iter()
        .map(|r| classify_language_with(r.text.as_deref().unwrap_or(""), thresholds))
        .collect();
    let mut lang_counts = [0usize; 4];
    for l in langs {
        lang_counts[l as usize] += 1;
    }
    let lang_labels: Vec<&str> = Language::ALL.iter().map(|l| l.label()).collect();

    let mut page_books = [0usize; 6];
    let mut page_reviews = [0usize; 6];
    for b in 0..nb {
        if let Some(k) = books[b].pages.and_then(page_bin) {
            page_books[k] += 1;
            page_reviews[k] += book_reviews.get(b).copied().unwrap_or(0);
        }
    }
    let (tb, tr) = (
        page_books.iter().sum::<usize>(),
        page_reviews.iter().sum::<usize>(),
    );
    let pct = |c: usize, t: usize| {
        if t == 0 {
            0.0
        } else {
            100.0 * c as f64 / t as f64
        }
    };
    let page_ranges = (0..6)
        .map(|k| PageRange {
            label: PAGE_BINS[k].to_string(),
            books: page_books[k],
            books_percent: pct(page_books[k], tb),
            reviews: page_reviews[k],
            reviews_percent: pct(page_reviews[k], tr),
        })
        .collect();

    let mut cat_reviews = vec![0usize; graph.categories.len()];
    for b in 0..nb {
        for &c in graph.book_categories(b) {
            cat_reviews[c] += book_reviews.get(b).copied().unwrap_or(0);
        }
    }
    let mut order: Vec<usize> = (0..cat_reviews.len())
        .filter(|&c| cat_reviews[c] > 0)
        .collect();
    order.sort_by(|&a, &b| cat_reviews[b].cmp(&cat_reviews[a]).then(a.cmp(&b)));
    let top_categories = order
        .into_iter()
        .take(10)
        .map(|c| CategoryEngagement {
            category: graph.categories[c].name.clone(),
            reviews: cat_reviews[c],
        })
        .collect();

    DatasetProfile {
        books: nb,
        users: graph.users.len(),
        reviews: graph.reviews.len(),
        completeness,
        book_engagement: bins(&ENGAGEMENT_BINS, &engagement),
        user_activity: bins(&ACTIVITY_BINS, &activity),
        ratings: bins(&RATING_BINS, &ratings),
        languages: bins(&lang_labels, &lang_counts),
        thresholds,
        page_ranges,
        top_categories,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublisherAffinity {
    pub a: usize,
    pub b: usize,
    pub shared: usize,
    pub jaccard: f64,
}

/// Publisher pairs sharing at least one author, ranked by shared-author
/// count, then Jaccard similarity, then publisher indices.
pub fn jaccard_affinity(graph: &BookGraph, top_n: usize) -> Vec<PublisherAffinity> {
    let np = graph.publishers.len();
    let by_pub = graph.backward(Relation::AuthorPublisher);
    let sets: Vec<BTreeSet<usize>> = (0..np)
        .map(|p| {
            by_pub
                .get(p)
                .map(|l| l.iter().copied().collect())
                .unwrap_or_default()
        })
        .collect();
    let mut pairs: Vec<PublisherAffinity> = (0..np)
        .into_par_iter()
        .flat_map_iter(|a| {
            let sets = &sets;
            (a + 1..np).filter_map(move |b| {
                let shared = sets[a].intersection(&sets[b]).count();
                (shared > 0).then(|| PublisherAffinity {
                    a,
                    b,
                    shared,
                    jaccard: shared as f64 / (sets[a].len() + sets[b].len() - shared) as f64,
                })
            })
        })
        .collect();
    pairs.sort_by(|x, y| {
        y.shared
            .cmp(&x.shared)
            .then(y.jaccard.total_cmp(&x.jaccard))
            .then((x.a, x.b).cmp(&(y.a, y.b)))
    });
    pairs.truncate(top_n);
    pairs
}

fn table(out: &mut String, title: &str, header: &[&str], rows: &[Vec<String>]) {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].chars().count())
                .chain([header[c].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let _ = writeln!(out, "{title}");
    let line = |cells: Vec<&str>, out: &mut String| {
        for (c, cell) in cells.iter().enumerate() {
            let pad = " ".repeat(widths[c] - cell.chars().count());
            if c == 0 {
                let _ = write!(out, "{cell}{pad}");
            } else {
                let _ = write!(out, "  {pad}{cell}");
            }
        }
        out.push('\n');
    };
    line(header.to_vec(), out);
    let _ = writeln!(
        out,
        "{}",
        "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
    );
    for r in rows {
        line(r.iter().map(String::as_str).collect(), out);
    }
    out.push('\n');
}

fn bin_rows(b: &[Bin]) -> Vec<Vec<String>> {
    b.iter()
        .map(|x| {
            vec![
                x.label.clone(),
                x.count.to_string(),
                format!("{:.2}", x.percent),
            ]
        })
        .collect()
}

/// Aligned text tables for a profile and an affinity list.
pub fn format_profile(
    p: &DatasetProfile,
    affinity: &[PublisherAffinity],
    graph: &BookGraph,
) -> String {
    let mut out = String::new();
    let rows: Vec<Vec<String>> = p
        .completeness
        .iter()
        .map(|f| {
            vec![
                f.field.clone(),
                f.count.to_string(),
                format!("{:.1}", f.percent),
            ]
        })
        .collect();
    table(
        &mut out,
        "Metadata completeness",
        &["Metadata Field", "Count", "Completeness (%)"],
        &rows,
    );
    table(
        &mut out,
        "Book interaction sparsity",
        &["Engagement Category", "Book Count", "Percentage (%)"],
        &bin_rows(&p.book_engagement),
    );
    table(
        &mut out,
        "User interaction sparsity",
        &["Review Activity", "# Users", "Percentage (%)"],
        &bin_rows(&p.user_activity),
    );
    table(
        &mut out,
        "Rating frequency",
        &["Rating", "Count", "Percentage (%)"],
        &bin_rows(&p.ratings),
    );
    table(
        &mut out,
        "Reviews by language type",
        &["Language Type", "# Reviews", "Percentage (%)"],
        &bin_rows(&p.languages),
    );
    let rows: Vec<Vec<String>> = p
        .page_ranges
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.books.to_string(),
                format!("{:.2}", r.books_percent),
                format!("{:.2}", r.reviews_percent),
            ]
        })
        .collect();
    table(
        &mut out,
        "Interactions by book length",
        &["Page Range", "# Book", "Books (%)", "# Reviews (%)"],
        &rows,
    );
    let rows: Vec<Vec<String>> = affinity
        .iter()
        .enumerate()
        .map(|(i, a)| {
            vec![
                (i + 1).to_string(),
                graph.publishers[a.a].name.clone(),
                graph.publishers[a.b].name.clone(),
                a.shared.to_string(),
                format!("{:.3}", a.jaccard),
            ]
        })
        .collect();
    table(
        &mut out,
        "Publisher affinity via shared authors",
        &[
            "Rank",
            "Publisher 1",
            "Publisher 2",
            "# Shared Authors",
            "Similarity",
        ],
        &rows,
    );
    let rows: Vec<Vec<String>> = p
        .top_categories
        .iter()
        .map(|c| vec![c.category.clone(), c.reviews.to_string()])
        .collect();
    table(
        &mut out,
        "Categories by user engagement",
        &["Category", "# Reviews"],
        &rows,
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Author;
    use crate::graph::{Book, GraphBuilder, Publisher, Review, User};

    #[test]
    fn language_rules() {
        assert_eq!(classify_language("আমি বই পড়তে ভালোবাসি"), Language::Bangla);
        assert_eq!(
            classify_language("A wonderful read, 10/10!"),
            Language::English
        );
        assert_eq!(classify_language("boi ta khub বালো লাগলো"), Language::Mixed);
        assert_eq!(classify_language("১২৩ !!! 456"), Language::Other);
        assert_eq!(classify_language(""), Language::Other);
        assert_eq!(classify_language("Привет мир"), Language::Other);
    }

    #[test]
    fn bins_edges() {
        assert_eq!(activity_bin(0), None);
        assert_eq!(activity_bin(4), Some(1));
        assert_eq!(activity_bin(5), Some(2));
        assert_eq!(activity_bin(50), Some(5));
        assert_eq!(page_bin(100), Some(0));
        assert_eq!(page_bin(101), Some(1));
        assert_eq!(page_bin(501), Some(5));
        assert_eq!(engagement_bin(9), 5);
    }

    #[test]
    fn jaccard_cases() {
        let mut g = GraphBuilder::new();
        for p in 0..4 {
            g.add_publisher(Publisher {
                id: format!("P{p}"),
                name: format!("p{p}"),
                ..Default::default()
            });
        }
        for a in ["a", "b", "c", "d", "e", "x"] {
            g.add_author(Author {
                id: a.into(),
                name: a.into(),
                ..Default::default()
            });
        }
        for (a, p) in [
            ("a", 0),
            ("b", 0),
            ("c", 0),
            ("b", 1),
            ("c", 1),
            ("d", 1),
            ("e", 1),
            ("x", 2),
            ("x", 3),
        ] {
            g.add_edge_by_ids(Relation::AuthorPublisher, a, &format!("P{p}"));
        }
        let r = jaccard_affinity(&g.build(), 10);
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].a, r[0].b, r[0].shared), (0, 1, 2));
        assert!((r[0].jaccard - 0.4).abs() < 1e-15);
        assert_eq!((r[1].a, r[1].b, r[1].jaccard), (2, 3, 1.0));
    }

    #[test]
    fn profile_counts() {
        let mut g = GraphBuilder::new();
        for (i, pages) in [Some(50), Some(150), None].into_iter().enumerate() {
            g.add_book(Book {
                pages,
                ..Book::titled(format!("B{i}"), "t")
            });
        }
        for u in 0..2 {
            g.add_user(User {
                id: format!("U{u}"),
            });
        }
        // book reviews 0, 2, 7; users 1 and 8
        let mut k = 0;
        for (book, n) in [(1, 2), (2, 7)] {
            for _ in 0..n {
                let id = format!("R{k}");
                g.add_review(Review {
                    id: id.clone(),
                    rating: (k % 3 != 0).then_some(4.6),
                    text: Some("nice".into()),
                    ..Default::default()
                });
                g.add_edge_by_ids(Relation::BookReview, &format!("B{book}"), &id);
                g.add_edge_by_ids(Relation::UserReview, if k == 0 { "U0" } else { "U1" }, &id);
                k += 1;
            }
        }
        let p = compute_profile(&g.build());
        let counts = |b: &[Bin]| b.iter().map(|x| x.count).collect::<Vec<_>>();
        assert_eq!(counts(&p.book_engagement), vec![1, 0, 1, 0, 0, 1]);
        assert_eq!(counts(&p.user_activity), vec![1, 0, 1, 0, 0, 0]);
        assert_eq!(counts(&p.ratings), vec![3, 0, 0, 0, 0, 6]);
        assert_eq!(counts(&p.languages), vec![0, 9, 0, 0]);
        assert_eq!((p.page_ranges[0].books, p.page_ranges[1].reviews), (1, 2));
        assert_eq!(p.completeness[6].count, 2);
    }
}
