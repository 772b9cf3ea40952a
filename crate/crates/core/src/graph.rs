//! Typed in-memory heterogeneous book graph.
//!
//! Every entity kind gets its own dense index space; external string ids are
//! kept in a side map. Edges are stored per relation and an adjacency index in
//! both directions is built once at construction. The graph is immutable after
//! [`GraphBuilder::build`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::interaction_weight;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Book,
    Author,
    Category,
    Publisher,
    Review,
    User,
}

impl EntityKind {
    pub const ALL: [EntityKind; 6] = [
        EntityKind::Book,
        EntityKind::Author,
        EntityKind::Category,
        EntityKind::Publisher,
        EntityKind::Review,
        EntityKind::User,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EntityKind::Book => "book",
            EntityKind::Author => "author",
            EntityKind::Category => "category",
            EntityKind::Publisher => "publisher",
            EntityKind::Review => "review",
            EntityKind::User => "user",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        EntityKind::ALL.into_iter().find(|k| k.name() == s)
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId {
    pub kind: EntityKind,
    pub index: usize,
}

impl EntityId {
    pub fn new(kind: EntityKind, index: usize) -> Self {
        Self { kind, index }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.kind.name(), self.index)
    }
}

/// The eight base relation kinds. Each is stored in one direction
/// (`src` kind to `dst` kind) and traversable both ways.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    BookAuthor,
    BookPublisher,
    BookCategory,
    AuthorCategory,
    AuthorPublisher,
    PublisherCategory,
    UserReview,
    BookReview,
}

impl Relation {
    pub const ALL: [Relation; 8] = [
        Relation::BookAuthor,
        Relation::BookPublisher,
        Relation::BookCategory,
        Relation::AuthorCategory,
        Relation::AuthorPublisher,
        Relation::PublisherCategory,
        Relation::UserReview,
        Relation::BookReview,
    ];

    pub fn endpoints(self) -> (EntityKind, EntityKind) {
        use EntityKind::*;
        match self {
            Relation::BookAuthor => (Book, Author),
            Relation::BookPublisher => (Book, Publisher),
            Relation::BookCategory => (Book, Category),
            Relation::AuthorCategory => (Author, Category),
            Relation::AuthorPublisher => (Author, Publisher),
            Relation::PublisherCategory => (Publisher, Category),
            Relation::UserReview => (User, Review),
            Relation::BookReview => (Book, Review),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::BookAuthor => "book_author",
            Relation::BookPublisher => "book_publisher",
            Relation::BookCategory => "book_category",
            Relation::AuthorCategory => "author_category",
            Relation::AuthorPublisher => "author_publisher",
            Relation::PublisherCategory => "publisher_category",
            Relation::UserReview => "user_review",
            Relation::BookReview => "book_review",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Relation::ALL.into_iter().find(|r| r.name() == s)
    }

    /// True for relations that carry user feedback rather than catalog structure.
    pub fn is_interaction(self) -> bool {
        matches!(self, Relation::UserReview | Relation::BookReview)
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationEdge {
    pub relation: Relation,
    pub src: EntityId,
    pub dst: EntityId,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Book {
    pub id: String,
    pub title: String,
    pub summary: Option<String>,
    pub isbn: Option<String>,
    pub avg_rating: Option<f64>,
    pub rating_count: Option<u64>,
    pub review_count: Option<u64>,
    pub pages: Option<u32>,
    pub price: Option<f64>,
}

impl Book {
    pub fn titled(id: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Author {
    pub id: String,
    pub name: String,
    pub biography: Option<String>,
    pub follower_count: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: String,
    pub name: String,
    pub description: Option<String>,
    pub total_book_count: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Publisher {
    pub id: String,
    pub name: String,
    pub description: Option<String>,
    pub total_author_count: Option<u64>,
    pub total_book_count: Option<u64>,
}

/// A review. Its user and book are recorded as `UserReview` and
/// `BookReview` edges, see [`BookGraph::review_user`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub id: String,
    pub rating: Option<f64>,
    pub text: Option<String>,
    pub date: Option<NaiveDate>,
    #[serde(default)]
    pub upvotes: u32,
    #[serde(default)]
    pub downvotes: u32,
    #[serde(default)]
    pub verified: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: String,
}

/// One user-book interaction derived from a review.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub book: usize,
    pub weight: f64,
    pub date: Option<NaiveDate>,
    pub rating: Option<f64>,
    pub verified: bool,
    /// Position in the chronological master ordering; larger is more recent.
    pub seq: usize,
    /// Source review index, when known.
    pub review: Option<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct InteractionTable {
    pub interactions: Vec<Interaction>,
    /// Reviews lacking a user or a book link.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Violation {
    DanglingEdge {
        edge: RelationEdge,
        missing: EntityId,
        external_id: Option<String>,
    },
    DuplicateEdge {
        edge: RelationEdge,
    },
    KindMismatch {
        edge: RelationEdge,
    },
    RatingOutOfRange {
        node: EntityId,
        value: f64,
    },
    ReviewLinks {
        review: usize,
        users: usize,
        books: usize,
    },
}

impl Violation {
    fn sort_key(&self) -> String {
        format!("{self:?}")
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&Violation) -> bool) -> usize {
        self.violations.iter().filter(|v| pred(v)).count()
    }
}

/// Sorted, deduplicated adjacency for one relation in both directions.
#[derive(Clone, Debug, Default)]
struct Adjacency {
    forward: Vec<Vec<usize>>,
    backward: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Default)]
pub struct GraphBuilder {
    books: Vec<Book>,
    authors: Vec<Author>,
    categories: Vec<Category>,
    publishers: Vec<Publisher>,
    reviews: Vec<Review>,
    users: Vec<User>,
    edges: Vec<RelationEdge>,
    dangling: HashMap<EntityId, String>,
    index: [HashMap<String, usize>; 6],
}

macro_rules! adder {
    ($fn:ident, $field:ident, $ty:ty, $kind:expr) => {
        pub fn $fn(&mut self, item: $ty) -> usize {
            let idx = self.$field.len();
            self.index[$kind.slot()].insert(item.id.clone(), idx);
            self.$field.push(item);
            idx
        }
    };
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    adder!(add_book, books, Book, EntityKind::Book);
    adder!(add_author, authors, Author, EntityKind::Author);
    adder!(add_category, categories, Category, EntityKind::Category);
    adder!(add_publisher, publishers, Publisher, EntityKind::Publisher);
    adder!(add_review, reviews, Review, EntityKind::Review);
    adder!(add_user, users, User, EntityKind::User);

    pub fn add_edge(&mut self, relation: Relation, src: EntityId, dst: EntityId) {
        self.edges.push(RelationEdge { relation, src, dst });
    }

    /// Adds an edge by external ids. Unknown ids become out-of-range indices
    /// so that validation can report them as dangling endpoints.
    pub fn add_edge_by_ids(&mut self, relation: Relation, src: &str, dst: &str) {
        let (sk, dk) = relation.endpoints();
        let s = self.resolve_or_dangle(sk, src);
        let d = self.resolve_or_dangle(dk, dst);
        self.add_edge(relation, s, d);
    }

    pub fn lookup(&self, kind: EntityKind, id: &str) -> Option<usize> {
        self.index[kind.slot()].get(id).copied()
    }

    fn count(&self, kind: EntityKind) -> usize {
        match kind {
            EntityKind::Book => self.books.len(),
            EntityKind::Author => self.authors.len(),
            EntityKind::Category => self.categories.len(),
            EntityKind::Publisher => self.publishers.len(),
            EntityKind::Review => self.reviews.len(),
            EntityKind::User => self.users.len(),
        }
    }

    fn resolve_or_dangle(&mut self, kind: EntityKind, id: &str) -> EntityId {
        if let Some(i) = self.lookup(kind, id) {
            return EntityId::new(kind, i);
        }
        if let Some((eid, _)) = self
            .dangling
            .iter()
            .find(|(e, s)| e.kind == kind && s.as_str() == id)
        {
            return *eid;
        }
        // Far beyond any real index so later adds cannot collide.
        let fresh = usize::MAX / 2 + self.dangling.len();
        let eid = EntityId::new(kind, fresh);
        self.dangling.insert(eid, id.to_string());
        eid
    }

    pub fn build(self) -> BookGraph {
        let counts: [usize; 6] = EntityKind::ALL.map(|k| self.count(k));
        let mut adjacency: Vec<Adjacency> = Relation::ALL
            .iter()
            .map(|r| {
                let (s, d) = r.endpoints();
                Adjacency {
                    forward: vec![Vec::new(); counts[s.slot()]],
                    backward: vec![Vec::new(); counts[d.slot()]],
                }
            })
            .collect();
        for e in &self.edges {
            let (sk, dk) = e.relation.endpoints();
            if e.src.kind != sk || e.dst.kind != dk {
                continue;
            }
            if e.src.index >= counts[sk.slot()] || e.dst.index >= counts[dk.slot()] {
                continue;
            }
            let adj = &mut adjacency[e.relation.slot()];
            adj.forward[e.src.index].push(e.dst.index);
            adj.backward[e.dst.index].push(e.src.index);
        }
        for adj in &mut adjacency {
            for list in adj.forward.iter_mut().chain(adj.backward.iter_mut()) {
                list.sort_unstable();
                list.dedup();
            }
        }
        BookGraph {
            books: self.books,
            authors: self.authors,
            categories: self.categories,
            publishers: self.publishers,
            reviews: self.reviews,
            users: self.users,
            edges: self.edges,
            dangling: self.dangling,
            index: self.index,
            adjacency,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct BookGraph {
    pub books: Vec<Book>,
    pub authors: Vec<Author>,
    pub categories: Vec<Category>,
    pub publishers: Vec<Publisher>,
    pub reviews: Vec<Review>,
    pub users: Vec<User>,
    edges: Vec<RelationEdge>,
    dangling: HashMap<EntityId, String>,
    index: [HashMap<String, usize>; 6],
    adjacency: Vec<Adjacency>,
}

impl BookGraph {
    pub fn count(&self, kind: EntityKind) -> usize {
        match kind {
            EntityKind::Book => self.books.len(),
            EntityKind::Author => self.authors.len(),
            EntityKind::Category => self.categories.len(),
            EntityKind::Publisher => self.publishers.len(),
            EntityKind::Review => self.reviews.len(),
            EntityKind::User => self.users.len(),
        }
    }

    pub fn num_books(&self) -> usize {
        self.books.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn lookup(&self, kind: EntityKind, id: &str) -> Option<usize> {
        self.index[kind.slot()].get(id).copied()
    }

    pub fn require(&self, kind: EntityKind, id: &str) -> Result<usize> {
        self.lookup(kind, id).ok_or_else(|| Error::UnknownEntity {
            kind,
            id: id.to_string(),
        })
    }

    pub fn external_id(&self, node: EntityId) -> Option<&str> {
        let i = node.index;
        match node.kind {
            EntityKind::Book => self.books.get(i).map(|x| x.id.as_str()),
            EntityKind::Author => self.authors.get(i).map(|x| x.id.as_str()),
            EntityKind::Category => self.categories.get(i).map(|x| x.id.as_str()),
            EntityKind::Publisher => self.publishers.get(i).map(|x| x.id.as_str()),
            EntityKind::Review => self.reviews.get(i).map(|x| x.id.as_str()),
            EntityKind::User => self.users.get(i).map(|x| x.id.as_str()),
        }
    }

    /// All stored edges, including invalid ones.
    pub fn edges(&self) -> &[RelationEdge] {
        &self.edges
    }

    pub fn edges_of(&self, relation: Relation) -> impl Iterator<Item = &RelationEdge> {
        self.edges.iter().filter(move |e| e.relation == relation)
    }

    /// Number of distinct valid edges of a relation.
    pub fn edge_count(&self, relation: Relation) -> usize {
        self.adjacency[relation.slot()]
            .forward
            .iter()
            .map(Vec::len)
            .sum()
    }

    /// Valid adjacency lists from the `src` side of the relation.
    pub fn forward(&self, relation: Relation) -> &[Vec<usize>] {
        &self.adjacency[relation.slot()].forward
    }

    /// Valid adjacency lists from the `dst` side of the relation.
    pub fn backward(&self, relation: Relation) -> &[Vec<usize>] {
        &self.adjacency[relation.slot()].backward
    }

    pub fn neighbors(&self, node: EntityId, relation: Relation) -> Result<Vec<EntityId>> {
        let (sk, dk) = relation.endpoints();
        let (lists, other) = if node.kind == sk {
            (self.forward(relation), dk)
        } else if node.kind == dk {
            (self.backward(relation), sk)
        } else {
            return Err(Error::KindMismatch {
                relation,
                kind: node.kind,
            });
        };
        let list = lists.get(node.index).ok_or(Error::IndexOutOfRange {
            kind: node.kind,
            index: node.index,
        })?;
        Ok(list.iter().map(|&i| EntityId::new(other, i)).collect())
    }

    pub fn book_authors(&self, book: usize) -> &[usize] {
        &self.forward(Relation::BookAuthor)[book]
    }

    pub fn book_categories(&self, book: usize) -> &[usize] {
        &self.forward(Relation::BookCategory)[book]
    }

    pub fn book_publishers(&self, book: usize) -> &[usize] {
        &self.forward(Relation::BookPublisher)[book]
    }

    pub fn review_user(&self, review: usize) -> Option<usize> {
        self.backward(Relation::UserReview)[review].first().copied()
    }

    pub fn review_book(&self, review: usize) -> Option<usize> {
        self.backward(Relation::BookReview)[review].first().copied()
    }
}

fn rating_ok(r: f64) -> bool {
    (1.0..=5.0).contains(&r)
}

/// Lists every dangling edge, duplicate triple, endpoint-kind mismatch,
/// out-of-range rating and review with other than one user and one book.
/// The output is sorted, so it does not depend on input order.
pub fn validate_graph(graph: &BookGraph) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    for e in &graph.edges {
        let (sk, dk) = e.relation.endpoints();
        if e.src.kind != sk || e.dst.kind != dk {
            violations.push(Violation::KindMismatch { edge: *e });
            continue;
        }
        let mut dangling = false;
        for end in [e.src, e.dst] {
            if end.index >= graph.count(end.kind) {
                dangling = true;
                violations.push(Violation::DanglingEdge {
                    edge: *e,
                    missing: end,
                    external_id: graph.dangling.get(&end).cloned(),
                });
            }
        }
        if !dangling && !seen.insert(*e) {
            violations.push(Violation::DuplicateEdge { edge: *e });
        }
    }
    for (i, r) in graph.reviews.iter().enumerate() {
        if let Some(v) = r.rating {
            if !rating_ok(v) {
                violations.push(Violation::RatingOutOfRange {
                    node: EntityId::new(EntityKind::Review, i),
                    value: v,
                });
            }
        }
        let users = graph.backward(Relation::UserReview)[i].len();
        let books = graph.backward(Relation::BookReview)[i].len();
        if users > 1 || books > 1 {
            violations.push(Violation::ReviewLinks {
                review: i,
                users,
                books,
            });
        }
    }
    for (i, b) in graph.books.iter().enumerate() {
        if let Some(v) = b.avg_rating {
            if v != 0.0 && !rating_ok(v) {
                violations.push(Violation::RatingOutOfRange {
                    node: EntityId::new(EntityKind::Book, i),
                    value: v,
                });
            }
        }
    }
    violations.sort_by_key(Violation::sort_key);
    ValidationReport { violations }
}

/// One interaction per review that links both a user and a book, ordered by
/// `(date, review index)` with undated reviews last.
pub fn build_interactions(graph: &BookGraph) -> InteractionTable {
    let mut rows = Vec::with_capacity(graph.reviews.len());
    let mut skipped = 0;
    for (ri, review) in graph.reviews.iter().enumerate() {
        match (graph.review_user(ri), graph.review_book(ri)) {
            (Some(user), Some(book)) => rows.push((ri, user, book, review)),
            _ => skipped += 1,
        }
    }
    rows.sort_by_key(|(ri, _, _, r)| (r.date.is_none(), r.date, *ri));
    let interactions = rows
        .into_iter()
        .enumerate()
        .map(|(seq, (ri, user, book, r))| Interaction {
            user,
            book,
            weight: interaction_weight(r.verified, r.rating),
            date: r.date,
            rating: r.rating,
            verified: r.verified,
            seq,
            review: Some(ri),
        })
        .collect();
    InteractionTable {
        interactions,
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy() -> GraphBuilder {
        let mut g = GraphBuilder::new();
        for i in 0..3 {
            g.add_book(Book::titled(format!("B{i}"), format!("book {i}")));
        }
        for i in 0..2 {
            g.add_author(Author {
                id: format!("A{i}"),
                name: format!("author {i}"),
                ..Default::default()
            });
        }
        g.add_category(Category {
            id: "C0".into(),
            name: "thriller".into(),
            ..Default::default()
        });
        g.add_user(User {
            id: "USER000001".into(),
        });
        g.add_review(Review {
            id: "R0".into(),
            rating: Some(4.0),
            ..Default::default()
        });
        g.add_review(Review {
            id: "R1".into(),
            rating: Some(5.0),
            verified: true,
            ..Default::default()
        });
        g.add_edge_by_ids(Relation::BookAuthor, "B0", "A0");
        g.add_edge_by_ids(Relation::BookAuthor, "B0", "A1");
        g.add_edge_by_ids(Relation::BookAuthor, "B1", "A1");
        g.add_edge_by_ids(Relation::BookCategory, "B1", "C0");
        g.add_edge_by_ids(Relation::UserReview, "USER000001", "R0");
        g.add_edge_by_ids(Relation::UserReview, "USER000001", "R1");
        g.add_edge_by_ids(Relation::BookReview, "B0", "R0");
        g.add_edge_by_ids(Relation::BookReview, "B2", "R1");
        g
    }

    #[test]
    fn consistent_toy_is_valid() {
        let g = toy().build();
        assert!(validate_graph(&g).is_valid());
    }

    #[test]
    fn dangling_author_reported() {
        let mut b = toy();
        b.add_edge_by_ids(Relation::BookAuthor, "B2", "A3");
        let rep = validate_graph(&b.build());
        assert_eq!(rep.violations.len(), 1);
        match &rep.violations[0] {
            Violation::DanglingEdge {
                missing,
                external_id,
                ..
            } => {
                assert_eq!(missing.kind, EntityKind::Author);
                assert_eq!(external_id.as_deref(), Some("A3"));
            }
            v => panic!("unexpected {v:?}"),
        }
    }

    #[test]
    fn out_of_range_rating_reported() {
        let mut b = toy();
        b.add_review(Review {
            id: "R2".into(),
            rating: Some(5.5),
            ..Default::default()
        });
        let rep = validate_graph(&b.build());
        assert_eq!(
            rep.count(|v| matches!(v, Violation::RatingOutOfRange { .. })),
            1
        );
    }

    #[test]
    fn duplicate_and_mismatch_reported() {
        let mut b = toy();
        b.add_edge_by_ids(Relation::BookAuthor, "B0", "A0");
        b.add_edge(
            Relation::BookAuthor,
            EntityId::new(EntityKind::Category, 0),
            EntityId::new(EntityKind::Author, 0),
        );
        let rep = validate_graph(&b.build());
        assert_eq!(
            rep.count(|v| matches!(v, Violation::DuplicateEdge { .. })),
            1
        );
        assert_eq!(
            rep.count(|v| matches!(v, Violation::KindMismatch { .. })),
            1
        );
    }

    #[test]
    fn interactions_from_reviews() {
        let g = toy().build();
        let t = build_interactions(&g);
        assert_eq!(t.interactions.len(), 2);
        assert_eq!(t.skipped, 0);
        assert!(t.interactions.iter().all(|i| i.user == 0));
        assert_eq!(t.interactions[1].weight, 1.7);
    }

    #[test]
    fn review_without_user_is_skipped() {
        let mut b = toy();
        b.add_review(Review {
            id: "R9".into(),
            ..Default::default()
        });
        b.add_edge_by_ids(Relation::BookReview, "B1", "R9");
        let t = build_interactions(&b.build());
        assert_eq!(t.interactions.len(), 2);
        assert_eq!(t.skipped, 1);
    }

    #[test]
    fn undated_reviews_sort_last() {
        let mut b = toy();
        b.add_review(Review {
            id: "R2".into(),
            date: NaiveDate::from_ymd_opt(2020, 1, 1),
            ..Default::default()
        });
        b.add_edge_by_ids(Relation::UserReview, "USER000001", "R2");
        b.add_edge_by_ids(Relation::BookReview, "B1", "R2");
        let t = build_interactions(&b.build());
        assert_eq!(t.interactions[0].book, 1);
        assert_eq!(t.interactions[1].book, 0);
        assert_eq!(t.interactions[2].book, 2);
        let seqs: Vec<_> = t.interactions.iter().map(|i| i.seq).collect();
        assert_eq!(seqs, vec![0, 1, 2]);
    }

    #[test]
    fn neighbors_cases() {
        let g = toy().build();
        let b0 = EntityId::new(EntityKind::Book, 0);
        let authors = g.neighbors(b0, Relation::BookAuthor).unwrap();
        assert_eq!(authors.len(), 2);
        assert!(g.neighbors(b0, Relation::BookCategory).unwrap().is_empty());
        let c0 = EntityId::new(EntityKind::Category, 0);
        assert!(matches!(
            g.neighbors(c0, Relation::BookAuthor),
            Err(Error::KindMismatch { .. })
        ));
        // symmetric across stored direction
        for a in authors {
            assert!(g.neighbors(a, Relation::BookAuthor).unwrap().contains(&b0));
        }
    }
}
