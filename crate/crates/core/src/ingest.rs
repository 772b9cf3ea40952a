//! Cleaning pipeline from pre-extracted crawl records to a validated graph:
//! numeric and text normalization, rating clamping, deduplication, user
//! anonymization, entity linking and the interaction split.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::dataset::{self, write_interactions, write_jsonl};
use crate::error::{Error, Result};
use crate::graph::{
    build_interactions, validate_graph, Author, Book, BookGraph, Category, EntityKind,
    GraphBuilder, Interaction, Publisher, Relation, Review, User,
};

/// Payload keys that identify a person and never leave the pipeline.
pub const PII_FIELDS: &[&str] = &[
    "username",
    "user_name",
    "email",
    "avatar",
    "avatar_url",
    "profile_url",
    "profile_image",
    "user_url",
];

/// Payload keys probed, in order, for the raw user key of a review.
const USER_KEY_FIELDS: &[&str] = &["user", "user_id", "username", "user_name", "profile_url"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default)]
    pub source_url: String,
    pub entity_kind: EntityKind,
    #[serde(default)]
    pub payload: BTreeMap<String, String>,
    /// Referenced entity ids per field, already extracted from hyperlinks.
    #[serde(default)]
    pub refs: BTreeMap<String, Vec<String>>,
}

impl RawRecord {
    pub fn new(kind: EntityKind, url: &str) -> Self {
        Self {
            source_url: url.to_string(),
            entity_kind: kind,
            payload: BTreeMap::new(),
            refs: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: &str) -> Self {
        self.payload.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_refs(mut self, field: &str, ids: &[&str]) -> Self {
        self.refs.insert(
            field.to_string(),
            ids.iter().map(|s| s.to_string()).collect(),
        );
        self
    }

    /// Explicit `id` payload field, else the last non-empty URL path segment.
    pub fn entity_id(&self) -> Option<String> {
        if let Some(id) = self
            .payload
            .get("id")
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
        {
            return Some(id.to_string());
        }
        let url = url::Url::parse(self.source_url.trim()).ok()?;
        let seg = url.path_segments()?.filter(|s| !s.is_empty()).last()?;
        Some(seg.to_string())
    }
}

const BANGLA_DIGITS: [char; 10] = ['০', '১', '২', '৩', '৪', '৫', '৬', '৭', '৮', '৯'];

fn ascii_digit(c: char) -> char {
    match BANGLA_DIGITS.iter().position(|&d| d == c) {
        Some(i) => char::from(b'0' + i as u8),
        None => c,
    }
}

/// Parses a crawled numeric string: Bangla digits, thousands separators and
/// currency marks are accepted. `None` when nothing numeric remains.
pub fn normalize_numeric(raw: &str) -> Option<f64> {
    let mapped: String = raw.chars().map(ascii_digit).collect();
    let mut s = mapped.trim().to_lowercase();
    for mark in ["টাকা", "tk.", "tk", "bdt", "৳", "$", "€", "£", "₹"] {
        s = s.replace(mark, "");
    }
    let cleaned: String = s
        .chars()
        .filter(|c| *c != ',' && *c != '\u{66C}' && !c.is_whitespace())
        .collect();
    if cleaned.is_empty() {
        return None;
    }
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn clamp_rating(raw: Option<f64>) -> Option<f64> {
    raw.filter(|r| !r.is_nan()).map(|r| r.clamp(1.0, 5.0))
}

/// NFD normalization, trimmed, with internal whitespace runs collapsed.
pub fn normalize_text(raw: &str) -> String {
    let nfd: String = raw.nfd().collect();
    nfd.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn normalize_text_bytes(raw: &[u8]) -> Result<String> {
    std::str::from_utf8(raw)
        .map(normalize_text)
        .map_err(|e| Error::Decode(e.to_string()))
}

/// Lowercases scheme and host and strips the fragment; the query is kept.
pub fn normalize_url(raw: &str) -> String {
    let raw = raw.trim();
    match url::Url::parse(raw) {
        Ok(mut u) => {
            u.set_fragment(None);
            u.to_string()
        }
        Err(_) => raw.to_string(),
    }
}

fn url_hash(raw: &str) -> String {
    let digest = Sha256::digest(normalize_url(raw).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Default)]
pub struct DedupOutcome {
    pub kept: Vec<RawRecord>,
    pub dropped: usize,
    pub dropped_by_kind: BTreeMap<EntityKind, usize>,
    /// Records with neither a URL nor an entity id.
    pub quarantined: Vec<RawRecord>,
}

/// Keeps the first record per URL hash or `(kind, id)`; a later record
/// matching either key of an earlier kept record is dropped.
pub fn dedup_records(records: Vec<RawRecord>) -> DedupOutcome {
    let mut out = DedupOutcome::default();
    let mut urls = HashSet::new();
    let mut ids = HashSet::new();
    for rec in records {
        let url_key = (!rec.source_url.trim().is_empty()).then(|| url_hash(&rec.source_url));
        let id_key = rec
            .payload
            .get("id")
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|id| (rec.entity_kind, id.to_string()));
        if url_key.is_none() && id_key.is_none() {
            out.quarantined.push(rec);
            continue;
        }
        let dup = url_key.as_ref().is_some_and(|k| urls.contains(k))
            || id_key.as_ref().is_some_and(|k| ids.contains(k));
        if dup {
            out.dropped += 1;
            *out.dropped_by_kind.entry(rec.entity_kind).or_default() += 1;
            continue;
        }
        urls.extend(url_key);
        ids.extend(id_key);
        out.kept.push(rec);
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct AnonymizeOutcome {
    pub records: Vec<RawRecord>,
    /// Issued ids in first-appearance order.
    pub users: Vec<String>,
}

pub fn anonymize_users(records: Vec<RawRecord>) -> AnonymizeOutcome {
    anonymize_users_with_width(records, 6)
}

/// Replaces each distinct raw user key with `USER` plus a zero-padded
/// sequence number and drops PII payload fields from every record.
pub fn anonymize_users_with_width(records: Vec<RawRecord>, width: usize) -> AnonymizeOutcome {
    let mut issued: HashMap<String, String> = HashMap::new();
    let mut users = Vec::new();
    let records = records
        .into_iter()
        .map(|mut rec| {
            let raw_key = USER_KEY_FIELDS.iter().find_map(|f| {
                rec.payload
                    .get(*f)
                    .filter(|v| !v.trim().is_empty())
                    .cloned()
            });
            for f in PII_FIELDS.iter().chain(USER_KEY_FIELDS) {
                rec.payload.remove(*f);
            }
            if let Some(key) = raw_key {
                let id = issued
                    .entry(key)
                    .or_insert_with(|| {
                        let id = format!("USER{:0width$}", users.len() + 1);
                        users.push(id.clone());
                        id
                    })
                    .clone();
                rec.payload.insert("user".to_string(), id);
            }
            rec
        })
        .collect();
    AnonymizeOutcome { records, users }
}

/// Edge expressed in external ids, as produced by linking.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkedEdge {
    pub relation: Relation,
    pub src: String,
    pub dst: String,
}

#[derive(Clone, Debug, Default)]
pub struct LinkOutcome {
    pub edges: Vec<LinkedEdge>,
    pub unresolved: usize,
    /// The same triple asserted from both endpoint pages.
    pub duplicate_edges: usize,
    pub unknown_fields: usize,
}

/// Relation for a reference field on a record of `kind`, plus whether the
/// record sits on the `src` side of it.
fn ref_relation(kind: EntityKind, field: &str) -> Option<(Relation, bool)> {
    use EntityKind::*;
    let r = match (kind, field) {
        (Book, "author" | "authors") => (Relation::BookAuthor, true),
        (Book, "category" | "categories") => (Relation::BookCategory, true),
        (Book, "publisher" | "publishers") => (Relation::BookPublisher, true),
        (Author, "book" | "books") => (Relation::BookAuthor, false),
        (Author, "category" | "categories") => (Relation::AuthorCategory, true),
        (Author, "publisher" | "publishers") => (Relation::AuthorPublisher, true),
        (Publisher, "book" | "books") => (Relation::BookPublisher, false),
        (Publisher, "author" | "authors") => (Relation::AuthorPublisher, false),
        (Publisher, "category" | "categories") => (Relation::PublisherCategory, true),
        (Category, "book" | "books") => (Relation::BookCategory, false),
        (Category, "author" | "authors") => (Relation::AuthorCategory, false),
        (Category, "publisher" | "publishers") => (Relation::PublisherCategory, false),
        (Review, "book" | "books") => (Relation::BookReview, false),
        _ => return None,
    };
    Some(r)
}

/// Resolves reference lists into edges. A reference whose target id has no
/// record of the expected kind is tallied as unresolved. Reviews link to
/// their (anonymized) `user` payload field.
pub fn link_entities(records: &[RawRecord]) -> LinkOutcome {
    let mut known: HashSet<(EntityKind, String)> = records
        .iter()
        .filter_map(|r| r.entity_id().map(|id| (r.entity_kind, id)))
        .collect();
    for r in records {
        if r.entity_kind == EntityKind::Review {
            if let Some(u) = r.payload.get("user") {
                known.insert((EntityKind::User, u.clone()));
            }
        }
    }
    let mut out = LinkOutcome::default();
    let mut seen = HashSet::new();
    let mut push = |out: &mut LinkOutcome, e: LinkedEdge| {
        if seen.insert(e.clone()) {
            out.edges.push(e);
        } else {
            out.duplicate_edges += 1;
        }
    };
    for rec in records {
        let Some(own) = rec.entity_id() else { continue };
        for (field, targets) in &rec.refs {
            let Some((relation, own_is_src)) = ref_relation(rec.entity_kind, field) else {
                out.unknown_fields += 1;
                continue;
            };
            let (sk, dk) = relation.endpoints();
            let target_kind = if own_is_src { dk } else { sk };
            for t in targets {
                let t = t.trim();
                if !known.contains(&(target_kind, t.to_string())) {
                    out.unresolved += 1;
                    continue;
                }
                let (src, dst) = if own_is_src {
                    (own.clone(), t.to_string())
                } else {
                    (t.to_string(), own.clone())
                };
                push(&mut out, LinkedEdge { relation, src, dst });
            }
        }
        if rec.entity_kind == EntityKind::Review {
            if let Some(u) = rec.payload.get("user") {
                let e = LinkedEdge {
                    relation: Relation::UserReview,
                    src: u.clone(),
                    dst: own.clone(),
                };
                push(&mut out, e);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.70,
            valid_frac: 0.15,
            test_frac: 0.15,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, valid: f64, test: f64, seed: u64) -> Result<Self> {
        let s = Self {
            train_frac: train,
            valid_frac: valid,
            test_frac: test,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.valid_frac, self.test_frac];
        if fr.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config(format!(
                "split fractions must lie in (0,1): {fr:?}"
            )));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1: {fr:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct InteractionSplit {
    pub train: Vec<Interaction>,
    pub valid: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

/// Index-level split: a seeded uniform permutation cut at
/// `floor(n*train)` and `floor(n*valid)`. Each part is returned sorted.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Empty("no interactions to split".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    // The epsilon absorbs binary rounding in products such as 0.7 * 10000.
    let n_train = (n as f64 * spec.train_frac + 1e-9).floor() as usize;
    let n_valid = (n as f64 * spec.valid_frac + 1e-9).floor() as usize;
    let mut train = perm[..n_train].to_vec();
    let mut valid = perm[n_train..n_train + n_valid].to_vec();
    let mut test = perm[n_train + n_valid..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok([train, valid, test])
}

pub fn split_interactions(
    interactions: &[Interaction],
    spec: &SplitSpec,
) -> Result<InteractionSplit> {
    let [tr, va, te] = split_indices(interactions.len(), spec)?;
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| interactions[i].clone()).collect();
    Ok(InteractionSplit {
        train: pick(tr),
        valid: pick(va),
        test: pick(te),
    })
}

fn text_field(rec: &RawRecord, key: &str) -> Option<String> {
    rec.payload
        .get(key)
        .map(|s| normalize_text(s))
        .filter(|s| !s.is_empty())
}

fn num_field(rec: &RawRecord, key: &str) -> Option<f64> {
    rec.payload.get(key).and_then(|s| normalize_numeric(s))
}

fn count_field(rec: &RawRecord, key: &str) -> Option<u64> {
    num_field(rec, key)
        .filter(|v| *v >= 0.0)
        .map(|v| v.round() as u64)
}

fn bool_field(rec: &RawRecord, key: &str) -> bool {
    rec.payload.get(key).is_some_and(|s| {
        matches!(
            s.trim().to_lowercase().as_str(),
            "1" | "true" | "yes" | "y" | "verified" | "verified purchase"
        )
    })
}

fn date_field(rec: &RawRecord, key: &str) -> Option<NaiveDate> {
    let raw: String = rec.payload.get(key)?.chars().map(ascii_digit).collect();
    let raw = raw.trim();
    let head = raw.get(..10).unwrap_or(raw);
    ["%Y-%m-%d", "%d/%m/%Y", "%d-%m-%Y"]
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(head, f).ok())
        .or_else(|| NaiveDate::parse_from_str(raw, "%d %B %Y").ok())
        .or_else(|| NaiveDate::parse_from_str(raw, "%B %d, %Y").ok())
}

/// Assembles typed entities and edges. Records without an id are returned
/// for quarantine.
pub fn records_to_graph(
    records: &[RawRecord],
    users: &[String],
    edges: &[LinkedEdge],
) -> (BookGraph, Vec<RawRecord>) {
    let mut b = GraphBuilder::new();
    let mut rejected = Vec::new();
    for rec in records {
        let Some(id) = rec.entity_id() else {
            rejected.push(rec.clone());
            continue;
        };
        match rec.entity_kind {
            EntityKind::Book => {
                b.add_book(Book {
                    id,
                    title: text_field(rec, "title").unwrap_or_default(),
                    summary: text_field(rec, "summary"),
                    isbn: text_field(rec, "isbn"),
                    avg_rating: num_field(rec, "avg_rating").map(|r| {
                        if r == 0.0 {
                            0.0
                        } else {
                            r.clamp(1.0, 5.0)
                        }
                    }),
                    rating_count: count_field(rec, "rating_count"),
                    review_count: count_field(rec, "review_count"),
                    pages: count_field(rec, "pages")
                        .filter(|p| *p > 0)
                        .map(|p| p as u32),
                    price: num_field(rec, "price").filter(|p| *p >= 0.0),
                });
            }
            EntityKind::Author => {
                b.add_author(Author {
                    id,
                    name: text_field(rec, "name").unwrap_or_default(),
                    biography: text_field(rec, "biography"),
                    follower_count: count_field(rec, "follower_count"),
                });
            }
            EntityKind::Category => {
                b.add_category(Category {
                    id,
                    name: text_field(rec, "name").unwrap_or_default(),
                    description: text_field(rec, "description"),
                    total_book_count: count_field(rec, "total_book_count"),
                });
            }
            EntityKind::Publisher => {
                b.add_publisher(Publisher {
                    id,
                    name: text_field(rec, "name").unwrap_or_default(),
                    description: text_field(rec, "description"),
                    total_author_count: count_field(rec, "total_author_count"),
                    total_book_count: count_field(rec, "total_book_count"),
                });
            }
            EntityKind::Review => {
                b.add_review(Review {
                    id,
                    rating: clamp_rating(num_field(rec, "rating")),
                    text: text_field(rec, "text"),
                    date: date_field(rec, "date"),
                    upvotes: count_field(rec, "upvotes").unwrap_or(0) as u32,
                    downvotes: count_field(rec, "downvotes").unwrap_or(0) as u32,
                    verified: bool_field(rec, "verified"),
                });
            }
            EntityKind::User => {
                // Users come only from anonymization.
                rejected.push(rec.clone());
            }
        }
    }
    for u in users {
        b.add_user(User { id: u.clone() });
    }
    for e in edges {
        b.add_edge_by_ids(e.relation, &e.src, &e.dst);
    }
    (b.build(), rejected)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct KindCounts {
    pub input: usize,
    pub kept: usize,
    pub dropped: usize,
    pub dedup_rate: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct IngestReport {
    pub files: usize,
    pub records_in: usize,
    pub malformed_lines: usize,
    pub dropped: usize,
    pub dedup_rate: f64,
    pub per_kind: BTreeMap<String, KindCounts>,
    pub quarantined: usize,
    pub unresolved_refs: usize,
    pub duplicate_edges: usize,
    pub unknown_ref_fields: usize,
    pub entities: BTreeMap<String, usize>,
    pub edges: BTreeMap<String, usize>,
    pub violations: usize,
    pub interactions: usize,
    pub skipped_reviews: usize,
}

#[derive(Serialize)]
struct QuarantineLine<'a> {
    reason: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    record: Option<&'a RawRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<String>,
}

pub struct IngestOutput {
    pub graph: BookGraph,
    pub interactions: Vec<Interaction>,
    pub report: IngestReport,
}

/// Runs the whole pipeline over every `*.jsonl` file in `raw_dir` and
/// writes the cleaned dataset into `out_dir`.
pub fn run_ingest(raw_dir: &Path, out_dir: &Path) -> Result<IngestOutput> {
    let mut files: Vec<_> = fs::read_dir(raw_dir)
        .map_err(|e| Error::io(raw_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Empty(format!(
            "no .jsonl files in {}",
            raw_dir.display()
        )));
    }
    let mut report = IngestReport {
        files: files.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    let mut quarantine_lines = Vec::new();
    for f in &files {
        let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
        for line in bytes.split(|b| *b == b'\n') {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let parsed = std::str::from_utf8(line)
                .map_err(|e| e.to_string())
                .and_then(|s| serde_json::from_str::<RawRecord>(s).map_err(|e| e.to_string()));
            match parsed {
                Ok(r) => records.push(r),
                Err(msg) => {
                    report.malformed_lines += 1;
                    quarantine_lines.push((msg, String::from_utf8_lossy(line).into_owned()));
                }
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Empty(format!(
            "no parseable records in {}",
            raw_dir.display()
        )));
    }
    report.records_in = records.len();
    let mut input_by_kind: BTreeMap<EntityKind, usize> = BTreeMap::new();
    for r in &records {
        *input_by_kind.entry(r.entity_kind).or_default() += 1;
    }

    let dedup = dedup_records(records);
    report.dropped = dedup.dropped;
    report.dedup_rate = dedup.dropped as f64 / report.records_in as f64;
    for (kind, input) in &input_by_kind {
        let dropped = dedup.dropped_by_kind.get(kind).copied().unwrap_or(0);
        report.per_kind.insert(
            kind.name().to_string(),
            KindCounts {
                input: *input,
                kept: dedup.kept.iter().filter(|r| r.entity_kind == *kind).count(),
                dropped,
                dedup_rate: dropped as f64 / *input as f64,
            },
        );
    }

    let anon = anonymize_users(dedup.kept);
    let links = link_entities(&anon.records);
    report.unresolved_refs = links.unresolved;
    report.duplicate_edges = links.duplicate_edges;
    report.unknown_ref_fields = links.unknown_fields;

    let (graph, rejected) = records_to_graph(&anon.records, &anon.users, &links.edges);
    report.quarantined = dedup.quarantined.len() + rejected.len() + quarantine_lines.len();
    for kind in EntityKind::ALL {
        report
            .entities
            .insert(kind.name().to_string(), graph.count(kind));
    }
    for rel in Relation::ALL {
        report
            .edges
            .insert(rel.name().to_string(), graph.edge_count(rel));
    }
    report.violations = validate_graph(&graph).violations.len();
    let table = build_interactions(&graph);
    report.interactions = table.interactions.len();
    report.skipped_reviews = table.skipped;

    dataset::write_graph(&graph, out_dir)?;
    write_interactions(
        &out_dir.join(dataset::INTERACTIONS_FILE),
        &graph,
        &table.interactions,
    )?;
    let mut q: Vec<QuarantineLine> = dedup
        .quarantined
        .iter()
        .map(|r| QuarantineLine {
            reason: "no url and no id",
            record: Some(r),
            line: None,
        })
        .chain(rejected.iter().map(|r| QuarantineLine {
            reason: "unusable record",
            record: Some(r),
            line: None,
        }))
        .collect();
    q.extend(quarantine_lines.iter().map(|(msg, l)| QuarantineLine {
        reason: msg,
        record: None,
        line: Some(l.clone()),
    }));
    write_jsonl(&out_dir.join("quarantine.jsonl"), &q)?;
    let path = out_dir.join("ingest_report.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(|e| Error::io(&path, e))?;
    Ok(IngestOutput {
        graph,
        interactions: table.interactions,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_examples() {
        assert_eq!(normalize_numeric("1,250"), Some(1250.0));
        assert_eq!(normalize_numeric("১২৩"), Some(123.0));
        assert_eq!(normalize_numeric("abc"), None);
        assert_eq!(normalize_numeric("৳ ১,২৫০.৫০"), Some(1250.5));
        assert_eq!(normalize_numeric("Tk. 300"), Some(300.0));
        assert_eq!(normalize_numeric(""), None);
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_rating(Some(7.2)), Some(5.0));
        assert_eq!(clamp_rating(Some(3.5)), Some(3.5));
        assert_eq!(clamp_rating(Some(0.2)), Some(1.0));
        assert_eq!(clamp_rating(None), None);
        assert_eq!(clamp_rating(Some(f64::NAN)), None);
    }

    #[test]
    fn text_examples() {
        assert_eq!(normalize_text("  a  b "), "a b");
        assert_eq!(normalize_text("plain ascii"), "plain ascii");
        // BENGALI VOWEL SIGN O decomposes to E + AA.
        assert_eq!(normalize_text("কো"), "ক\u{9C7}\u{9BE}");
        assert!(normalize_text_bytes(&[0xff, 0xfe]).is_err());
    }

    #[test]
    fn url_normalization() {
        assert_eq!(
            normalize_url("HTTPS://WWW.Rokomari.com/book/12?x=1#reviews"),
            "https://www.rokomari.com/book/12?x=1"
        );
    }

    #[test]
    fn dedup_by_url_and_id() {
        let a = RawRecord::new(EntityKind::Book, "https://x.com/book/1").with("id", "1");
        let b = RawRecord::new(EntityKind::Book, "https://X.com/book/1#top").with("id", "9");
        let out = dedup_records(vec![a.clone(), b]);
        assert_eq!((out.kept.len(), out.dropped), (1, 1));

        let c = RawRecord::new(EntityKind::Book, "https://x.com/book/1?ref=2").with("id", "1");
        let out = dedup_records(vec![a, c]);
        assert_eq!((out.kept.len(), out.dropped), (1, 1));

        let bare = RawRecord::new(EntityKind::Author, "");
        let out = dedup_records(vec![bare]);
        assert_eq!(out.quarantined.len(), 1);
        assert!(out.kept.is_empty());
    }

    #[test]
    fn dedup_rate_on_planted_corpus() {
        // 1000 rows of which 131 repeat an earlier url.
        let mut recs = Vec::new();
        for i in 0..869 {
            recs.push(RawRecord::new(
                EntityKind::Book,
                &format!("https://x.com/book/{i}"),
            ));
        }
        for i in 0..131 {
            recs.push(RawRecord::new(
                EntityKind::Book,
                &format!("https://x.com/book/{}", i * 3),
            ));
        }
        let out = dedup_records(recs);
        assert_eq!(out.dropped as f64 / 1000.0, 0.131);
    }

    #[test]
    fn sequential_user_ids() {
        let recs = ["x", "y", "x"]
            .iter()
            .enumerate()
            .map(|(i, u)| {
                RawRecord::new(EntityKind::Review, &format!("https://x.com/review/{i}"))
                    .with("user", u)
                    .with("email", "a@b.c")
            })
            .collect();
        let out = anonymize_users(recs);
        let ids: Vec<_> = out
            .records
            .iter()
            .map(|r| r.payload["user"].as_str())
            .collect();
        assert_eq!(ids, ["USER000001", "USER000002", "USER000001"]);
        assert!(out.records.iter().all(|r| !r.payload.contains_key("email")));
        assert_eq!(out.users, ["USER000001", "USER000002"]);
    }

    #[test]
    fn linking_resolves_and_tallies() {
        let recs = vec![
            RawRecord::new(EntityKind::Book, "https://x.com/book/1")
                .with_refs("authors", &["a1", "a2"])
                .with_refs("publisher", &["p404"]),
            RawRecord::new(EntityKind::Author, "https://x.com/author/a1"),
            RawRecord::new(EntityKind::Author, "https://x.com/author/a2")
                .with_refs("books", &["1"]),
        ];
        let out = link_entities(&recs);
        assert_eq!(out.edges.len(), 2);
        assert!(out.edges.iter().all(|e| e.relation == Relation::BookAuthor));
        assert_eq!(out.unresolved, 1);
        assert_eq!(out.duplicate_edges, 1);
    }

    #[test]
    fn split_sizes() {
        let spec = SplitSpec::default();
        let [a, b, c] = split_indices(100, &spec).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (70, 15, 15));
        let [a, b, c] = split_indices(1, &spec).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (0, 0, 1));
        assert_eq!(
            split_indices(100, &spec).unwrap(),
            split_indices(100, &spec).unwrap()
        );
        assert!(split_indices(0, &spec).is_err());
        assert!(SplitSpec::new(0.5, 0.5, 0.1, 1).is_err());
        assert!(SplitSpec::new(1.0, 0.0, 0.0, 1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn clamp_stays_in_range(x in proptest::num::f64::ANY) {
                if let Some(v) = clamp_rating(Some(x)) {
                    prop_assert!((1.0..=5.0).contains(&v));
                }
            }

            #[test]
            fn numeric_fixed_point_on_integers(n in 0u64..1_000_000_000_000) {
                let v = normalize_numeric(&n.to_string()).unwrap();
                prop_assert_eq!(normalize_numeric(&format!("{v}")), Some(v));
                prop_assert_eq!(v, n as f64);
            }

            #[test]
            fn split_partitions(n in 1usize..500, seed in any::<u64>()) {
                let spec = SplitSpec { seed, ..SplitSpec::default() };
                let parts = split_indices(n, &spec).unwrap();
                let mut all: Vec<usize> = parts.concat();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                prop_assert_eq!(split_indices(n, &spec).unwrap(), parts);
            }

            #[test]
            fn dedup_keys_distinct(ids in proptest::collection::vec(0u8..20, 0..60)) {
                let recs: Vec<RawRecord> = ids.iter().map(|i| {
                    RawRecord::new(EntityKind::Book, &format!("https://x.com/b/{i}"))
                }).collect();
                let n = recs.len();
                let out = dedup_records(recs);
                let keys: HashSet<_> = out.kept.iter().map(|r| r.source_url.clone()).collect();
                prop_assert_eq!(keys.len(), out.kept.len());
                prop_assert_eq!(out.kept.len() + out.dropped, n);
            }

            #[test]
            fn anonymization_is_bijective(keys in proptest::collection::vec(0u8..15, 1..40)) {
                let recs = keys.iter().map(|k| {
                    RawRecord::new(EntityKind::Review, "").with("user", &format!("raw{k}"))
                }).collect();
                let out = anonymize_users(recs);
                let mut fwd: HashMap<u8, String> = HashMap::new();
                let mut back: HashMap<String, u8> = HashMap::new();
                for (k, r) in keys.iter().zip(&out.records) {
                    let id = r.payload["user"].clone();
                    prop_assert_eq!(fwd.entry(*k).or_insert_with(|| id.clone()), &id);
                    prop_assert_eq!(*back.entry(id).or_insert(*k), *k);
                }
                prop_assert_eq!(out.users.len(), fwd.len());
            }
        }
    }
}
