//! On-disk dataset layout: one JSON-lines file per entity kind, one per
//! relation, and tab-separated interaction tables.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BookGraph, EntityKind, GraphBuilder, Interaction, Relation, RelationEdge};

pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const TSV_HEADER: &str = "user\tbook\tweight\ttimestamp\trating\tverified\treview";

pub fn entity_file(kind: EntityKind) -> String {
    let plural = match kind {
        EntityKind::Book => "books",
        EntityKind::Author => "authors",
        EntityKind::Category => "categories",
        EntityKind::Publisher => "publishers",
        EntityKind::Review => "reviews",
        EntityKind::User => "users",
    };
    format!("{plural}.jsonl")
}

pub fn edge_file(relation: Relation) -> String {
    format!("edges_{}.jsonl", relation.name())
}

/// Edge line in the relation files; endpoints are external ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub relation: Relation,
    pub src: String,
    pub dst: String,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let s = serde_json::to_string(item).expect("serializable record");
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_optional<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>> {
    let p = dir.join(name);
    if p.exists() {
        read_jsonl(&p)
    } else {
        Ok(Vec::new())
    }
}

pub fn load_graph(dir: &Path) -> Result<BookGraph> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let mut b = GraphBuilder::new();
    for x in read_optional(dir, &entity_file(EntityKind::Book))? {
        b.add_book(x);
    }
    for x in read_optional(dir, &entity_file(EntityKind::Author))? {
        b.add_author(x);
    }
    for x in read_optional(dir, &entity_file(EntityKind::Category))? {
        b.add_category(x);
    }
    for x in read_optional(dir, &entity_file(EntityKind::Publisher))? {
        b.add_publisher(x);
    }
    for x in read_optional(dir, &entity_file(EntityKind::Review))? {
        b.add_review(x);
    }
    for x in read_optional(dir, &entity_file(EntityKind::User))? {
        b.add_user(x);
    }
    for rel in Relation::ALL {
        let edges: Vec<EdgeRecord> = read_optional(dir, &edge_file(rel))?;
        for e in edges {
            b.add_edge_by_ids(e.relation, &e.src, &e.dst);
        }
    }
    Ok(b.build())
}

pub fn write_graph(graph: &BookGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(entity_file(EntityKind::Book)), &graph.books)?;
    write_jsonl(&dir.join(entity_file(EntityKind::Author)), &graph.authors)?;
    write_jsonl(
        &dir.join(entity_file(EntityKind::Category)),
        &graph.categories,
    )?;
    write_jsonl(
        &dir.join(entity_file(EntityKind::Publisher)),
        &graph.publishers,
    )?;
    write_jsonl(&dir.join(entity_file(EntityKind::Review)), &graph.reviews)?;
    write_jsonl(&dir.join(entity_file(EntityKind::User)), &graph.users)?;
    for rel in Relation::ALL {
        let recs: Vec<EdgeRecord> = graph
            .edges_of(rel)
            .filter_map(|e| edge_record(graph, e))
            .collect();
        write_jsonl(&dir.join(edge_file(rel)), &recs)?;
    }
    Ok(())
}

fn edge_record(graph: &BookGraph, e: &RelationEdge) -> Option<EdgeRecord> {
    Some(EdgeRecord {
        relation: e.relation,
        src: graph.external_id(e.src)?.to_string(),
        dst: graph.external_id(e.dst)?.to_string(),
    })
}

pub fn write_interactions(path: &Path, graph: &BookGraph, rows: &[Interaction]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{TSV_HEADER}").map_err(io)?;
    for it in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            graph.users[it.user].id,
            graph.books[it.book].id,
            it.weight,
            it.date.map(|d| d.to_string()).unwrap_or_default(),
            it.rating.map(|r| r.to_string()).unwrap_or_default(),
            u8::from(it.verified),
            it.review
                .map(|r| graph.reviews[r].id.as_str())
                .unwrap_or_default(),
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads an interaction table, resolving ids against `graph`. `seq` is the
/// line position, so files written in chronological order keep recency.
pub fn read_interactions(path: &Path, graph: &BookGraph) -> Result<Vec<Interaction>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 && line.starts_with("user\t") || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 && cols.len() != 7 {
            return Err(perr(
                n + 1,
                format!("expected 6 or 7 columns, got {}", cols.len()),
            ));
        }
        let user = graph.require(EntityKind::User, cols[0])?;
        let book = graph.require(EntityKind::Book, cols[1])?;
        let weight: f64 = cols[2]
            .parse()
            .map_err(|_| perr(n + 1, format!("bad weight {:?}", cols[2])))?;
        if !(weight > 0.0) {
            return Err(perr(
                n + 1,
                format!("weight must be positive, got {weight}"),
            ));
        }
        let date = match cols[3] {
            "" => None,
            s => Some(
                NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .map_err(|_| perr(n + 1, format!("bad date {s:?}")))?,
            ),
        };
        let rating = match cols[4] {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|_| perr(n + 1, format!("bad rating {s:?}")))?,
            ),
        };
        let verified = matches!(cols[5], "1" | "true");
        let review = match cols.get(6).copied().unwrap_or("") {
            "" => None,
            s => Some(graph.require(EntityKind::Review, s)?),
        };
        let seq = out.len();
        out.push(Interaction {
            user,
            book,
            weight,
            date,
            rating,
            verified,
            seq,
            review,
        });
    }
    Ok(out)
}

/// Paths of the three split files inside a split directory.
pub fn split_paths(dir: &Path) -> [PathBuf; 3] {
    ["train.tsv", "valid.tsv", "test.tsv"].map(|f| dir.join(f))
}

/// True for anonymized user ids of the form `USER` followed by digits.
pub fn is_user_id(s: &str) -> bool {
    s.strip_prefix("USER")
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_interactions, validate_graph, Book, Review, User};

    #[test]
    fn graph_and_interactions_round_trip() {
        let mut b = GraphBuilder::new();
        b.add_book(Book::titled("B1", "x"));
        b.add_user(User {
            id: "USER544691".into(),
        });
        b.add_review(Review {
            id: "R1".into(),
            rating: Some(4.0),
            date: NaiveDate::from_ymd_opt(2023, 5, 2),
            ..Default::default()
        });
        b.add_edge_by_ids(Relation::UserReview, "USER544691", "R1");
        b.add_edge_by_ids(Relation::BookReview, "B1", "R1");
        let g = b.build();
        let dir = tempfile::tempdir().unwrap();
        write_graph(&g, dir.path()).unwrap();
        let g2 = load_graph(dir.path()).unwrap();
        assert!(validate_graph(&g2).is_valid());
        assert_eq!(g2.reviews, g.reviews);
        let rows = build_interactions(&g2).interactions;
        let p = dir.path().join(INTERACTIONS_FILE);
        write_interactions(&p, &g2, &rows).unwrap();
        assert_eq!(read_interactions(&p, &g2).unwrap(), rows);
    }

    #[test]
    fn user_id_format() {
        assert!(is_user_id("USER544691"));
        assert!(is_user_id("USER000001"));
        assert!(!is_user_id("USER"));
        assert!(!is_user_id("user12"));
    }
}
