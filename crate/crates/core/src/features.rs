//! Per-book side features: multi-hot entity indicators, a scaled numeric
//! block, TF-IDF over review text and dense text embeddings.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use unicode_segmentation::UnicodeSegmentation;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};
use crate::graph::{BookGraph, EntityKind, Interaction};
use crate::ingest::normalize_text;

pub const NUMERIC_DIM: usize = 5;
pub const NUMERIC_NAMES: [&str; NUMERIC_DIM] = [
    "price",
    "pages",
    "avg_rating",
    "rating_count",
    "review_count",
];
pub const DEFAULT_HASH_DIM: usize = 256;

/// Sparse vector with strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVec {
    pub dim: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn binary(dim: usize, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        let values = vec![1.0; indices.len()];
        Self {
            dim,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            d[i] = v;
        }
        d
    }

    /// Concatenates blocks, offsetting indices by the preceding dims.
    pub fn concat(blocks: &[&SparseVec]) -> SparseVec {
        let mut out = SparseVec::default();
        for b in blocks {
            out.indices.extend(b.indices.iter().map(|i| i + out.dim));
            out.values.extend_from_slice(&b.values);
            out.dim += b.dim;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub author_multi_hot: SparseVec,
    pub category_multi_hot: SparseVec,
    pub publisher_multi_hot: SparseVec,
    pub numeric: [f64; NUMERIC_DIM],
    pub text_embedding: Vec<f64>,
}

/// Catalog-wide mean and standard deviation of each transformed numeric
/// feature, over books where the feature is present.
#[derive(Clone, Debug, PartialEq)]
pub struct CatalogStats {
    pub mean: [f64; NUMERIC_DIM],
    pub std: [f64; NUMERIC_DIM],
}

fn raw_numeric(graph: &BookGraph, book: usize) -> [Option<f64>; NUMERIC_DIM] {
    let b = &graph.books[book];
    let log = |v: f64| v.max(0.0).ln_1p();
    [
        b.price.map(log),
        b.pages.map(|p| log(p as f64)),
        // zero means unrated
        b.avg_rating.filter(|r| *r != 0.0),
        b.rating_count.map(|c| log(c as f64)),
        b.review_count.map(|c| log(c as f64)),
    ]
}

impl CatalogStats {
    pub fn compute(graph: &BookGraph) -> Self {
        let mut sum = [0.0; NUMERIC_DIM];
        let mut sq = [0.0; NUMERIC_DIM];
        let mut n = [0usize; NUMERIC_DIM];
        for b in 0..graph.num_books() {
            for (k, v) in raw_numeric(graph, b).into_iter().enumerate() {
                if let Some(v) = v {
                    sum[k] += v;
                    sq[k] += v * v;
                    n[k] += 1;
                }
            }
        }
        let mut mean = [0.0; NUMERIC_DIM];
        let mut std = [0.0; NUMERIC_DIM];
        for k in 0..NUMERIC_DIM {
            if n[k] > 0 {
                mean[k] = sum[k] / n[k] as f64;
                std[k] = (sq[k] / n[k] as f64 - mean[k] * mean[k]).max(0.0).sqrt();
            }
        }
        Self { mean, std }
    }

    pub fn scale(&self, graph: &BookGraph, book: usize) -> [f64; NUMERIC_DIM] {
        let raw = raw_numeric(graph, book);
        std::array::from_fn(|k| match raw[k] {
            Some(v) if self.std[k] > 1e-12 => (v - self.mean[k]) / self.std[k],
            _ => 0.0,
        })
    }
}

pub fn build_feature_bundle(
    graph: &BookGraph,
    book: usize,
    stats: &CatalogStats,
    embeddings: &EmbeddingTable,
) -> FeatureBundle {
    FeatureBundle {
        author_multi_hot: SparseVec::binary(graph.authors.len(), graph.book_authors(book).to_vec()),
        category_multi_hot: SparseVec::binary(
            graph.categories.len(),
            graph.book_categories(book).to_vec(),
        ),
        publisher_multi_hot: SparseVec::binary(
            graph.publishers.len(),
            graph.book_publishers(book).to_vec(),
        ),
        numeric: stats.scale(graph, book),
        text_embedding: embeddings.get(book).to_vec(),
    }
}

/// Feature bundles for the whole catalog.
#[derive(Clone, Debug)]
pub struct FeatureStore {
    pub bundles: Vec<FeatureBundle>,
    pub text_dim: usize,
    pub provenance: String,
}

impl FeatureStore {
    pub fn build(graph: &BookGraph, embeddings: &EmbeddingTable) -> Self {
        let stats = CatalogStats::compute(graph);
        let bundles = (0..graph.num_books())
            .map(|b| build_feature_bundle(graph, b, &stats, embeddings))
            .collect();
        Self {
            bundles,
            text_dim: embeddings.dim,
            provenance: embeddings.provenance.clone(),
        }
    }

    /// Bundles with hashed text embeddings of the composed book text.
    pub fn with_hashing(graph: &BookGraph, dim: usize) -> Self {
        Self::build(graph, &EmbeddingTable::hashing(graph, dim))
    }
}

/// Lowercased Unicode words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.unicode_words().map(|w| w.to_lowercase()).collect()
}

fn ngrams(tokens: &[String]) -> Vec<String> {
    let mut out: Vec<String> = tokens.to_vec();
    out.extend(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TfidfModel {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    /// Document frequency of each column as a proportion of documents.
    pub df: Vec<f64>,
    pub min_df: f64,
    pub max_df: f64,
    pub max_features: usize,
    pub num_docs: usize,
}

/// Fits unigram+bigram TF-IDF. Terms whose document proportion falls
/// outside `[min_df, max_df]` are dropped, then the `max_features` most
/// frequent remain (ties lexicographic). `idf = ln((1+N)/(1+df)) + 1`.
pub fn tfidf_fit(
    documents: &[Vec<String>],
    min_df: f64,
    max_df: f64,
    max_features: usize,
) -> Result<TfidfModel> {
    if documents.is_empty() {
        return Err(Error::Empty("tf-idf needs at least one document".into()));
    }
    let n = documents.len();
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in documents {
        let mut terms = ngrams(doc);
        terms.sort_unstable();
        terms.dedup();
        for t in terms {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = df
        .into_iter()
        .filter(|(_, c)| {
            let p = *c as f64 / n as f64;
            p >= min_df - 1e-12 && p <= max_df + 1e-12
        })
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    kept.truncate(max_features);
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary { min_df, max_df });
    }
    // columns in lexicographic order
    kept.sort_by(|a, b| a.0.cmp(&b.0));
    let mut vocabulary = BTreeMap::new();
    let mut idf = Vec::with_capacity(kept.len());
    let mut dfp = Vec::with_capacity(kept.len());
    for (col, (term, c)) in kept.into_iter().enumerate() {
        idf.push(((1.0 + n as f64) / (1.0 + c as f64)).ln() + 1.0);
        dfp.push(c as f64 / n as f64);
        vocabulary.insert(term, col);
    }
    Ok(TfidfModel {
        vocabulary,
        idf,
        df: dfp,
        min_df,
        max_df,
        max_features,
        num_docs: n,
    })
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn document_frequency(&self, term: &str) -> Option<f64> {
        self.vocabulary.get(term).map(|&c| self.df[c])
    }

    /// Raw term counts times idf, L2-normalized. All-OOV documents map to
    /// the zero vector.
    pub fn transform(&self, document: &[String]) -> SparseVec {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in ngrams(document) {
            if let Some(&c) = self.vocabulary.get(&t) {
                *counts.entry(c).or_default() += 1.0;
            }
        }
        let mut v = SparseVec {
            dim: self.dim(),
            indices: Vec::with_capacity(counts.len()),
            values: Vec::with_capacity(counts.len()),
        };
        for (c, tf) in counts {
            v.indices.push(c);
            v.values.push(tf * self.idf[c]);
        }
        let norm = v.norm();
        if norm > 0.0 {
            v.values.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

pub fn tfidf_transform(model: &TfidfModel, document: &[String]) -> SparseVec {
    model.transform(document)
}

/// Per-book review-text documents built from training interactions only.
/// `review_text` maps an interaction to its text, if any.
pub fn review_documents<'a>(
    num_books: usize,
    train: &'a [Interaction],
    review_text: impl Fn(&'a Interaction) -> Option<&'a str>,
) -> Vec<Vec<String>> {
    let mut docs = vec![Vec::new(); num_books];
    for it in train {
        if let Some(t) = review_text(it) {
            docs[it.book].extend(tokenize(t));
        }
    }
    docs
}

/// Title, summary, author names, category names and descriptions, then
/// publisher names, space separated and NFD-normalized.
pub fn compose_book_text(graph: &BookGraph, book: usize) -> String {
    let b = &graph.books[book];
    let mut parts: Vec<&str> = vec![b.title.as_str()];
    parts.extend(b.summary.as_deref());
    for &a in graph.book_authors(book) {
        parts.push(&graph.authors[a].name);
    }
    for &c in graph.book_categories(book) {
        let cat = &graph.categories[c];
        parts.push(&cat.name);
        parts.extend(cat.description.as_deref());
    }
    for &p in graph.book_publishers(book) {
        parts.push(&graph.publishers[p].name);
    }
    normalize_text(&parts.join(" "))
}

/// Signed feature hashing of lowercased word tokens, L2-normalized.
pub fn hash_text_embed(text: &str, dim: usize) -> Vec<f64> {
    assert!(dim >= 8, "hash embedding dim must be at least 8");
    let mut v = vec![0.0; dim];
    for tok in tokenize(text) {
        let col = (xxh3_64_with_seed(tok.as_bytes(), 0) % dim as u64) as usize;
        let sign = if xxh3_64_with_seed(tok.as_bytes(), 1) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        v[col] += sign;
    }
    l2_normalize(&mut v);
    v
}

fn l2_normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    vectors: Vec<Option<Vec<f64>>>,
    zero: Vec<f64>,
    pub provenance: String,
}

impl EmbeddingTable {
    pub fn zeros(num_books: usize, dim: usize) -> Self {
        Self {
            dim,
            vectors: vec![None; num_books],
            zero: vec![0.0; dim],
            provenance: "zeros".into(),
        }
    }

    pub fn hashing(graph: &BookGraph, dim: usize) -> Self {
        let vectors = (0..graph.num_books())
            .map(|b| Some(hash_text_embed(&compose_book_text(graph, b), dim)))
            .collect();
        Self {
            dim,
            vectors,
            zero: vec![0.0; dim],
            provenance: "hashing".into(),
        }
    }

    /// Zero vector for books without an entry.
    pub fn get(&self, book: usize) -> &[f64] {
        self.vectors
            .get(book)
            .and_then(|v| v.as_deref())
            .unwrap_or(&self.zero)
    }

    pub fn contains(&self, book: usize) -> bool {
        self.vectors.get(book).is_some_and(Option::is_some)
    }

    pub fn len(&self) -> usize {
        self.vectors.iter().filter(|v| v.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn set(&mut self, book: usize, mut v: Vec<f64>) {
        assert_eq!(v.len(), self.dim);
        l2_normalize(&mut v);
        self.vectors[book] = Some(v);
    }
}

/// Reads `dim=<D>` followed by `book_id<TAB>v1,...,vD` rows. Vectors are
/// unit-normalized on load.
pub fn load_embeddings(path: &Path, graph: &BookGraph) -> Result<EmbeddingTable> {
    let err = |msg: String| Error::Embedding {
        path: path.to_path_buf(),
        msg,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| err("empty file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let dim: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|d| d.parse().ok())
        .filter(|d| *d > 0)
        .ok_or_else(|| err(format!("bad header {header:?}")))?;
    let mut table = EmbeddingTable::zeros(graph.num_books(), dim);
    table.provenance = path.display().to_string();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, vals) = line
            .split_once('\t')
            .ok_or_else(|| err(format!("line {}: missing tab", n + 2)))?;
        let book = graph
            .lookup(EntityKind::Book, id.trim())
            .ok_or_else(|| err(format!("line {}: unknown book {id:?}", n + 2)))?;
        let v: Vec<f64> = vals
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(format!("line {}: {e}", n + 2)))?;
        if v.len() != dim {
            return Err(err(format!(
                "line {}: row has {} values, header says {dim}",
                n + 2,
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(err(format!("line {}: non-finite value", n + 2)));
        }
        if table.contains(book) {
            return Err(err(format!("line {}: duplicate book {id:?}", n + 2)));
        }
        table.set(book, v);
    }
    Ok(table)
}

/// Writes vectors in the format read by [`load_embeddings`].
pub fn write_embeddings<'a>(
    path: &Path,
    dim: usize,
    rows: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "dim={dim}").map_err(io)?;
    for (id, v) in rows {
        let vals: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
        writeln!(w, "{id}\t{}", vals.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Author, Book, Category, GraphBuilder, Relation};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn small_graph() -> BookGraph {
        let mut g = GraphBuilder::new();
        g.add_book(Book {
            id: "B0".into(),
            title: "Himu".into(),
            summary: Some("a walk".into()),
            price: Some(100.0),
            pages: Some(120),
            ..Default::default()
        });
        g.add_book(Book {
            id: "B1".into(),
            title: "Misir Ali".into(),
            price: Some(300.0),
            ..Default::default()
        });
        g.add_book(Book::titled("B2", "Untitled"));
        for i in 0..10 {
            g.add_author(Author {
                id: format!("A{i}"),
                name: format!("writer{i}"),
                ..Default::default()
            });
        }
        g.add_category(Category {
            id: "C0".into(),
            name: "fiction".into(),
            description: Some("novels".into()),
            ..Default::default()
        });
        g.add_edge_by_ids(Relation::BookAuthor, "B0", "A3");
        g.add_edge_by_ids(Relation::BookAuthor, "B0", "A7");
        g.add_edge_by_ids(Relation::BookCategory, "B1", "C0");
        g.build()
    }

    #[test]
    fn multi_hot_and_numeric() {
        let g = small_graph();
        let fs = FeatureStore::with_hashing(&g, 16);
        let b0 = &fs.bundles[0];
        assert_eq!(b0.author_multi_hot.dim, 10);
        assert_eq!(b0.author_multi_hot.indices, vec![3, 7]);
        assert_eq!(fs.bundles[2].numeric, [0.0; NUMERIC_DIM]);
        // price present for two books: z-scores are +-1
        assert!((b0.numeric[0] + 1.0).abs() < 1e-12);
        assert!((fs.bundles[1].numeric[0] - 1.0).abs() < 1e-12);
        // pages present once: zero variance
        assert_eq!(b0.numeric[1], 0.0);
    }

    #[test]
    fn single_book_catalog_zero_variance() {
        let mut g = GraphBuilder::new();
        g.add_book(Book {
            id: "B".into(),
            title: "t".into(),
            price: Some(100.0),
            ..Default::default()
        });
        let g = g.build();
        let st = CatalogStats::compute(&g);
        assert_eq!(st.scale(&g, 0)[0], 0.0);
    }

    #[test]
    fn composed_text_order() {
        let g = small_graph();
        assert_eq!(compose_book_text(&g, 2), "Untitled");
        assert_eq!(compose_book_text(&g, 0), "Himu a walk writer3 writer7");
        assert_eq!(compose_book_text(&g, 1), "Misir Ali fiction novels");
    }

    #[test]
    fn tfidf_df_counts() {
        let docs = vec![toks("a"), toks("a"), toks("a b")];
        let m = tfidf_fit(&docs, 0.0, 1.0, 100).unwrap();
        assert_eq!(m.document_frequency("a"), Some(1.0));
        assert_eq!(m.document_frequency("b"), Some(1.0 / 3.0));
        assert_eq!(m.document_frequency("a b"), Some(1.0 / 3.0));
        let m = tfidf_fit(&docs, 0.0, 0.8, 100).unwrap();
        assert_eq!(m.document_frequency("a"), None);
        assert_eq!(m.transform(&toks("zzz")).nnz(), 0);
        assert!(matches!(
            tfidf_fit(&docs, 0.9, 0.95, 100),
            Err(Error::EmptyVocabulary { .. })
        ));
    }

    #[test]
    fn tfidf_max_features_tie_break() {
        let docs = vec![toks("c b a"), toks("d")];
        let m = tfidf_fit(&docs, 0.0, 1.0, 2).unwrap();
        let terms: Vec<_> = m.vocabulary.keys().cloned().collect();
        assert_eq!(terms, ["a", "b"]);
    }

    #[test]
    fn hash_embed_contract() {
        assert!(hash_text_embed("", 16).iter().all(|x| *x == 0.0));
        let v = hash_text_embed("boi ta khub bhalo", 32);
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert_eq!(v, hash_text_embed("boi ta khub bhalo", 32));
        assert_eq!(v, hash_text_embed("khub bhalo ta boi", 32));
    }

    #[test]
    fn embedding_file_load() {
        let g = small_graph();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.tsv");
        std::fs::write(&p, "dim=4\nB0\t1,0,0,0\nB1\t0,3,0,4\nB2\t0,0,0,0\n").unwrap();
        let t = load_embeddings(&p, &g).unwrap();
        assert_eq!((t.dim, t.len()), (4, 3));
        assert_eq!(t.get(1), &[0.0, 0.6, 0.0, 0.8]);

        std::fs::write(&p, "dim=4\nB0\t1,0,0\n").unwrap();
        assert!(load_embeddings(&p, &g).is_err());
        std::fs::write(&p, "dim=4\nB0\t1,0,0,0\nB0\t1,0,0,0\n").unwrap();
        assert!(load_embeddings(&p, &g).is_err());

        std::fs::write(&p, "dim=4\nB0\t1,0,0,0\n").unwrap();
        let t = load_embeddings(&p, &g).unwrap();
        assert_eq!(t.get(2), &[0.0; 4]);

        write_embeddings(&p, 4, [("B2", &[0.0, 0.0, 2.0, 0.0][..])]).unwrap();
        assert_eq!(
            load_embeddings(&p, &g).unwrap().get(2),
            &[0.0, 0.0, 1.0, 0.0]
        );
    }

    /// Independent tf-idf over dense term-count rows.
    fn brute_tfidf(docs: &[Vec<String>], m: &TfidfModel) -> Vec<Vec<f64>> {
        let n = docs.len() as f64;
        let terms: Vec<&String> = m.vocabulary.keys().collect();
        let grams: Vec<Vec<String>> = docs.iter().map(|d| ngrams(d)).collect();
        terms_rows(&terms, &grams, n)
    }

    fn terms_rows(terms: &[&String], grams: &[Vec<String>], n: f64) -> Vec<Vec<f64>> {
        grams
            .iter()
            .map(|g| {
                let mut row: Vec<f64> = terms
                    .iter()
                    .map(|t| {
                        let tf = g.iter().filter(|x| x == t).count() as f64;
                        let df = grams.iter().filter(|d| d.contains(t)).count() as f64;
                        tf * (((1.0 + n) / (1.0 + df)).ln() + 1.0)
                    })
                    .collect();
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|x| *x /= norm);
                }
                row
            })
            .collect()
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn corpus() -> impl Strategy<Value = Vec<Vec<String>>> {
            proptest::collection::vec(proptest::collection::vec("[a-e]", 0..8), 1..20)
        }

        proptest! {
            #[test]
            fn tfidf_matches_bruteforce(docs in corpus()) {
                if let Ok(m) = tfidf_fit(&docs, 0.0, 1.0, 10_000) {
                    let want = brute_tfidf(&docs, &m);
                    for (d, w) in docs.iter().zip(want) {
                        let got = m.transform(d).to_dense();
                        for (g, e) in got.iter().zip(&w) {
                            prop_assert!((g - e).abs() < 1e-9);
                        }
                        let n = m.transform(d).norm();
                        prop_assert!(n.abs() < 1e-9 || (n - 1.0).abs() < 1e-9);
                    }
                }
            }

            #[test]
            fn hash_embed_depends_on_multiset(words in proptest::collection::vec("[a-z]{1,6}", 1..12)) {
                let mut shuffled = words.clone();
                shuffled.reverse();
                prop_assert_eq!(
                    hash_text_embed(&words.join(" "), 64),
                    hash_text_embed(&shuffled.join(" "), 64)
                );
            }
        }
    }
}
