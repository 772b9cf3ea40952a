//! Masked Top-N evaluation: Hit, MRR and NDCG at fixed cutoffs over the
//! full catalog minus each user's training books.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Interaction;
use crate::neural::{AblationFlags, Removal};
use crate::recommend::Recommender;
use crate::sparse::TrainSet;

pub const DEFAULT_CUTOFFS: [usize; 3] = [5, 10, 50];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub hit: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

/// Binary-relevance metrics of one ranked list. `ranked` must be
/// duplicate-free; `relevant` may be in any order.
pub fn metrics_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> MetricValues {
    let mut rel = relevant.to_vec();
    rel.sort_unstable();
    rel.dedup();
    if rel.is_empty() || k == 0 {
        return MetricValues::default();
    }
    let mut m = MetricValues::default();
    let mut dcg = 0.0;
    for (r, b) in ranked.iter().take(k).enumerate() {
        if rel.binary_search(b).is_ok() {
            if m.hit == 0.0 {
                m.hit = 1.0;
                m.mrr = 1.0 / (r + 1) as f64;
            }
            dcg += 1.0 / ((r + 2) as f64).log2();
        }
    }
    let idcg: f64 = (0..rel.len().min(k))
        .map(|r| 1.0 / ((r + 2) as f64).log2())
        .sum();
    m.ndcg = dcg / idcg;
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub k: usize,
    pub hit: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub model: String,
    pub cutoffs: Vec<CutoffMetrics>,
    pub users_evaluated: usize,
    pub users_skipped: usize,
    pub seed: u64,
    pub config_digest: String,
}

impl RankingReport {
    pub fn at(&self, k: usize) -> Option<&CutoffMetrics> {
        self.cutoffs.iter().find(|c| c.k == k)
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.at(k).map_or(f64::NAN, |c| c.ndcg)
    }
}

/// Candidates are always the full catalog with training books masked.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalProtocol {
    cutoffs: Vec<usize>,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
        }
    }
}

impl EvalProtocol {
    pub fn new(mut cutoffs: Vec<usize>) -> Result<Self> {
        cutoffs.sort_unstable();
        cutoffs.dedup();
        if cutoffs.is_empty() || cutoffs[0] == 0 {
            return Err(Error::Config(
                "cutoffs must be non-empty and positive".into(),
            ));
        }
        Ok(Self { cutoffs })
    }

    pub fn cutoffs(&self) -> &[usize] {
        &self.cutoffs
    }

    pub fn mask_train(&self) -> bool {
        true
    }
}

/// Sorted distinct relevant books per user.
pub fn relevance(num_users: usize, rows: &[Interaction]) -> Vec<Vec<usize>> {
    let mut rel = vec![Vec::new(); num_users];
    for it in rows {
        rel[it.user].push(it.book);
    }
    for r in &mut rel {
        r.sort_unstable();
        r.dedup();
    }
    rel
}

/// Evaluates `users` (all users when `None`) against their test books.
/// Users without test books or without any candidate are skipped. Any
/// training book in a returned list is a hard [`Error::Leakage`].
pub fn evaluate_model(
    model: &dyn Recommender,
    train: &TrainSet,
    test: &[Interaction],
    protocol: &EvalProtocol,
    users: Option<&[usize]>,
) -> Result<RankingReport> {
    let rel = relevance(train.num_users, test);
    let all: Vec<usize>;
    let users = match users {
        Some(u) => u,
        None => {
            all = (0..train.num_users).collect();
            &all
        }
    };
    let max_k = *protocol.cutoffs.last().unwrap();
    let per_user: Vec<Option<Vec<MetricValues>>> = users
        .par_iter()
        .map(|&u| -> Result<Option<Vec<MetricValues>>> {
            if rel[u].is_empty() {
                return Ok(None);
            }
            let seen = train.seen(u);
            if seen.len() >= train.num_books {
                return Ok(None);
            }
            let ranked: Vec<usize> = model
                .rank(u, &seen, max_k)
                .into_iter()
                .map(|x| x.0)
                .collect();
            if let Some(&b) = ranked.iter().find(|b| seen.binary_search(b).is_ok()) {
                return Err(Error::Leakage {
                    model: model.kind().name().to_string(),
                    user: u,
                    book: b,
                });
            }
            Ok(Some(
                protocol
                    .cutoffs
                    .iter()
                    .map(|&k| metrics_at_k(&ranked, &rel[u], k))
                    .collect(),
            ))
        })
        .collect::<Result<_>>()?;
    let mut sums = vec![MetricValues::default(); protocol.cutoffs.len()];
    let mut n = 0usize;
    for m in per_user.iter().flatten() {
        n += 1;
        for (s, v) in sums.iter_mut().zip(m) {
            s.hit += v.hit;
            s.mrr += v.mrr;
            s.ndcg += v.ndcg;
        }
    }
    let d = n.max(1) as f64;
    Ok(RankingReport {
        model: model.kind().name().to_string(),
        cutoffs: protocol
            .cutoffs
            .iter()
            .zip(&sums)
            .map(|(&k, s)| CutoffMetrics {
                k,
                hit: s.hit / d,
                mrr: s.mrr / d,
                ndcg: s.ndcg / d,
            })
            .collect(),
        users_evaluated: n,
        users_skipped: users.len() - n,
        seed: 0,
        config_digest: String::new(),
    })
}

/// Test users with at most one training interaction.
pub fn cold_start_subset(train: &TrainSet, test: &[Interaction]) -> Vec<usize> {
    let mut users: Vec<usize> = test
        .iter()
        .map(|it| it.user)
        .filter(|&u| train.history[u].len() <= 1)
        .collect();
    users.sort_unstable();
    users.dedup();
    users
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Warm,
    Cold,
}

impl Subset {
    pub fn label(self) -> &'static str {
        match self {
            Subset::Warm => "Warm-start",
            Subset::Cold => "Cold-start",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub subset: Subset,
    pub setting: String,
    pub removed: Option<Removal>,
    pub report: RankingReport,
}

pub fn setting_label(removed: Option<Removal>) -> &'static str {
    match removed {
        None => "Full model",
        Some(Removal::Side) => "-- Side features",
        Some(Removal::Relations) => "-- Relations",
        Some(Removal::Interaction) => "-- Interaction",
    }
}

/// Fits the full model and one model per removal with `fit`, then
/// evaluates each on the warm (all test users) and cold-start subsets.
/// Rows are grouped warm first, each group in full-then-removal order.
pub fn run_ablation(
    removals: &[Removal],
    train: &TrainSet,
    test: &[Interaction],
    protocol: &EvalProtocol,
    mut fit: impl FnMut(AblationFlags) -> Result<Box<dyn Recommender>>,
) -> Result<Vec<AblationRow>> {
    let mut configs: Vec<Option<Removal>> = vec![None];
    for r in removals {
        if !configs.contains(&Some(*r)) {
            configs.push(Some(*r));
        }
    }
    let cold = cold_start_subset(train, test);
    let mut warm_rows = Vec::new();
    let mut cold_rows = Vec::new();
    for removed in configs {
        let flags = removed.map_or(AblationFlags::FULL, AblationFlags::without);
        let model = fit(flags)?;
        for (subset, users, rows) in [
            (Subset::Warm, None, &mut warm_rows),
            (Subset::Cold, Some(cold.as_slice()), &mut cold_rows),
        ] {
            rows.push(AblationRow {
                subset,
                setting: setting_label(removed).to_string(),
                removed,
                report: evaluate_model(model.as_ref(), train, test, protocol, users)?,
            });
        }
    }
    warm_rows.extend(cold_rows);
    Ok(warm_rows)
}

/// Per-seed reports with their mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub model: String,
    pub runs: Vec<RankingReport>,
    pub mean: Vec<CutoffMetrics>,
    pub std: Vec<CutoffMetrics>,
}

pub fn summarize_seeds(runs: Vec<RankingReport>) -> Result<SeedSummary> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Empty("no runs to summarize".into()))?;
    let n = runs.len() as f64;
    let model = first.model.clone();
    let mut mean = first.cutoffs.clone();
    let mut std = first.cutoffs.clone();
    for (c, (m, s)) in mean.iter_mut().zip(std.iter_mut()).enumerate() {
        let col = |f: fn(&CutoffMetrics) -> f64| -> (f64, f64) {
            let xs: Vec<f64> = runs.iter().map(|r| f(&r.cutoffs[c])).collect();
            let mu = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
            (mu, var.sqrt())
        };
        (m.hit, s.hit) = col(|x| x.hit);
        (m.mrr, s.mrr) = col(|x| x.mrr);
        (m.ndcg, s.ndcg) = col(|x| x.ndcg);
    }
    Ok(SeedSummary {
        model,
        runs,
        mean,
        std,
    })
}

/// Columns of the main comparison table; cutoffs not evaluated are shown
/// as `-`.
const TABLE_COLUMNS: [(&str, usize); 6] = [
    ("Hit", 5),
    ("Hit", 10),
    ("Hit", 50),
    ("MRR", 10),
    ("NDCG", 10),
    ("NDCG", 50),
];

fn metric(c: &[CutoffMetrics], name: &str, k: usize) -> Option<f64> {
    let m = c.iter().find(|m| m.k == k)?;
    Some(match name {
        "Hit" => m.hit,
        "MRR" => m.mrr,
        _ => m.ndcg,
    })
}

/// Aligned text table of `(label, mean, optional std)` rows.
pub fn format_table(rows: &[(String, Vec<CutoffMetrics>, Option<Vec<CutoffMetrics>>)]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, mean, std)| {
            let mut r = vec![label.clone()];
            for (name, k) in TABLE_COLUMNS {
                r.push(
                    match (
                        metric(mean, name, k),
                        std.as_ref().and_then(|s| metric(s, name, k)),
                    ) {
                        (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
                        (Some(m), None) => format!("{m:.3}"),
                        _ => "-".into(),
                    },
                );
            }
            r
        })
        .collect();
    let mut header = vec!["Model".to_string()];
    header.extend(TABLE_COLUMNS.iter().map(|(n, k)| format!("{n}@{k}")));
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            cells
                .iter()
                .map(|r| r[c].chars().count())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |r: &[String], out: &mut String| {
        for (c, cell) in r.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                let _ = write!(out, "{cell}{}", " ".repeat(pad));
            } else {
                let _ = write!(out, "  {}{cell}", " ".repeat(pad));
            }
        }
        out.push('\n');
    };
    line(&header, &mut out);
    let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for r in &cells {
        line(r, &mut out);
    }
    out
}

/// Scenario / setting / NDCG@10 / NDCG@50 table for ablation rows.
pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<11} {:<17} {:>8} {:>8}\n",
        "Scenario", "Setting", "NDCG@10", "NDCG@50"
    );
    out.push_str(&"-".repeat(47));
    out.push('\n');
    for r in rows {
        let f = |k| {
            r.report
                .at(k)
                .map_or("-".to_string(), |c| format!("{:.3}", c.ndcg))
        };
        let _ = writeln!(
            out,
            "{:<11} {:<17} {:>8} {:>8}",
            r.subset.label(),
            r.setting,
            f(10),
            f(50)
        );
    }
    out
}
