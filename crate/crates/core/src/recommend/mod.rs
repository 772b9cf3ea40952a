//! The uniform recommender contract and the non-neural model families.
//!
//! A fitted model scores every book for a user; [`Recommender::rank`] turns
//! that into a Top-N list that never contains a masked book. Scores are
//! non-increasing down the list and ties go to the lower book index unless
//! a model defines a secondary key.

mod als;
mod content;
mod knn;
mod mf;
mod popularity;
mod random;
mod warp;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use als::{als_objective, fit_als, AlsConfig};
pub use content::{content_item_vectors, fit_content_based, ContentBased, ContentConfig};
pub use knn::{fit_item_cf, fit_user_cf, ItemCf, UserCf, DEFAULT_K as KNN_DEFAULT_K};
pub use mf::{fit_explicit_mf, mf_loss, mf_loss_grad, MfConfig, MfParams};
pub use popularity::{fit_category_popularity, fit_popularity, CategoryPopularity, Popularity};
pub use random::RandomRanker;
pub use warp::{fit_hybrid_warp, warp_weight, HybridFeatures, WarpConfig};

use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::graph::{BookGraph, Interaction};
use crate::linalg::{dot, Mat};
use crate::persist::Checkpoint;
use crate::sparse::TrainSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Popularity,
    CategoryPop,
    UserCf,
    ItemCf,
    Als,
    ExplicitMf,
    Content,
    HybridWarp,
    Lightgcn,
    Hgnn,
    TwoTower,
    Random,
}

impl ModelKind {
    pub const ALL: [ModelKind; 12] = [
        ModelKind::Popularity,
        ModelKind::CategoryPop,
        ModelKind::UserCf,
        ModelKind::ItemCf,
        ModelKind::Als,
        ModelKind::ExplicitMf,
        ModelKind::Content,
        ModelKind::HybridWarp,
        ModelKind::Lightgcn,
        ModelKind::Hgnn,
        ModelKind::TwoTower,
        ModelKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Popularity => "popularity",
            ModelKind::CategoryPop => "category_pop",
            ModelKind::UserCf => "user_cf",
            ModelKind::ItemCf => "item_cf",
            ModelKind::Als => "als",
            ModelKind::ExplicitMf => "explicit_mf",
            ModelKind::Content => "content",
            ModelKind::HybridWarp => "hybrid_warp",
            ModelKind::Lightgcn => "lightgcn",
            ModelKind::Hgnn => "hgnn",
            ModelKind::TwoTower => "two_tower",
            ModelKind::Random => "random",
        }
    }

    /// Display label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Popularity => "Popularity",
            ModelKind::CategoryPop => "Category-Aware Popularity",
            ModelKind::UserCf => "User-Based CF",
            ModelKind::ItemCf => "Item-Based CF",
            ModelKind::Als => "Implicit MF",
            ModelKind::ExplicitMf => "Explicit MF",
            ModelKind::Content => "Pure Content-Based",
            ModelKind::HybridWarp => "Hybrid: MF + Side",
            ModelKind::Lightgcn => "LightGCN",
            ModelKind::Hgnn => "HGNN + Side",
            ModelKind::TwoTower => "Neural Two-Tower + Side",
            ModelKind::Random => "Random",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

/// Everything a model may consume during fitting.
#[derive(Clone, Copy)]
pub struct FitContext<'a> {
    pub train: &'a TrainSet,
    pub valid: &'a [Interaction],
    pub graph: &'a BookGraph,
    pub features: Option<&'a FeatureStore>,
    /// Review text per training interaction, parallel to `train.interactions`.
    pub review_texts: Option<&'a [Option<String>]>,
    pub seed: u64,
}

pub trait Recommender: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn num_books(&self) -> usize;

    /// Score of every book for `user`.
    fn scores(&self, user: usize) -> Vec<f64>;

    /// Top-`n` books not in `exclude` (sorted ascending), best first.
    fn rank(&self, user: usize, exclude: &[usize], n: usize) -> Vec<(usize, f64)> {
        top_n(&self.scores(user), None, exclude, n)
    }

    fn checkpoint(&self) -> Checkpoint;
}

fn cmp_desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

/// Top-`n` by `primary` descending, then `secondary` descending, then book
/// index ascending. Reported scores are the primary key.
pub fn top_n(
    primary: &[f64],
    secondary: Option<&[f64]>,
    exclude: &[usize],
    n: usize,
) -> Vec<(usize, f64)> {
    let mut cand: Vec<usize> = (0..primary.len())
        .filter(|b| exclude.binary_search(b).is_err())
        .collect();
    let cmp = |a: &usize, b: &usize| {
        cmp_desc(primary[*a], primary[*b])
            .then_with(|| match secondary {
                Some(s) => cmp_desc(s[*a], s[*b]),
                None => Ordering::Equal,
            })
            .then_with(|| a.cmp(b))
    };
    if n == 0 {
        return Vec::new();
    }
    if cand.len() > n {
        cand.select_nth_unstable_by(n - 1, cmp);
        cand.truncate(n);
    }
    cand.sort_unstable_by(cmp);
    cand.into_iter().map(|b| (b, primary[b])).collect()
}

/// Models whose score is `global + user_bias + item_bias + <user, item>`.
/// ALS, explicit MF, the WARP hybrid and every neural model reduce to this
/// at inference time.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorModel {
    pub kind: ModelKind,
    pub user_factors: Mat,
    pub item_factors: Mat,
    pub global_bias: f64,
    pub user_bias: Option<Vec<f64>>,
    pub item_bias: Option<Vec<f64>>,
    /// Hyperparameters and training parameters kept for the checkpoint.
    pub extra: Checkpoint,
}

impl FactorModel {
    pub fn new(kind: ModelKind, user_factors: Mat, item_factors: Mat) -> Self {
        Self {
            kind,
            user_factors,
            item_factors,
            global_bias: 0.0,
            user_bias: None,
            item_bias: None,
            extra: Checkpoint::new(kind.name()),
        }
    }

    pub fn score(&self, user: usize, book: usize) -> f64 {
        let mut s =
            self.global_bias + dot(self.user_factors.row(user), self.item_factors.row(book));
        if let Some(b) = &self.user_bias {
            s += b[user];
        }
        if let Some(b) = &self.item_bias {
            s += b[book];
        }
        s
    }

    pub fn from_checkpoint(kind: ModelKind, c: &Checkpoint) -> Result<Self> {
        let mut extra = c.clone();
        extra.tensors.retain(|k, _| !k.starts_with("scoring."));
        Ok(Self {
            kind,
            user_factors: c.get_mat("scoring.user_factors")?,
            item_factors: c.get_mat("scoring.item_factors")?,
            global_bias: c.hparams.get("scoring.global_bias").copied().unwrap_or(0.0),
            user_bias: c.get_vec("scoring.user_bias").ok(),
            item_bias: c.get_vec("scoring.item_bias").ok(),
            extra,
        })
    }
}

impl Recommender for FactorModel {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn num_books(&self) -> usize {
        self.item_factors.rows
    }

    fn scores(&self, user: usize) -> Vec<f64> {
        (0..self.item_factors.rows)
            .map(|b| self.score(user, b))
            .collect()
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = self.extra.clone();
        c.kind = self.kind.name().to_string();
        c.put_mat("scoring.user_factors", &self.user_factors);
        c.put_mat("scoring.item_factors", &self.item_factors);
        c.hparam("scoring.global_bias", self.global_bias);
        if let Some(b) = &self.user_bias {
            c.put_vec("scoring.user_bias", b);
        }
        if let Some(b) = &self.item_bias {
            c.put_vec("scoring.item_bias", b);
        }
        c
    }
}

/// Restores any fitted model from its checkpoint.
pub fn load_recommender(c: &Checkpoint) -> Result<Box<dyn Recommender>> {
    let kind: ModelKind = c.kind.parse()?;
    Ok(match kind {
        ModelKind::Popularity => Box::new(Popularity::from_checkpoint(c)?),
        ModelKind::CategoryPop => Box::new(CategoryPopularity::from_checkpoint(c)?),
        ModelKind::UserCf => Box::new(UserCf::from_checkpoint(c)?),
        ModelKind::ItemCf => Box::new(ItemCf::from_checkpoint(c)?),
        ModelKind::Content => Box::new(ContentBased::from_checkpoint(c)?),
        ModelKind::Random => Box::new(RandomRanker::from_checkpoint(c)?),
        k => Box::new(FactorModel::from_checkpoint(k, c)?),
    })
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::graph::Interaction;
    use crate::sparse::TrainSet;

    pub fn it(user: usize, book: usize) -> Interaction {
        Interaction {
            user,
            book,
            weight: 1.0,
            date: None,
            rating: None,
            verified: false,
            seq: 0,
            review: None,
        }
    }

    pub fn rated(user: usize, book: usize, r: f64) -> Interaction {
        Interaction {
            rating: Some(r),
            ..it(user, book)
        }
    }

    pub fn train(num_users: usize, num_books: usize, pairs: &[(usize, usize)]) -> TrainSet {
        let rows = pairs
            .iter()
            .enumerate()
            .map(|(s, &(u, b))| Interaction { seq: s, ..it(u, b) })
            .collect();
        TrainSet::new(num_users, num_books, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_n_ties_and_mask() {
        let s = [1.0, 3.0, 1.0, 3.0];
        assert_eq!(
            top_n(&s, None, &[], 4),
            vec![(1, 3.0), (3, 3.0), (0, 1.0), (2, 1.0)]
        );
        assert_eq!(top_n(&s, None, &[1], 2), vec![(3, 3.0), (0, 1.0)]);
        let sec = [0.0, 0.0, 5.0, 0.0];
        assert_eq!(top_n(&s, Some(&sec), &[], 4)[2], (2, 1.0));
        assert!(top_n(&s, None, &[0, 1, 2, 3], 4).is_empty());
        assert!(top_n(&s, None, &[], 0).is_empty());
    }

    #[test]
    fn factor_checkpoint_round_trip() {
        let mut m = FactorModel::new(
            ModelKind::Als,
            Mat::from_rows(&[vec![1.0, 0.0]]),
            Mat::from_rows(&[vec![0.5, 1.0], vec![2.0, 0.0]]),
        );
        m.item_bias = Some(vec![0.1, 0.2]);
        let back = load_recommender(&m.checkpoint()).unwrap();
        assert_eq!(back.scores(0), m.scores(0));
        assert_eq!(back.kind(), ModelKind::Als);
    }

    #[test]
    fn kind_names_parse() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("svd".parse::<ModelKind>().is_err());
    }
}
