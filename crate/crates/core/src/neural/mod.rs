//! Graph and neural recommenders trained with a small reverse-mode tape.

pub mod autograd;
mod hgnn;
mod lightgcn;
pub mod optim;
mod two_tower;

use rand::seq::SliceRandom;
use rand::Rng;

pub use hgnn::{build_hetero_graph, fit_hgnn, HeteroGraph, HeteroRelation, HgnnConfig};
pub use lightgcn::{
    build_norm_adjacency, fit_lightgcn, propagate, LightGcnConfig, NormalizedAdjacency,
};
pub use two_tower::{
    fit_two_tower, in_batch_loss, in_batch_loss_grad, item_input, item_tower_forward,
    user_tower_forward, TowerConfig, TowerInputs, TowerParams, TrainLog,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{evaluate_model, EvalProtocol};
use crate::graph::Interaction;
use crate::linalg::Mat;
use crate::recommend::{FactorModel, ModelKind};
use crate::sparse::TrainSet;

/// A signal group removed in an ablation run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Removal {
    Side,
    Relations,
    Interaction,
}

impl Removal {
    pub const ALL: [Removal; 3] = [Removal::Side, Removal::Relations, Removal::Interaction];

    pub fn name(self) -> &'static str {
        match self {
            Removal::Side => "side",
            Removal::Relations => "relations",
            Removal::Interaction => "interaction",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Removal::ALL.into_iter().find(|r| r.name() == s)
    }
}

/// Which signal groups a neural model may use. `side` covers text and
/// numeric metadata, `relations` the author/category/publisher structure,
/// `interaction` per-user identity and history.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub side: bool,
    pub relations: bool,
    pub interaction: bool,
}

impl AblationFlags {
    pub const FULL: AblationFlags = AblationFlags {
        side: true,
        relations: true,
        interaction: true,
    };

    pub fn without(r: Removal) -> Self {
        let mut f = Self::FULL;
        match r {
            Removal::Side => f.side = false,
            Removal::Relations => f.relations = false,
            Removal::Interaction => f.interaction = false,
        }
        f
    }

    fn record(&self, c: &mut crate::persist::Checkpoint) {
        c.hparam("flags.side", f64::from(u8::from(self.side)))
            .hparam("flags.relations", f64::from(u8::from(self.relations)))
            .hparam("flags.interaction", f64::from(u8::from(self.interaction)));
    }
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::FULL
    }
}

/// Validation metric at cutoff 10 of a factorized scorer, used for early
/// stopping. `pick` selects the metric from the cutoff row.
fn validation_at_10(
    kind: ModelKind,
    users: &Mat,
    items: &Mat,
    train: &TrainSet,
    valid: &[Interaction],
    pick: fn(&crate::eval::CutoffMetrics) -> f64,
) -> Result<f64> {
    let m = FactorModel::new(kind, users.clone(), items.clone());
    let r = evaluate_model(&m, train, valid, &EvalProtocol::new(vec![10])?, None)?;
    Ok(pick(&r.cutoffs[0]))
}

/// Loss weight of an interaction: `1 + 0.5·verified + 0.1·max(rating - 3, 0)`.
pub fn interaction_weight(verified: bool, rating: Option<f64>) -> f64 {
    let v = if verified { 0.5 } else { 0.0 };
    1.0 + v + rating.map_or(0.0, |r| 0.1 * (r - 3.0).max(0.0))
}

/// Uniform book the user has not seen in training, or `None` when the
/// user has seen every book.
pub fn sample_negative(rng: &mut impl Rng, num_books: usize, seen: &[usize]) -> Option<usize> {
    if seen.len() >= num_books {
        return None;
    }
    loop {
        let j = rng.gen_range(0..num_books);
        if seen.binary_search(&j).is_err() {
            return Some(j);
        }
    }
}

/// Shuffled distinct training pairs, each with one fresh negative.
pub fn bpr_triples(
    train: &TrainSet,
    seen: &[Vec<usize>],
    rng: &mut impl Rng,
) -> Vec<(usize, usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..train.num_users)
        .flat_map(|u| train.matrix.user_items(u).map(move |b| (u, b)))
        .collect();
    pairs.shuffle(rng);
    pairs
        .into_iter()
        .filter_map(|(u, i)| sample_negative(rng, train.num_books, &seen[u]).map(|j| (u, i, j)))
        .collect()
}
