use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelKind, Recommender};
use crate::error::Result;
use crate::persist::Checkpoint;

/// Uniform random scores, reproducible per `(seed, user)`. A calibration
/// reference for the metrics, not a real baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomRanker {
    pub num_books: usize,
    pub seed: u64,
}

impl RandomRanker {
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        Ok(Self {
            num_books: c.get_hparam("num_books")? as usize,
            seed: c.get_hparam("seed")? as u64,
        })
    }
}

impl Recommender for RandomRanker {
    fn kind(&self) -> ModelKind {
        ModelKind::Random
    }

    fn num_books(&self) -> usize {
        self.num_books
    }

    fn scores(&self, user: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed ^ (user as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        (0..self.num_books).map(|_| rng.gen()).collect()
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.kind().name());
        c.hparam("num_books", self.num_books as f64)
            .hparam("seed", self.seed as f64);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommend::load_recommender;

    #[test]
    fn reproducible_and_round_trips() {
        let r = RandomRanker {
            num_books: 20,
            seed: 3,
        };
        assert_eq!(r.scores(4), r.scores(4));
        assert_ne!(r.scores(4), r.scores(5));
        let back = load_recommender(&r.checkpoint()).unwrap();
        assert_eq!(back.scores(7), r.scores(7));
    }
}
