//! Implicit-feedback alternating least squares.
//!
//! Minimizes `Σ_{u,i} c_ui (p_ui - x_u·y_i)² + reg (‖X‖² + ‖Y‖²)` with
//! `p_ui = 1` on observed pairs and `c_ui = 1 + alpha·p_ui`. Each half-sweep
//! solves every row's normal equations exactly, so the objective never
//! increases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FactorModel, FitContext, ModelKind};
use crate::error::{Error, Result};
use crate::linalg::{axpy, cholesky_solve, dot, Mat};
use crate::sparse::InteractionMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlsConfig {
    pub dim: usize,
    pub epochs: usize,
    pub reg: f64,
    pub alpha: f64,
    pub init_std: f64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            epochs: 20,
            reg: 0.01,
            alpha: 40.0,
            init_std: 0.01,
        }
    }
}

/// Observed adjacency with binary preference.
fn adjacency(m: &InteractionMatrix) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let rows = m
        .rows
        .iter()
        .map(|r| r.iter().map(|x| x.0).collect())
        .collect();
    let cols = m
        .cols
        .iter()
        .map(|c| c.iter().map(|x| x.0).collect())
        .collect();
    (rows, cols)
}

/// Solves each row of `target` given fixed `other` factors.
fn half_sweep(
    target: &mut Mat,
    other: &Mat,
    observed: &[Vec<usize>],
    cfg: &AlsConfig,
) -> Result<()> {
    let d = other.cols;
    let gram = other.t_matmul(other);
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for (row, obs) in observed.iter().enumerate() {
        a.copy_from_slice(&gram.data);
        for k in 0..d {
            a[k * d + k] += cfg.reg;
        }
        b.iter_mut().for_each(|x| *x = 0.0);
        for &j in obs {
            let y = other.row(j);
            for p in 0..d {
                axpy(cfg.alpha * y[p], y, &mut a[p * d..(p + 1) * d]);
            }
            axpy(1.0 + cfg.alpha, y, &mut b);
        }
        let x = cholesky_solve(&a, &b, d).ok_or_else(|| Error::Diverged {
            model: "als".into(),
            detail: format!("normal equations not positive definite at row {row}"),
        })?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                model: "als".into(),
                detail: format!("non-finite factor at row {row}"),
            });
        }
        target.row_mut(row).copy_from_slice(&x);
    }
    Ok(())
}

/// Full weighted objective, evaluated without materializing the dense
/// matrix: all-pairs term via the Gram matrix plus observed corrections.
pub fn als_objective(
    users: &Mat,
    items: &Mat,
    observed: &[Vec<usize>],
    reg: f64,
    alpha: f64,
) -> f64 {
    let gram = items.t_matmul(items);
    let mut total = 0.0;
    for (u, obs) in observed.iter().enumerate() {
        let x = users.row(u);
        let gx = gram.matmul_t(&Mat::from_vec(1, x.len(), x.to_vec()));
        total += dot(x, &gx.data);
        for &i in obs {
            let s = dot(x, items.row(i));
            total += (1.0 + alpha) * (1.0 - s).powi(2) - s * s;
        }
    }
    total + reg * (users.sum_sq() + items.sum_sq())
}

/// Objective after every half-sweep, starting with the initial state.
#[derive(Clone, Debug, Default)]
pub struct AlsLog {
    pub objective: Vec<f64>,
}

pub fn fit_als(
    ctx: &FitContext,
    cfg: &AlsConfig,
    track_objective: bool,
) -> Result<(FactorModel, AlsLog)> {
    if cfg.dim == 0 {
        return Err(Error::Config("als dim must be at least 1".into()));
    }
    let m = &ctx.train.matrix;
    let (rows, cols) = adjacency(m);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut users = Mat::normal(m.num_users, cfg.dim, cfg.init_std, &mut rng);
    let mut items = Mat::normal(m.num_books, cfg.dim, cfg.init_std, &mut rng);
    let mut log = AlsLog::default();
    let track = |u: &Mat, i: &Mat, log: &mut AlsLog| {
        if track_objective {
            log.objective
                .push(als_objective(u, i, &rows, cfg.reg, cfg.alpha));
        }
    };
    track(&users, &items, &mut log);
    for _ in 0..cfg.epochs {
        half_sweep(&mut users, &items, &rows, cfg)?;
        track(&users, &items, &mut log);
        half_sweep(&mut items, &users, &cols, cfg)?;
        track(&users, &items, &mut log);
    }
    let mut model = FactorModel::new(ModelKind::Als, users, items);
    model
        .extra
        .hparam("dim", cfg.dim as f64)
        .hparam("epochs", cfg.epochs as f64)
        .hparam("reg", cfg.reg)
        .hparam("alpha", cfg.alpha)
        .hparam("seed", ctx.seed as f64);
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::train;
    use super::super::Recommender;
    use super::*;
    use crate::graph::BookGraph;
    use rand::Rng;

    fn ctx<'a>(t: &'a crate::sparse::TrainSet, g: &'a BookGraph, seed: u64) -> FitContext<'a> {
        FitContext {
            train: t,
            valid: &[],
            graph: g,
            features: None,
            review_texts: None,
            seed,
        }
    }

    #[test]
    fn one_by_one_closed_form() {
        let t = train(1, 1, &[(0, 0)]);
        let g = BookGraph::default();
        let cfg = AlsConfig {
            dim: 1,
            epochs: 1,
            ..Default::default()
        };
        let c = 1.0 + cfg.alpha;
        // first half-sweep from the seeded init: x = c*y / (c*y^2 + reg)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let _x0 = Mat::normal(1, 1, cfg.init_std, &mut rng);
        let y0 = Mat::normal(1, 1, cfg.init_std, &mut rng).data[0];
        let x1 = c * y0 / (c * y0 * y0 + cfg.reg);
        let y1 = c * x1 / (c * x1 * x1 + cfg.reg);
        let (m, _) = fit_als(&ctx(&t, &g, 3), &cfg, false).unwrap();
        assert!((m.user_factors.data[0] - x1).abs() < 1e-12 * x1.abs());
        assert!((m.item_factors.data[0] - y1).abs() < 1e-12 * y1.abs());

        // 30 epochs follow the scalar recursion; the product stays in
        // [1 - reg/c, 1) since x*y = c*y^2 / (c*y^2 + reg) after each solve
        let cfg = AlsConfig { epochs: 30, ..cfg };
        let (mut x, mut y) = (0.0, y0);
        for _ in 0..cfg.epochs {
            x = c * y / (c * y * y + cfg.reg);
            y = c * x / (c * x * x + cfg.reg);
        }
        let (m, _) = fit_als(&ctx(&t, &g, 3), &cfg, false).unwrap();
        assert!((m.user_factors.data[0] - x).abs() < 1e-9 * x.abs());
        assert!((m.item_factors.data[0] - y).abs() < 1e-9 * y.abs());
        let s = m.score(0, 0);
        assert!(s >= 1.0 - cfg.reg / c - 1e-12 && s < 1.0);
    }

    #[test]
    fn objective_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<_> = (0..120)
            .map(|_| (rng.gen_range(0..20), rng.gen_range(0..25)))
            .collect();
        let t = train(20, 25, &pairs);
        let g = BookGraph::default();
        let cfg = AlsConfig {
            dim: 4,
            epochs: 10,
            ..Default::default()
        };
        let (_, log) = fit_als(&ctx(&t, &g, 1), &cfg, true).unwrap();
        for w in log.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn objective_matches_dense_sum() {
        let t = train(3, 4, &[(0, 0), (1, 2), (2, 3), (2, 0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = Mat::normal(3, 2, 0.5, &mut rng);
        let i = Mat::normal(4, 2, 0.5, &mut rng);
        let (rows, _) = adjacency(&t.matrix);
        let mut want = 0.0;
        for a in 0..3 {
            for b in 0..4 {
                let p = if t.matrix.contains(a, b) { 1.0 } else { 0.0 };
                let c = 1.0 + 40.0 * p;
                want += c * (p - dot(u.row(a), i.row(b))).powi(2);
            }
        }
        want += 0.1 * (u.sum_sq() + i.sum_sq());
        assert!((als_objective(&u, &i, &rows, 0.1, 40.0) - want).abs() < 1e-9);
    }

    #[test]
    fn rank_one_generator_top_item() {
        // observed iff a_u * b_i > 0.3: a nested staircase whose best
        // unobserved item per user is the one with the largest b_i; every
        // item is observed by some user since max a * min b > 0.3
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..60).map(|_| rng.gen_range(0.3..1.0)).collect();
        let b: Vec<f64> = (0..30).map(|_| rng.gen_range(0.35..1.0)).collect();
        let mut pairs = Vec::new();
        for (u, au) in a.iter().enumerate() {
            for (i, bi) in b.iter().enumerate() {
                if au * bi > 0.3 {
                    pairs.push((u, i));
                }
            }
        }
        let t = train(60, 30, &pairs);
        let g = BookGraph::default();
        let cfg = AlsConfig {
            dim: 4,
            ..Default::default()
        };
        let (m, _) = fit_als(&ctx(&t, &g, 2), &cfg, false).unwrap();
        let mut users = 0;
        let mut hits = 0;
        for u in 0..60 {
            let seen = t.seen(u);
            let Some(best) = (0..30)
                .filter(|i| seen.binary_search(i).is_err())
                .max_by(|&x, &y| b[x].total_cmp(&b[y]))
            else {
                continue;
            };
            users += 1;
            if m.rank(u, &seen, 1)[0].0 == best {
                hits += 1;
            }
        }
        assert!(hits as f64 >= 0.9 * users as f64, "hits {hits}/{users}");
    }
}
