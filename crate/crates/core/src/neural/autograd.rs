//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns the gradient of a scalar (1×1) output
//! with respect to every recorded node.

use std::rc::Rc;

use crate::linalg::{dot, Mat};

/// Constant sparse matrix in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct SpMat {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SpMat {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; rows + 1];
        let mut indices: Vec<usize> = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    /// Row `i` averages the rows of `x` listed in `lists[i]`; empty lists
    /// give zero rows.
    pub fn row_mean(cols: usize, lists: &[Vec<usize>]) -> Self {
        let t = lists
            .iter()
            .enumerate()
            .flat_map(|(r, l)| {
                let w = 1.0 / l.len().max(1) as f64;
                l.iter().map(move |&c| (r, c, w))
            })
            .collect();
        Self::from_triplets(lists.len(), cols, t)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.indptr[r]..self.indptr[r + 1];
        self.indices[s.clone()]
            .iter()
            .copied()
            .zip(self.values[s].iter().copied())
    }

    /// `self · x`
    pub fn mul(&self, x: &Mat) -> Mat {
        assert_eq!(self.cols, x.rows, "spmm shape");
        let mut out = Mat::zeros(self.rows, x.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                let src = x.row(c);
                for (o, s) in out.row_mut(r).iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    }

    /// `selfᵀ · x`
    pub fn t_mul(&self, x: &Mat) -> Mat {
        assert_eq!(self.rows, x.rows, "spmm shape");
        let mut out = Mat::zeros(self.cols, x.cols);
        for r in 0..self.rows {
            let src = x.row(r).to_vec();
            for (c, v) in self.row(r) {
                for (o, s) in out.row_mut(c).iter_mut().zip(&src) {
                    *o += v * s;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                *m.at_mut(r, c) += v;
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gather(Var, Vec<usize>),
    SpMM(Rc<SpMat>, Var),
    Concat(Vec<Var>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        rstd: Vec<f64>,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
        eps: f64,
    },
    Mask(Var, Mat),
    SumSq(Var),
    RowDot(Var, Var),
    Bpr(Var, Var),
    SoftmaxXent {
        s: Var,
        weights: Vec<f64>,
        probs: Mat,
        tau: f64,
    },
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Mat>,
    ops: Vec<Op>,
}

/// Gradients indexed by [`Var`]; `None` when a node does not influence the
/// output.
pub struct Grads(Vec<Option<Mat>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.0[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.0[v.0].take()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0].data[0]
    }

    pub fn leaf(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulBt(a, b))
    }

    /// Adds the 1×n row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut v = self.value(a).clone();
        let b = self.value(bias);
        assert_eq!((b.rows, b.cols), (1, v.cols), "bias shape");
        for r in 0..v.rows {
            for (x, y) in v.row_mut(r).iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut v = self.value(a).clone();
        v.scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).gather_rows(idx);
        self.push(v, Op::Gather(a, idx.to_vec()))
    }

    /// `s · a` for a constant sparse `s`.
    pub fn spmm(&mut self, s: Rc<SpMat>, a: Var) -> Var {
        let v = s.mul(self.value(a));
        self.push(v, Op::SpMM(s, a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let m = self.value(*p);
                assert_eq!(m.rows, rows, "concat rows");
                v.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
                off += m.cols;
            }
        }
        self.push(v, Op::Concat(parts.to_vec()))
    }

    /// Per-row layer normalization with affine `gamma`, `beta` (1×n).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let xm = self.value(x);
        let n = xm.cols;
        let mut xhat = Mat::zeros(xm.rows, n);
        let mut rstd = Vec::with_capacity(xm.rows);
        for r in 0..xm.rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + EPS).sqrt();
            rstd.push(rs);
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut out = xhat.clone();
        for r in 0..out.rows {
            for ((o, gv), bv) in out.row_mut(r).iter_mut().zip(&g.data).zip(&b.data) {
                *o = *o * gv + bv;
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Rows scaled to unit L2 norm; rows with norm below `eps` are divided
    /// by `eps` instead.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        const EPS: f64 = 1e-12;
        let mut v = self.value(x).clone();
        let mut norms = Vec::with_capacity(v.rows);
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let n = dot(row, row).sqrt().max(EPS);
            row.iter_mut().for_each(|a| *a /= n);
            norms.push(n);
        }
        self.push(v, Op::L2Normalize { x, norms, eps: EPS })
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, a: Var, m: Mat) -> Var {
        let mut v = self.value(a).clone();
        for (x, k) in v.data.iter_mut().zip(&m.data) {
            *x *= k;
        }
        self.push(v, Op::Mask(a, m))
    }

    /// Inverted dropout with keep probability `1 - p`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl rand::Rng) -> Var {
        if p <= 0.0 {
            return a;
        }
        let (r, c) = self.value(a).shape();
        let keep = 1.0 / (1.0 - p);
        let m = Mat::from_vec(
            r,
            c,
            (0..r * c)
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect(),
        );
        self.mask(a, m)
    }

    /// Sum of squares as a 1×1 node.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_sq();
        self.push(Mat::from_vec(1, 1, vec![v]), Op::SumSq(a))
    }

    /// Row-wise dot products as a B×1 node.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.shape(), bm.shape(), "row_dot shape");
        let v = (0..am.rows).map(|r| dot(am.row(r), bm.row(r))).collect();
        self.push(Mat::from_vec(am.rows, 1, v), Op::RowDot(a, b))
    }

    /// Mean BPR loss `−ln σ(pos − neg)` over B×1 score columns.
    pub fn bpr(&mut self, pos: Var, neg: Var) -> Var {
        let (p, n) = (self.value(pos), self.value(neg));
        let b = p.data.len().max(1) as f64;
        let v = p
            .data
            .iter()
            .zip(&n.data)
            .map(|(x, y)| softplus(y - x))
            .sum::<f64>()
            / b;
        self.push(Mat::from_vec(1, 1, vec![v]), Op::Bpr(pos, neg))
    }

    /// Weighted softmax cross-entropy over a B×B score matrix whose diagonal
    /// holds the positives. `excluded[j]` lists columns dropped from row
    /// `j`'s denominator. Returns `Σ_j w_j·ℓ_j / Σ_j w_j`.
    pub fn softmax_xent(
        &mut self,
        s: Var,
        weights: &[f64],
        excluded: &[Vec<usize>],
        tau: f64,
    ) -> Var {
        let sm = self.value(s);
        let b = sm.rows;
        assert_eq!(sm.cols, b, "square score matrix");
        let wsum: f64 = weights.iter().sum();
        let mut probs = Mat::zeros(b, b);
        let mut loss = 0.0;
        for j in 0..b {
            let row = sm.row(j);
            let allowed = |k: usize| k == j || !excluded[j].contains(&k);
            let mx = (0..b)
                .filter(|&k| allowed(k))
                .map(|k| row[k] / tau)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in (0..b).filter(|&k| allowed(k)) {
                let e = (row[k] / tau - mx).exp();
                *probs.at_mut(j, k) = e;
                z += e;
            }
            probs.row_mut(j).iter_mut().for_each(|p| *p /= z);
            loss += weights[j] * (mx + z.ln() - row[j] / tau);
        }
        let v = loss / wsum;
        self.push(
            Mat::from_vec(1, 1, vec![v]),
            Op::SoftmaxXent {
                s,
                weights: weights.to_vec(),
                probs,
                tau,
            },
        )
    }

    /// Gradients of the 1×1 node `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Grads {
        let mut g: Vec<Option<Mat>> = (0..self.values.len()).map(|_| None).collect();
        g[out.0] = Some(Mat::filled(1, 1, 1.0));
        fn acc(g: &mut [Option<Mat>], v: Var, d: Mat) {
            match &mut g[v.0] {
                Some(m) => m.add_assign(&d),
                slot => *slot = Some(d),
            }
        }
        for i in (0..=out.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(&mut g, *a, gi.matmul_t(&self.values[b.0]));
                    acc(&mut g, *b, self.values[a.0].t_matmul(&gi));
                }
                Op::MatMulBt(a, b) => {
                    acc(&mut g, *a, gi.matmul(&self.values[b.0]));
                    acc(&mut g, *b, gi.t_matmul(&self.values[a.0]));
                }
                Op::AddRow(a, bias) => {
                    let mut db = Mat::zeros(1, gi.cols);
                    for r in 0..gi.rows {
                        for (d, x) in db.data.iter_mut().zip(gi.row(r)) {
                            *d += x;
                        }
                    }
                    acc(&mut g, *bias, db);
                    acc(&mut g, *a, gi.clone());
                }
                Op::Add(a, b) => {
                    acc(&mut g, *b, gi.clone());
                    acc(&mut g, *a, gi.clone());
                }
                Op::Scale(a, s) => {
                    let mut d = gi.clone();
                    d.scale(*s);
                    acc(&mut g, *a, d);
                }
                Op::Relu(a) => {
                    let mut d = gi.clone();
                    for (x, v) in d.data.iter_mut().zip(&self.values[a.0].data) {
                        if *v <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    acc(&mut g, *a, d);
                }
                Op::Gather(a, idx) => {
                    let src = &self.values[a.0];
                    let mut d = Mat::zeros(src.rows, src.cols);
                    for (r, &k) in idx.iter().enumerate() {
                        for (o, x) in d.row_mut(k).iter_mut().zip(gi.row(r)) {
                            *o += x;
                        }
                    }
                    acc(&mut g, *a, d);
                }
                Op::SpMM(s, a) => acc(&mut g, *a, s.t_mul(&gi)),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let c = self.values[p.0].cols;
                        let mut d = Mat::zeros(gi.rows, c);
                        for r in 0..gi.rows {
                            d.row_mut(r).copy_from_slice(&gi.row(r)[off..off + c]);
                        }
                        off += c;
                        acc(&mut g, *p, d);
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let gam = &self.values[gamma.0];
                    let n = gi.cols as f64;
                    let mut dg = Mat::zeros(1, gi.cols);
                    let mut db = Mat::zeros(1, gi.cols);
                    let mut dx = Mat::zeros(gi.rows, gi.cols);
                    for r in 0..gi.rows {
                        let (gr, xr) = (gi.row(r), xhat.row(r));
                        let dxhat: Vec<f64> =
                            gr.iter().zip(&gam.data).map(|(a, b)| a * b).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2 = dot(&dxhat, xr);
                        for c in 0..gi.cols {
                            dg.data[c] += gr[c] * xr[c];
                            db.data[c] += gr[c];
                            *dx.at_mut(r, c) = rstd[r] / n * (n * dxhat[c] - s1 - xr[c] * s2);
                        }
                    }
                    acc(&mut g, *gamma, dg);
                    acc(&mut g, *beta, db);
                    acc(&mut g, *x, dx);
                }
                Op::L2Normalize { x, norms, eps } => {
                    let y = &self.values[i];
                    let mut dx = Mat::zeros(gi.rows, gi.cols);
                    for r in 0..gi.rows {
                        let (gr, yr) = (gi.row(r), y.row(r));
                        let proj = if norms[r] > *eps { dot(gr, yr) } else { 0.0 };
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = (gr[c] - yr[c] * proj) / norms[r];
                        }
                    }
                    acc(&mut g, *x, dx);
                }
                Op::Mask(a, m) => {
                    let mut d = gi.clone();
                    for (x, k) in d.data.iter_mut().zip(&m.data) {
                        *x *= k;
                    }
                    acc(&mut g, *a, d);
                }
                Op::SumSq(a) => {
                    let mut d = self.values[a.0].clone();
                    d.scale(2.0 * gi.data[0]);
                    acc(&mut g, *a, d);
                }
                Op::RowDot(a, b) => {
                    let (am, bm) = (&self.values[a.0], &self.values[b.0]);
                    let mut da = bm.clone();
                    let mut db = am.clone();
                    for r in 0..am.rows {
                        let s = gi.data[r];
                        da.row_mut(r).iter_mut().for_each(|x| *x *= s);
                        db.row_mut(r).iter_mut().for_each(|x| *x *= s);
                    }
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::Bpr(pos, neg) => {
                    let (p, n) = (&self.values[pos.0], &self.values[neg.0]);
                    let b = p.data.len().max(1) as f64;
                    let dp: Vec<f64> = p
                        .data
                        .iter()
                        .zip(&n.data)
                        .map(|(x, y)| -sigmoid(y - x) * gi.data[0] / b)
                        .collect();
                    let dn: Vec<f64> = dp.iter().map(|d| -d).collect();
                    acc(&mut g, *pos, Mat::from_vec(p.rows, p.cols, dp));
                    acc(&mut g, *neg, Mat::from_vec(n.rows, n.cols, dn));
                }
                Op::SoftmaxXent {
                    s,
                    weights,
                    probs,
                    tau,
                } => {
                    let wsum: f64 = weights.iter().sum();
                    let mut d = probs.clone();
                    for j in 0..d.rows {
                        *d.at_mut(j, j) -= 1.0;
                        let f = gi.data[0] * weights[j] / (wsum * tau);
                        d.row_mut(j).iter_mut().for_each(|x| *x *= f);
                    }
                    acc(&mut g, *s, d);
                }
            }
            g[i] = Some(gi);
        }
        Grads(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Checks d(out)/d(input) against central differences for every entry
    /// of every input.
    fn check(inputs: &[Mat], f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| t.leaf(m.clone())).collect();
        let out = f(&mut t, &vars);
        let g = t.backward(out);
        let h = 1e-6;
        for (k, m) in inputs.iter().enumerate() {
            let ana = g
                .get(vars[k])
                .cloned()
                .unwrap_or_else(|| Mat::zeros(m.rows, m.cols));
            for e in 0..m.data.len() {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, x)| {
                            let mut x = x.clone();
                            if j == k {
                                x.data[e] += delta;
                            }
                            t.leaf(x)
                        })
                        .collect();
                    let o = f(&mut t, &vs);
                    t.scalar(o)
                };
                let num = (eval(h) - eval(-h)) / (2.0 * h);
                let a = ana.data[e];
                let tol = 1e-4 * a.abs().max(num.abs()).max(1e-3);
                assert!(
                    (num - a).abs() <= tol,
                    "input {k} entry {e}: numeric {num} analytic {a}"
                );
            }
        }
    }

    fn rnd(r: usize, c: usize, seed: u64) -> Mat {
        Mat::normal(r, c, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn dense_ops_gradients() {
        for seed in 0..10 {
            let (a, b, bias) = (
                rnd(3, 4, seed),
                rnd(4, 2, seed + 100),
                rnd(1, 2, seed + 200),
            );
            check(&[a, b, bias], |t, v| {
                let m = t.matmul(v[0], v[1]);
                let m = t.add_row(m, v[2]);
                let r = t.relu(m);
                let s = t.scale(r, 0.7);
                let m2 = t.add(s, m);
                t.sum_sq(m2)
            });
        }
    }

    #[test]
    fn gather_spmm_concat_gradients() {
        let s = Rc::new(SpMat::from_triplets(
            2,
            3,
            vec![(0, 0, 0.5), (0, 2, 0.5), (1, 1, 2.0)],
        ));
        check(&[rnd(3, 2, 1), rnd(2, 2, 2)], |t, v| {
            let gth = t.gather(v[0], &[2, 0, 2]);
            let sp = t.spmm(s.clone(), v[0]);
            let c = t.concat_cols(&[sp, v[1]]);
            let d = t.matmul_bt(c, c);
            let a = t.sum_sq(d);
            let b = t.sum_sq(gth);
            t.add(a, b)
        });
    }

    #[test]
    fn layer_norm_and_l2_gradients() {
        for seed in 0..10 {
            check(
                &[
                    rnd(3, 5, seed),
                    rnd(1, 5, seed + 1),
                    rnd(1, 5, seed + 2),
                    rnd(3, 5, seed + 3),
                ],
                |t, v| {
                    let ln = t.layer_norm(v[0], v[1], v[2]);
                    let z = t.l2_normalize_rows(ln);
                    let d = t.row_dot(z, v[3]);
                    t.sum_sq(d)
                },
            );
        }
    }

    #[test]
    fn bpr_gradient_and_value() {
        for seed in 0..10 {
            check(&[rnd(4, 1, seed), rnd(4, 1, seed + 50)], |t, v| {
                t.bpr(v[0], v[1])
            });
        }
        let mut t = Tape::new();
        let p = t.leaf(Mat::from_vec(1, 1, vec![0.0]));
        let n = t.leaf(Mat::from_vec(1, 1, vec![0.0]));
        let l = t.bpr(p, n);
        assert!((t.scalar(l) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_xent_gradient() {
        for seed in 0..10 {
            let w = [1.0, 1.7, 1.5];
            let excluded = vec![vec![2], vec![], vec![0]];
            check(&[rnd(3, 3, seed)], |t, v| {
                t.softmax_xent(v[0], &w, &excluded, 0.5)
            });
        }
    }

    #[test]
    fn mask_gradient() {
        let m = Mat::from_vec(2, 2, vec![0.0, 2.0, 2.0, 0.0]);
        check(&[rnd(2, 2, 3)], |t, v| {
            let x = t.mask(v[0], m.clone());
            t.sum_sq(x)
        });
    }

    #[test]
    fn spmat_row_mean_and_transpose() {
        let s = SpMat::row_mean(3, &[vec![0, 2], vec![], vec![1]]);
        let x = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![3.0, 3.0]]);
        assert_eq!(s.mul(&x).data, vec![2.0, 1.5, 0.0, 0.0, 0.0, 1.0]);
        let d = s.to_dense();
        let g = rnd(3, 2, 9);
        assert!(s.t_mul(&g).max_abs_diff(&d.t_matmul(&g)) < 1e-12);
    }
}
