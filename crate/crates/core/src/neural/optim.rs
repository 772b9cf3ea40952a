use rand::Rng;

use crate::error::Result;
use crate::linalg::Mat;
use crate::persist::Checkpoint;

/// Named trainable matrices in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    pub names: Vec<String>,
    pub mats: Vec<Mat>,
}

impl Params {
    pub fn add(&mut self, name: &str, m: Mat) -> usize {
        self.names.push(name.to_string());
        self.mats.push(m);
        self.mats.len() - 1
    }

    /// Linear layer weight (`fan_in × fan_out`) uniform in ±1/√fan_in, plus a
    /// zero bias row. Returns `(weight, bias)` indices.
    pub fn linear(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> (usize, usize) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let w = self.add(
            &format!("{name}.weight"),
            Mat::uniform(fan_in, fan_out, bound, rng),
        );
        let b = self.add(&format!("{name}.bias"), Mat::zeros(1, fan_out));
        (w, b)
    }

    pub fn all_finite(&self) -> bool {
        self.mats.iter().all(Mat::is_finite)
    }

    pub fn save_into(&self, c: &mut Checkpoint) {
        for (n, m) in self.names.iter().zip(&self.mats) {
            c.put_mat(&format!("param.{n}"), m);
        }
    }

    /// Restores values for the names already registered in `self`.
    pub fn load_from(&mut self, c: &Checkpoint) -> Result<()> {
        for (n, m) in self.names.iter().zip(self.mats.iter_mut()) {
            *m = c.get_mat(&format!("param.{n}"))?;
        }
        Ok(())
    }
}

/// Adam with optional decoupled weight decay (AdamW when `decoupled`).
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decoupled: bool,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled: false,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self {
            weight_decay,
            decoupled: true,
            ..Self::new(lr)
        }
    }

    /// One update; `grads[k]` of `None` leaves moments and `params[k]`
    /// untouched apart from decoupled decay.
    pub fn step(&mut self, params: &mut [Mat], grads: &[Option<Mat>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            if self.decoupled && self.weight_decay > 0.0 {
                let f = 1.0 - self.lr * self.weight_decay;
                p.data.iter_mut().for_each(|x| *x *= f);
            }
            let Some(g) = &grads[k] else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for e in 0..p.data.len() {
                let mut gr = g.data[e];
                if !self.decoupled {
                    gr += self.weight_decay * p.data[e];
                }
                m.data[e] = self.beta1 * m.data[e] + (1.0 - self.beta1) * gr;
                v.data[e] = self.beta2 * v.data[e] + (1.0 - self.beta2) * gr * gr;
                let mh = m.data[e] / c1;
                let vh = v.data[e] / c2;
                p.data[e] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Mat::from_vec(1, 2, vec![1.0, -1.0])];
        let g = vec![Some(Mat::from_vec(1, 2, vec![3.0, -0.5]))];
        let mut opt = Adam::new(0.1);
        opt.step(&mut p, &g);
        assert!((p[0].data[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![Mat::from_vec(1, 1, vec![5.0])];
        let mut opt = Adam::adamw(0.1, 0.0);
        for _ in 0..500 {
            let g = vec![Some(Mat::from_vec(1, 1, vec![2.0 * (p[0].data[0] - 2.0)]))];
            opt.step(&mut p, &g);
        }
        assert!((p[0].data[0] - 2.0).abs() < 1e-2);
    }
}
