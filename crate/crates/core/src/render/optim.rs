//! First-order optimizers over the grid parameters.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

use super::grid::{GridGrad, SdfGrid, MIN_BETA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    /// Gradient descent with heavy-ball momentum.
    Momentum,
    #[default]
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "momentum" => Ok(OptimizerKind::Momentum),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}` (expected momentum or adam)"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::Adam => "adam",
        })
    }
}

const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Momentum coefficient (first-moment decay for Adam).
    pub momentum: f64,
    /// Learning-rate multiplier for β.
    pub beta_lr_scale: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64, beta_lr_scale: f64) -> Self {
        Optimizer {
            kind,
            lr,
            momentum,
            beta_lr_scale,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn decay(&mut self, factor: f64) {
        self.lr *= factor;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, grid: &mut SdfGrid, grad: &GridGrad) {
        let n = grid.parameter_count();
        if self.m.len() != n {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
        }
        self.step += 1;
        let nv = grid.sdf.len();
        let bias1 = 1.0 - self.momentum.powi(self.step as i32);
        let bias2 = 1.0 - ADAM_B2.powi(self.step as i32);
        let mut update = |i: usize, x: &mut f64, g: f64, lr: f64| match self.kind {
            OptimizerKind::Momentum => {
                self.m[i] = self.momentum * self.m[i] + g;
                *x -= lr * self.m[i];
            }
            OptimizerKind::Adam => {
                self.m[i] = self.momentum * self.m[i] + (1.0 - self.momentum) * g;
                self.v[i] = ADAM_B2 * self.v[i] + (1.0 - ADAM_B2) * g * g;
                let mh = self.m[i] / bias1;
                let vh = self.v[i] / bias2;
                *x -= lr * mh / (vh.sqrt() + ADAM_EPS);
            }
        };
        let lr = self.lr;
        for (i, (x, g)) in grid.sdf.iter_mut().zip(&grad.sdf).enumerate() {
            update(i, x, *g, lr);
        }
        for (j, (c, g)) in grid.color.iter_mut().zip(&grad.color).enumerate() {
            for k in 0..3 {
                update(nv + 3 * j + k, &mut c[k], g[k], lr);
            }
        }
        let mut beta = grid.beta;
        update(n - 1, &mut beta, grad.beta, lr * self.beta_lr_scale);
        grid.beta = beta.max(MIN_BETA);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Vec3;

    #[test]
    fn descends_a_quadratic() {
        for kind in [OptimizerKind::Momentum, OptimizerKind::Adam] {
            let mut g = SdfGrid::sphere(Vec3::zeros(), 1.0, 2, 0.3, false).unwrap();
            let target = 0.25;
            let mut opt = Optimizer::new(kind, 0.05, 0.9, 1.0);
            for _ in 0..500 {
                let mut grad = GridGrad::zeros(&g);
                for (i, s) in g.sdf.iter().enumerate() {
                    grad.sdf[i] = 2.0 * (s - target);
                }
                opt.step(&mut g, &grad);
            }
            assert!(g.sdf.iter().all(|s| (s - target).abs() < 1e-2), "{kind}: {:?}", g.sdf);
        }
    }

    #[test]
    fn beta_is_floored() {
        let mut g = SdfGrid::sphere(Vec3::zeros(), 1.0, 2, 0.3, false).unwrap();
        let mut grad = GridGrad::zeros(&g);
        grad.beta = 1e6;
        Optimizer::new(OptimizerKind::Momentum, 1.0, 0.0, 1.0).step(&mut g, &grad);
        assert_eq!(g.beta, MIN_BETA);
    }
}
