//! Reference solvers used to check the library independently.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Problem {
    pub s: usize,
    pub d: usize,
    /// Row-major, centered columns.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Problem {
    pub fn random(s: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..s * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let truth: Vec<f64> = (0..d)
            .map(|k| if k % 3 == 0 { 0.0 } else { rng.random_range(-2.0..2.0) })
            .collect();
        let mut y: Vec<f64> = (0..s)
            .map(|i| (0..d).map(|k| x[i * d + k] * truth[k]).sum::<f64>() + 0.3 * rng.random_range(-1.0..1.0))
            .collect();
        for k in 0..d {
            let m = (0..s).map(|i| x[i * d + k]).sum::<f64>() / s as f64;
            for i in 0..s {
                x[i * d + k] -= m;
            }
        }
        let my = y.iter().sum::<f64>() / s as f64;
        y.iter_mut().for_each(|v| *v -= my);
        Problem { s, d, x, y }
    }

    pub fn at(&self, i: usize, k: usize) -> f64 {
        self.x[i * self.d + k]
    }

    pub fn residual(&self, b: &[f64]) -> Vec<f64> {
        (0..self.s)
            .map(|i| self.y[i] - (0..self.d).map(|k| self.at(i, k) * b[k]).sum::<f64>())
            .collect()
    }

    /// `X^T r / S`
    pub fn grad_corr(&self, r: &[f64]) -> Vec<f64> {
        (0..self.d)
            .map(|k| (0..self.s).map(|i| self.at(i, k) * r[i]).sum::<f64>() / self.s as f64)
            .collect()
    }

    pub fn objective(&self, b: &[f64], lambda: f64) -> f64 {
        let r = self.residual(b);
        r.iter().map(|v| v * v).sum::<f64>() / (2.0 * self.s as f64)
            + lambda * b.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Largest violation of the subgradient optimality conditions.
    pub fn kkt(&self, b: &[f64], lambda: f64) -> f64 {
        let g = self.grad_corr(&self.residual(b));
        g.iter()
            .zip(b)
            .map(|(&g, &bk)| {
                if bk != 0.0 {
                    (g - lambda * bk.signum()).abs()
                } else {
                    (g.abs() - lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn lambda_max(&self) -> f64 {
        self.grad_corr(&self.y).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.s, self.d, &self.x)
    }

    /// Lipschitz constant of the smooth part: largest eigenvalue of `X^T X / S`.
    pub fn lipschitz(&self) -> f64 {
        let x = self.design();
        let g = x.transpose() * &x / self.s as f64;
        g.symmetric_eigenvalues().iter().fold(0.0, |m: f64, v| m.max(*v))
    }
}

/// Accelerated proximal gradient with a fixed step of `1/L`.
pub fn fista(p: &Problem, lambda: f64, iters: usize) -> Vec<f64> {
    let step = 1.0 / p.lipschitz();
    let mut b = vec![0.0; p.d];
    let mut z = b.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let g = p.grad_corr(&p.residual(&z));
        let next: Vec<f64> = (0..p.d)
            .map(|k| {
                let u = z[k] + step * g[k];
                u.signum() * (u.abs() - step * lambda).max(0.0)
            })
            .collect();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let mom = (t - 1.0) / t_next;
        z = (0..p.d).map(|k| next[k] + mom * (next[k] - b[k])).collect();
        b = next;
        t = t_next;
    }
    b
}

/// `(X^T X)^{-1} X^T y` through a Cholesky factorization.
pub fn normal_equations(p: &Problem) -> Vec<f64> {
    let x = p.design();
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * DVector::from_column_slice(&p.y);
    let chol = xtx.cholesky().expect("full-rank design");
    chol.solve(&xty).iter().copied().collect()
}
