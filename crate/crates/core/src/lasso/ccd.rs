use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::LassoError;

/// `sign(z) * max(|z| - gamma, 0)`
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcdOptions {
    /// Stop once the largest coefficient change in a full sweep drops below this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for CcdOptions {
    fn default() -> Self {
        CcdOptions {
            tol: 1e-9,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcdFit {
    pub coefficients: Vec<f64>,
    pub diagnostics: FitDiagnostics,
    /// Objective after every sweep; only filled by [`ccd_fit_traced`].
    pub trace: Vec<f64>,
}

/// Column-major copy of a design matrix with cached `(1/S) Σ x²` per column.
/// Tall designs also carry `(1/S) XᵀX` so sweeps can update gradients
/// instead of residuals.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub s: usize,
    pub cols: Vec<Vec<f64>>,
    pub sq: Vec<f64>,
    gram: Option<Vec<f64>>,
}

const GRAM_MAX_DIM: usize = 2000;

impl Design {
    pub fn new(x: ArrayView2<f64>) -> Self {
        let s = x.nrows();
        let cols: Vec<Vec<f64>> = x.columns().into_iter().map(|c| c.to_vec()).collect();
        let sq = cols
            .iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>() / s as f64)
            .collect::<Vec<f64>>();
        let dim = cols.len();
        let gram = (dim <= s && dim <= GRAM_MAX_DIM).then(|| {
            let mut g = vec![0.0; dim * dim];
            for a in 0..dim {
                g[a * dim + a] = sq[a];
                for b in 0..a {
                    let v = dot(&cols[a], &cols[b]) / s as f64;
                    g[a * dim + b] = v;
                    g[b * dim + a] = v;
                }
            }
            g
        });
        Design { s, cols, sq, gram }
    }

    pub fn dim(&self) -> usize {
        self.cols.len()
    }

    /// `(1/S) x_k · r`
    pub fn corr(&self, k: usize, r: &[f64]) -> f64 {
        dot(&self.cols[k], r) / self.s as f64
    }

    pub fn residual(&self, y: &[f64], sigma: &[f64]) -> Vec<f64> {
        let mut r = y.to_vec();
        for (k, &b) in sigma.iter().enumerate() {
            if b != 0.0 {
                for (ri, xi) in r.iter_mut().zip(&self.cols[k]) {
                    *ri -= xi * b;
                }
            }
        }
        r
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn penalty(sigma: &[f64], weights: &[f64]) -> f64 {
    sigma
        .iter()
        .zip(weights)
        .filter(|(b, _)| **b != 0.0)
        .map(|(b, w)| w * b.abs())
        .sum()
}

/// `(1/2S) Σ r² + λ Σ w_k |σ_k|`
pub fn objective(
    xs: ArrayView2<f64>,
    ys: ArrayView1<f64>,
    sigma: &[f64],
    lambda: f64,
    weights: &[f64],
) -> f64 {
    let r = &ys - &xs.dot(&ArrayView1::from(sigma));
    r.dot(&r) / (2.0 * ys.len() as f64) + lambda * penalty(sigma, weights)
}

/// Largest violation of the Lasso optimality conditions.
pub fn kkt_residual(
    xs: ArrayView2<f64>,
    ys: ArrayView1<f64>,
    sigma: &[f64],
    lambda: f64,
    weights: &[f64],
) -> f64 {
    let s = ys.len() as f64;
    let r = &ys - &xs.dot(&ArrayView1::from(sigma));
    let mut worst = 0.0f64;
    for (k, col) in xs.columns().into_iter().enumerate() {
        let g = col.dot(&r) / s;
        let gamma = lambda * weights[k];
        let v = if sigma[k] != 0.0 {
            (g - gamma * sigma[k].signum()).abs()
        } else if gamma.is_infinite() {
            0.0
        } else {
            (g.abs() - gamma).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

pub(crate) fn check_inputs(
    d: &Design,
    y: &[f64],
    lambda: f64,
    weights: &[f64],
) -> Result<(), LassoError> {
    if y.len() != d.s {
        return Err(LassoError::DimensionMismatch {
            expected: d.s,
            got: y.len(),
        });
    }
    if weights.len() != d.dim() {
        return Err(LassoError::DimensionMismatch {
            expected: d.dim(),
            got: weights.len(),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(LassoError::InvalidLambda(lambda));
    }
    if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
        return Err(LassoError::InvalidWeights);
    }
    if y.iter().any(|v| !v.is_finite()) || d.cols.iter().flatten().any(|v| !v.is_finite()) {
        return Err(LassoError::NonFinite);
    }
    Ok(())
}

/// What a sweep keeps current: the residual, or the scaled correlations
/// `(1/S) Xᵀr` when the Gram matrix is available.
enum State {
    Residual(Vec<f64>),
    Gradient(Vec<f64>),
}

impl State {
    fn new(d: &Design, y: &[f64], sigma: &[f64]) -> Self {
        let r = d.residual(y, sigma);
        if d.gram.is_some() {
            State::Gradient((0..d.dim()).map(|k| d.corr(k, &r)).collect())
        } else {
            State::Residual(r)
        }
    }
}

/// One pass over `coords`; returns the largest coefficient change.
fn sweep(
    d: &Design,
    state: &mut State,
    sigma: &mut [f64],
    coords: impl Iterator<Item = usize>,
    lambda: f64,
    weights: &[f64],
) -> f64 {
    let dim = d.dim();
    let mut max_delta = 0.0f64;
    for k in coords {
        let c = d.sq[k];
        let old = sigma[k];
        let new = if c == 0.0 || weights[k].is_infinite() {
            0.0
        } else {
            let corr = match state {
                State::Residual(r) => d.corr(k, r),
                State::Gradient(g) => g[k],
            };
            soft_threshold(corr + c * old, lambda * weights[k]) / c
        };
        let delta = new - old;
        if delta != 0.0 {
            match state {
                State::Residual(r) => {
                    for (ri, xi) in r.iter_mut().zip(&d.cols[k]) {
                        *ri -= xi * delta;
                    }
                }
                State::Gradient(g) => {
                    let gram = d.gram.as_deref().expect("gradient state needs the Gram matrix");
                    for (gj, gkj) in g.iter_mut().zip(&gram[k * dim..(k + 1) * dim]) {
                        *gj -= gkj * delta;
                    }
                }
            }
            sigma[k] = new;
            max_delta = max_delta.max(delta.abs());
        }
    }
    max_delta
}

fn current_objective(r: &[f64], sigma: &[f64], lambda: f64, weights: &[f64]) -> f64 {
    dot(r, r) / (2.0 * r.len() as f64) + lambda * penalty(sigma, weights)
}

/// Full sweeps alternate with inner sweeps over the nonzero set until a full
/// sweep moves nothing by more than `tol`.
pub(crate) fn ccd_design(
    d: &Design,
    y: &[f64],
    lambda: f64,
    weights: &[f64],
    start: Option<&[f64]>,
    opts: &CcdOptions,
    trace: bool,
) -> CcdFit {
    let mut sigma = match start {
        Some(s0) => s0.to_vec(),
        None => vec![0.0; d.dim()],
    };
    let mut state = State::new(d, y, &sigma);
    let mut sweeps = 0;
    let mut converged = false;
    let mut history = Vec::new();
    let dim = d.dim();

    while sweeps < opts.max_sweeps {
        let delta = sweep(d, &mut state, &mut sigma, 0..dim, lambda, weights);
        sweeps += 1;
        if trace {
            history.push(current_objective(&d.residual(y, &sigma), &sigma, lambda, weights));
        }
        if delta < opts.tol {
            converged = true;
            break;
        }
        let active: Vec<usize> = (0..dim).filter(|&k| sigma[k] != 0.0).collect();
        while !active.is_empty() && sweeps < opts.max_sweeps {
            let delta = sweep(d, &mut state, &mut sigma, active.iter().copied(), lambda, weights);
            sweeps += 1;
            if trace {
                history.push(current_objective(&d.residual(y, &sigma), &sigma, lambda, weights));
            }
            if delta < opts.tol {
                break;
            }
        }
    }
    // fresh residual so the reported objective carries no accumulated drift
    let r = d.residual(y, &sigma);
    CcdFit {
        diagnostics: FitDiagnostics {
            objective: current_objective(&r, &sigma, lambda, weights),
            sweeps,
            converged,
        },
        coefficients: sigma,
        trace: history,
    }
}

/// Minimizes `(1/2S) Σ (y_i - x_i σ)² + λ Σ w_k |σ_k|` by cyclic coordinate
/// descent. Inputs are expected centered; columns need not have unit norm.
/// A weight of `f64::INFINITY` pins the coefficient at zero.
pub fn ccd_fit(
    xs: ArrayView2<f64>,
    ys: ArrayView1<f64>,
    lambda: f64,
    weights: &[f64],
    opts: &CcdOptions,
) -> Result<CcdFit, LassoError> {
    ccd_fit_from(xs, ys, lambda, weights, None, opts)
}

pub fn ccd_fit_from(
    xs: ArrayView2<f64>,
    ys: ArrayView1<f64>,
    lambda: f64,
    weights: &[f64],
    start: Option<&[f64]>,
    opts: &CcdOptions,
) -> Result<CcdFit, LassoError> {
    let d = Design::new(xs);
    let y = ys.to_vec();
    check_inputs(&d, &y, lambda, weights)?;
    if let Some(s0) = start {
        if s0.len() != d.dim() {
            return Err(LassoError::DimensionMismatch {
                expected: d.dim(),
                got: s0.len(),
            });
        }
    }
    Ok(ccd_design(&d, &y, lambda, weights, start, opts, false))
}

pub fn ccd_fit_traced(
    xs: ArrayView2<f64>,
    ys: ArrayView1<f64>,
    lambda: f64,
    weights: &[f64],
    opts: &CcdOptions,
) -> Result<CcdFit, LassoError> {
    let d = Design::new(xs);
    let y = ys.to_vec();
    check_inputs(&d, &y, lambda, weights)?;
    Ok(ccd_design(&d, &y, lambda, weights, None, opts, true))
}
