use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::ccd::{ccd_design, check_inputs, CcdFit, CcdOptions, Design};
use super::LassoError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub count: usize,
    pub eps: f64,
    /// Multiplies the penalty term; λ_max is divided by it.
    pub penalty_scale: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            count: 100,
            eps: 1e-3,
            penalty_scale: 1.0,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<(), LassoError> {
        if self.count == 0 || !(self.eps > 0.0 && self.eps < 1.0) || !(self.penalty_scale > 0.0) {
            return Err(LassoError::InvalidPath);
        }
        Ok(())
    }
}

/// Strictly decreasing regularization values; `values[0]` zeroes every coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPath {
    pub values: Vec<f64>,
}

impl LambdaPath {
    pub fn lambda_max(&self) -> f64 {
        self.values[0]
    }
}

pub(crate) fn path_for(d: &Design, y: &[f64], weights: &[f64], cfg: &PathConfig) -> LambdaPath {
    let lambda_max = (0..d.dim())
        .filter(|&k| weights[k] > 0.0 && weights[k].is_finite())
        .map(|k| d.corr(k, y).abs() / weights[k])
        .fold(0.0f64, f64::max)
        / cfg.penalty_scale;
    if lambda_max == 0.0 {
        return LambdaPath { values: vec![0.0] };
    }
    let values = if cfg.count == 1 {
        vec![lambda_max]
    } else {
        let ratio = cfg.eps.powf(1.0 / (cfg.count - 1) as f64);
        (0..cfg.count)
            .map(|i| lambda_max * ratio.powi(i as i32))
            .collect()
    };
    LambdaPath { values }
}

/// Geometric sequence from λ_max down to `eps * λ_max` for unit weights.
pub fn lambda_path(
    xs: ArrayView2<f64>,
    ys: ArrayView1<f64>,
    cfg: &PathConfig,
) -> Result<LambdaPath, LassoError> {
    weighted_lambda_path(xs, ys, &vec![1.0; xs.ncols()], cfg)
}

pub fn weighted_lambda_path(
    xs: ArrayView2<f64>,
    ys: ArrayView1<f64>,
    weights: &[f64],
    cfg: &PathConfig,
) -> Result<LambdaPath, LassoError> {
    cfg.validate()?;
    let d = Design::new(xs);
    let y = ys.to_vec();
    check_inputs(&d, &y, 0.0, weights)?;
    Ok(path_for(&d, &y, weights, cfg))
}

/// Warm-started fits along `lambdas`, in order.
pub(crate) fn fit_along(
    d: &Design,
    y: &[f64],
    weights: &[f64],
    lambdas: &[f64],
    penalty_scale: f64,
    opts: &CcdOptions,
) -> Vec<CcdFit> {
    let scaled: Vec<f64> = weights.iter().map(|w| w * penalty_scale).collect();
    let mut out: Vec<CcdFit> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let start = out.last().map(|f| f.coefficients.as_slice());
        out.push(ccd_design(d, y, lambda, &scaled, start, opts, false));
    }
    log::debug!(
        "path of {} over {}x{}: {} sweeps, {} unconverged",
        lambdas.len(),
        d.s,
        d.dim(),
        out.iter().map(|f| f.diagnostics.sweeps).sum::<usize>(),
        out.iter().filter(|f| !f.diagnostics.converged).count()
    );
    out
}

/// Fits every value of the path, warm-starting each from its predecessor.
pub fn fit_path(
    xs: ArrayView2<f64>,
    ys: ArrayView1<f64>,
    weights: &[f64],
    path: &LambdaPath,
    cfg: &PathConfig,
    opts: &CcdOptions,
) -> Result<Vec<CcdFit>, LassoError> {
    cfg.validate()?;
    let d = Design::new(xs);
    let y = ys.to_vec();
    check_inputs(&d, &y, 0.0, weights)?;
    Ok(fit_along(&d, &y, weights, &path.values, cfg.penalty_scale, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lasso::ccd::ccd_fit;
    use crate::lasso::standardize;
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((80, 12), |_| rng.random_range(-2.0..2.0));
        let y = Array1::from_shape_fn(80, |i| {
            2.0 * x[[i, 0]] - x[[i, 5]] + 0.3 * x[[i, 7]] + rng.random_range(-0.1..0.1)
        });
        let (xs, ys, _) = standardize(x.view(), y.view()).unwrap();
        (xs, ys)
    }

    #[test]
    fn single_value_path_is_lambda_max() {
        let (xs, ys) = problem(0);
        let cfg = PathConfig {
            count: 1,
            ..Default::default()
        };
        let p = lambda_path(xs.view(), ys.view(), &cfg).unwrap();
        let full = lambda_path(xs.view(), ys.view(), &PathConfig::default()).unwrap();
        assert_eq!(p.values, vec![full.lambda_max()]);
    }

    #[test]
    fn geometric_and_decreasing() {
        let (xs, ys) = problem(1);
        let p = lambda_path(xs.view(), ys.view(), &PathConfig::default()).unwrap();
        assert_eq!(p.values.len(), 100);
        let r0 = p.values[1] / p.values[0];
        for w in p.values.windows(2) {
            assert!(w[1] < w[0]);
            assert!((w[1] / w[0] - r0).abs() < 1e-12);
        }
        assert!((p.values[99] / p.values[0] - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let (xs, ys) = problem(2);
        let p = lambda_path(xs.view(), ys.view(), &PathConfig::default()).unwrap();
        let fit = ccd_fit(xs.view(), ys.view(), p.lambda_max(), &[1.0; 12], &CcdOptions::default()).unwrap();
        assert!(fit.coefficients.iter().all(|&b| b == 0.0));
        // just below, something enters
        let fit = ccd_fit(xs.view(), ys.view(), p.lambda_max() * 0.99, &[1.0; 12], &CcdOptions::default()).unwrap();
        assert!(fit.coefficients.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn l1_norm_shrinks_with_lambda() {
        let (xs, ys) = problem(3);
        let cfg = PathConfig::default();
        let p = lambda_path(xs.view(), ys.view(), &cfg).unwrap();
        let fits = fit_path(xs.view(), ys.view(), &[1.0; 12], &p, &cfg, &CcdOptions::default()).unwrap();
        let norms: Vec<f64> = fits.iter().map(|f| f.coefficients.iter().map(|b| b.abs()).sum()).collect();
        // path runs from large λ to small λ, so the norm must not decrease
        for w in norms.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} < {}", w[1], w[0]);
        }
    }

    #[test]
    fn warm_path_matches_cold_fits() {
        let (xs, ys) = problem(4);
        let cfg = PathConfig {
            count: 20,
            ..Default::default()
        };
        let opts = CcdOptions::default();
        let p = lambda_path(xs.view(), ys.view(), &cfg).unwrap();
        let warm = fit_path(xs.view(), ys.view(), &[1.0; 12], &p, &cfg, &opts).unwrap();
        for (lambda, fit) in p.values.iter().zip(&warm) {
            let cold = ccd_fit(xs.view(), ys.view(), *lambda, &[1.0; 12], &opts).unwrap();
            for (a, b) in fit.coefficients.iter().zip(&cold.coefficients) {
                assert!((a - b).abs() < 1e-7, "λ={lambda}");
            }
        }
    }

    #[test]
    fn zero_response_gives_zero_path() {
        let (xs, _) = problem(5);
        let ys = Array1::zeros(80);
        let p = lambda_path(xs.view(), ys.view(), &PathConfig::default()).unwrap();
        assert_eq!(p.values, vec![0.0]);
    }

    #[test]
    fn weights_rescale_lambda_max() {
        let (xs, ys) = problem(6);
        let cfg = PathConfig::default();
        let unit = lambda_path(xs.view(), ys.view(), &cfg).unwrap();
        let scaled = weighted_lambda_path(xs.view(), ys.view(), &[4.0; 12], &cfg).unwrap();
        assert!((unit.lambda_max() / scaled.lambda_max() - 4.0).abs() < 1e-12);
    }
}
