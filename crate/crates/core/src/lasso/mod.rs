//! Lasso regression by cyclic coordinate descent, with a multi-step adaptive
//! reweighting wrapper.

mod ccd;
mod path;
mod standardize;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ccd::{
    ccd_fit, ccd_fit_from, ccd_fit_traced, kkt_residual, objective, soft_threshold, CcdFit,
    CcdOptions, FitDiagnostics,
};
pub use path::{fit_path, lambda_path, weighted_lambda_path, LambdaPath, PathConfig};
pub use standardize::{standardize, StandardizationParams};

use ccd::Design;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LassoError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("lambda must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("penalty weights must be non-negative")]
    InvalidWeights,
    #[error("invalid regularization path settings")]
    InvalidPath,
    #[error("invalid fit settings: {0}")]
    InvalidConfig(&'static str),
    #[error("validation fold is degenerate ({train} train rows, {validation} validation rows)")]
    DegenerateFold { train: usize, validation: usize },
    #[error("model schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("model layout {found} does not match dataset layout {expected}")]
    LayoutMismatch { found: String, expected: String },
    #[error("malformed model document: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsaConfig {
    pub steps: usize,
    pub path: PathConfig,
    pub validation_fraction: f64,
    /// Guard in `w = 1/(|σ| + δ)`. `None` gives zeroed coefficients an
    /// infinite weight, excluding them from later steps.
    pub delta: Option<f64>,
    pub ccd: CcdOptions,
}

impl Default for MsaConfig {
    fn default() -> Self {
        MsaConfig {
            steps: 3,
            path: PathConfig::default(),
            validation_fraction: 0.2,
            delta: Some(1e-6),
            ccd: CcdOptions::default(),
        }
    }
}

impl MsaConfig {
    pub fn validate(&self) -> Result<(), LassoError> {
        self.path.validate()?;
        if self.steps == 0 {
            return Err(LassoError::InvalidConfig("steps must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(LassoError::InvalidConfig("validation_fraction must lie in (0, 1)"));
        }
        if matches!(self.delta, Some(d) if !(d > 0.0 && d.is_finite())) {
            return Err(LassoError::InvalidConfig("delta must be positive"));
        }
        if !(self.ccd.tol >= 0.0) || self.ccd.max_sweeps == 0 {
            return Err(LassoError::InvalidConfig("ccd tolerance/sweep budget"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub lambda: f64,
    pub path_index: usize,
    pub validation_mse: f64,
    pub nonzero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub schema_version: u32,
    /// Intercept in centered units; the prediction adds `mu_y` on top.
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    #[serde(with = "inf_as_null")]
    pub weights: Vec<f64>,
    pub standardization: StandardizationParams,
    pub layout: Option<String>,
    pub diagnostics: FitDiagnostics,
    #[serde(default)]
    pub steps: Vec<StepSummary>,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(w: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Option<f64>> = w.iter().map(|x| x.is_finite().then_some(*x)).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

impl LassoModel {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn nonzero(&self) -> usize {
        self.coefficients.iter().filter(|b| **b != 0.0).count()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&k| self.coefficients[k] != 0.0).collect()
    }

    pub fn predict(&self, x_raw: &[f64]) -> Result<f64, LassoError> {
        if x_raw.len() != self.dim() {
            return Err(LassoError::DimensionMismatch {
                expected: self.dim(),
                got: x_raw.len(),
            });
        }
        if x_raw.iter().any(|v| !v.is_finite()) {
            return Err(LassoError::NonFinite);
        }
        let p = &self.standardization;
        let mut acc = 0.0;
        for k in 0..self.dim() {
            let b = self.coefficients[k];
            if b != 0.0 {
                acc += (x_raw[k] - p.mu_x[k]) / p.std_x[k] * b;
            }
        }
        Ok(p.mu_y + self.intercept + acc)
    }

    pub fn predict_rows(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, LassoError> {
        x.axis_iter(Axis(0))
            .map(|row| self.predict(&row.to_vec()))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Parses a model document and checks its schema version and, when
    /// given, that its layout fingerprint equals `expected_layout`.
    pub fn from_json(text: &str, expected_layout: Option<&str>) -> Result<Self, LassoError> {
        let m: LassoModel =
            serde_json::from_str(text).map_err(|e| LassoError::Json(e.to_string()))?;
        if m.schema_version != MODEL_SCHEMA_VERSION {
            return Err(LassoError::SchemaVersion {
                found: m.schema_version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        if let Some(expected) = expected_layout {
            if m.layout.as_deref() != Some(expected) {
                return Err(LassoError::LayoutMismatch {
                    found: m.layout.clone().unwrap_or_default(),
                    expected: expected.to_string(),
                });
            }
        }
        let d = m.dim();
        let p = &m.standardization;
        if p.mu_x.len() != d || p.std_x.len() != d || m.weights.len() != d {
            return Err(LassoError::Json("per-feature arrays differ in length".into()));
        }
        Ok(m)
    }
}

fn select_rows(x: ArrayView2<f64>, y: ArrayView1<f64>, rows: &[usize]) -> (Array2<f64>, Vec<f64>) {
    (x.select(Axis(0), rows), rows.iter().map(|&i| y[i]).collect())
}

/// Row `i` goes to validation when `floor((i+1)f) > floor(i f)`.
fn inner_fold(s: usize, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for i in 0..s {
        if ((i + 1) as f64 * fraction).floor() > (i as f64 * fraction).floor() {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

struct Fitted {
    coefficients: Vec<f64>,
    lambda: f64,
    diagnostics: FitDiagnostics,
    summary: StepSummary,
}

/// One selection step: choose the path position by validation error on the
/// inner fold, then refit the full data down to that position.
fn select_and_fit(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    weights: &[f64],
    cfg: &MsaConfig,
) -> Result<Fitted, LassoError> {
    let (tr, va) = inner_fold(x.nrows(), cfg.validation_fraction);
    if tr.len() < 2 || va.is_empty() {
        return Err(LassoError::DegenerateFold {
            train: tr.len(),
            validation: va.len(),
        });
    }
    let (xt, yt) = select_rows(x, y, &tr);
    let (xv, yv) = select_rows(x, y, &va);
    let (xts, yts, pt) = standardize(xt.view(), ArrayView1::from(&yt))?;
    let dt = Design::new(xts.view());
    let yts = yts.to_vec();
    let path_t = path::path_for(&dt, &yts, weights, &cfg.path);
    let fits = path::fit_along(&dt, &yts, weights, &path_t.values, cfg.path.penalty_scale, &cfg.ccd);

    let xvs: Vec<Vec<f64>> = xv
        .axis_iter(Axis(0))
        .map(|r| pt.transform_row(&r.to_vec()))
        .collect();
    let mut best = (0usize, f64::INFINITY);
    for (idx, f) in fits.iter().enumerate() {
        let mse = xvs
            .iter()
            .zip(&yv)
            .map(|(row, yi)| {
                let pred = pt.mu_y + row.iter().zip(&f.coefficients).map(|(a, b)| a * b).sum::<f64>();
                (yi - pred).powi(2)
            })
            .sum::<f64>()
            / yv.len() as f64;
        if mse < best.1 {
            best = (idx, mse);
        }
    }

    let (xs, ys, _) = standardize(x, y)?;
    let d = Design::new(xs.view());
    let ys = ys.to_vec();
    let path_full = path::path_for(&d, &ys, weights, &cfg.path);
    let upto = best.0.min(path_full.values.len() - 1);
    let mut full = path::fit_along(
        &d,
        &ys,
        weights,
        &path_full.values[..=upto],
        cfg.path.penalty_scale,
        &cfg.ccd,
    );
    let last = full.pop().expect("non-empty path");
    let nonzero = last.coefficients.iter().filter(|b| **b != 0.0).count();
    Ok(Fitted {
        lambda: path_full.values[upto],
        summary: StepSummary {
            lambda: path_full.values[upto],
            path_index: upto,
            validation_mse: best.1,
            nonzero,
        },
        coefficients: last.coefficients,
        diagnostics: last.diagnostics,
    })
}

fn adaptive_weights(sigma: &[f64], delta: Option<f64>) -> Vec<f64> {
    sigma
        .iter()
        .map(|b| match delta {
            Some(d) => 1.0 / (b.abs() + d),
            None if *b == 0.0 => f64::INFINITY,
            None => 1.0 / b.abs(),
        })
        .collect()
}

fn assemble(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    fitted: Fitted,
    weights: Vec<f64>,
    steps: Vec<StepSummary>,
) -> Result<LassoModel, LassoError> {
    let (xs, ys, mut params) = standardize(x, y)?;
    params.constant_columns.sort_unstable();
    let mut coefficients = fitted.coefficients;
    for &k in &params.constant_columns {
        coefficients[k] = 0.0;
    }
    let s = ys.len() as f64;
    let fitted_mean: f64 = xs.dot(&ArrayView1::from(&coefficients)).sum() / s;
    let intercept = ys.sum() / s - fitted_mean;
    Ok(LassoModel {
        schema_version: MODEL_SCHEMA_VERSION,
        intercept,
        coefficients,
        lambda: fitted.lambda,
        weights,
        standardization: params,
        layout: None,
        diagnostics: fitted.diagnostics,
        steps,
    })
}

/// Plain Lasso at a fixed λ on raw data.
pub fn fit_at_lambda(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    lambda: f64,
    weights: &[f64],
    opts: &CcdOptions,
) -> Result<LassoModel, LassoError> {
    let (xs, ys, _) = standardize(x, y)?;
    let fit = ccd_fit(xs.view(), ys.view(), lambda, weights, opts)?;
    let summary = StepSummary {
        lambda,
        path_index: 0,
        validation_mse: f64::NAN,
        nonzero: fit.coefficients.iter().filter(|b| **b != 0.0).count(),
    };
    let fitted = Fitted {
        coefficients: fit.coefficients,
        lambda,
        diagnostics: fit.diagnostics,
        summary,
    };
    assemble(x, y, fitted, weights.to_vec(), Vec::new())
}

/// Multi-step adaptive Lasso: the first step uses unit weights, each later
/// step reweights by `1/(|σ| + δ)` from the previous step and reselects λ.
pub fn msa_lasso_fit(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    cfg: &MsaConfig,
) -> Result<LassoModel, LassoError> {
    msa_lasso_fit_weighted(x, y, &vec![1.0; x.ncols()], cfg)
}

/// As [`msa_lasso_fit`] but with explicit first-step weights.
pub fn msa_lasso_fit_weighted(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    initial_weights: &[f64],
    cfg: &MsaConfig,
) -> Result<LassoModel, LassoError> {
    cfg.validate()?;
    if x.nrows() < 2 {
        return Err(LassoError::TooFewSamples(x.nrows()));
    }
    if y.len() != x.nrows() {
        return Err(LassoError::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if initial_weights.len() != x.ncols() {
        return Err(LassoError::DimensionMismatch {
            expected: x.ncols(),
            got: initial_weights.len(),
        });
    }
    let mut weights = initial_weights.to_vec();
    let mut summaries = Vec::with_capacity(cfg.steps);
    let mut fitted = select_and_fit(x, y, &weights, cfg)?;
    summaries.push(fitted.summary.clone());
    for step in 1..cfg.steps {
        weights = adaptive_weights(&fitted.coefficients, cfg.delta);
        fitted = select_and_fit(x, y, &weights, cfg)?;
        log::debug!(
            "adaptive step {}: lambda {:.3e}, {} nonzero",
            step + 1,
            fitted.lambda,
            fitted.summary.nonzero
        );
        summaries.push(fitted.summary.clone());
    }
    assemble(x, y, fitted, weights, summaries)
}
