use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::LassoError;

/// Column centering and scaling such that each centered column has unit sum
/// of squares. Constant columns are centered, kept at scale 1, and flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mu_x: Vec<f64>,
    pub std_x: Vec<f64>,
    pub mu_y: f64,
    pub constant_columns: Vec<usize>,
}

impl StandardizationParams {
    pub fn dim(&self) -> usize {
        self.mu_x.len()
    }

    pub fn is_constant(&self, k: usize) -> bool {
        self.constant_columns.binary_search(&k).is_ok()
    }

    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mu_x.iter().zip(&self.std_x))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse_row(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .zip(self.mu_x.iter().zip(&self.std_x))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

pub fn standardize(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<(Array2<f64>, Array1<f64>, StandardizationParams), LassoError> {
    let (s, d) = x.dim();
    if s < 2 {
        return Err(LassoError::TooFewSamples(s));
    }
    if y.len() != s {
        return Err(LassoError::DimensionMismatch {
            expected: s,
            got: y.len(),
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(LassoError::NonFinite);
    }

    let mut xs = x.to_owned();
    let mut mu_x = Vec::with_capacity(d);
    let mut std_x = Vec::with_capacity(d);
    let mut constant_columns = Vec::new();
    for (k, mut col) in xs.axis_iter_mut(Axis(1)).enumerate() {
        let mu = col.sum() / s as f64;
        col.mapv_inplace(|v| v - mu);
        let norm = col.dot(&col).sqrt();
        if norm / (s as f64).sqrt() <= 1e-12 * (1.0 + mu.abs()) {
            col.fill(0.0);
            std_x.push(1.0);
            constant_columns.push(k);
        } else {
            col.mapv_inplace(|v| v / norm);
            std_x.push(norm);
        }
        mu_x.push(mu);
    }
    let mu_y = y.sum() / s as f64;
    let ys = y.mapv(|v| v - mu_y);
    Ok((
        xs,
        ys,
        StandardizationParams {
            mu_x,
            std_x,
            mu_y,
            constant_columns,
        },
    ))
}
