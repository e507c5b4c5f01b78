//! Lifted linear models: least-squares fits, rollout, and JSON export.

use std::path::Path;

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lifting::LiftedDataset;
use crate::linalg::{lstsq, tls, LinalgError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SysIdError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    #[default]
    Ols,
    Tls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub rows: usize,
    pub residual_norm: f64,
    pub rank: Option<usize>,
    pub warnings: Vec<String>,
}

/// `φ_{t+1} = A [φ_t; u_t]` with `A = [A_x A_η B_x; H_x H_η H_u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedModel {
    pub a: DMatrix<f64>,
    pub dt: f64,
    pub labels: Vec<String>,
    pub input_labels: Vec<String>,
    /// State rows/columns at the front of the lifted vector.
    pub n_states: usize,
    /// Leading states scored against ground truth.
    pub scored: usize,
    pub method: FitMethod,
    pub fit: FitInfo,
    pub provenance: serde_json::Value,
}

impl LiftedModel {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.a.ncols() - self.a.nrows()
    }

    fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> DMatrixView<'_, f64> {
        self.a.view((rows.start, cols.start), (rows.len(), cols.len()))
    }

    pub fn a_x(&self) -> DMatrixView<'_, f64> {
        self.block(0..self.n_states, 0..self.n_states)
    }

    pub fn a_eta(&self) -> DMatrixView<'_, f64> {
        self.block(0..self.n_states, self.n_states..self.dim())
    }

    pub fn b_x(&self) -> DMatrixView<'_, f64> {
        self.block(0..self.n_states, self.dim()..self.a.ncols())
    }

    pub fn h_x(&self) -> DMatrixView<'_, f64> {
        self.block(self.n_states..self.dim(), 0..self.n_states)
    }

    pub fn h_eta(&self) -> DMatrixView<'_, f64> {
        self.block(self.n_states..self.dim(), self.n_states..self.dim())
    }

    pub fn h_u(&self) -> DMatrixView<'_, f64> {
        self.block(self.n_states..self.dim(), self.dim()..self.a.ncols())
    }
}

fn regressors(ds: &LiftedDataset) -> DMatrix<f64> {
    let (m, k) = ds.phi.shape();
    let r = ds.u.ncols();
    let mut z = DMatrix::zeros(m, k + r);
    z.columns_mut(0, k).copy_from(&ds.phi);
    z.columns_mut(k, r).copy_from(&ds.u);
    z
}

fn model_from(ds: &LiftedDataset, a: DMatrix<f64>, method: FitMethod, fit: FitInfo) -> LiftedModel {
    LiftedModel {
        a,
        dt: ds.dt,
        labels: ds.labels.clone(),
        input_labels: ds.input_labels.clone(),
        n_states: ds.n_states,
        scored: ds.scored,
        method,
        fit,
        provenance: serde_json::to_value(&ds.provenance).unwrap_or(serde_json::Value::Null),
    }
}

/// Ordinary least squares with optional ridge.
pub fn fit_ols(ds: &LiftedDataset, ridge: f64) -> Result<LiftedModel, SysIdError> {
    let z = regressors(ds);
    let sol = lstsq(&z, &ds.phi_next, ridge)?;
    let fit = FitInfo { rows: ds.rows(), residual_norm: sol.residual_norm, rank: Some(sol.rank), warnings: sol.warnings };
    Ok(model_from(ds, sol.x.transpose(), FitMethod::Ols, fit))
}

/// Total least squares on `[Φ U | Φ′]`.
pub fn fit_tls(ds: &LiftedDataset) -> Result<LiftedModel, SysIdError> {
    let z = regressors(ds);
    let theta = tls(&z, &ds.phi_next)?;
    let residual_norm = (&z * &theta - &ds.phi_next).norm();
    let fit = FitInfo { rows: ds.rows(), residual_norm, rank: None, warnings: Vec::new() };
    Ok(model_from(ds, theta.transpose(), FitMethod::Tls, fit))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub times: Vec<f64>,
    pub phi: DMatrix<f64>,
    /// First `scored` lifted components.
    pub states: DMatrix<f64>,
}

/// Iterate the linear model from `phi0` under `inputs` (one row per step).
/// Returns `inputs.nrows() + 1` rows.
pub fn rollout(model: &LiftedModel, phi0: &[f64], inputs: &DMatrix<f64>) -> Result<Prediction, SysIdError> {
    let k = model.dim();
    let r = model.inputs();
    if phi0.len() != k || inputs.ncols() != r {
        return Err(SysIdError::Dimension(format!(
            "model takes {k} lifted and {r} inputs, got {} and {}",
            phi0.len(),
            inputs.ncols()
        )));
    }
    let steps = inputs.nrows();
    let mut phi = DMatrix::zeros(steps + 1, k);
    phi.row_mut(0).copy_from_slice(phi0);
    let mut z = vec![0.0; k + r];
    for t in 0..steps {
        for j in 0..k {
            z[j] = phi[(t, j)];
        }
        for j in 0..r {
            z[k + j] = inputs[(t, j)];
        }
        for i in 0..k {
            let mut acc = 0.0;
            for j in 0..k + r {
                acc += model.a[(i, j)] * z[j];
            }
            phi[(t + 1, i)] = acc;
        }
        if phi.row(t + 1).iter().any(|v| !v.is_finite()) {
            return Err(SysIdError::Divergence { step: t + 1 });
        }
    }
    let times = (0..=steps).map(|t| t as f64 * model.dt).collect();
    let states = phi.columns(0, model.scored).clone_owned();
    Ok(Prediction { times, phi, states })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    dt: f64,
    labels: Vec<String>,
    input_labels: Vec<String>,
    n_states: usize,
    scored: usize,
    rows: usize,
    cols: usize,
    /// Row-major.
    a: Vec<f64>,
    method: FitMethod,
    fit: FitInfo,
    provenance: serde_json::Value,
}

impl LiftedModel {
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            dt: self.dt,
            labels: self.labels.clone(),
            input_labels: self.input_labels.clone(),
            n_states: self.n_states,
            scored: self.scored,
            rows: self.a.nrows(),
            cols: self.a.ncols(),
            a: self.a.transpose().iter().copied().collect(),
            method: self.method,
            fit: self.fit.clone(),
            provenance: self.provenance.clone(),
        };
        serde_json::to_string_pretty(&file).expect("finite model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, SysIdError> {
        let f: ModelFile = serde_json::from_str(text).map_err(|e| SysIdError::Format(e.to_string()))?;
        if f.a.len() != f.rows * f.cols || f.cols < f.rows || f.labels.len() != f.rows {
            return Err(SysIdError::Format("matrix shape disagrees with labels".into()));
        }
        if f.n_states > f.rows || f.scored > f.n_states {
            return Err(SysIdError::Format("state counts exceed model size".into()));
        }
        Ok(Self {
            a: DMatrix::from_row_slice(f.rows, f.cols, &f.a),
            dt: f.dt,
            labels: f.labels,
            input_labels: f.input_labels,
            n_states: f.n_states,
            scored: f.scored,
            method: f.method,
            fit: f.fit,
            provenance: f.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, SysIdError> {
        let text = std::fs::read_to_string(path).map_err(|e| SysIdError::Format(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
