//! Lifted snapshot datasets: observable selection, basis expansion, the
//! input feedthrough filter, and measurement noise.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causality::{Il2Plan, ObservablePlan};
use crate::linalg::{lstsq, LinalgError};
use crate::simulate::{mix_seed, Dynamics, SimError, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LiftError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("underdetermined: {rows} snapshot pairs, need at least {needed}")]
    Underdetermined { rows: usize, needed: usize },
    #[error("no column `{0}` in trajectory")]
    MissingColumn(String),
    #[error("no trajectories")]
    Empty,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Basis applied on top of the raw selected columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Basis {
    /// Raw auxiliary variables.
    DflAux,
    /// `v², …, v^degree` per target (the raw `v` is already a column).
    Monomial { degree: u32 },
    /// `sin(j z)`, `cos(j z)`, `j = 1..=order`, with `z` the target mapped
    /// affinely from its training range onto `[-π, π]`.
    Fourier { order: u32 },
    Composite { parts: Vec<Basis> },
}

impl Basis {
    fn includes_aux(&self) -> bool {
        match self {
            Basis::DflAux => true,
            Basis::Composite { parts } => parts.iter().any(Basis::includes_aux),
            _ => false,
        }
    }
}

/// Which raw columns a basis expands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Targets {
    States,
    StatesAndAux,
}

/// Raw trajectory columns entering the lifted vector, by label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub states: Vec<String>,
    pub aux: Vec<String>,
    /// Leading state columns that belong to the original plant and are scored.
    pub scored: usize,
    /// Auxiliary labels the feedthrough filter treats as input-dependent.
    pub anticausal: Vec<String>,
}

impl Selection {
    /// States plus every auxiliary variable, anticausal ones included.
    pub fn all_measured(plan: &ObservablePlan) -> Self {
        Self {
            states: plan.states.clone(),
            aux: plan.aux_labels(),
            scored: plan.states.len(),
            anticausal: plan.anticausal().map(|a| a.label.clone()).collect(),
        }
    }

    /// States plus causal auxiliary variables.
    pub fn causal(plan: &ObservablePlan, scored: usize) -> Self {
        Self {
            states: plan.states.clone(),
            aux: plan.causal().map(|a| a.label.clone()).collect(),
            scored,
            anticausal: Vec::new(),
        }
    }

    /// States, integral states and retained auxiliary variables.
    pub fn integrated(plan: &Il2Plan, scored: usize) -> Self {
        Self { states: plan.states.clone(), aux: plan.retained.clone(), scored, anticausal: Vec::new() }
    }

    pub fn states_only(states: &[String]) -> Self {
        Self { states: states.to_vec(), aux: Vec::new(), scored: states.len(), anticausal: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Feature {
    Raw(usize),
    Pow(usize, u32),
    Sin(usize, u32),
    Cos(usize, u32),
}

/// A fitted observable map from raw trajectory rows to lifted vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub selection: Selection,
    pub basis: Basis,
    pub targets: Targets,
    /// Trajectory column of each base entry: `(false, i)` state `i`, `(true, j)` aux `j`.
    base: Vec<(bool, usize)>,
    base_labels: Vec<String>,
    features: Vec<Feature>,
    pub labels: Vec<String>,
    /// Training-set range per base entry, used by the Fourier map.
    ranges: Vec<(f64, f64)>,
}

impl FeatureMap {
    /// Resolve `selection` against the trajectory schema and fit basis scales
    /// on `training`.
    pub fn fit(selection: &Selection, basis: &Basis, targets: Targets, training: &[Trajectory]) -> Result<Self, LiftError> {
        let first = training.first().ok_or(LiftError::Empty)?;
        let mut base = Vec::new();
        let mut base_labels = Vec::new();
        for s in &selection.states {
            let i = first.state_labels.iter().position(|l| l == s).ok_or_else(|| LiftError::MissingColumn(s.clone()))?;
            base.push((false, i));
            base_labels.push(s.clone());
        }
        for a in &selection.aux {
            let j = first.aux_labels.iter().position(|l| l == a).ok_or_else(|| LiftError::MissingColumn(a.clone()))?;
            base.push((true, j));
            base_labels.push(a.clone());
        }
        let n_states = selection.states.len();
        let raw_aux = basis.includes_aux() || targets == Targets::StatesAndAux;
        let n_raw = if raw_aux { base.len() } else { n_states };
        let target_count = match targets {
            Targets::States => n_states,
            Targets::StatesAndAux => base.len(),
        };

        let mut features: Vec<Feature> = (0..n_raw).map(Feature::Raw).collect();
        let mut seen: BTreeSet<Feature> = features.iter().copied().collect();
        let mut push = |f: Feature, features: &mut Vec<Feature>| {
            if seen.insert(f) {
                features.push(f);
            }
        };
        fn expand(b: &Basis, targets: usize, out: &mut Vec<Feature>) {
            match b {
                Basis::DflAux => {}
                Basis::Monomial { degree } => {
                    for v in 0..targets {
                        for k in 2..=*degree {
                            out.push(Feature::Pow(v, k));
                        }
                    }
                }
                Basis::Fourier { order } => {
                    for v in 0..targets {
                        for j in 1..=*order {
                            out.push(Feature::Sin(v, j));
                            out.push(Feature::Cos(v, j));
                        }
                    }
                }
                Basis::Composite { parts } => parts.iter().for_each(|p| expand(p, targets, out)),
            }
        }
        let mut expanded = Vec::new();
        expand(basis, target_count, &mut expanded);
        for f in expanded {
            push(f, &mut features);
        }

        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); base.len()];
        for traj in training {
            check_schema(first, traj)?;
            for (b, &(is_aux, col)) in base.iter().enumerate() {
                let m = if is_aux { &traj.h } else { &traj.x };
                for v in m.column(col).iter() {
                    ranges[b].0 = ranges[b].0.min(*v);
                    ranges[b].1 = ranges[b].1.max(*v);
                }
            }
        }

        let labels = features
            .iter()
            .map(|f| match *f {
                Feature::Raw(b) => base_labels[b].clone(),
                Feature::Pow(b, k) => format!("{}^{k}", base_labels[b]),
                Feature::Sin(b, j) => format!("sin{j}({})", base_labels[b]),
                Feature::Cos(b, j) => format!("cos{j}({})", base_labels[b]),
            })
            .collect();
        Ok(Self {
            selection: selection.clone(),
            basis: basis.clone(),
            targets,
            base,
            base_labels,
            features,
            labels,
            ranges,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Number of leading state columns in the lifted vector.
    pub fn n_states(&self) -> usize {
        self.selection.states.len()
    }

    /// Lifted column indices of the anticausal auxiliary variables.
    pub fn anticausal_columns(&self) -> Vec<usize> {
        self.selection
            .anticausal
            .iter()
            .filter_map(|a| self.labels.iter().position(|l| l == a))
            .collect()
    }

    fn fourier_arg(&self, b: usize, v: f64) -> f64 {
        let (lo, hi) = self.ranges[b];
        if hi > lo {
            -PI + 2.0 * PI * (v - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    /// Lift every row of `traj`.
    pub fn lift(&self, traj: &Trajectory) -> Result<DMatrix<f64>, LiftError> {
        for &(is_aux, col) in &self.base {
            let (labels, want) = if is_aux { (&traj.aux_labels, col) } else { (&traj.state_labels, col) };
            if want >= labels.len() {
                return Err(LiftError::SchemaMismatch("trajectory lacks a selected column".into()));
            }
        }
        let rows = traj.len();
        let mut out = DMatrix::zeros(rows, self.dim());
        let mut base = vec![0.0; self.base.len()];
        for t in 0..rows {
            for (b, &(is_aux, col)) in self.base.iter().enumerate() {
                base[b] = if is_aux { traj.h[(t, col)] } else { traj.x[(t, col)] };
            }
            for (c, f) in self.features.iter().enumerate() {
                out[(t, c)] = match *f {
                    Feature::Raw(b) => base[b],
                    Feature::Pow(b, k) => base[b].powi(k as i32),
                    Feature::Sin(b, j) => (j as f64 * self.fourier_arg(b, base[b])).sin(),
                    Feature::Cos(b, j) => (j as f64 * self.fourier_arg(b, base[b])).cos(),
                };
            }
        }
        Ok(out)
    }
}

fn check_schema(a: &Trajectory, b: &Trajectory) -> Result<(), LiftError> {
    if a.state_labels != b.state_labels || a.aux_labels != b.aux_labels || a.input_labels != b.input_labels {
        return Err(LiftError::SchemaMismatch("trajectories have different columns".into()));
    }
    if (a.dt - b.dt).abs() > 1e-12 * a.dt {
        return Err(LiftError::SchemaMismatch(format!("dt {} vs {}", a.dt, b.dt)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetProvenance {
    pub trajectories: usize,
    pub basis: Basis,
    pub targets: Targets,
    pub selection: Selection,
    pub noise: Option<NoiseSpec>,
}

/// Snapshot pairs `(φ_t, u_t) → φ_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedDataset {
    pub phi: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub phi_next: DMatrix<f64>,
    /// `u_{t+1}`, needed to filter `φ_{t+1}`.
    pub u_next: DMatrix<f64>,
    pub dt: f64,
    pub labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub n_states: usize,
    pub scored: usize,
    pub provenance: DatasetProvenance,
}

/// Stack consecutive-step pairs from every trajectory; pairs never cross a
/// trajectory boundary.
pub fn build_dataset(trajs: &[Trajectory], map: &FeatureMap, noise: Option<&NoiseSpec>) -> Result<LiftedDataset, LiftError> {
    let first = trajs.first().ok_or(LiftError::Empty)?;
    let k = map.dim();
    let r = first.u.ncols();
    let rows: usize = trajs.iter().map(|t| t.len().saturating_sub(1)).sum();
    let needed = k + r + 1;
    if rows < needed {
        return Err(LiftError::Underdetermined { rows, needed });
    }
    let mut phi = DMatrix::zeros(rows, k);
    let mut phi_next = DMatrix::zeros(rows, k);
    let mut u = DMatrix::zeros(rows, r);
    let mut u_next = DMatrix::zeros(rows, r);
    let mut at = 0;
    for traj in trajs {
        check_schema(first, traj)?;
        let n = traj.len();
        if n < 2 {
            continue;
        }
        let lifted = map.lift(traj)?;
        phi.rows_mut(at, n - 1).copy_from(&lifted.rows(0, n - 1));
        phi_next.rows_mut(at, n - 1).copy_from(&lifted.rows(1, n - 1));
        u.rows_mut(at, n - 1).copy_from(&traj.u.rows(0, n - 1));
        u_next.rows_mut(at, n - 1).copy_from(&traj.u.rows(1, n - 1));
        at += n - 1;
    }
    Ok(LiftedDataset {
        phi,
        u,
        phi_next,
        u_next,
        dt: first.dt,
        labels: map.labels.clone(),
        input_labels: first.input_labels.clone(),
        n_states: map.n_states(),
        scored: map.selection.scored,
        provenance: DatasetProvenance {
            trajectories: trajs.len(),
            basis: map.basis.clone(),
            targets: map.targets,
            selection: map.selection.clone(),
            noise: noise.cloned(),
        },
    })
}

impl LiftedDataset {
    pub fn rows(&self) -> usize {
        self.phi.nrows()
    }

    /// Write `phi.csv`, `u.csv`, `phi_next.csv` and `dataset.json` into `dir`.
    pub fn export(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        write_matrix(&dir.join("phi.csv"), &self.labels, &self.phi)?;
        write_matrix(&dir.join("u.csv"), &self.input_labels, &self.u)?;
        write_matrix(&dir.join("phi_next.csv"), &self.labels, &self.phi_next)?;
        let sidecar = serde_json::json!({
            "dt": self.dt,
            "rows": self.rows(),
            "labels": self.labels,
            "input_labels": self.input_labels,
            "n_states": self.n_states,
            "provenance": self.provenance,
        });
        fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&sidecar)? + "\n")
    }
}

pub(crate) fn write_matrix(path: &Path, header: &[String], m: &DMatrix<f64>) -> io::Result<()> {
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()
}

// ---------------------------------------------------------------------------
// feedthrough filter

/// `φ ← φ − D u` on the anticausal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedthroughFilter {
    pub columns: Vec<usize>,
    /// One row per filtered column, one column per input.
    pub d: DMatrix<f64>,
    /// Residual norm of each column's regression.
    pub residuals: Vec<f64>,
    pub warnings: Vec<String>,
}

impl FeedthroughFilter {
    pub fn identity(inputs: usize) -> Self {
        Self { columns: Vec::new(), d: DMatrix::zeros(0, inputs), residuals: Vec::new(), warnings: Vec::new() }
    }

    pub fn is_identity(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn apply(&self, phi: &mut DMatrix<f64>, u: &DMatrix<f64>) {
        for (i, &c) in self.columns.iter().enumerate() {
            for t in 0..phi.nrows() {
                let offset: f64 = (0..u.ncols()).map(|j| self.d[(i, j)] * u[(t, j)]).sum();
                phi[(t, c)] -= offset;
            }
        }
    }

    pub fn apply_row(&self, phi: &mut [f64], u: &[f64]) {
        for (i, &c) in self.columns.iter().enumerate() {
            phi[c] -= (0..u.len()).map(|j| self.d[(i, j)] * u[j]).sum::<f64>();
        }
    }

    /// Filter both sides of a dataset.
    pub fn apply_dataset(&self, ds: &mut LiftedDataset) {
        self.apply(&mut ds.phi, &ds.u);
        self.apply(&mut ds.phi_next, &ds.u_next);
    }
}

/// Regress each anticausal column on the remaining columns and the inputs,
/// keeping the input coefficients as `D`.
pub fn fit_feedthrough(ds: &LiftedDataset, columns: &[usize]) -> Result<FeedthroughFilter, LiftError> {
    let r = ds.u.ncols();
    if columns.is_empty() {
        return Ok(FeedthroughFilter::identity(r));
    }
    let others: Vec<usize> = (0..ds.phi.ncols()).filter(|c| !columns.contains(c)).collect();
    let m = ds.rows();
    let mut z = DMatrix::zeros(m, others.len() + r);
    for (j, &c) in others.iter().enumerate() {
        z.set_column(j, &ds.phi.column(c));
    }
    z.columns_mut(others.len(), r).copy_from(&ds.u);
    let mut y = DMatrix::zeros(m, columns.len());
    for (j, &c) in columns.iter().enumerate() {
        y.set_column(j, &ds.phi.column(c));
    }
    let sol = lstsq(&z, &y, 0.0)?;
    let d = sol.x.rows(others.len(), r).transpose();
    let resid = &z * &sol.x - &y;
    let residuals = resid.column_iter().map(|c| c.norm()).collect();
    Ok(FeedthroughFilter { columns: columns.to_vec(), d, residuals, warnings: sol.warnings })
}

// ---------------------------------------------------------------------------
// noise

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Independent sensors on states and auxiliary variables.
    Measured,
    /// Noise on states only; auxiliary variables recomputed from noisy states.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
    pub mode: NoiseMode,
}

/// Perturb trajectories. `dynamics` recomputes auxiliary variables in
/// synthetic mode and may be `None` when the trajectories carry none.
pub fn apply_noise(
    trajs: &[Trajectory],
    noise: &NoiseSpec,
    dynamics: Option<&dyn Dynamics>,
) -> Result<Vec<Trajectory>, LiftError> {
    if noise.sigma == 0.0 {
        return Ok(trajs.to_vec());
    }
    let normal = Normal::new(0.0, noise.sigma)
        .map_err(|e| LiftError::SchemaMismatch(format!("invalid noise sigma: {e}")))?;
    let mut out = Vec::with_capacity(trajs.len());
    for (i, traj) in trajs.iter().enumerate() {
        let mut t = traj.clone();
        let mut rng_x = ChaCha8Rng::seed_from_u64(mix_seed(noise.seed, 2 * i as u64));
        t.x.iter_mut().for_each(|v| *v += normal.sample(&mut rng_x));
        match noise.mode {
            NoiseMode::Measured => {
                let mut rng_h = ChaCha8Rng::seed_from_u64(mix_seed(noise.seed, 2 * i as u64 + 1));
                t.h.iter_mut().for_each(|v| *v += normal.sample(&mut rng_h));
            }
            NoiseMode::Synthetic if t.h.ncols() > 0 => {
                let ode = dynamics.ok_or_else(|| {
                    LiftError::SchemaMismatch("synthetic noise needs the dynamics to recompute observables".into())
                })?;
                let mut aux = vec![0.0; t.h.ncols()];
                for k in 0..t.len() {
                    let x: Vec<f64> = t.x.row(k).iter().copied().collect();
                    let u: Vec<f64> = t.u.row(k).iter().copied().collect();
                    ode.aux(&x, &u, &mut aux)?;
                    for (j, v) in aux.iter().enumerate() {
                        t.h[(k, j)] = *v;
                    }
                }
            }
            NoiseMode::Synthetic => {}
        }
        out.push(t);
    }
    Ok(out)
}
