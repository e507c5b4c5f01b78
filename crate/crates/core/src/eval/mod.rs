//! Scoring and the experiment runner.

pub mod config;
pub mod report;

use std::fs;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::causality::{
    apply_al2, apply_il2, assign_causality, classify_observables, default_augmentation, Al2Outcome, AugmentationParams,
    Il2Plan, ObservablePlan,
};
use crate::lifting::{
    apply_noise, build_dataset, fit_feedthrough, Basis, FeatureMap, FeedthroughFilter, LiftError, NoiseMode, NoiseSpec,
    Selection, Targets,
};
use crate::netmodel::{parse_model, NetworkModel};
use crate::par::{map_indexed, Execution};
use crate::simulate::{
    generate_signal, integrate, mix_seed, substeps_for, Dynamics, IntegrateOptions, NetworkOde, SimError, Trajectory,
};
use crate::sysid::{fit_ols, fit_tls, rollout, FitMethod, LiftedModel, Prediction, SysIdError};

pub use config::{ConfigError, ExperimentConfig, MethodKind, MethodSpec, NoiseModeConfig, NoiseTarget};
pub use report::{emit_outputs, MethodReport, Report, Summary, TrialResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

/// Sum over time and the first `n` state components of the squared error.
pub fn sse(pred: &Prediction, truth: &Trajectory, n: usize) -> Result<f64, ScoreError> {
    if pred.states.nrows() != truth.len() {
        return Err(ScoreError::GridMismatch(format!("{} predicted rows vs {} true", pred.states.nrows(), truth.len())));
    }
    if pred.states.ncols() < n || truth.x.ncols() < n {
        return Err(ScoreError::GridMismatch(format!("{n} scored states not available")));
    }
    if pred.times.iter().zip(&truth.times).any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0)) {
        return Err(ScoreError::GridMismatch("time grids differ".into()));
    }
    let diff = pred.states.columns(0, n) - truth.x.columns(0, n);
    Ok(diff.norm_squared())
}

/// Failure of one method in one trial.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrialError {
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("lifting: {0}")]
    Lift(#[from] LiftError),
    #[error("identification: {0}")]
    SysId(#[from] SysIdError),
    #[error("scoring: {0}")]
    Score(#[from] ScoreError),
    #[error("{0}")]
    Setup(String),
}

// Seed streams derived from each trial seed.
const STREAM_VALIDATE_SIGNAL: u64 = 1;
const STREAM_VALIDATE_X0: u64 = 2;
const STREAM_NOISE_TRAIN: u64 = 3;
const STREAM_NOISE_VALIDATE: u64 = 4;
const STREAM_TRAIN_SIGNAL: u64 = 1_000;
const STREAM_TRAIN_X0: u64 = 2_000;

/// Plant simulated for one or more methods.
#[derive(Debug, Clone)]
pub struct Plant {
    pub model: NetworkModel,
    pub ode: NetworkOde,
    pub plan: ObservablePlan,
    pub substeps: usize,
    /// Augmentations applied to obtain this plant from the configured model.
    pub augmentations: Vec<AugmentationParams>,
}

/// How one method turns plant trajectories into a lifted model.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub name: String,
    pub spec: MethodSpec,
    pub plant: usize,
    pub selection: Selection,
    pub basis: Basis,
    pub targets: Targets,
    pub filter: bool,
    pub noise_mode: NoiseMode,
    pub fit: FitMethod,
}

/// A configured experiment: parsed model, plants and per-method pipelines.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: NetworkModel,
    pub plants: Vec<Plant>,
    pub pipelines: Vec<Pipeline>,
    pub il2: Il2Plan,
}

/// Everything produced for one method in one trial.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub sse: f64,
    pub model: LiftedModel,
    pub prediction: Prediction,
    pub truth: Trajectory,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let text = fs::read_to_string(&config.model)
            .map_err(|source| ConfigError::Io { path: config.model.clone(), source })?;
        let model = parse_model(&text)?;
        Self::with_model(config, model)
    }

    pub fn with_model(config: ExperimentConfig, mut model: NetworkModel) -> Result<Self, ConfigError> {
        for (id, o) in &config.laws {
            model = model.with_laws(id, o.law.as_deref(), o.inverse.as_deref())?;
        }
        let assignment = assign_causality(&model)?;
        let plan = classify_observables(&model, &assignment);
        let il2 = apply_il2(&assignment, &plan);
        let n_orig = model.state_order.len();
        let base_ode = NetworkOde::new(&model, &assignment, &plan, Some(&il2));
        let mut plants = vec![Plant { model: model.clone(), ode: base_ode, plan: plan.clone(), substeps: 1, augmentations: Vec::new() }];

        let mut pipelines = Vec::new();
        for spec in &config.methods {
            let name = spec.display_name();
            let noise_mode = spec.noise_mode(config.noise.mode);
            let fit = spec.fit.unwrap_or(config.fit);
            let aux_basis = Basis::DflAux;
            let (plant, selection, basis, targets, filter) = match &spec.kind {
                MethodKind::DflFiltered => (0, Selection::all_measured(&plan), aux_basis, Targets::StatesAndAux, true),
                MethodKind::Omq { basis } => (0, Selection::all_measured(&plan), basis.clone(), Targets::StatesAndAux, false),
                MethodKind::Ksos { basis } => {
                    (0, Selection::states_only(&plan.states), basis.clone(), Targets::States, false)
                }
                MethodKind::Il2 => (0, Selection::integrated(&il2, n_orig), aux_basis, Targets::StatesAndAux, false),
                MethodKind::Al2 { resistor, value } => {
                    let p = augmented_plant(&model, &plan, resistor.as_deref(), *value, &config)?;
                    let selection = Selection::causal(&p.plan, n_orig);
                    plants.push(p);
                    (plants.len() - 1, selection, aux_basis, Targets::StatesAndAux, false)
                }
            };
            pipelines.push(Pipeline { name, spec: spec.clone(), plant, selection, basis, targets, filter, noise_mode, fit });
        }
        Ok(Self { config, model, plants, pipelines, il2 })
    }

    fn x0(&self, plant: &Plant, seed: u64) -> Vec<f64> {
        let spread = self.config.x0_spread;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_orig = self.model.state_order.len();
        (0..plant.ode.state_dim())
            .map(|i| {
                let v = if spread > 0.0 { rng.random_range(-spread..=spread) } else { 0.0 };
                if i < n_orig {
                    v
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn simulate(&self, plant: &Plant, trial_seed: u64) -> Result<(Vec<Trajectory>, Trajectory), SimError> {
        let c = &self.config;
        let r = plant.ode.input_dim();
        let opts = IntegrateOptions { substeps: plant.substeps };
        let mut train = Vec::with_capacity(c.train.trajectories);
        for j in 0..c.train.trajectories as u64 {
            let signal = generate_signal(&c.train.signal, mix_seed(trial_seed, STREAM_TRAIN_SIGNAL + j), c.train.t_final, r);
            let x0 = self.x0(plant, mix_seed(trial_seed, STREAM_TRAIN_X0 + j));
            train.push(integrate(&plant.ode, &x0, &signal, c.train.t_final, c.dt, opts)?);
        }
        let signal = generate_signal(&c.validate.signal, mix_seed(trial_seed, STREAM_VALIDATE_SIGNAL), c.validate.t_final, r);
        let x0 = self.x0(plant, mix_seed(trial_seed, STREAM_VALIDATE_X0));
        let validate = integrate(&plant.ode, &x0, &signal, c.validate.t_final, c.dt, opts)?;
        Ok((train, validate))
    }

    /// Run every method for one trial seed.
    pub fn run_trial(&self, trial_seed: u64) -> Vec<Result<MethodOutcome, TrialError>> {
        let sims: Vec<Result<(Vec<Trajectory>, Trajectory), SimError>> =
            self.plants.iter().map(|p| self.simulate(p, trial_seed)).collect();
        self.pipelines
            .iter()
            .map(|pipe| match &sims[pipe.plant] {
                Ok((train, validate)) => self.run_pipeline(pipe, train, validate, trial_seed),
                Err(e) => Err(TrialError::Sim(e.clone())),
            })
            .collect()
    }

    fn run_pipeline(
        &self,
        pipe: &Pipeline,
        train: &[Trajectory],
        validate: &Trajectory,
        trial_seed: u64,
    ) -> Result<MethodOutcome, TrialError> {
        let c = &self.config;
        let plant = &self.plants[pipe.plant];
        let noisy = c.noise.sigma > 0.0;
        let noise_train = NoiseSpec { sigma: c.noise.sigma, seed: mix_seed(trial_seed, STREAM_NOISE_TRAIN), mode: pipe.noise_mode };
        let noise_val = NoiseSpec { seed: mix_seed(trial_seed, STREAM_NOISE_VALIDATE), ..noise_train.clone() };
        let dynamics: &dyn Dynamics = &plant.ode;

        let train_data = if noisy && c.noise.apply_to != NoiseTarget::Validate {
            apply_noise(train, &noise_train, Some(dynamics))?
        } else {
            train.to_vec()
        };
        let val_input = if noisy && c.noise.apply_to != NoiseTarget::Train {
            apply_noise(std::slice::from_ref(validate), &noise_val, Some(dynamics))?.remove(0)
        } else {
            validate.clone()
        };

        let map = FeatureMap::fit(&pipe.selection, &pipe.basis, pipe.targets, &train_data)?;
        let mut ds = build_dataset(&train_data, &map, noisy.then_some(&noise_train))?;
        let filter = if pipe.filter {
            fit_feedthrough(&ds, &map.anticausal_columns())?
        } else {
            FeedthroughFilter::identity(ds.u.ncols())
        };
        filter.apply_dataset(&mut ds);
        let model = match pipe.fit {
            FitMethod::Ols => fit_ols(&ds, c.ridge)?,
            FitMethod::Tls => fit_tls(&ds)?,
        };

        let lifted = map.lift(&val_input)?;
        let mut phi0: Vec<f64> = lifted.row(0).iter().copied().collect();
        let u0: Vec<f64> = validate.u.row(0).iter().copied().collect();
        filter.apply_row(&mut phi0, &u0);
        let steps = validate.len() - 1;
        let inputs: DMatrix<f64> = validate.u.rows(0, steps).clone_owned();
        let prediction = rollout(&model, &phi0, &inputs)?;
        let score = sse(&prediction, validate, pipe.selection.scored)?;
        if !score.is_finite() {
            return Err(TrialError::SysId(SysIdError::Divergence { step: steps }));
        }
        Ok(MethodOutcome { sse: score, model, prediction, truth: validate.clone() })
    }

    /// Lifted model of one method fitted on the given trial, for inspection.
    pub fn fit_method(&self, name: &str, trial_seed: u64) -> Result<MethodOutcome, TrialError> {
        let pipe = self
            .pipelines
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| TrialError::Setup(format!("no method `{name}`")))?;
        let (train, validate) = self.simulate(&self.plants[pipe.plant], trial_seed)?;
        self.run_pipeline(pipe, &train, &validate, trial_seed)
    }
}

fn augmented_plant(
    model: &NetworkModel,
    plan: &ObservablePlan,
    resistor: Option<&str>,
    value: Option<f64>,
    config: &ExperimentConfig,
) -> Result<Plant, ConfigError> {
    let targets: Vec<String> = match resistor {
        Some(r) => vec![r.to_string()],
        None => plan
            .anticausal()
            .filter(|a| model.element(&a.element).is_some_and(|e| !e.kind.is_storage()))
            .map(|a| a.element.clone())
            .collect(),
    };
    let mut current = model.clone();
    let mut augmentations = Vec::new();
    for id in &targets {
        let mut params = default_augmentation(&current, id)?;
        if let Some(v) = value {
            params.value = v;
        }
        match apply_al2(&current, id, &params)? {
            Al2Outcome::Augmented { model, .. } => {
                current = model;
                augmentations.push(params);
            }
            Al2Outcome::OmitObservable { resistor, sources } => {
                log::info!("`{resistor}` is driven by {sources:?} alone; its observable is omitted");
            }
        }
    }
    let assignment = assign_causality(&current)?;
    let aug_plan = classify_observables(&current, &assignment);
    let ode = NetworkOde::new(&current, &assignment, &aug_plan, None);
    let smallest = augmentations.iter().map(|a| a.value).fold(f64::INFINITY, f64::min);
    let substeps = if smallest.is_finite() { substeps_for(config.dt, smallest, config.substep_ratio) } else { 1 };
    Ok(Plant { model: current, ode, plan: aug_plan, substeps, augmentations })
}

/// Run all trials and aggregate.
pub fn run_experiment(config: &ExperimentConfig, exec: Execution) -> Result<Report, ConfigError> {
    let experiment = Experiment::new(config.clone())?;
    Ok(run_prepared(&experiment, exec))
}

pub fn run_prepared(experiment: &Experiment, exec: Execution) -> Report {
    let start = Instant::now();
    let seeds = experiment.config.trial_seeds();
    let outcomes = map_indexed(seeds.len(), exec, |i| experiment.run_trial(seeds[i]));
    Report::assemble(experiment, &seeds, outcomes, start.elapsed().as_secs_f64())
}
