mod common;

use std::fs;
use std::path::Path;

use causal_lift::eval::report::{quantile, Summary};
use causal_lift::eval::{emit_outputs, run_experiment, ExperimentConfig, MethodKind, Report, TrialResult};
use causal_lift::par::Execution;
use proptest::prelude::*;

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        if rel != "report.json" {
            out.push((rel, fs::read(&entry).unwrap()));
        }
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn reruns_are_identical_and_parallelism_does_not_matter() {
    let mut cfg = common::config("exp1_toy");
    cfg.trials = 3;
    let a = run_experiment(&cfg, Execution::Parallel).unwrap();
    let b = run_experiment(&cfg, Execution::Sequential).unwrap();
    assert_eq!(a.deterministic_json(), b.deterministic_json());
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_outputs(&a, da.path()).unwrap();
    emit_outputs(&b, db.path()).unwrap();
    assert_eq!(read_dir_sorted(da.path()), read_dir_sorted(db.path()));
    let strip = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(p.join("report.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("run");
        v
    };
    assert_eq!(strip(da.path()), strip(db.path()));
}

#[test]
fn sse_csv_has_one_row_per_method_and_trial() {
    let mut cfg = common::config("exp1_toy");
    cfg.trials = 3;
    cfg.select_methods(&["il2".into(), "al2".into()]).unwrap();
    let report = run_experiment(&cfg, Execution::Parallel).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&report, dir.path()).unwrap();
    let sse = fs::read_to_string(dir.path().join("sse.csv")).unwrap();
    let lines: Vec<&str> = sse.lines().collect();
    assert_eq!(lines[0], "method,trial,seed,sse");
    assert_eq!(lines.len(), 1 + 6);
    assert!(dir.path().join("trajectories/il2.truth.csv").exists());
    assert!(dir.path().join("trajectories/al2.pred.csv").exists());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["name"], "exp1_toy");
    assert!(json["run"]["timestamp"].is_u64());
}

#[test]
fn empty_report_writes_header_only_csvs() {
    let cfg = common::config("linear_msd");
    let report = Report {
        name: cfg.name.clone(),
        config: cfg,
        methods: vec![],
        run: causal_lift::eval::report::RunInfo { timestamp: 0, runtime_seconds: 0.0 },
        trajectories: vec![],
    };
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&report, dir.path()).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("sse.csv")).unwrap(), "method,trial,seed,sse\n");
    assert_eq!(fs::read_to_string(dir.path().join("cdf.csv")).unwrap(), "method,sse,p\n");
}

#[test]
fn linear_plant_with_il2_is_exact() {
    let report = run_experiment(&common::config("linear_msd"), Execution::Sequential).unwrap();
    let sse = report.method("il2").unwrap().trials[0].sse.unwrap();
    assert!(sse < 1e-8, "{sse}");
}

#[test]
fn il2_rollout_on_the_toy_stays_finite_over_the_horizon() {
    let cfg = common::config("exp1_toy");
    let exp = causal_lift::eval::Experiment::new(cfg.clone()).unwrap();
    let out = exp.fit_method("il2", cfg.trial_seeds()[0]).unwrap();
    assert_eq!(out.prediction.states.nrows(), 1001);
    assert!(out.prediction.phi.iter().all(|v| v.is_finite()));
}

#[test]
fn unfiltered_anticausal_observable_breaks_the_model() {
    let mut cfg = common::config("exp1_toy");
    cfg.methods.retain(|m| matches!(m.kind, MethodKind::Il2));
    let mut omq = cfg.methods[0].clone();
    omq.kind = MethodKind::Omq { basis: causal_lift::lifting::Basis::DflAux };
    cfg.methods.push(omq);
    let report = run_experiment(&cfg, Execution::Parallel).unwrap();
    let il2 = report.method("il2").unwrap().summary.median;
    let omq = report.method("omq-aux").unwrap().summary.median;
    assert!(omq > 10.0 * il2, "omq {omq} vs il2 {il2}");
}

/// The filter is the right tool when the anticausal observable is affine in the input.
#[test]
fn feedthrough_filter_matches_il2_when_its_assumption_holds() {
    let mut cfg = common::config("exp1_toy");
    cfg.laws.insert(
        "damper".into(),
        causal_lift::eval::config::LawOverride { law: None, inverse: Some("e + 0*e^2".into()) },
    );
    cfg.select_methods(&["dfl-filtered".into(), "il2".into()]).unwrap();
    let report = run_experiment(&cfg, Execution::Parallel).unwrap();
    let dfl = report.method("dfl-filtered").unwrap().summary.median;
    let il2 = report.method("il2").unwrap().summary.median;
    assert!(dfl <= 2.0 * il2, "dfl {dfl} vs il2 {il2}");
}

#[test]
fn cli_overrides_keep_configs_valid() {
    let mut cfg: ExperimentConfig = common::config("exp5_cdf");
    cfg.trials = 3;
    cfg.seeds = None;
    assert_eq!(cfg.trial_seeds(), vec![1000, 1001, 1002]);
    assert!(cfg.select_methods(&["nope".into()]).is_err());
}

proptest! {
    #[test]
    fn median_never_exceeds_p90(values in prop::collection::vec(prop::option::weighted(0.8, 0.0f64..1e6), 1..60)) {
        let trials: Vec<TrialResult> = values
            .iter()
            .enumerate()
            .map(|(i, v)| TrialResult { trial: i, seed: i as u64, sse: *v, error: None })
            .collect();
        let s = Summary::from_trials(&trials);
        prop_assert!(s.median <= s.p90);
        prop_assert_eq!(s.succeeded + s.failed, trials.len());
        let mut sorted: Vec<f64> = trials.iter().map(TrialResult::value).collect();
        sorted.sort_by(f64::total_cmp);
        prop_assert!(quantile(&sorted, 0.0) <= s.median && s.p90 <= quantile(&sorted, 1.0));
    }
}
