//! Aggregated results and their on-disk form.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::config::{ExperimentConfig, MethodSpec};
use super::{Experiment, MethodOutcome, TrialError};
use crate::causality::AugmentationParams;
use crate::simulate::Trajectory;
use crate::sysid::Prediction;

/// Non-finite values are written as the string `"inf"`.
mod inf_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    /// `None` when the trial failed.
    pub sse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialResult {
    /// Failed trials count as infinite error.
    pub fn value(&self) -> f64 {
        self.sse.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean and standard error over successful trials.
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    #[serde(with = "inf_f64")]
    pub median: f64,
    #[serde(with = "inf_f64")]
    pub p90: f64,
    pub succeeded: usize,
    pub failed: usize,
}

/// Linear-interpolation quantile of ascending `sorted` (`q` in [0, 1]).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let (a, b) = (sorted[lo], sorted[hi]);
    if lo == hi || a == b {
        a
    } else {
        a + (pos - lo as f64) * (b - a)
    }
}

impl Summary {
    pub fn from_trials(trials: &[TrialResult]) -> Self {
        let ok: Vec<f64> = trials.iter().filter_map(|t| t.sse).collect();
        let n = ok.len();
        let mean = (n > 0).then(|| ok.iter().sum::<f64>() / n as f64);
        let stderr = mean.filter(|_| n > 1).map(|m| {
            let var = ok.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        let sorted = sorted_values(trials);
        Self {
            mean,
            stderr,
            median: quantile(&sorted, 0.5),
            p90: quantile(&sorted, 0.9),
            succeeded: n,
            failed: trials.len() - n,
        }
    }
}

fn sorted_values(trials: &[TrialResult]) -> Vec<f64> {
    let mut v: Vec<f64> = trials.iter().map(TrialResult::value).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Empirical CDF points `(sse, p)` with `p = (i + 1) / n`.
pub fn empirical_cdf(trials: &[TrialResult]) -> Vec<(f64, f64)> {
    let sorted = sorted_values(trials);
    let n = sorted.len() as f64;
    sorted.into_iter().enumerate().map(|(i, v)| (v, (i + 1) as f64 / n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    #[serde(with = "inf_f64")]
    pub sse: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    pub spec: MethodSpec,
    /// Lifted dimension plus input count of the fitted model.
    pub order: Option<usize>,
    pub lifted_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub augmentations: Vec<AugmentationParams>,
    pub trials: Vec<TrialResult>,
    pub summary: Summary,
    pub cdf: Vec<CdfPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    /// Seconds since the Unix epoch at report assembly.
    pub timestamp: u64,
    pub runtime_seconds: f64,
}

/// First-trial validation trajectories of one method.
#[derive(Debug, Clone)]
pub struct TrajectoryPair {
    pub truth: Trajectory,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub config: ExperimentConfig,
    pub methods: Vec<MethodReport>,
    /// Wall-clock data; excluded from reproducibility comparisons.
    pub run: RunInfo,
    #[serde(skip)]
    pub trajectories: Vec<Option<TrajectoryPair>>,
}

impl Report {
    pub(crate) fn assemble(
        experiment: &Experiment,
        seeds: &[u64],
        outcomes: Vec<Vec<Result<MethodOutcome, TrialError>>>,
        runtime_seconds: f64,
    ) -> Self {
        let mut methods = Vec::new();
        let mut trajectories = Vec::new();
        for (m, pipe) in experiment.pipelines.iter().enumerate() {
            let mut trials = Vec::with_capacity(seeds.len());
            let mut order = None;
            let mut lifted_labels = Vec::new();
            for (i, seed) in seeds.iter().enumerate() {
                match &outcomes[i][m] {
                    Ok(o) => {
                        if order.is_none() {
                            order = Some(o.model.dim() + o.model.inputs());
                            lifted_labels = o.model.labels.clone();
                        }
                        trials.push(TrialResult { trial: i, seed: *seed, sse: Some(o.sse), error: None });
                    }
                    Err(e) => {
                        log::warn!("{} trial {i} (seed {seed}): {e}", pipe.name);
                        trials.push(TrialResult { trial: i, seed: *seed, sse: None, error: Some(e.to_string()) });
                    }
                }
            }
            trajectories.push(outcomes.first().and_then(|o| o[m].as_ref().ok()).map(|o| TrajectoryPair {
                truth: o.truth.clone(),
                prediction: o.prediction.clone(),
            }));
            let summary = Summary::from_trials(&trials);
            let cdf = empirical_cdf(&trials).into_iter().map(|(sse, p)| CdfPoint { sse, p }).collect();
            methods.push(MethodReport {
                name: pipe.name.clone(),
                spec: pipe.spec.clone(),
                order,
                lifted_labels,
                augmentations: experiment.plants[pipe.plant].augmentations.clone(),
                trials,
                summary,
                cdf,
            });
        }
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self {
            name: experiment.config.name.clone(),
            config: experiment.config.clone(),
            methods,
            run: RunInfo { timestamp, runtime_seconds },
            trajectories,
        }
    }

    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn failures(&self) -> usize {
        self.methods.iter().map(|m| m.summary.failed).sum()
    }

    /// The report without wall-clock fields, for reproducibility checks.
    pub fn deterministic_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("run");
        }
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Write `report.json`, `sse.csv`, `cdf.csv` and first-trial trajectories.
pub fn emit_outputs(report: &Report, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report.to_json())?;

    let mut sse = BufWriter::new(File::create(dir.join("sse.csv"))?);
    writeln!(sse, "method,trial,seed,sse")?;
    for m in &report.methods {
        for t in &m.trials {
            let v = t.sse.map_or_else(|| "inf".to_string(), |v| format!("{v:e}"));
            writeln!(sse, "{},{},{},{}", m.name, t.trial, t.seed, v)?;
        }
    }
    sse.flush()?;

    let mut cdf = BufWriter::new(File::create(dir.join("cdf.csv"))?);
    writeln!(cdf, "method,sse,p")?;
    for m in &report.methods {
        for c in &m.cdf {
            let v = if c.sse.is_finite() { format!("{:e}", c.sse) } else { "inf".into() };
            writeln!(cdf, "{},{},{}", m.name, v, c.p)?;
        }
    }
    cdf.flush()?;

    let traj_dir = dir.join("trajectories");
    fs::create_dir_all(&traj_dir)?;
    for (m, pair) in report.methods.iter().zip(&report.trajectories) {
        let Some(pair) = pair else { continue };
        pair.truth.write_csv(BufWriter::new(File::create(traj_dir.join(format!("{}.truth.csv", m.name)))?))?;
        let mut w = BufWriter::new(File::create(traj_dir.join(format!("{}.pred.csv", m.name)))?);
        let p = &pair.prediction;
        write!(w, "t")?;
        for l in pair.truth.state_labels.iter().take(p.states.ncols()) {
            write!(w, ",{l}")?;
        }
        writeln!(w)?;
        for (k, t) in p.times.iter().enumerate() {
            write!(w, "{t}")?;
            for v in p.states.row(k).iter() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trials(v: &[Option<f64>]) -> Vec<TrialResult> {
        v.iter().enumerate().map(|(i, s)| TrialResult { trial: i, seed: i as u64, sse: *s, error: None }).collect()
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.5), 2.5);
        assert!((quantile(&s, 0.9) - 3.7).abs() < 1e-12);
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.9), 7.0);
    }

    #[test]
    fn failures_rank_last() {
        let t = trials(&[Some(1.0), None, Some(3.0), None]);
        let s = Summary::from_trials(&t);
        assert_eq!((s.succeeded, s.failed), (2, 2));
        assert_eq!(s.mean, Some(2.0));
        assert_eq!(s.median, f64::INFINITY);
        assert_eq!(s.p90, f64::INFINITY);
        let cdf = empirical_cdf(&t);
        assert_eq!(cdf[0], (1.0, 0.25));
        assert_eq!(cdf[3].1, 1.0);
        assert!(cdf[3].0.is_infinite());
    }

    #[test]
    fn summary_json_spells_inf() {
        let s = Summary::from_trials(&trials(&[None]));
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"median\":\"inf\""), "{j}");
        assert!(j.contains("\"mean\":null"));
        let back: Summary = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn stderr_of_known_sample() {
        let s = Summary::from_trials(&trials(&[Some(1.0), Some(2.0), Some(3.0)]));
        // sample sd 1, n = 3
        assert!((s.stderr.unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }
}
