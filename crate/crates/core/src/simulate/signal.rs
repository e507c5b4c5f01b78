//! Exogenous input signals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Guards phase computations against grid points landing a rounding error
/// short of a switching instant.
const PHASE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SignalSpec {
    /// `+amplitude` for the first half of each period, `-amplitude` after.
    Square { amplitude: f64, period: f64 },
    /// Levels drawn uniformly from `[-amplitude, amplitude]`, held for `hold` seconds.
    #[serde(alias = "piecewise-constant-random")]
    RandomHold { amplitude: f64, hold: f64 },
    Sinusoid { amplitude: f64, period: f64 },
    Zero,
}

impl SignalSpec {
    pub fn validate(&self) -> Result<(), String> {
        let check = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("signal {name} must be positive and finite, got {v}"))
            }
        };
        match *self {
            SignalSpec::Square { amplitude, period } | SignalSpec::Sinusoid { amplitude, period } => {
                check("period", period)?;
                if amplitude.is_finite() && amplitude >= 0.0 {
                    Ok(())
                } else {
                    Err(format!("signal amplitude must be non-negative, got {amplitude}"))
                }
            }
            SignalSpec::RandomHold { amplitude, hold } => {
                check("hold", hold)?;
                if amplitude.is_finite() && amplitude >= 0.0 {
                    Ok(())
                } else {
                    Err(format!("signal amplitude must be non-negative, got {amplitude}"))
                }
            }
            SignalSpec::Zero => Ok(()),
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, SignalSpec::RandomHold { .. })
    }
}

/// A concrete multi-channel input `u(t)` on `[0, duration]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    pub spec: SignalSpec,
    pub seed: u64,
    pub duration: f64,
    pub channels: usize,
    /// Random-hold levels, `levels[channel][segment]`.
    levels: Vec<Vec<f64>>,
}

/// Derive an independent stream seed (splitmix64 finalizer).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_signal(spec: &SignalSpec, seed: u64, duration: f64, channels: usize) -> InputSignal {
    let levels = match *spec {
        SignalSpec::RandomHold { amplitude, hold } => {
            let segments = (duration / hold).ceil() as usize + 1;
            (0..channels)
                .map(|c| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, c as u64));
                    (0..segments).map(|_| rng.random_range(-amplitude..=amplitude)).collect()
                })
                .collect()
        }
        _ => Vec::new(),
    };
    InputSignal { spec: spec.clone(), seed, duration, channels, levels }
}

impl InputSignal {
    /// Value of channel `c` at time `t`.
    pub fn channel(&self, c: usize, t: f64) -> f64 {
        match self.spec {
            SignalSpec::Square { amplitude, period } => {
                let half = (t / period * 2.0 + PHASE_EPS).floor() as i64;
                if half.rem_euclid(2) == 0 {
                    amplitude
                } else {
                    -amplitude
                }
            }
            SignalSpec::RandomHold { hold, .. } => {
                let levels = &self.levels[c];
                let k = ((t / hold + PHASE_EPS).floor().max(0.0) as usize).min(levels.len() - 1);
                levels[k]
            }
            SignalSpec::Sinusoid { amplitude, period } => amplitude * (std::f64::consts::TAU * t / period).sin(),
            SignalSpec::Zero => 0.0,
        }
    }

    pub fn sample_into(&self, t: f64, out: &mut [f64]) {
        for (c, v) in out.iter_mut().enumerate() {
            *v = self.channel(c, t);
        }
    }

    pub fn sample(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.sample_into(t, &mut out);
        out
    }
}
