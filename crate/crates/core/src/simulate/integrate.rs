//! Fixed-step RK4 with zero-order-hold inputs.

use std::io::{self, Write};

use nalgebra::DMatrix;

use super::ode::Dynamics;
use super::signal::InputSignal;
use super::SimError;

/// Sampled trajectory on a uniform grid. Row `k` of every matrix is time `k·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub x: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub state_labels: Vec<String>,
    pub aux_labels: Vec<String>,
    pub input_labels: Vec<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Write `t,x0..,eta0..,u0..` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((0..self.x.ncols()).map(|i| format!("x{i}")));
        header.extend((0..self.h.ncols()).map(|i| format!("eta{i}")));
        header.extend((0..self.u.ncols()).map(|i| format!("u{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![self.times[k].to_string()];
            for m in [&self.x, &self.h, &self.u] {
                row.extend(m.row(k).iter().map(f64::to_string));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    /// RK4 steps per grid interval.
    pub substeps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { substeps: 1 }
    }
}

/// Substeps per grid interval so that the internal step does not exceed
/// `time_constant / ratio`.
pub fn substeps_for(dt: f64, time_constant: f64, ratio: f64) -> usize {
    ((dt * ratio / time_constant) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Number of grid intervals when `dt` divides `t_final`.
pub fn grid_steps(t_final: f64, dt: f64) -> Result<usize, SimError> {
    if !(dt > 0.0 && dt.is_finite() && t_final >= 0.0 && t_final.is_finite()) {
        return Err(SimError::Grid(format!("invalid grid dt={dt}, t_final={t_final}")));
    }
    let n = (t_final / dt).round();
    if (n * dt - t_final).abs() > 1e-9 * t_final.max(dt) {
        return Err(SimError::Grid(format!("dt={dt} does not divide t_final={t_final}")));
    }
    Ok(n as usize)
}

/// Integrate `ode` from `x0` with `u` held at its grid value across each step.
pub fn integrate<D: Dynamics + ?Sized>(
    ode: &D,
    x0: &[f64],
    signal: &InputSignal,
    t_final: f64,
    dt: f64,
    opts: IntegrateOptions,
) -> Result<Trajectory, SimError> {
    let n = ode.state_dim();
    let r = ode.input_dim();
    if x0.len() != n || signal.channels != r {
        return Err(SimError::Dimension(format!(
            "expected {n} states and {r} inputs, got {} and {}",
            x0.len(),
            signal.channels
        )));
    }
    let steps = grid_steps(t_final, dt)?;
    let substeps = opts.substeps.max(1);
    let h = dt / substeps as f64;
    let na = ode.aux_dim();

    let mut x_data = Vec::with_capacity((steps + 1) * n);
    let mut h_data = Vec::with_capacity((steps + 1) * na);
    let mut u_data = Vec::with_capacity((steps + 1) * r);
    let mut times = Vec::with_capacity(steps + 1);

    let mut x = x0.to_vec();
    let mut u = vec![0.0; r];
    let mut aux = vec![0.0; na];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];

    for k in 0..=steps {
        let t = k as f64 * dt;
        signal.sample_into(t, &mut u);
        ode.aux(&x, &u, &mut aux)?;
        times.push(t);
        x_data.extend_from_slice(&x);
        h_data.extend_from_slice(&aux);
        u_data.extend_from_slice(&u);
        if k == steps {
            break;
        }
        for s in 0..substeps {
            ode.rhs(&x, &u, &mut k1)?;
            axpy(&x, 0.5 * h, &k1, &mut tmp);
            ode.rhs(&tmp, &u, &mut k2)?;
            axpy(&x, 0.5 * h, &k2, &mut tmp);
            ode.rhs(&tmp, &u, &mut k3)?;
            axpy(&x, h, &k3, &mut tmp);
            ode.rhs(&tmp, &u, &mut k4)?;
            for i in 0..n {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SimError::Divergence { time: t + (s + 1) as f64 * h });
            }
        }
    }

    let rows = steps + 1;
    Ok(Trajectory {
        dt,
        times,
        x: DMatrix::from_row_slice(rows, n, &x_data),
        h: DMatrix::from_row_slice(rows, na, &h_data),
        u: DMatrix::from_row_slice(rows, r, &u_data),
        state_labels: ode.state_labels(),
        aux_labels: ode.aux_labels(),
        input_labels: ode.input_labels(),
    })
}

fn axpy(x: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for ((o, xi), ki) in out.iter_mut().zip(x).zip(k) {
        *o = xi + a * ki;
    }
}
