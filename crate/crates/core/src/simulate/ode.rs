//! State equations executed from a causal evaluation plan.

use nalgebra::DMatrix;

use crate::causality::{
    assign_causality, classify_observables, CausalAssignment, CausalityError, Il2Plan, ObservablePlan, Rule, VarId,
};
use crate::expr::{invert_law_auto, ConstitutiveExpr};
use crate::netmodel::{Element, NetworkModel};

use super::SimError;

/// Absolute inversion tolerance, scaled by `max(1, |y|)` at each call.
const INVERT_TOL: f64 = 1e-10;

/// Time-invariant input-affine-or-not dynamics `ẋ = F(x, u)` with recorded
/// auxiliary outputs `η = G(x, u)`.
pub trait Dynamics: Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), SimError>;

    fn aux_dim(&self) -> usize {
        0
    }

    fn aux(&self, _x: &[f64], _u: &[f64], _out: &mut [f64]) -> Result<(), SimError> {
        Ok(())
    }

    fn state_labels(&self) -> Vec<String> {
        (0..self.state_dim()).map(|i| format!("x{i}")).collect()
    }

    fn aux_labels(&self) -> Vec<String> {
        (0..self.aux_dim()).map(|i| format!("eta{i}")).collect()
    }

    fn input_labels(&self) -> Vec<String> {
        (0..self.input_dim()).map(|i| format!("u{i}")).collect()
    }

    /// Central-difference Jacobian `∂F/∂x`.
    fn jacobian(&self, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>, SimError> {
        let n = self.state_dim();
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for j in 0..n {
            let h = 1e-6 * (1.0 + x[j].abs());
            xp[j] = x[j] + h;
            self.rhs(&xp, u, &mut fp)?;
            xp[j] = x[j] - h;
            self.rhs(&xp, u, &mut fm)?;
            xp[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        Ok(jac)
    }
}

/// Closure-backed dynamics without auxiliary outputs.
pub struct FnDynamics<F> {
    pub states: usize,
    pub inputs: usize,
    pub f: F,
}

impl<F> Dynamics for FnDynamics<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Sync,
{
    fn state_dim(&self) -> usize {
        self.states
    }

    fn input_dim(&self) -> usize {
        self.inputs
    }

    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), SimError> {
        (self.f)(x, u, dx);
        Ok(())
    }
}

/// Ground-truth dynamics of a network model.
///
/// The state vector is the model's storage states in state order, followed by
/// one integral state per IL2 integral. Auxiliary outputs are every
/// auxiliary variable of the observable plan, causal or not.
#[derive(Debug, Clone)]
pub struct NetworkOde {
    assignment: CausalAssignment,
    elements: Vec<Element>,
    n_model_states: usize,
    integrals: Vec<VarId>,
    aux_vars: Vec<VarId>,
    state_labels: Vec<String>,
    aux_labels: Vec<String>,
}

/// Build the state equations of `model` under `assignment`.
pub fn derive_ode(model: &NetworkModel, assignment: &CausalAssignment) -> NetworkOde {
    let plan = classify_observables(model, assignment);
    NetworkOde::new(model, assignment, &plan, None)
}

impl NetworkOde {
    pub fn new(
        model: &NetworkModel,
        assignment: &CausalAssignment,
        plan: &ObservablePlan,
        il2: Option<&Il2Plan>,
    ) -> Self {
        let integrals: Vec<VarId> = il2.map(|p| p.integrals.iter().map(|s| s.var).collect()).unwrap_or_default();
        let mut state_labels = model.state_order.clone();
        if let Some(p) = il2 {
            state_labels.extend(p.integrals.iter().map(|s| s.label.clone()));
        }
        Self {
            assignment: assignment.clone(),
            elements: model.elements.clone(),
            n_model_states: model.state_order.len(),
            integrals,
            aux_vars: plan.aux.iter().map(|a| a.var).collect(),
            state_labels,
            aux_labels: plan.aux_labels(),
        }
    }

    /// Parse-to-dynamics shortcut: causality, plan and (optionally) IL2 integrals.
    pub fn from_model(model: &NetworkModel, with_il2: bool) -> Result<Self, CausalityError> {
        let assignment = assign_causality(model)?;
        let plan = classify_observables(model, &assignment);
        let il2 = with_il2.then(|| crate::causality::apply_il2(&assignment, &plan));
        Ok(Self::new(model, &assignment, &plan, il2.as_ref()))
    }

    pub fn model_state_dim(&self) -> usize {
        self.n_model_states
    }

    pub fn assignment(&self) -> &CausalAssignment {
        &self.assignment
    }

    /// Execute the evaluation plan, filling every junction variable.
    pub fn evaluate(&self, x: &[f64], u: &[f64], vars: &mut [f64]) -> Result<(), SimError> {
        for step in &self.assignment.order {
            let value = match &step.rule {
                Rule::Source { input } => u[*input],
                Rule::StateLaw { element, state } => {
                    let e = &self.elements[*element];
                    let law = e.law.as_ref().expect("storage law");
                    law.eval(x[*state]).map_err(|source| SimError::Eval { element: e.id.clone(), source })?
                }
                Rule::Law { element, arg, inverse } => self.resistor(*element, vars[arg.0], *inverse)?,
                Rule::Copy(v) => vars[v.0],
                Rule::Balance(terms) => terms.iter().map(|&(c, v)| c * vars[v.0]).sum(),
            };
            vars[step.target.0] = value;
        }
        Ok(())
    }

    fn resistor(&self, element: usize, arg: f64, inverse: bool) -> Result<f64, SimError> {
        let e = &self.elements[element];
        let (direct, other): (Option<&ConstitutiveExpr>, Option<&ConstitutiveExpr>) = if inverse {
            (e.inverse.as_ref(), e.law.as_ref())
        } else {
            (e.law.as_ref(), e.inverse.as_ref())
        };
        if let Some(law) = direct {
            return law.eval(arg).map_err(|source| SimError::Eval { element: e.id.clone(), source });
        }
        let law = other.expect("validated resistor has a law");
        invert_law_auto(law, arg, INVERT_TOL * arg.abs().max(1.0))
            .map_err(|source| SimError::Invert { element: e.id.clone(), source })
    }

    fn scratch(&self) -> Vec<f64> {
        vec![0.0; self.assignment.labels.len()]
    }
}

impl Dynamics for NetworkOde {
    fn state_dim(&self) -> usize {
        self.n_model_states + self.integrals.len()
    }

    fn input_dim(&self) -> usize {
        self.assignment.source_ids.len()
    }

    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), SimError> {
        let mut vars = self.scratch();
        self.evaluate(x, u, &mut vars)?;
        for (d, v) in dx.iter_mut().zip(&self.assignment.state_derivatives) {
            *d = vars[v.0];
        }
        for (d, v) in dx[self.n_model_states..].iter_mut().zip(&self.integrals) {
            *d = vars[v.0];
        }
        Ok(())
    }

    fn aux_dim(&self) -> usize {
        self.aux_vars.len()
    }

    fn aux(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), SimError> {
        let mut vars = self.scratch();
        self.evaluate(x, u, &mut vars)?;
        for (o, v) in out.iter_mut().zip(&self.aux_vars) {
            *o = vars[v.0];
        }
        Ok(())
    }

    fn state_labels(&self) -> Vec<String> {
        self.state_labels.clone()
    }

    fn aux_labels(&self) -> Vec<String> {
        self.aux_labels.clone()
    }

    fn input_labels(&self) -> Vec<String> {
        self.assignment.source_ids.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::parse_model;

    const EQ7: &str = "\
[elements]
mass   inertial   law=\"p^3\"
spring capacitive law=\"sgn(q)*q^2\"
damper resistive  inverse=\"sgn(e)*e^4\"
[sources]
u effort
[junctions]
drive loop members=+u,-damper,-link
link  node members=+drive,-spring,-mass
[states]
mass
spring
";

    fn rhs(ode: &NetworkOde, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; ode.state_dim()];
        ode.rhs(x, u, &mut dx).unwrap();
        dx
    }

    #[test]
    fn eq7_right_hand_side() {
        let model = parse_model(EQ7).unwrap();
        let ode = derive_ode(&model, &assign_causality(&model).unwrap());
        let phi_c = |q: f64| q.signum() * q * q;
        let phi_r = |e: f64| e.signum() * e.powi(4);
        for &(p, q, u) in &[(0.3, -0.4, 1.0), (-1.2, 0.7, -0.5), (0.0, 0.0, 0.25)] {
            let dx = rhs(&ode, &[p, q], &[u]);
            assert!((dx[0] - phi_c(q)).abs() < 1e-12);
            assert!((dx[1] - (phi_r(u - phi_c(q)) - p * p * p)).abs() < 1e-12);
        }
    }

    #[test]
    fn eq6_uses_numeric_inverse_when_needed() {
        // only the forward law is supplied; the flow must come from bisection
        let model = parse_model(
            "[elements]\nspring capacitive law=\"q^3+q\"\ndamper resistive law=\"f^3+2*f\"\n\
             [sources]\nu effort\n[junctions]\nj loop members=+u,-spring,-damper\n",
        )
        .unwrap();
        let ode = derive_ode(&model, &assign_causality(&model).unwrap());
        let x = 0.4;
        let e = 1.5 - (x * x * x + x);
        let f = rhs(&ode, &[x], &[1.5])[0];
        assert!((f * f * f + 2.0 * f - e).abs() < 1e-9);
    }

    #[test]
    fn linear_msd_matches_hand_derivation() {
        // m = 2, k = 4, b = 0.5: ṗ = u - k q - b p/m, q̇ = p/m
        let model = parse_model(
            "[elements]\nm inertial law=\"0.5*p\"\nk capacitive law=\"4*q\"\nb resistive law=\"0.5*f\"\n\
             [sources]\nu effort\n[junctions]\nj loop members=+u,-m,-k,-b\n[states]\nm\nk\n",
        )
        .unwrap();
        let ode = derive_ode(&model, &assign_causality(&model).unwrap());
        let a = ode.jacobian(&[0.1, -0.2], &[0.0]).unwrap();
        let expected = [[-0.25, -4.0], [0.5, 0.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((a[(i, j)] - expected[i][j]).abs() < 1e-8, "{a}");
            }
        }
        let dx = rhs(&ode, &[0.0, 0.0], &[1.0]);
        assert_eq!(dx, vec![1.0, 0.0]);
    }

    #[test]
    fn il2_integral_state_tracks_anticausal_flow() {
        let model = parse_model(EQ7).unwrap();
        let ode = NetworkOde::from_model(&model, true).unwrap();
        assert_eq!(ode.state_labels(), vec!["mass", "spring", "int_f_damper"]);
        let dx = rhs(&ode, &[0.2, 0.5, 3.0], &[1.0]);
        let mut aux = vec![0.0; ode.aux_dim()];
        ode.aux(&[0.2, 0.5, 3.0], &[1.0], &mut aux).unwrap();
        let idx = ode.aux_labels().iter().position(|l| l == "f_damper").unwrap();
        assert_eq!(dx[2], aux[idx]);
    }
}
