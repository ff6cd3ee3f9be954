//! Autonomous ODE problems `u' = f(u)` and their reference solutions.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use crate::error::{ensure_positive, Error, Result};
use crate::linalg::{self, mat_exp, Matrix};

/// A point in state space.
#[derive(Clone, PartialEq, Default)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        linalg::norm2(&self.0)
    }

    pub fn norm_sq(&self) -> f64 {
        linalg::dot(&self.0, &self.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `self + s·dir`
    pub fn add_scaled(&self, s: f64, dir: &[f64]) -> Self {
        Self(self.0.iter().zip(dir).map(|(x, d)| x + s * d).collect())
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

impl Deref for StateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for StateVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for StateVector {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl fmt::Debug for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// `out ← field(u)`
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `(u₀, t) ↦ u(t)`
pub type ExactSolution = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;

/// An autonomous ODE `u' = f(u)`.
#[derive(Clone)]
pub struct OdeProblem {
    pub name: String,
    pub dim: usize,
    pub f: VectorField,
    /// `u'' = Jf(u)·f(u)`, needed by the second-order dynamics.
    pub jf_f: Option<VectorField>,
    pub exact: Option<ExactSolution>,
    pub lipschitz_hint: Option<f64>,
}

impl fmt::Debug for OdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("has_jf_f", &self.jf_f.is_some())
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl OdeProblem {
    pub fn new(name: impl Into<String>, dim: usize, f: VectorField) -> Self {
        Self { name: name.into(), dim, f, jf_f: None, exact: None, lipschitz_hint: None }
    }

    pub fn with_second_derivative(mut self, jf_f: VectorField) -> Self {
        self.jf_f = Some(jf_f);
        self
    }

    pub fn with_exact(mut self, exact: ExactSolution) -> Self {
        self.exact = Some(exact);
        self
    }

    pub fn rhs(&self, u: &[f64]) -> StateVector {
        let mut out = vec![0.0; self.dim];
        (self.f)(u, &mut out);
        StateVector(out)
    }

    pub fn second_derivative(&self, u: &[f64]) -> Result<StateVector> {
        let jf_f = self.jf_f.as_ref().ok_or(Error::Capability("second derivative field Jf·f"))?;
        let mut out = vec![0.0; self.dim];
        jf_f(u, &mut out);
        Ok(StateVector(out))
    }

    pub fn check_state(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim {
            return Err(Error::Dimension(format!(
                "problem '{}' has dimension {}, state has {}",
                self.name,
                self.dim,
                u.len()
            )));
        }
        Ok(())
    }

    /// `u' = 0`
    pub fn zero(dim: usize) -> Self {
        let zero: VectorField = Arc::new(|_, out: &mut [f64]| out.fill(0.0));
        Self::new("zero", dim, zero.clone()).with_second_derivative(zero).with_exact(Arc::new(|u0, _| u0.to_vec()))
    }

    /// The logistic equation `u' = (1 − u)u`.
    pub fn logistic() -> Self {
        let f: VectorField = Arc::new(|u, out: &mut [f64]| out[0] = (1.0 - u[0]) * u[0]);
        // d/dt[(1−u)u] = (1 − 2u)(1 − u)u
        let jf_f: VectorField = Arc::new(|u, out: &mut [f64]| out[0] = (1.0 - 2.0 * u[0]) * (1.0 - u[0]) * u[0]);
        let exact: ExactSolution = Arc::new(|u0, t| {
            let c = u0[0];
            vec![c / (c + (1.0 - c) * (-t).exp())]
        });
        let mut p = Self::new("logistic", 1, f).with_second_derivative(jf_f).with_exact(exact);
        p.lipschitz_hint = Some(1.0);
        p
    }
}

/// `u' = Au`, `u(0) = u₀`.
#[derive(Debug, Clone)]
pub struct LinearOde {
    pub a: Matrix,
    pub u0: StateVector,
}

impl LinearOde {
    pub fn new(a: Matrix, u0: impl Into<StateVector>) -> Result<Self> {
        let u0 = u0.into();
        if !a.is_square() || a.rows() != u0.len() {
            return Err(Error::Dimension(format!(
                "linear ODE needs square A matching u0: A is {}x{}, u0 has {}",
                a.rows(),
                a.cols(),
                u0.len()
            )));
        }
        Ok(Self { a, u0 })
    }

    /// The scalar model problem `u' = −a·u`.
    pub fn scalar_decay(a: f64, u0: f64) -> Self {
        Self { a: Matrix::diag(&[-a]), u0: vec![u0].into() }
    }

    /// Underdamped oscillator `u₁' = u₂, u₂' = −u₁ − u₂`, `u(0) = (1, 0)`.
    pub fn oscillator() -> Self {
        Self { a: Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, -1.0]]).expect("static matrix"), u0: vec![1.0, 0.0].into() }
    }

    pub fn dim(&self) -> usize {
        self.u0.len()
    }

    /// The problem `u' = Au` with `Jf·f = A²u` and the matrix-exponential
    /// solution attached.
    pub fn problem(&self) -> OdeProblem {
        let a = Arc::new(self.a.clone());
        let a2 = Arc::new(self.a.mul(&self.a).expect("square"));
        let fa = a.clone();
        let f: VectorField = Arc::new(move |u, out: &mut [f64]| matvec_into(&fa, u, out));
        let jf_f: VectorField = Arc::new(move |u, out: &mut [f64]| matvec_into(&a2, u, out));
        let ea = a.clone();
        let exact: ExactSolution = Arc::new(move |u0, t| {
            mat_exp(&ea, t).and_then(|e| e.mul_vec(u0)).expect("exact solution of square system")
        });
        let mut p = OdeProblem::new("linear", self.dim(), f).with_second_derivative(jf_f).with_exact(exact);
        p.lipschitz_hint = linalg::spectral_norm(&a).ok();
        p
    }
}

fn matvec_into(a: &Matrix, u: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = linalg::dot(a.row(i), u);
    }
}

/// `exp(tA)·u₀`
pub fn exact_linear_solution(p: &LinearOde, t: f64) -> Result<StateVector> {
    if !(t >= 0.0) {
        return Err(Error::Parameter(format!("time must be nonnegative, got {t}")));
    }
    Ok(mat_exp(&p.a, t)?.mul_vec(&p.u0)?.into())
}

/// A fixed-step RK4 solution with cubic Hermite dense output.
#[derive(Debug, Clone)]
pub struct DensePath {
    pub times: Vec<f64>,
    pub values: Vec<StateVector>,
    pub derivatives: Vec<StateVector>,
}

impl DensePath {
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn eval(&self, t: f64) -> Result<StateVector> {
        let horizon = self.horizon();
        if !(t >= 0.0 && t <= horizon) {
            return Err(Error::Range { t, horizon });
        }
        let k = match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(k) => return Ok(self.values[k].clone()),
            Err(k) => k - 1,
        };
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let dt = t1 - t0;
        let s = (t - t0) / dt;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (y0, y1) = (&self.values[k], &self.values[k + 1]);
        let (d0, d1) = (&self.derivatives[k], &self.derivatives[k + 1]);
        Ok((0..y0.len())
            .map(|i| h00 * y0[i] + h10 * dt * d0[i] + h01 * y1[i] + h11 * dt * d1[i])
            .collect::<Vec<_>>()
            .into())
    }

    pub fn last(&self) -> &StateVector {
        self.values.last().expect("nonempty path")
    }
}

/// Classical fourth-order Runge–Kutta at a fixed step; the last step is
/// shortened to land on `t_end`.
pub fn reference_solve(p: &OdeProblem, u0: &[f64], t_end: f64, step: f64) -> Result<DensePath> {
    p.check_state(u0)?;
    ensure_positive("step", step)?;
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::Parameter(format!("t_end must be nonnegative, got {t_end}")));
    }
    let d = p.dim;
    let n_steps = (t_end / step).ceil() as usize;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut values = Vec::with_capacity(n_steps + 1);
    let mut derivs = Vec::with_capacity(n_steps + 1);

    let mut u = u0.to_vec();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];

    (p.f)(&u, &mut k1);
    times.push(0.0);
    values.push(StateVector(u.clone()));
    derivs.push(StateVector(k1.clone()));

    for i in 0..n_steps {
        let t0 = i as f64 * step;
        let t1 = if i + 1 == n_steps { t_end } else { (i + 1) as f64 * step };
        let dt = t1 - t0;
        for j in 0..d {
            tmp[j] = u[j] + 0.5 * dt * k1[j];
        }
        (p.f)(&tmp, &mut k2);
        for j in 0..d {
            tmp[j] = u[j] + 0.5 * dt * k2[j];
        }
        (p.f)(&tmp, &mut k3);
        for j in 0..d {
            tmp[j] = u[j] + dt * k3[j];
        }
        (p.f)(&tmp, &mut k4);
        for j in 0..d {
            u[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        (p.f)(&u, &mut k1);
        if !u.iter().chain(&k1).all(|x| x.is_finite()) {
            return Err(Error::Divergence { index: i + 1, time: t1 });
        }
        times.push(t1);
        values.push(StateVector(u.clone()));
        derivs.push(StateVector(k1.clone()));
    }
    Ok(DensePath { times, values, derivatives: derivs })
}

/// Problems addressable by name from the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NamedProblem {
    /// `u' = −a·u`
    Linear1d {
        a: f64,
    },
    Logistic,
    Oscillator,
}

impl NamedProblem {
    pub fn parse(name: &str, a: f64) -> Result<Self> {
        match name {
            "linear1d" => Ok(Self::Linear1d { a }),
            "logistic" => Ok(Self::Logistic),
            "oscillator" => Ok(Self::Oscillator),
            other => {
                Err(Error::Parameter(format!("unknown problem '{other}' (expected linear1d, logistic or oscillator)")))
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Linear1d { .. } => "linear1d",
            Self::Logistic => "logistic",
            Self::Oscillator => "oscillator",
        }
    }

    pub fn default_u0(&self) -> StateVector {
        match self {
            Self::Linear1d { .. } => vec![1.0].into(),
            Self::Logistic => vec![0.25].into(),
            Self::Oscillator => vec![1.0, 0.0].into(),
        }
    }

    pub fn linear(&self) -> Option<LinearOde> {
        match *self {
            Self::Linear1d { a } => Some(LinearOde::scalar_decay(a, 1.0)),
            Self::Oscillator => Some(LinearOde::oscillator()),
            Self::Logistic => None,
        }
    }

    pub fn problem(&self) -> OdeProblem {
        match self {
            Self::Logistic => OdeProblem::logistic(),
            _ => {
                let mut p = self.linear().expect("linear problem").problem();
                p.name = self.label().to_string();
                p
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_exact_examples() {
        let p = LinearOde::scalar_decay(1.0, 1.0);
        assert_eq!(exact_linear_solution(&p, 0.0).unwrap()[0], 1.0);
        assert_abs_diff_eq!(exact_linear_solution(&p, 1.0).unwrap()[0], (-1.0f64).exp(), epsilon = 1e-15);
        assert!(exact_linear_solution(&p, -1.0).is_err());
    }

    #[test]
    fn oscillator_matches_rk4_and_decays() {
        let lin = LinearOde::oscillator();
        let path = reference_solve(&lin.problem(), &lin.u0, 10.0, 1e-4).unwrap();
        let mut envelope_prev = f64::INFINITY;
        for i in 0..=20 {
            let t = i as f64 * 0.5;
            let exact = exact_linear_solution(&lin, t).unwrap();
            assert!(exact.distance(&path.eval(t).unwrap()) < 1e-10);
            // Energy u₁² + u₁u₂ + u₂² is a Lyapunov function for this system.
            let energy = exact[0] * exact[0] + exact[0] * exact[1] + exact[1] * exact[1];
            assert!(energy <= envelope_prev);
            envelope_prev = energy;
        }
    }

    #[test]
    fn semigroup_property() {
        let lin = LinearOde::oscillator();
        let (s, t) = (0.7, 1.9);
        let ut = exact_linear_solution(&lin, t).unwrap();
        let ust = exact_linear_solution(&lin, s + t).unwrap();
        let via = mat_exp(&lin.a, s).unwrap().mul_vec(&ut).unwrap();
        assert!(ust.distance(&via) < 1e-10);
    }

    #[test]
    fn zero_field_is_constant() {
        let p = OdeProblem::zero(2);
        let path = reference_solve(&p, &[0.3, -2.0], 3.0, 0.1).unwrap();
        for t in [0.0, 0.05, 1.0, 2.97, 3.0] {
            assert_eq!(&*path.eval(t).unwrap(), &[0.3, -2.0]);
        }
    }

    #[test]
    fn rk4_matches_exponential() {
        let lin = LinearOde::scalar_decay(1.0, 1.0);
        let path = reference_solve(&lin.problem(), &lin.u0, 1.0, 1e-3).unwrap();
        assert!((path.last()[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn logistic_self_convergence_is_fourth_order() {
        let p = OdeProblem::logistic();
        let end = |step: f64| reference_solve(&p, &[0.25], 5.0, step).unwrap().last()[0];
        let (a, b, c) = (end(0.1), end(0.05), end(0.025));
        let ratio = (a - b) / (b - c);
        assert!((ratio - 16.0).abs() < 1.0, "Richardson ratio {ratio}");
        let exact = (p.exact.as_ref().unwrap())(&[0.25], 5.0)[0];
        assert!((c - exact).abs() < 1e-7);
    }

    #[test]
    fn dense_output_reproduces_nodes() {
        let p = OdeProblem::logistic();
        let path = reference_solve(&p, &[0.25], 2.0, 0.1).unwrap();
        for (t, v) in path.times.iter().zip(&path.values) {
            assert_eq!(&path.eval(*t).unwrap(), v);
        }
        assert!(matches!(path.eval(2.5), Err(Error::Range { .. })));
    }

    #[test]
    fn divergence_reports_time() {
        let blowup: VectorField = Arc::new(|u, out: &mut [f64]| out[0] = u[0] * u[0]);
        let p = OdeProblem::new("blowup", 1, blowup);
        match reference_solve(&p, &[1.0], 5.0, 0.01) {
            Err(Error::Divergence { time, .. }) => assert!((0.9..=1.1).contains(&time), "blow-up time {time}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn named_problems() {
        assert_eq!(NamedProblem::parse("oscillator", 1.0).unwrap(), NamedProblem::Oscillator);
        assert!(NamedProblem::parse("lorenz", 1.0).is_err());
        let p = NamedProblem::Linear1d { a: 2.0 }.problem();
        assert_eq!(p.rhs(&[1.5])[0], -3.0);
        assert_eq!(p.second_derivative(&[1.5]).unwrap()[0], 6.0);
        let exact = p.exact.as_ref().unwrap();
        assert_abs_diff_eq!(exact(&[1.0], 0.0)[0], 1.0);
        let l = OdeProblem::logistic();
        assert_eq!(l.exact.as_ref().unwrap()(&[0.25], 0.0)[0], 0.25);
    }
}
