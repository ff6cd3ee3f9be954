//! Second-order stochastic Euler dynamics.
//!
//! Between jumps `Y₁'' = Jf(Ȳ)·f(Ȳ)` is held constant, so `Y₁` is a chain of
//! quadratic pieces with `Y₂ = Y₁'` continuous across jumps. At every jump
//! `Ȳ ← Y₁`. Started from `Y₁ = Ȳ = u₀`, `Y₂ = f(u₀)`.

use std::sync::Arc;

use crate::error::{ensure_positive, Error, Result};
use crate::ode::{OdeProblem, StateVector};
use crate::randomness::RandomStream;
use crate::sed::DIVERGENCE_THRESHOLD;

pub type Scalar3Fn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
pub type Gradient3Fn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// A test function `φ(y₁, y₂, ȳ)` with gradients in `y₁` and `y₂`.
#[derive(Clone)]
pub struct Sed2TestFunction {
    pub value: Scalar3Fn,
    pub grad_y1: Gradient3Fn,
    pub grad_y2: Gradient3Fn,
}

impl Sed2TestFunction {
    pub fn eval(&self, y1: &[f64], y2: &[f64], ybar: &[f64]) -> f64 {
        (self.value)(y1, y2, ybar)
    }

    pub fn y1_component(i: usize) -> Self {
        Self {
            value: Arc::new(move |y1, _, _| y1[i]),
            grad_y1: Arc::new(move |y1, _, _| unit(y1.len(), i)),
            grad_y2: Arc::new(|_, y2, _| vec![0.0; y2.len()]),
        }
    }

    pub fn y2_component(i: usize) -> Self {
        Self {
            value: Arc::new(move |_, y2, _| y2[i]),
            grad_y1: Arc::new(|y1, _, _| vec![0.0; y1.len()]),
            grad_y2: Arc::new(move |_, y2, _| unit(y2.len(), i)),
        }
    }

    pub fn ybar_component(i: usize) -> Self {
        Self {
            value: Arc::new(move |_, _, yb| yb[i]),
            grad_y1: Arc::new(|y1, _, _| vec![0.0; y1.len()]),
            grad_y2: Arc::new(|_, y2, _| vec![0.0; y2.len()]),
        }
    }

    /// `‖y₁ − ȳ‖² + ‖y₂‖²`
    pub fn gap_and_speed() -> Self {
        Self {
            value: Arc::new(|y1, y2, yb| {
                y1.iter().zip(yb).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + y2.iter().map(|x| x * x).sum::<f64>()
            }),
            grad_y1: Arc::new(|y1, _, yb| y1.iter().zip(yb).map(|(a, b)| 2.0 * (a - b)).collect()),
            grad_y2: Arc::new(|_, y2, _| y2.iter().map(|x| 2.0 * x).collect()),
        }
    }
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

#[derive(Debug, Clone)]
pub struct Sed2Path {
    pub jump_times: Vec<f64>,
    pub node_y1: Vec<StateVector>,
    pub node_y2: Vec<StateVector>,
    pub h: f64,
    pub horizon: f64,
    pub problem: OdeProblem,
    /// `Jf·f` at each segment's left node.
    accel: Vec<StateVector>,
}

/// Runs the dynamics from `(y₁, y₂, ȳ)` for time `t_end`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_sed2(
    p: &OdeProblem,
    h: f64,
    y1: &mut [f64],
    y2: &mut [f64],
    ybar: &mut [f64],
    t_end: f64,
    stream: &mut RandomStream,
    mut on_jump: impl FnMut(f64, &[f64], &[f64], &[f64]),
) -> Result<usize> {
    let jf_f = p.jf_f.as_ref().ok_or(Error::Capability("second derivative field Jf·f"))?;
    let d = p.dim;
    let mut acc = vec![0.0; d];
    jf_f(ybar, &mut acc);
    let mut t = 0.0;
    let mut jumps = 0usize;
    let advance = |y1: &mut [f64], y2: &mut [f64], acc: &[f64], s: f64| {
        let half_s2 = 0.5 * s * s;
        for i in 0..d {
            y1[i] += s * y2[i] + half_s2 * acc[i];
            y2[i] += s * acc[i];
        }
    };
    loop {
        let next = t + stream.exponential_unchecked(h);
        if next > t_end {
            advance(y1, y2, &acc, t_end - t);
            return Ok(jumps);
        }
        advance(y1, y2, &acc, next - t);
        t = next;
        jumps += 1;
        if y1.iter().chain(y2.iter()).any(|x| !(x.abs() <= DIVERGENCE_THRESHOLD)) {
            return Err(Error::Divergence { index: jumps, time: t });
        }
        ybar.copy_from_slice(y1);
        jf_f(ybar, &mut acc);
        on_jump(t, y1, y2, &acc);
    }
}

pub fn simulate_sed2(p: &OdeProblem, u0: &[f64], h: f64, t_end: f64, stream: &mut RandomStream) -> Result<Sed2Path> {
    p.check_state(u0)?;
    ensure_positive("h", h)?;
    ensure_positive("t_end", t_end)?;
    let first_accel = p.second_derivative(u0)?;
    let mut y1 = u0.to_vec();
    let mut y2 = p.rhs(u0).into_inner();
    let mut ybar = u0.to_vec();
    let mut jump_times = vec![0.0];
    let mut node_y1 = vec![StateVector::from(u0)];
    let mut node_y2 = vec![StateVector::from(y2.clone())];
    let mut accel = vec![first_accel];
    run_sed2(p, h, &mut y1, &mut y2, &mut ybar, t_end, stream, |t, a, b, c| {
        jump_times.push(t);
        node_y1.push(a.into());
        node_y2.push(b.into());
        accel.push(c.into());
    })?;
    Ok(Sed2Path { jump_times, node_y1, node_y2, h, horizon: t_end, problem: p.clone(), accel })
}

/// Samples `(Y₁(τ), Y₂(τ), Ȳ(τ))` from an arbitrary starting state.
pub fn sed2_state_at(
    p: &OdeProblem,
    start: (&[f64], &[f64], &[f64]),
    h: f64,
    tau: f64,
    stream: &mut RandomStream,
) -> Result<(StateVector, StateVector, StateVector)> {
    ensure_positive("h", h)?;
    for s in [start.0, start.1, start.2] {
        p.check_state(s)?;
    }
    let (mut y1, mut y2, mut yb) = (start.0.to_vec(), start.1.to_vec(), start.2.to_vec());
    run_sed2(p, h, &mut y1, &mut y2, &mut yb, tau, stream, |_, _, _, _| {})?;
    Ok((y1.into(), y2.into(), yb.into()))
}

impl Sed2Path {
    pub fn segment_index(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::Range { t, horizon: self.horizon });
        }
        Ok(self.jump_times.partition_point(|&x| x <= t) - 1)
    }

    /// `(Y₁(t), Y₂(t), Ȳ(t))`
    pub fn eval(&self, t: f64) -> Result<(StateVector, StateVector, StateVector)> {
        let k = self.segment_index(t)?;
        let s = t - self.jump_times[k];
        let (y1, y2, c) = (&self.node_y1[k], &self.node_y2[k], &self.accel[k]);
        let v1: Vec<f64> = (0..y1.len()).map(|i| y1[i] + s * y2[i] + 0.5 * s * s * c[i]).collect();
        let v2: Vec<f64> = (0..y1.len()).map(|i| y2[i] + s * c[i]).collect();
        Ok((v1.into(), v2.into(), y1.clone()))
    }

    /// One-sided limits `(Y₁(Tₖ₊₁−), Y₂(Tₖ₊₁−))` from segment `k`.
    pub fn left_limit(&self, k: usize) -> (StateVector, StateVector) {
        let s = self.jump_times[k + 1] - self.jump_times[k];
        let (y1, y2, c) = (&self.node_y1[k], &self.node_y2[k], &self.accel[k]);
        let half_s2 = 0.5 * s * s;
        let v1: Vec<f64> = (0..y1.len()).map(|i| y1[i] + (s * y2[i] + half_s2 * c[i])).collect();
        let v2: Vec<f64> = (0..y1.len()).map(|i| y2[i] + s * c[i]).collect();
        (v1.into(), v2.into())
    }

    pub fn end_value(&self) -> StateVector {
        self.eval(self.horizon).expect("horizon is covered").0
    }
}

pub fn eval_sed2(path: &Sed2Path, t: f64) -> Result<(StateVector, StateVector, StateVector)> {
    path.eval(t)
}

/// `𝒜ₕ²φ = ⟨∇_{y₁}φ, y₂⟩ + ⟨∇_{y₂}φ, Jf(ȳ)f(ȳ)⟩ + (φ(y₁, y₂, y₁) − φ(y₁, y₂, ȳ))/h`
pub fn apply_generator_sed2(
    p: &OdeProblem,
    h: f64,
    phi: &Sed2TestFunction,
    y1: &[f64],
    y2: &[f64],
    ybar: &[f64],
) -> Result<f64> {
    ensure_positive("h", h)?;
    for s in [y1, y2, ybar] {
        p.check_state(s)?;
    }
    let acc = p.second_derivative(ybar)?;
    let g1: f64 = (phi.grad_y1)(y1, y2, ybar).iter().zip(y2).map(|(g, v)| g * v).sum();
    let g2: f64 = (phi.grad_y2)(y1, y2, ybar).iter().zip(acc.iter()).map(|(g, a)| g * a).sum();
    Ok(g1 + g2 + (phi.eval(y1, y2, y1) - phi.eval(y1, y2, ybar)) / h)
}
