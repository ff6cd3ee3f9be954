//! Stochastic Euler dynamics.
//!
//! The process `(V, V̄)` moves `V` in a straight line with slope `f(V̄)` and
//! resets `V̄ ← V` at the jump times of a Poisson process whose waiting
//! times are exponential with mean `h`. Sampled at its jump times, `V` is
//! the forward Euler method with random step sizes. Paths only store the
//! jump nodes; everything in between is exact linear interpolation.

use std::sync::Arc;

use crate::error::{ensure_positive, Error, Result};
use crate::ode::{OdeProblem, StateVector};
use crate::randomness::RandomStream;

/// Node magnitude beyond which a path is declared diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e150;

/// Truncation horizon of the path distance.
pub const DC_T_MAX: f64 = 10.0;
/// Trapezoid panels of the path distance on `[0, DC_T_MAX]`.
pub const DC_PANELS: usize = 1000;

pub type ScalarFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// A test function `φ(v, v̄)` with its gradient in `v` and, optionally, in `v̄`.
#[derive(Clone)]
pub struct TestFunction {
    pub value: ScalarFn,
    pub grad_v: GradientFn,
    pub grad_vbar: Option<GradientFn>,
}

impl TestFunction {
    pub fn new(value: ScalarFn, grad_v: GradientFn) -> Self {
        Self { value, grad_v, grad_vbar: None }
    }

    pub fn with_grad_vbar(mut self, g: GradientFn) -> Self {
        self.grad_vbar = Some(g);
        self
    }

    /// `φ(v, v̄) = v[i]`
    pub fn v_component(i: usize) -> Self {
        Self::new(Arc::new(move |v, _| v[i]), Arc::new(move |v, _| unit(v.len(), i)))
            .with_grad_vbar(Arc::new(|_, vb| vec![0.0; vb.len()]))
    }

    /// `φ(v, v̄) = v̄[i]`
    pub fn vbar_component(i: usize) -> Self {
        Self::new(Arc::new(move |_, vb| vb[i]), Arc::new(|v, _| vec![0.0; v.len()]))
            .with_grad_vbar(Arc::new(move |_, vb| unit(vb.len(), i)))
    }

    /// `φ(v, v̄) = c₁‖v‖² + c₂‖v̄‖² + c₃‖v − v̄‖²`
    pub fn quadratic(c1: f64, c2: f64, c3: f64) -> Self {
        Self::new(
            Arc::new(move |v, vb| {
                v.iter().zip(vb).map(|(x, y)| c1 * x * x + c2 * y * y + c3 * (x - y) * (x - y)).sum()
            }),
            Arc::new(move |v, vb| v.iter().zip(vb).map(|(x, y)| 2.0 * c1 * x + 2.0 * c3 * (x - y)).collect()),
        )
        .with_grad_vbar(Arc::new(move |v, vb| {
            v.iter().zip(vb).map(|(x, y)| 2.0 * c2 * y - 2.0 * c3 * (x - y)).collect()
        }))
    }

    pub fn eval(&self, v: &[f64], vbar: &[f64]) -> f64 {
        (self.value)(v, vbar)
    }
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

/// A sampled path: jump times `T₀ = 0 < T₁ < …` and the node values `V(Tₖ)`.
#[derive(Debug, Clone)]
pub struct SedPath {
    pub jump_times: Vec<f64>,
    pub node_values: Vec<StateVector>,
    pub h: f64,
    pub horizon: f64,
    pub problem: OdeProblem,
    /// `f(node_values[k])`, cached for evaluation.
    slopes: Vec<StateVector>,
}

/// Runs the dynamics from `(v, v̄)` for time `t_end`, calling `on_jump` with
/// each jump time and new node. On return `v` holds `V(t_end)` and `vbar`
/// holds `V̄(t_end)`.
pub(crate) fn run_sed(
    p: &OdeProblem,
    h: f64,
    v: &mut [f64],
    vbar: &mut [f64],
    t_end: f64,
    stream: &mut RandomStream,
    mut on_jump: impl FnMut(f64, &[f64], &[f64]),
) -> Result<usize> {
    let d = p.dim;
    let mut slope = vec![0.0; d];
    (p.f)(vbar, &mut slope);
    let mut t = 0.0;
    let mut jumps = 0usize;
    loop {
        let next = t + stream.exponential_unchecked(h);
        if next > t_end {
            let dt = t_end - t;
            for i in 0..d {
                v[i] += dt * slope[i];
            }
            return Ok(jumps);
        }
        let dt = next - t;
        for i in 0..d {
            v[i] += dt * slope[i];
        }
        t = next;
        jumps += 1;
        if v.iter().any(|x| !(x.abs() <= DIVERGENCE_THRESHOLD)) {
            return Err(Error::Divergence { index: jumps, time: t });
        }
        vbar.copy_from_slice(v);
        (p.f)(vbar, &mut slope);
        on_jump(t, v, &slope);
    }
}

/// Samples one path on `[0, t_end]` started at `V(0) = V̄(0) = u₀`.
pub fn simulate_sed(p: &OdeProblem, u0: &[f64], h: f64, t_end: f64, stream: &mut RandomStream) -> Result<SedPath> {
    p.check_state(u0)?;
    ensure_positive("h", h)?;
    ensure_positive("t_end", t_end)?;
    let mut jump_times = vec![0.0];
    let mut node_values = vec![StateVector::from(u0)];
    let mut slopes = vec![p.rhs(u0)];
    let mut v = u0.to_vec();
    let mut vbar = u0.to_vec();
    run_sed(p, h, &mut v, &mut vbar, t_end, stream, |t, node, slope| {
        jump_times.push(t);
        node_values.push(node.into());
        slopes.push(slope.into());
    })?;
    Ok(SedPath { jump_times, node_values, h, horizon: t_end, problem: p.clone(), slopes })
}

/// Samples `(V(τ), V̄(τ))` started from an arbitrary `(v, v̄)`.
pub fn sed_state_at(
    p: &OdeProblem,
    v: &[f64],
    vbar: &[f64],
    h: f64,
    tau: f64,
    stream: &mut RandomStream,
) -> Result<(StateVector, StateVector)> {
    p.check_state(v)?;
    p.check_state(vbar)?;
    ensure_positive("h", h)?;
    let mut v = v.to_vec();
    let mut vbar = vbar.to_vec();
    run_sed(p, h, &mut v, &mut vbar, tau, stream, |_, _, _| {})?;
    Ok((v.into(), vbar.into()))
}

impl SedPath {
    /// Index of the segment containing `t`: the largest `k` with `Tₖ ≤ t`.
    pub fn segment_index(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::Range { t, horizon: self.horizon });
        }
        Ok(self.jump_times.partition_point(|&x| x <= t) - 1)
    }

    /// The last jump time not after `t`.
    pub fn last_jump_before(&self, t: f64) -> Result<f64> {
        Ok(self.jump_times[self.segment_index(t)?])
    }

    pub fn end_value(&self) -> StateVector {
        self.eval(self.horizon).expect("horizon is covered").0
    }
}

/// `(V(t), V̄(t))`, right-continuous at jump times.
pub fn eval_sed(path: &SedPath, t: f64) -> Result<(StateVector, StateVector)> {
    path.eval(t)
}

impl SedPath {
    pub fn eval(&self, t: f64) -> Result<(StateVector, StateVector)> {
        let k = self.segment_index(t)?;
        let node = &self.node_values[k];
        let v = node.add_scaled(t - self.jump_times[k], &self.slopes[k]);
        Ok((v, node.clone()))
    }
}

/// The random-timestep Euler iterates `V̂ₖ = V(Tₖ)`.
pub fn jump_chain(path: &SedPath) -> &[StateVector] {
    &path.node_values
}

/// `𝒜ₕφ(v, v̄) = ⟨∇ᵥφ(v, v̄), f(v̄)⟩ + (φ(v, v) − φ(v, v̄))/h`
pub fn apply_generator_sed(p: &OdeProblem, h: f64, phi: &TestFunction, v: &[f64], vbar: &[f64]) -> Result<f64> {
    ensure_positive("h", h)?;
    p.check_state(v)?;
    p.check_state(vbar)?;
    let flow: f64 = (phi.grad_v)(v, vbar).iter().zip(p.rhs(vbar).iter()).map(|(g, f)| g * f).sum();
    let jump = (phi.eval(v, v) - phi.eval(v, vbar)) / h;
    Ok(flow + jump)
}

/// `∫₀^T e^{−t} min{1, sup_{s≤t} ‖x(s) − y(s)‖} dt` by the composite
/// trapezoid rule on `panels` panels; the running supremum is also updated at
/// every point of `breakpoints`.
pub fn truncated_dc_distance(
    x: impl Fn(f64) -> StateVector,
    y: impl Fn(f64) -> StateVector,
    breakpoints: &[f64],
    t_max: f64,
    panels: usize,
) -> f64 {
    let dt = t_max / panels as f64;
    let mut extra: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > 0.0 && b < t_max).collect();
    extra.sort_by(f64::total_cmp);
    let mut next_extra = 0;

    let dist = |t: f64| x(t).distance(&y(t));
    let mut sup = dist(0.0);
    let mut prev = (-0.0f64).exp() * sup.min(1.0);
    let mut integral = 0.0;
    for i in 1..=panels {
        let t = if i == panels { t_max } else { i as f64 * dt };
        while next_extra < extra.len() && extra[next_extra] <= t {
            sup = sup.max(dist(extra[next_extra]));
            next_extra += 1;
        }
        sup = sup.max(dist(t));
        let g = (-t).exp() * sup.min(1.0);
        integral += 0.5 * dt * (prev + g);
        prev = g;
    }
    integral
}
