//! Deterministic Euler dynamics
//!
//! ```text
//! w'(t) = f(w̄(t)),   w̄'(t) = (w(t) − w̄(t))/h,   w(0) = w̄(0) = u₀
//! ```
//!
//! For `f(u) = Au` the pair solves `(w, w̄)' = B (w, w̄)` with the block
//! matrix from [`build_b`], so the exact flow is `exp(tB)`.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{ensure_positive, Error, Result};
use crate::linalg::{build_b, mat_exp, spectral_norm};
use crate::ode::{reference_solve, DensePath, LinearOde, OdeProblem, StateVector, VectorField};
use crate::sed::TestFunction;

/// Distance from the double root `4ah = 1` below which the confluent
/// formula is used.
const CONFLUENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DedState {
    pub w: StateVector,
    pub wbar: StateVector,
    pub t: f64,
}

/// `(w(t), w̄(t)) = exp(tB)(u₀, u₀)`
pub fn ded_linear(p: &LinearOde, h: f64, t: f64) -> Result<DedState> {
    ensure_positive("h", h)?;
    if !(t >= 0.0) {
        return Err(Error::Parameter(format!("time must be nonnegative, got {t}")));
    }
    let d = p.dim();
    let b = build_b(&p.a, h)?;
    let mut x0 = p.u0.to_vec();
    x0.extend_from_slice(&p.u0);
    let x = mat_exp(&b, t)?.mul_vec(&x0)?;
    Ok(DedState { w: x[..d].to_vec().into(), wbar: x[d..].to_vec().into(), t })
}

/// Closed-form solution for `f(u) = −a·u`.
///
/// With `s = √(1 − 4ah)` (principal branch, complex when `4ah > 1`):
///
/// ```text
/// w(t) = u₀/(2s) [(1 − 2ah + s) e^{−t(1−s)/(2h)} + (2ah + s − 1) e^{−t(1+s)/(2h)}]
/// w̄(t) = u₀/(2s) [(1 + s) e^{−t(1−s)/(2h)} + (s − 1) e^{−t(1+s)/(2h)}]
/// ```
///
/// At the double root `4ah = 1` the limits are
/// `w = u₀e^{−t/(2h)}(1 + t/(2h) − at)` and `w̄ = u₀e^{−t/(2h)}(1 + t/(2h))`.
pub fn ded_analytic_1d(a: f64, u0: f64, h: f64, t: f64) -> Result<(f64, f64)> {
    ensure_positive("a", a)?;
    ensure_positive("h", h)?;
    if !(t >= 0.0) {
        return Err(Error::Parameter(format!("time must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok((u0, u0));
    }
    let disc = 1.0 - 4.0 * a * h;
    if disc.abs() <= CONFLUENT_TOL {
        let decay = (-t / (2.0 * h)).exp();
        return Ok((u0 * decay * (1.0 + t / (2.0 * h) - a * t), u0 * decay * (1.0 + t / (2.0 * h))));
    }
    let one = Complex64::new(1.0, 0.0);
    let s = Complex64::new(disc, 0.0).sqrt();
    // 1 − s without cancellation for small ah.
    let one_minus_s = 4.0 * a * h / (one + s);
    let slow = (-t * one_minus_s / (2.0 * h)).exp();
    let fast = (-t * (one + s) / (2.0 * h)).exp();
    let ah2 = 2.0 * a * h;
    let w = u0 / (2.0 * s) * ((1.0 - ah2 + s) * slow + (ah2 - one_minus_s) * fast);
    let wbar = u0 / (2.0 * s) * ((one + s) * slow - one_minus_s * fast);
    for (name, z) in [("w", w), ("w̄", wbar)] {
        if z.im.abs() > 1e-9 * (1.0 + z.re.abs()) {
            return Err(Error::NumericConsistency(format!(
                "{name}(t) has imaginary residue {} at a={a}, h={h}, t={t}",
                z.im
            )));
        }
    }
    Ok((w.re, wbar.re))
}

/// Dense solution of the augmented system for a general vector field.
#[derive(Debug, Clone)]
pub struct DedPath {
    pub dim: usize,
    pub dense: DensePath,
}

impl DedPath {
    pub fn eval(&self, t: f64) -> Result<DedState> {
        let x = self.dense.eval(t)?;
        Ok(DedState { w: x[..self.dim].to_vec().into(), wbar: x[self.dim..].to_vec().into(), t })
    }
}

/// Integrates the `2d`-dimensional system with the RK4 reference engine.
pub fn ded_nonlinear(p: &OdeProblem, u0: &[f64], h: f64, t_end: f64, step: f64) -> Result<DedPath> {
    p.check_state(u0)?;
    ensure_positive("h", h)?;
    let d = p.dim;
    let f = p.f.clone();
    let aug: VectorField = Arc::new(move |x: &[f64], out: &mut [f64]| {
        let (w, wbar) = x.split_at(d);
        let (dw, dwbar) = out.split_at_mut(d);
        f(wbar, dw);
        for i in 0..d {
            dwbar[i] = (w[i] - wbar[i]) / h;
        }
    });
    let aug_problem = OdeProblem::new(format!("{}-ded", p.name), 2 * d, aug);
    let mut x0 = u0.to_vec();
    x0.extend_from_slice(u0);
    Ok(DedPath { dim: d, dense: reference_solve(&aug_problem, &x0, t_end, step)? })
}

/// `𝒜ₕᵈφ(w, w̄) = ⟨∇_w φ, f(w̄)⟩ + ⟨∇_w̄ φ, w − w̄⟩/h`
pub fn apply_generator_ded(p: &OdeProblem, h: f64, phi: &TestFunction, w: &[f64], wbar: &[f64]) -> Result<f64> {
    ensure_positive("h", h)?;
    p.check_state(w)?;
    p.check_state(wbar)?;
    let grad_wbar = phi.grad_vbar.as_ref().ok_or(Error::Capability("gradient of φ in its second argument"))?;
    let f = p.rhs(wbar);
    let flow: f64 = (phi.grad_v)(w, wbar).iter().zip(f.iter()).map(|(g, x)| g * x).sum();
    let relax: f64 = grad_wbar(w, wbar).iter().zip(w.iter().zip(wbar)).map(|(g, (a, b))| g * (a - b)).sum::<f64>() / h;
    Ok(flow + relax)
}

/// Both sides of the companion-distance and residual bounds for the
/// deterministic Euler dynamics of `u' = Au`:
///
/// ```text
/// ‖w(t) − w̄(t)‖  ≤ √2·h·‖exp(tB)‖·‖u₀‖
/// ‖w'(t) − Aw(t)‖ ≤ √2·h·‖exp(tB)‖·‖A‖·‖u₀‖
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct CompanionBoundReport {
    pub h: f64,
    pub t: f64,
    pub companion_lhs: f64,
    pub companion_rhs: f64,
    pub residual_lhs: f64,
    pub residual_rhs: f64,
    pub companion_holds: bool,
    pub residual_holds: bool,
}

pub fn companion_bound_check(p: &LinearOde, h: f64, t: f64) -> Result<CompanionBoundReport> {
    let state = ded_linear(p, h, t)?;
    let b = build_b(&p.a, h)?;
    let exp_norm = spectral_norm(&mat_exp(&b, t)?)?;
    let a_norm = spectral_norm(&p.a)?;
    let u0_norm = p.u0.norm();

    let companion_lhs = state.w.distance(&state.wbar);
    // w' = A w̄, so w' − Aw = A(w̄ − w).
    let diff: Vec<f64> = state.wbar.iter().zip(state.w.iter()).map(|(a, b)| a - b).collect();
    let residual_lhs = crate::linalg::norm2(&p.a.mul_vec(&diff)?);
    let companion_rhs = SQRT_2 * h * exp_norm * u0_norm;
    let residual_rhs = companion_rhs * a_norm;
    // Rounding slack only; both sides are computed in floating point.
    let slack = 1.0 + 1e-12;
    Ok(CompanionBoundReport {
        h,
        t,
        companion_lhs,
        companion_rhs,
        residual_lhs,
        residual_rhs,
        companion_holds: companion_lhs <= companion_rhs * slack,
        residual_holds: residual_lhs <= residual_rhs * slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::NamedProblem;
    use approx::assert_abs_diff_eq;

    #[test]
    fn initial_condition() {
        let p = LinearOde::oscillator();
        let s = ded_linear(&p, 0.3, 0.0).unwrap();
        assert_eq!(s.w, p.u0);
        assert_eq!(s.wbar, p.u0);
        assert_eq!(ded_analytic_1d(1.0, 2.0, 0.7, 0.0).unwrap(), (2.0, 2.0));
    }

    #[test]
    fn analytic_matches_matrix_exponential() {
        let p = LinearOde::scalar_decay(1.0, 1.0);
        // real branch, confluent point, and complex branch
        for h in [0.0625, 0.1, 0.25, 0.5, 1.0] {
            for t in [0.5, 1.0, 3.0] {
                let s = ded_linear(&p, h, t).unwrap();
                let (w, wb) = ded_analytic_1d(1.0, 1.0, h, t).unwrap();
                assert_abs_diff_eq!(w, s.w[0], epsilon = 1e-10);
                assert_abs_diff_eq!(wb, s.wbar[0], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn confluent_branch_is_continuous() {
        // Just either side of 4ah = 1, the general formula and the limit agree.
        let h0 = 0.25;
        for t in [0.3, 1.0, 4.0] {
            let (w0, wb0) = ded_analytic_1d(1.0, 1.0, h0, t).unwrap();
            for dh in [1e-7, -1e-7] {
                let (w, wb) = ded_analytic_1d(1.0, 1.0, h0 + dh, t).unwrap();
                assert_abs_diff_eq!(w, w0, epsilon = 1e-5);
                assert_abs_diff_eq!(wb, wb0, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn first_order_in_h() {
        let u = (-1.0f64).exp();
        let errs: Vec<f64> = [0.0625, 0.03125, 0.015625]
            .iter()
            .map(|&h| (ded_analytic_1d(1.0, 1.0, h, 1.0).unwrap().0 - u).abs())
            .collect();
        let c: Vec<f64> = errs.iter().zip([0.0625, 0.03125, 0.015625]).map(|(e, h)| e / h).collect();
        assert!((c[0] / c[1] - 1.0).abs() < 0.05 && (c[1] / c[2] - 1.0).abs() < 0.05, "{c:?}");
        let lin = ded_linear(&LinearOde::scalar_decay(1.0, 1.0), 0.0625, 1.0).unwrap();
        assert!((lin.w[0] - u).abs() <= c[0] * 0.0625 * 1.0001);
    }

    #[test]
    fn nonlinear_engine_matches_linear() {
        let lin = LinearOde::oscillator();
        let path = ded_nonlinear(&lin.problem(), &lin.u0, 0.3, 5.0, 1e-3).unwrap();
        for t in [0.5, 2.0, 5.0] {
            let a = path.eval(t).unwrap();
            let b = ded_linear(&lin, 0.3, t).unwrap();
            assert!(a.w.distance(&b.w) < 1e-10);
            assert!(a.wbar.distance(&b.wbar) < 1e-10);
        }
    }

    #[test]
    fn nonlinear_zero_field() {
        let path = ded_nonlinear(&OdeProblem::zero(1), &[0.4], 0.1, 2.0, 0.01).unwrap();
        let s = path.eval(1.3).unwrap();
        assert_eq!((s.w[0], s.wbar[0]), (0.4, 0.4));
    }

    #[test]
    fn logistic_companion_trails() {
        let p = NamedProblem::Logistic.problem();
        let path = ded_nonlinear(&p, &[0.25], 0.1, 10.0, 1e-3).unwrap();
        for i in 1..=100 {
            let s = path.eval(i as f64 * 0.1).unwrap();
            assert!(s.wbar[0] <= s.w[0]);
        }
    }

    #[test]
    fn generator_examples() {
        let p = NamedProblem::Logistic.problem();
        let (w, wb) = ([0.6], [0.5]);
        let g = apply_generator_ded(&p, 0.2, &TestFunction::vbar_component(0), &w, &wb).unwrap();
        assert_abs_diff_eq!(g, 0.1 / 0.2, epsilon = 1e-14);
        let g = apply_generator_ded(&p, 0.2, &TestFunction::v_component(0), &w, &wb).unwrap();
        assert_abs_diff_eq!(g, 0.25, epsilon = 1e-14);
        let no_grad = TestFunction::new(Arc::new(|v, _| v[0]), Arc::new(|_, _| vec![1.0]));
        assert!(matches!(apply_generator_ded(&p, 0.2, &no_grad, &w, &wb), Err(Error::Capability(_))));
    }

    #[test]
    fn generator_is_time_derivative_along_flow() {
        let lin = LinearOde::oscillator();
        let h = 0.4;
        let phi = TestFunction::quadratic(0.8, 0.5, 1.3);
        let (t, dt) = (0.3, 1e-5);
        let at = |s: f64| {
            let st = ded_linear(&lin, h, s).unwrap();
            phi.eval(&st.w, &st.wbar)
        };
        let fd = (at(t + dt) - at(t - dt)) / (2.0 * dt);
        let st = ded_linear(&lin, h, t).unwrap();
        let g = apply_generator_ded(&lin.problem(), h, &phi, &st.w, &st.wbar).unwrap();
        assert_abs_diff_eq!(g, fd, epsilon = 1e-6);
    }

    #[test]
    fn bound_checks() {
        let lin = LinearOde::scalar_decay(1.0, 1.0);
        let r = companion_bound_check(&lin, 0.1, 0.0).unwrap();
        assert_eq!((r.companion_lhs, r.residual_lhs), (0.0, 0.0));
        assert!(r.companion_holds && r.residual_holds);
        let r = companion_bound_check(&lin, 0.1, 1.0).unwrap();
        assert!(r.companion_holds && r.residual_holds, "{r:?}");
        let osc = LinearOde::oscillator();
        for i in 1..=10 {
            let r = companion_bound_check(&osc, 0.2, 0.5 * i as f64).unwrap();
            assert!(r.companion_holds && r.residual_holds, "{r:?}");
        }
    }
}
