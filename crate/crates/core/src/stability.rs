//! Closed-form stability analysis of the Euler dynamics.
//!
//! The deterministic dynamics of a linear system are stable below an
//! eigenvalue-dependent stepsize. The jump chains of the stochastic dynamics
//! contract in mean and mean square by explicit polynomial factors in `ah`.
//! Exponential mean-square decay of the continuous-time process is certified
//! by a quadratic Lyapunov function `L(v, v̄) = c₁v² + c₂v̄² + c₃(v − v̄)²`.

use crate::error::{ensure_positive, Error, Result};
use crate::linalg::{build_b, eigenvalues, ComplexScalar, Matrix};
use crate::ode::LinearOde;
use crate::sed::{apply_generator_sed, TestFunction};

/// Largest `h` for which the deterministic Euler dynamics of a linear system
/// with eigenvalues `eigs` are asymptotically stable: the minimum over
/// `−Re λ / (Im λ)²`, where real eigenvalues impose no restriction.
pub fn ded_stability_threshold(eigs: &[ComplexScalar]) -> Result<f64> {
    let mut out = f64::INFINITY;
    for l in eigs {
        out = out.min(eigenvalue_threshold(*l)?);
    }
    Ok(out)
}

fn eigenvalue_threshold(l: ComplexScalar) -> Result<f64> {
    if !(l.re < 0.0) {
        return Err(Error::Hypothesis(format!(
            "eigenvalue {} + {}i has nonnegative real part; stability requires Re λ < 0",
            l.re, l.im
        )));
    }
    Ok(if l.im == 0.0 { f64::INFINITY } else { -l.re / (l.im * l.im) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub eigenvalues: Vec<ComplexScalar>,
    pub thresholds: Vec<f64>,
    pub h_max: f64,
    pub h: f64,
    pub stable: bool,
    /// Largest real part among the eigenvalues of the augmented matrix `B`.
    pub max_re_b: f64,
}

pub fn stability_report(a: &Matrix, h: f64) -> Result<StabilityReport> {
    ensure_positive("h", h)?;
    let eigs = eigenvalues(a)?;
    let thresholds = eigs.iter().map(|l| eigenvalue_threshold(*l)).collect::<Result<Vec<_>>>()?;
    let h_max = thresholds.iter().copied().fold(f64::INFINITY, f64::min);
    let max_re_b = max_real_part_b(a, h)?;
    Ok(StabilityReport { eigenvalues: eigs, thresholds, h_max, h, stable: h < h_max, max_re_b })
}

pub fn max_real_part_b(a: &Matrix, h: f64) -> Result<f64> {
    Ok(eigenvalues(&build_b(a, h)?)?.iter().map(|m| m.re).fold(f64::NEG_INFINITY, f64::max))
}

/// `(E[V̂ₖ₊₁]/E[V̂ₖ], E[V̂ₖ₊₁²]/E[V̂ₖ²]) = (1 − ah, 1 − 2ah + 2a²h²)` for the
/// random-timestep Euler chain of `u′ = −au`.
pub fn jump_chain_moment_factors(a: f64, h: f64) -> (f64, f64) {
    let x = a * h;
    (1.0 - x, 1.0 - 2.0 * x + 2.0 * x * x)
}

/// Per-step mean and second-moment factors `(1 − x + x², 1 − 2x + 4x² − 6x³ + 6x⁴)`,
/// `x = ah`, of the second-order chain `Ŷₖ = (1 − aHₖ + a²Hₖ²/2)Ŷₖ₋₁`.
pub fn sed2_moment_factors(a: f64, h: f64) -> (f64, f64) {
    let x = a * h;
    let mean = 1.0 - x + x * x;
    let m2 = 1.0 + x * (-2.0 + x * (4.0 + x * (-6.0 + 6.0 * x)));
    (mean, m2)
}

/// The positive root of `sed2_moment_factors(x, 1).1 = 1`, in closed form.
pub fn sed2_m2_threshold() -> f64 {
    let r = 5.0 + 29f64.sqrt();
    (1.0 - (2.0 / r).cbrt() + (r / 2.0).cbrt()) / 3.0
}

/// `0.99 · min(2a, 1/(2h))`, just inside the admissible range for `κ`.
pub fn default_kappa(a: f64, h: f64) -> f64 {
    0.99 * (2.0 * a).min(0.5 / h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovSpec {
    pub a: f64,
    pub h: f64,
    pub kappa: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl LyapunovSpec {
    pub fn eval(&self, v: f64, vbar: f64) -> f64 {
        self.c1 * v * v + self.c2 * vbar * vbar + self.c3 * (v - vbar) * (v - vbar)
    }

    pub fn test_function(&self) -> TestFunction {
        TestFunction::quadratic(self.c1, self.c2, self.c3)
    }

    /// Symmetric matrix `Q` with `xᵀQx = −κL(x) − 𝒜ₕL(x)`, `x = (v, v̄)`.
    pub fn decay_form(&self) -> [[f64; 2]; 2] {
        let Self { a, h, kappa: k, c1, c2, c3 } = *self;
        let q11 = -k * (c1 + c3) - (c2 - c3) / h;
        let q22 = -k * (c2 + c3) + c2 / h + (1.0 / h - 2.0 * a) * c3;
        let q12 = k * c3 - (1.0 / h - a) * c3 + a * c1;
        [[q11, q12], [q12, q22]]
    }
}

fn c3_for(lambda: f64, h: f64, kappa: f64) -> f64 {
    let first = (1.0 / h - kappa) / kappa;
    let second = (kappa - 1.0 / h + lambda) / lambda;
    1.0 / first.max(second)
}

fn check_kappa(kappa: f64, rate: f64, h: f64) -> Result<()> {
    if !(kappa > 0.0) {
        return Err(Error::Parameter(format!("kappa > 0 violated (kappa = {kappa})")));
    }
    let sup = (2.0 * rate).min(0.5 / h);
    if !(kappa < sup) {
        return Err(Error::Parameter(format!("kappa < min(2a, 1/(2h)) violated (kappa = {kappa}, bound = {sup})")));
    }
    Ok(())
}

/// Lyapunov constants for `u′ = −au` with `c₁ = 1`, `c₂ = 0` and
/// `c₃ = 1/max{(1/h − κ)/κ, (κ − 1/h + a)/a}`.
pub fn lyapunov_constants(a: f64, h: f64, kappa: f64) -> Result<LyapunovSpec> {
    ensure_positive("a", a)?;
    ensure_positive("h", h)?;
    if !(a * h < 1.0) {
        return Err(Error::Parameter(format!("ah < 1 violated (ah = {})", a * h)));
    }
    check_kappa(kappa, a, h)?;
    let c3 = c3_for(a, h, kappa);
    if !(c3 > 0.0 && c3.is_finite()) {
        return Err(Error::NumericConsistency(format!("c3 = {c3} is not positive")));
    }
    Ok(LyapunovSpec { a, h, kappa, c1: 1.0, c2: 0.0, c3 })
}

/// `c₃′ = min over ℓ of 1/max{(1/h − κ)/κ, (κ − 1/h + λ_ℓ)/λ_ℓ}` for a
/// symmetric positive definite system matrix with eigenvalues `λ_ℓ` of `−A`.
pub fn lyapunov_constants_multidim(eigs: &[f64], h: f64, kappa: f64) -> Result<f64> {
    ensure_positive("h", h)?;
    if eigs.is_empty() {
        return Err(Error::Dimension("no eigenvalues given".into()));
    }
    if let Some(l) = eigs.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::Parameter(format!("positive definiteness violated (eigenvalue {l})")));
    }
    let lmin = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let lmax = eigs.iter().copied().fold(0.0, f64::max);
    if !(lmax * h < 1.0) {
        return Err(Error::Parameter(format!("lambda_max h < 1 violated (lambda_max h = {})", lmax * h)));
    }
    check_kappa(kappa, lmin, h)?;
    Ok(eigs.iter().map(|&l| c3_for(l, h, kappa)).fold(f64::INFINITY, f64::min))
}

/// Eigenvalues of `−A` for a symmetric `A`, smallest first.
pub fn symmetric_decay_rates(a: &Matrix) -> Result<Vec<f64>> {
    if a.max_abs_diff(&a.transpose()) > 1e-12 * (1.0 + a.norm_1()) {
        return Err(Error::Parameter("matrix symmetry violated".into()));
    }
    let mut out: Vec<f64> = eigenvalues(a)?.iter().map(|l| -l.re).collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCheckReport {
    pub points: usize,
    /// `max(𝒜ₕL + κL)` over the grid.
    pub max_violation: f64,
    pub worst_point: (f64, f64),
    /// Points where `𝒜ₕL + κL > 1e-12·(1 + |L|)`.
    pub violations: usize,
    /// Smallest eigenvalue of the symmetric form `−κL − 𝒜ₕL`.
    pub form_min_eigenvalue: f64,
    pub form_psd: bool,
}

impl LyapunovCheckReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.form_psd
    }
}

/// Tolerance of both the pointwise and the eigenvalue test.
pub const LYAPUNOV_TOL: f64 = 1e-12;

/// Evaluates `𝒜ₕL + κL` with the sampled-path generator at every grid point
/// and tests the 2×2 form `−κL − 𝒜ₕL` for positive semidefiniteness.
pub fn lyapunov_generator_inequality_check(a: f64, spec: &LyapunovSpec, grid: &[(f64, f64)]) -> LyapunovCheckReport {
    let problem = LinearOde::scalar_decay(a, 1.0).problem();
    let phi = spec.test_function();
    let mut report = LyapunovCheckReport {
        points: grid.len(),
        max_violation: f64::NEG_INFINITY,
        worst_point: (0.0, 0.0),
        violations: 0,
        form_min_eigenvalue: 0.0,
        form_psd: false,
    };
    for &(v, vb) in grid {
        let gen = apply_generator_sed(&problem, spec.h, &phi, &[v], &[vb]).unwrap_or(f64::NAN);
        let l = spec.eval(v, vb);
        let excess = gen + spec.kappa * l;
        if excess > report.max_violation || excess.is_nan() {
            report.max_violation = excess;
            report.worst_point = (v, vb);
        }
        if !(excess <= LYAPUNOV_TOL * (1.0 + l.abs())) {
            report.violations += 1;
        }
    }
    let q = spec.decay_form();
    let scale = q.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
    report.form_min_eigenvalue = min_eigenvalue_sym2(q);
    report.form_psd = report.form_min_eigenvalue >= -LYAPUNOV_TOL * scale;
    report
}

fn min_eigenvalue_sym2(q: [[f64; 2]; 2]) -> f64 {
    let mid = 0.5 * (q[0][0] + q[1][1]);
    let rad = (0.5 * (q[0][0] - q[1][1])).hypot(q[0][1]);
    mid - rad
}

/// `n × n` lattice on `[−r, r]²`.
pub fn square_lattice(r: f64, n: usize) -> Vec<(f64, f64)> {
    let step = if n > 1 { 2.0 * r / (n - 1) as f64 } else { 0.0 };
    let axis: Vec<f64> = (0..n).map(|i| -r + i as f64 * step).collect();
    axis.iter().flat_map(|&v| axis.iter().map(move |&w| (v, w))).collect()
}
