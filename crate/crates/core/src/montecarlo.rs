//! Monte Carlo estimators with deterministic parallel reduction.
//!
//! Every sample `i` of a cell draws from the stream derived from
//! `(seed, cell label, i)`. Samples are grouped into fixed blocks of
//! [`BLOCK`] indices, each block is accumulated sequentially, and block
//! summaries are merged in a fixed binary tree. Results are therefore
//! bit-identical for any worker count.

use rayon::prelude::*;

use crate::error::{ensure_positive, Error, Result};
use crate::linalg::{mat_exp, spectral_norm, Matrix};
use crate::ode::{exact_linear_solution, LinearOde, OdeProblem, StateVector};
use crate::randomness::{derive_stream, RandomStream, SeedSpec};
use crate::sed::{sed_state_at, simulate_sed, truncated_dc_distance, TestFunction, DC_PANELS, DC_T_MAX};
use crate::sed2::{sed2_state_at, Sed2TestFunction};
use crate::stability::{jump_chain_moment_factors, sed2_moment_factors};

/// Samples per sequentially accumulated block.
pub const BLOCK: u64 = 1024;

/// A second-moment cell whose estimate exceeds this multiple of `‖u₀‖²` is
/// reported as diverged. Unstable regimes rarely overflow individual paths
/// within moderate horizons; their mean square explodes instead.
pub const CELL_GROWTH_LIMIT: f64 = 1e2;

/// Significance level of the simplex goodness-of-fit test.
pub const KS_ALPHA: f64 = 0.001;

/// Master seed and worker count shared by all estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McContext {
    pub seed: u64,
    pub workers: usize,
}

impl McContext {
    pub fn new(seed: u64, workers: usize) -> Self {
        Self { seed, workers: workers.max(1) }
    }

    fn seed_spec(&self, label: &str) -> SeedSpec {
        SeedSpec::new(self.seed, label, 0)
    }

    fn summary(&self, label: &str) -> String {
        format!("{:#x}/{label}", self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub sample_sd: f64,
    pub std_error: f64,
    pub n: u64,
    pub seed: String,
}

impl McEstimate {
    /// Root of a mean-square estimate, with the delta-method error
    /// `SE(√m) ≈ SE(m)/(2√m)` (zero when `m = 0`).
    pub fn sqrt(&self) -> Self {
        let mean = self.mean.max(0.0).sqrt();
        let std_error = if mean > 0.0 { self.std_error / (2.0 * mean) } else { 0.0 };
        Self { mean, sample_sd: std_error * (self.n as f64).sqrt(), std_error, n: self.n, seed: self.seed.clone() }
    }
}

/// Running mean and co-moment sums of a vector-valued sample.
#[derive(Debug, Clone)]
struct Moments {
    n: u64,
    mean: Vec<f64>,
    /// Full `d × d` co-moment matrix, or only its diagonal.
    co: Vec<f64>,
    full: bool,
}

impl Moments {
    fn new(d: usize, full: bool) -> Self {
        Self { n: 0, mean: vec![0.0; d], co: vec![0.0; if full { d * d } else { d }], full }
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn push(&mut self, x: &[f64]) {
        let d = self.dim();
        self.n += 1;
        let n = self.n as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            self.mean[i] += delta[i] / n;
        }
        if self.full {
            for i in 0..d {
                for j in 0..d {
                    self.co[i * d + j] += delta[i] * (x[j] - self.mean[j]);
                }
            }
        } else {
            for i in 0..d {
                self.co[i] += delta[i] * (x[i] - self.mean[i]);
            }
        }
    }

    fn merge(a: &Self, b: &Self) -> Self {
        if a.n == 0 {
            return b.clone();
        }
        if b.n == 0 {
            return a.clone();
        }
        let d = a.dim();
        let n = a.n + b.n;
        let (na, nb, nf) = (a.n as f64, b.n as f64, n as f64);
        let delta: Vec<f64> = b.mean.iter().zip(&a.mean).map(|(x, y)| x - y).collect();
        let mean = (0..d).map(|i| a.mean[i] + delta[i] * nb / nf).collect();
        let w = na * nb / nf;
        let co = if a.full {
            (0..d * d).map(|k| a.co[k] + b.co[k] + delta[k / d] * delta[k % d] * w).collect()
        } else {
            (0..d).map(|i| a.co[i] + b.co[i] + delta[i] * delta[i] * w).collect()
        };
        Self { n, mean, co, full: a.full }
    }

    fn variance(&self, i: usize) -> f64 {
        let k = if self.full { i * self.dim() + i } else { i };
        if self.n < 2 {
            0.0
        } else {
            (self.co[k] / (self.n - 1) as f64).max(0.0)
        }
    }

    fn covariance(&self, i: usize, j: usize) -> f64 {
        assert!(self.full);
        if self.n < 2 {
            0.0
        } else {
            self.co[i * self.dim() + j] / (self.n - 1) as f64
        }
    }

    fn estimate(&self, i: usize, seed: &str) -> McEstimate {
        if self.n == 0 {
            return McEstimate { mean: f64::NAN, sample_sd: f64::NAN, std_error: f64::NAN, n: 0, seed: seed.into() };
        }
        let sd = self.variance(i).sqrt();
        McEstimate {
            mean: self.mean[i],
            sample_sd: sd,
            std_error: sd / (self.n as f64).sqrt(),
            n: self.n,
            seed: seed.into(),
        }
    }
}

/// Pairwise summation.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 16 {
        x.iter().sum()
    } else {
        let (a, b) = x.split_at(x.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

fn tree_merge(parts: &[Moments]) -> Moments {
    match parts.len() {
        0 => unreachable!("at least one block"),
        1 => parts[0].clone(),
        n => {
            let (a, b) = parts.split_at(n / 2);
            Moments::merge(&tree_merge(a), &tree_merge(b))
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Parameter(format!("cannot build worker pool: {e}")))
}

/// Draws `n` samples of a `d`-vector; divergent samples are counted and
/// excluded, any other error aborts.
fn accumulate<F>(ctx: &McContext, label: &str, n: u64, d: usize, full: bool, sample: F) -> Result<(Moments, u64)>
where
    F: Fn(&mut RandomStream) -> Result<Vec<f64>> + Sync,
{
    let spec = ctx.seed_spec(label);
    let blocks = n.div_ceil(BLOCK).max(1);
    let run_block = |b: u64| -> Result<(Moments, u64)> {
        let mut m = Moments::new(d, full);
        let mut diverged = 0;
        for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
            let mut s = derive_stream(&spec.with_index(i));
            match sample(&mut s) {
                Ok(x) => m.push(&x),
                Err(Error::Divergence { .. }) => diverged += 1,
                Err(e) => return Err(e),
            }
        }
        Ok((m, diverged))
    };
    let parts: Vec<Result<(Moments, u64)>> =
        pool(ctx.workers)?.install(|| (0..blocks).into_par_iter().map(run_block).collect());
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let diverged = parts.iter().map(|p| p.1).sum();
    let moments: Vec<Moments> = parts.into_iter().map(|p| p.0).collect();
    Ok((tree_merge(&moments), diverged))
}

fn check_n(n: u64, min: u64) -> Result<()> {
    if n < min {
        return Err(Error::Parameter(format!("sample count n = {n} below the minimum {min}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HPolicy {
    Fixed(f64),
    EqualToEps,
}

impl HPolicy {
    pub fn h_for(&self, eps: f64) -> f64 {
        match *self {
            HPolicy::Fixed(h) => h,
            HPolicy::EqualToEps => eps,
        }
    }

    pub fn label(&self) -> String {
        match self {
            HPolicy::Fixed(h) => format!("h={h}"),
            HPolicy::EqualToEps => "h=eps".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicsOrder {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub x: f64,
    pub h: f64,
    pub estimate: McEstimate,
    pub diverged: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
}

impl ConvergenceTable {
    pub fn new(rows: Vec<ConvergenceRow>) -> Self {
        let mut t = Self { rows, slope: None, slope_stderr: None };
        if let Ok((s, se)) = fit_loglog_slope(&t) {
            t.slope = Some(s);
            t.slope_stderr = Some(se);
        }
        t
    }

    /// The same table without its largest grid value, refitted.
    pub fn without_coarsest(&self) -> Self {
        let mut rows = self.rows.clone();
        if let Some(imax) = rows.iter().enumerate().max_by(|a, b| a.1.x.total_cmp(&b.1.x)).map(|(i, _)| i) {
            rows.remove(imax);
        }
        Self::new(rows)
    }
}

fn sorted_grid(grid: &[f64]) -> Result<Vec<f64>> {
    let mut g = grid.to_vec();
    for &x in &g {
        ensure_positive("grid value", x)?;
    }
    g.sort_by(f64::total_cmp);
    if g.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Parameter("grid values must be distinct".into()));
    }
    Ok(g)
}

/// Local RMS truncation error `Ê[‖V(ε) − u(ε)‖²]^{1/2}` over a grid of `ε`.
pub fn estimate_rmste(
    p: &LinearOde,
    eps_grid: &[f64],
    h_policy: HPolicy,
    order: DynamicsOrder,
    n: u64,
    ctx: &McContext,
) -> Result<ConvergenceTable> {
    check_n(n, 100)?;
    let problem = p.problem();
    let u0 = p.u0.clone();
    let f0 = problem.rhs(&u0);
    let mut rows = Vec::new();
    for eps in sorted_grid(eps_grid)? {
        let h = h_policy.h_for(eps);
        ensure_positive("h", h)?;
        let exact = exact_linear_solution(p, eps)?;
        let label = format!("rmste/{order:?}/{}/eps={eps:e}", h_policy.label());
        let (m, diverged) = accumulate(ctx, &label, n, 1, false, |s| {
            let end = match order {
                DynamicsOrder::First => sed_state_at(&problem, &u0, &u0, h, eps, s)?.0,
                DynamicsOrder::Second => sed2_state_at(&problem, (&u0, &f0, &u0), h, eps, s)?.0,
            };
            Ok(vec![end.distance(&exact).powi(2)])
        })?;
        rows.push(ConvergenceRow { x: eps, h, estimate: m.estimate(0, &ctx.summary(&label)).sqrt(), diverged });
    }
    Ok(ConvergenceTable::new(rows))
}

/// Applies `(I + (ε − T_k)A)···(I + H₁A)` to `u₀`.
pub fn euler_product(a: &Matrix, u0: &[f64], spacings: &[f64], eps: f64) -> Result<StateVector> {
    let mut u = u0.to_vec();
    let mut used = 0.0;
    let step = |u: &mut Vec<f64>, s: f64| -> Result<()> {
        let au = a.mul_vec(u)?;
        for (x, d) in u.iter_mut().zip(au) {
            *x += s * d;
        }
        Ok(())
    };
    for &hk in spacings {
        step(&mut u, hk)?;
        used += hk;
    }
    step(&mut u, eps - used)?;
    Ok(u.into())
}

/// RMS truncation error conditioned on exactly `k` jumps in `[0, ε]`.
pub fn estimate_rmste_conditional(p: &LinearOde, eps: f64, k: usize, n: u64, ctx: &McContext) -> Result<McEstimate> {
    ensure_positive("eps", eps)?;
    check_n(n, 2)?;
    let exact = exact_linear_solution(p, eps)?;
    let label = format!("rmste-conditional/k={k}/eps={eps:e}");
    let (m, _) = accumulate(ctx, &label, n, 1, false, |s| {
        let spacings = if k == 0 { Vec::new() } else { s.sample_uniform_simplex(k, eps)? };
        Ok(vec![euler_product(&p.a, &p.u0, &spacings, eps)?.distance(&exact).powi(2)])
    })?;
    Ok(m.estimate(0, &ctx.summary(&label)).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub t: f64,
    pub h: f64,
    pub n: u64,
    /// `Ê[‖V(t)‖²]`; `None` when the cell diverged.
    pub mean_sq: Option<McEstimate>,
    /// `Ê[‖V(t) − V̄(t)‖²]`, when requested.
    pub gap: Option<McEstimate>,
    /// Sample covariance of the two quantities above.
    pub covariance: f64,
    /// Paths that crossed the divergence threshold.
    pub diverged: u64,
    /// Set when paths diverged or the mean square exceeded
    /// [`CELL_GROWTH_LIMIT`]`·‖u₀‖²`.
    pub cell_diverged: bool,
}

impl MomentRow {
    pub fn is_diverged(&self) -> bool {
        self.cell_diverged
    }

    /// `Ê[‖V‖²] + c·Ê[‖V − V̄‖²]` with its standard error.
    pub fn combined(&self, c: f64) -> Option<McEstimate> {
        let a = self.mean_sq.as_ref()?;
        let b = self.gap.as_ref()?;
        let var = a.sample_sd.powi(2) + c * c * b.sample_sd.powi(2) + 2.0 * c * self.covariance;
        let sd = var.max(0.0).sqrt();
        Some(McEstimate {
            mean: a.mean + c * b.mean,
            sample_sd: sd,
            std_error: sd / (a.n as f64).sqrt(),
            n: a.n,
            seed: a.seed.clone(),
        })
    }
}

/// Second moments of `V(t)` (and optionally of `V(t) − V̄(t)`), sampled
/// independently for every `t`.
pub fn estimate_second_moment(
    p: &LinearOde,
    h: f64,
    t_grid: &[f64],
    n: u64,
    ctx: &McContext,
    include_companion: bool,
) -> Result<Vec<MomentRow>> {
    check_n(n, 100)?;
    ensure_positive("h", h)?;
    let problem = p.problem();
    let u0 = p.u0.clone();
    let mut rows = Vec::new();
    for &t in t_grid {
        if !(t >= 0.0) {
            return Err(Error::Parameter(format!("time must be nonnegative, got {t}")));
        }
        let label = format!("moments/h={h:e}/t={t:e}");
        let (m, diverged) = accumulate(ctx, &label, n, 2, true, |s| {
            let (v, vb) = sed_state_at(&problem, &u0, &u0, h, t, s)?;
            Ok(vec![v.norm_sq(), v.distance(&vb).powi(2)])
        })?;
        let seed = ctx.summary(&label);
        let ok = diverged == 0 && m.mean[0] <= CELL_GROWTH_LIMIT * p.u0.norm_sq().max(f64::MIN_POSITIVE);
        rows.push(MomentRow {
            t,
            h,
            n,
            mean_sq: ok.then(|| m.estimate(0, &seed)),
            gap: (ok && include_companion).then(|| m.estimate(1, &seed)),
            covariance: if ok { m.covariance(0, 1) } else { f64::NAN },
            diverged,
            cell_diverged: !ok,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainOrder {
    First,
    SecondDynamics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpChainRow {
    pub k: usize,
    pub n: u64,
    pub emp_mean: f64,
    pub emp_m2: f64,
    pub pred_mean: f64,
    pub pred_m2: f64,
    pub se_mean: f64,
    pub se_m2: f64,
}

/// Empirical moments of the scalar jump chain of `u′ = −au`, `u₀ = 1`,
/// against the closed-form geometric predictions.
///
/// The first-order chain is `V̂ₖ = (1 − aHₖ)V̂ₖ₋₁`; the second-order one is
/// `Ŷₖ = (1 − aHₖ + a²Hₖ²/2)Ŷₖ₋₁` with `Hₖ ~ Exp(mean h)`.
pub fn estimate_jump_chain_moments(
    a: f64,
    h: f64,
    k_max: usize,
    n: u64,
    ctx: &McContext,
    order: ChainOrder,
) -> Result<Vec<JumpChainRow>> {
    check_n(n, 100)?;
    ensure_positive("a", a)?;
    ensure_positive("h", h)?;
    let label = format!("jumpchain/{order:?}/a={a:e}/h={h:e}");
    let (m, _) = accumulate(ctx, &label, n, 2 * (k_max + 1), false, |s| {
        let mut x = 1.0f64;
        let mut out = Vec::with_capacity(2 * (k_max + 1));
        for k in 0..=k_max {
            if k > 0 {
                let step = s.sample_exponential(h)?;
                x *= match order {
                    ChainOrder::First => 1.0 - a * step,
                    ChainOrder::SecondDynamics => 1.0 - a * step + 0.5 * (a * step).powi(2),
                };
            }
            out.push(x);
            out.push(x * x);
        }
        Ok(out)
    })?;
    let (fm, f2) = match order {
        ChainOrder::First => jump_chain_moment_factors(a, h),
        ChainOrder::SecondDynamics => sed2_moment_factors(a, h),
    };
    let seed = ctx.summary(&label);
    Ok((0..=k_max)
        .map(|k| {
            let (em, e2) = (m.estimate(2 * k, &seed), m.estimate(2 * k + 1, &seed));
            JumpChainRow {
                k,
                n,
                emp_mean: em.mean,
                emp_m2: e2.mean,
                pred_mean: fm.powi(k as i32),
                pred_m2: f2.powi(k as i32),
                se_mean: em.std_error,
                se_m2: e2.std_error,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub used: usize,
    /// Indices of rows dropped for a nonpositive or non-finite ordinate.
    pub excluded: Vec<usize>,
}

/// Ordinary least squares `y ≈ intercept + slope·x` with the residual-based
/// slope standard error.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("{} abscissae vs {} ordinates", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Fit(format!("need at least 3 rows, have {n}")));
    }
    let nf = n as f64;
    let mx = pairwise_sum(x) / nf;
    let my = pairwise_sum(y) / nf;
    let sxx = pairwise_sum(&x.iter().map(|v| (v - mx).powi(2)).collect::<Vec<_>>());
    if !(sxx > 0.0) {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let sxy = pairwise_sum(&x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect::<Vec<_>>());
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = pairwise_sum(&x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).collect::<Vec<_>>());
    let stderr = (rss / (nf - 2.0) / sxx).sqrt();
    Ok(LineFit { slope, intercept, stderr, used: n, excluded: Vec::new() })
}

/// Least-squares slope of `log₂ y` against `log₂ x`. Rows with `y ≤ 0` are
/// dropped and reported in [`LineFit::excluded`].
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("{} abscissae vs {} ordinates", x.len(), y.len())));
    }
    let mut excluded = Vec::new();
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            lx.push(a.log2());
            ly.push(b.log2());
        } else {
            excluded.push(i);
        }
    }
    let mut fit = fit_line(&lx, &ly)?;
    fit.excluded = excluded;
    Ok(fit)
}

pub fn fit_loglog_slope(table: &ConvergenceTable) -> Result<(f64, f64)> {
    let x: Vec<f64> = table.rows.iter().map(|r| r.x).collect();
    let y: Vec<f64> = table.rows.iter().map(|r| r.estimate.mean).collect();
    let fit = fit_loglog(&x, &y)?;
    Ok((fit.slope, fit.stderr))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

impl KsResult {
    pub fn rejected(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Kolmogorov tail `Q(λ) = 2 Σ (−1)^{j−1} e^{−2j²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value and the
/// usual small-sample correction of the scaling factor.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() || a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Parameter("KS samples must be non-empty and finite".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < n1 && j < n2 {
        let x = a[i].min(b[j]);
        while i < n1 && a[i] <= x {
            i += 1;
        }
        while j < n2 && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(KsResult { statistic: d, p_value: kolmogorov_q(lambda), n1, n2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimplexSampler {
    /// Uniform on `{hᵢ ≥ 0, Σhᵢ ≤ t}`.
    Uniform,
    /// Uniform on the face `{hᵢ ≥ 0, Σhᵢ = t}`; a deliberately wrong law.
    DirichletFace,
}

fn sample_spacings(s: &mut RandomStream, sampler: SimplexSampler, k: usize, t: f64) -> Result<Vec<f64>> {
    match sampler {
        SimplexSampler::Uniform => s.sample_uniform_simplex(k, t),
        SimplexSampler::DirichletFace => {
            let e: Vec<f64> = (0..k).map(|_| s.sample_exponential(1.0)).collect::<Result<_>>()?;
            let total: f64 = e.iter().sum();
            Ok(e.iter().map(|x| t * x / total).collect())
        }
    }
}

/// Waiting times `(H₁, …, H_k)` of a Poisson process with mean spacing `h`,
/// drawn by rejection until exactly `k` jumps fall in `[0, t]`.
pub fn conditioned_spacings(s: &mut RandomStream, k: usize, t: f64, h: f64) -> Result<Vec<f64>> {
    loop {
        let times = s.sample_jump_times(h, t)?;
        if times.len() == k + 1 {
            let mut prev = 0.0;
            return Ok(times[..k]
                .iter()
                .map(|&x| {
                    let d = x - prev;
                    prev = x;
                    d
                })
                .collect());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexTestReport {
    pub k: usize,
    pub t: f64,
    pub h: f64,
    pub n: u64,
    /// One test per coordinate `Hᵢ`.
    pub per_coordinate: Vec<KsResult>,
    pub min_p: f64,
    pub rejected: bool,
}

/// Compares the spacings of a Poisson process conditioned on `K(t) = k`
/// with a direct sampler, coordinate by coordinate.
pub fn simplex_ks_test(
    k: usize,
    t: f64,
    h: f64,
    n: u64,
    sampler: SimplexSampler,
    ctx: &McContext,
) -> Result<SimplexTestReport> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    ensure_positive("t", t)?;
    ensure_positive("h", h)?;
    check_n(n, 2)?;
    let draw = |label: String, f: &(dyn Fn(&mut RandomStream) -> Result<Vec<f64>> + Sync)| -> Result<Vec<Vec<f64>>> {
        let spec = ctx.seed_spec(&label);
        pool(ctx.workers)?.install(|| {
            (0..n).into_par_iter().map(|i| f(&mut derive_stream(&spec.with_index(i)))).collect::<Result<Vec<_>>>()
        })
    };
    let reference = draw(format!("simplex/conditioned/k={k}"), &|s| conditioned_spacings(s, k, t, h))?;
    let direct = draw(format!("simplex/{sampler:?}/k={k}"), &|s| sample_spacings(s, sampler, k, t))?;
    let per_coordinate = (0..k)
        .map(|i| {
            let a: Vec<f64> = reference.iter().map(|v| v[i]).collect();
            let b: Vec<f64> = direct.iter().map(|v| v[i]).collect();
            ks_two_sample(&a, &b)
        })
        .collect::<Result<Vec<_>>>()?;
    let min_p = per_coordinate.iter().map(|r| r.p_value).fold(1.0, f64::min);
    Ok(SimplexTestReport { k, t, h, n, per_coordinate, min_p, rejected: min_p < KS_ALPHA })
}

/// `(Ê[φ(V(τ), V̄(τ))] − φ(v, v̄))/τ`, an estimate of `𝒜ₕφ(v, v̄)` with
/// bias `O(τ)`.
#[allow(clippy::too_many_arguments)]
pub fn generator_difference_quotient_sed(
    p: &OdeProblem,
    h: f64,
    phi: &TestFunction,
    v: &[f64],
    vbar: &[f64],
    tau: f64,
    n: u64,
    ctx: &McContext,
    label: &str,
) -> Result<McEstimate> {
    ensure_positive("tau", tau)?;
    check_n(n, 2)?;
    let base = phi.eval(v, vbar);
    let label = format!("generator-sed/{label}");
    let (m, _) = accumulate(ctx, &label, n, 1, false, |s| {
        let (x, xb) = sed_state_at(p, v, vbar, h, tau, s)?;
        Ok(vec![(phi.eval(&x, &xb) - base) / tau])
    })?;
    Ok(m.estimate(0, &ctx.summary(&label)))
}

#[allow(clippy::too_many_arguments)]
pub fn generator_difference_quotient_sed2(
    p: &OdeProblem,
    h: f64,
    phi: &Sed2TestFunction,
    state: (&[f64], &[f64], &[f64]),
    tau: f64,
    n: u64,
    ctx: &McContext,
    label: &str,
) -> Result<McEstimate> {
    ensure_positive("tau", tau)?;
    check_n(n, 2)?;
    let base = phi.eval(state.0, state.1, state.2);
    let label = format!("generator-sed2/{label}");
    let (m, _) = accumulate(ctx, &label, n, 1, false, |s| {
        let (y1, y2, yb) = sed2_state_at(p, state, h, tau, s)?;
        Ok(vec![(phi.eval(&y1, &y2, &yb) - base) / tau])
    })?;
    Ok(m.estimate(0, &ctx.summary(&label)))
}

/// `ε⁴(1 + ‖A‖)² exp((2ε‖A‖ + ε‖A‖²)/h)`, the a-priori mean-square bound
/// on the local error. It grows without limit as `h ↓ 0` at fixed `ε`.
pub fn divergent_local_bound(eps: f64, norm_a: f64, h: f64) -> f64 {
    eps.powi(4) * (1.0 + norm_a).powi(2) * ((2.0 * eps * norm_a + eps * norm_a * norm_a) / h).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceBoundReport {
    pub eps: f64,
    pub h: f64,
    /// `Ê[‖V(ε) − Ê[V(ε)]‖²]`
    pub variance: f64,
    /// `Ê[‖V(ε) − u(ε)‖²]`
    pub mse: McEstimate,
    pub bound: f64,
}

impl VarianceBoundReport {
    pub fn holds(&self, k_se: f64) -> bool {
        self.variance <= self.mse.mean + k_se * self.mse.std_error
    }
}

/// Sample variance of `V(ε)` next to its mean-square error and the a-priori
/// bound.
pub fn variance_bound_check(p: &LinearOde, eps: f64, h: f64, n: u64, ctx: &McContext) -> Result<VarianceBoundReport> {
    ensure_positive("eps", eps)?;
    ensure_positive("h", h)?;
    check_n(n, 2)?;
    let problem = p.problem();
    let exact = exact_linear_solution(p, eps)?;
    let d = p.dim();
    let label = format!("variance-bound/h={h:e}/eps={eps:e}");
    let (m, _) = accumulate(ctx, &label, n, d + 1, false, |s| {
        let v = sed_state_at(&problem, &p.u0, &p.u0, h, eps, s)?.0;
        let mut out = v.to_vec();
        out.push(v.distance(&exact).powi(2));
        Ok(out)
    })?;
    let nf = m.n as f64;
    let variance = (0..d).map(|i| m.co[i] / nf).sum();
    Ok(VarianceBoundReport {
        eps,
        h,
        variance,
        mse: m.estimate(d, &ctx.summary(&label)),
        bound: divergent_local_bound(eps, spectral_norm(&p.a)?, h),
    })
}

/// Mean truncated path distance between sampled paths on `[0, DC_T_MAX]`
/// and the exact solution.
pub fn estimate_dc_distance(p: &LinearOde, h: f64, n: u64, ctx: &McContext) -> Result<McEstimate> {
    ensure_positive("h", h)?;
    check_n(n, 2)?;
    let problem = p.problem();
    // exp(tA) on a fine grid, refined by the exact flow from the nearest node.
    let step = DC_T_MAX / DC_PANELS as f64;
    let nodes: Vec<StateVector> =
        (0..=DC_PANELS).map(|i| exact_linear_solution(p, i as f64 * step)).collect::<Result<_>>()?;
    let exact = |t: f64| -> StateVector {
        let i = ((t / step).floor() as usize).min(DC_PANELS);
        let r = t - i as f64 * step;
        if r == 0.0 {
            return nodes[i].clone();
        }
        mat_exp(&p.a, r).and_then(|e| e.mul_vec(&nodes[i])).expect("square system").into()
    };
    let label = format!("dc-distance/h={h:e}");
    let (m, _) = accumulate(ctx, &label, n, 1, false, |s| {
        let path = simulate_sed(&problem, &p.u0, h, DC_T_MAX, s)?;
        let x = |t: f64| path.eval(t).expect("within horizon").0;
        Ok(vec![truncated_dc_distance(x, exact, &path.jump_times, DC_T_MAX, DC_PANELS)])
    })?;
    Ok(m.estimate(0, &ctx.summary(&label)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sed::apply_generator_sed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ctx() -> McContext {
        McContext::new(7, 4)
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut one = Moments::new(1, false);
        xs.iter().for_each(|x| one.push(&[*x]));
        let parts: Vec<Moments> = xs
            .chunks(77)
            .map(|c| {
                let mut m = Moments::new(1, false);
                c.iter().for_each(|x| m.push(&[*x]));
                m
            })
            .collect();
        let merged = tree_merge(&parts);
        assert_abs_diff_eq!(merged.mean[0], one.mean[0], epsilon = 1e-12);
        assert_abs_diff_eq!(merged.variance(0), one.variance(0), epsilon = 1e-10);
    }

    #[test]
    fn zero_matrix_has_zero_error() {
        let p = LinearOde::new(Matrix::zeros(1, 1), vec![1.0]).unwrap();
        let t = estimate_rmste(&p, &[0.25, 0.5, 1.0], HPolicy::EqualToEps, DynamicsOrder::First, 200, &ctx()).unwrap();
        for r in &t.rows {
            assert_eq!(r.estimate.mean, 0.0);
            assert_eq!(r.estimate.std_error, 0.0);
        }
    }

    #[test]
    fn standard_error_scales_with_sqrt_n() {
        let p = LinearOde::scalar_decay(1.0, 1.0);
        let c = ctx();
        let small = estimate_rmste(&p, &[0.5], HPolicy::EqualToEps, DynamicsOrder::First, 4000, &c).unwrap();
        let large = estimate_rmste(&p, &[0.5], HPolicy::EqualToEps, DynamicsOrder::First, 16000, &c).unwrap();
        let ratio = small.rows[0].estimate.std_error / large.rows[0].estimate.std_error;
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let p = LinearOde::scalar_decay(1.0, 1.0);
        let run = |w| {
            let c = McContext::new(3, w);
            (
                estimate_rmste(&p, &[0.125, 0.25], HPolicy::EqualToEps, DynamicsOrder::First, 3000, &c).unwrap(),
                estimate_second_moment(&p, 0.25, &[0.0, 2.0], 3000, &c, true).unwrap(),
                estimate_jump_chain_moments(1.0, 0.5, 5, 3000, &c, ChainOrder::First).unwrap(),
            )
        };
        let one = run(1);
        assert_eq!(one, run(2));
        assert_eq!(one, run(8));
    }

    #[test]
    fn conditional_without_jumps_is_one_euler_step() {
        let p = LinearOde::scalar_decay(1.0, 1.0);
        let e = estimate_rmste_conditional(&p, 0.5, 0, 100, &ctx()).unwrap();
        assert_abs_diff_eq!(e.mean, (0.5f64 - (-0.5f64).exp()).abs(), epsilon = 1e-15);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn conditional_estimates_mix_to_unconditional() {
        // Law of total expectation over the Poisson number of jumps.
        let p = LinearOde::scalar_decay(1.0, 1.0);
        let (eps, h, n): (f64, f64, u64) = (0.5, 0.25, 20000);
        let c = ctx();
        let lam = eps / h;
        let mut mix = 0.0;
        let mut mix_var = 0.0;
        let mut weight = (-lam).exp();
        for k in 0..15 {
            let e = estimate_rmste_conditional(&p, eps, k, n, &c).unwrap();
            let m = e.mean * e.mean;
            mix += weight * m;
            mix_var += (weight * 2.0 * e.mean * e.std_error).powi(2);
            weight *= lam / (k + 1) as f64;
        }
        let u = estimate_rmste(&p, &[eps], HPolicy::Fixed(h), DynamicsOrder::First, n, &c).unwrap();
        let ue = &u.rows[0].estimate;
        let (um, use_) = (ue.mean * ue.mean, 2.0 * ue.mean * ue.std_error);
        assert!((um - mix).abs() < 4.0 * (use_ * use_ + mix_var).sqrt(), "{um} vs {mix}");
    }

    #[test]
    fn second_moment_at_time_zero_is_exact() {
        let p = LinearOde::scalar_decay(1.0, 1.5);
        let rows = estimate_second_moment(&p, 0.25, &[0.0], 100, &ctx(), true).unwrap();
        let m = rows[0].mean_sq.as_ref().unwrap();
        assert_eq!((m.mean, m.std_error), (2.25, 0.0));
        assert_eq!(rows[0].gap.as_ref().unwrap().mean, 0.0);
    }

    #[test]
    fn unstable_step_diverges() {
        let p = LinearOde::scalar_decay(1.0, 1.0);
        let rows = estimate_second_moment(&p, 2.0, &[4.0, 60.0], 2000, &ctx(), false).unwrap();
        assert!(!rows[0].is_diverged());
        assert!(rows[1].is_diverged());
        assert!(rows[1].mean_sq.is_none());
    }

    #[test]
    fn jump_chain_first_step_moments() {
        let rows = estimate_jump_chain_moments(1.0, 0.5, 3, 2000, &ctx(), ChainOrder::First).unwrap();
        assert_eq!((rows[0].emp_mean, rows[0].emp_m2, rows[0].se_mean), (1.0, 1.0, 0.0));
        for r in &rows[1..] {
            assert!((r.emp_mean - r.pred_mean).abs() < 4.0 * r.se_mean);
        }
    }

    #[test]
    fn slope_fit_examples() {
        let x = [0.1, 0.2, 0.4, 0.8];
        let fit = fit_loglog(&x, &x.map(|v| v * v)).unwrap();
        assert_abs_diff_eq!(fit.slope, 2.0, epsilon = 1e-12);
        assert!(fit.stderr < 1e-12);
        assert_abs_diff_eq!(fit_loglog(&x, &[3.0; 4]).unwrap().slope, 0.0, epsilon = 1e-12);
        let fit = fit_loglog(&[0.1, 0.2, 0.4, 0.8, 1.6], &[0.01, 0.0, 0.16, 0.64, -1.0]).unwrap();
        assert_eq!(fit.excluded, vec![1, 4]);
        assert!(matches!(fit_loglog(&x, &[1.0, 0.0, -1.0, 2.0]), Err(Error::Fit(_))));
    }

    #[test]
    fn ks_statistic_basics() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let b: Vec<f64> = (0..100).map(|i| 1000.0 + i as f64).collect();
        let r = ks_two_sample(&a, &b).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(r.p_value < 1e-20);
        // Q(λ) at a few reference points of the Kolmogorov distribution.
        assert_abs_diff_eq!(kolmogorov_q(1.358), 0.05, epsilon = 5e-4);
        assert_abs_diff_eq!(kolmogorov_q(1.949), 0.001, epsilon = 5e-5);
    }

    #[test]
    fn simplex_samplers_agree_and_negative_control_fails() {
        let c = ctx();
        let ok = simplex_ks_test(2, 1.0, 0.5, 3000, SimplexSampler::Uniform, &c).unwrap();
        assert!(!ok.rejected, "{ok:?}");
        let bad = simplex_ks_test(2, 1.0, 0.5, 3000, SimplexSampler::DirichletFace, &c).unwrap();
        assert!(bad.rejected);
    }

    #[test]
    fn generator_quotient_tracks_closed_form() {
        let p = LinearOde::scalar_decay(1.0, 1.0).problem();
        let phi = TestFunction::v_component(0);
        let (v, vb) = ([0.6], [1.0]);
        let exact = apply_generator_sed(&p, 0.5, &phi, &v, &vb).unwrap();
        let e = generator_difference_quotient_sed(&p, 0.5, &phi, &v, &vb, 1e-2, 5000, &ctx(), "unit").unwrap();
        // φ = v moves deterministically before the first jump.
        assert!((e.mean - exact).abs() < 4.0 * e.std_error + 0.05, "{} vs {exact}", e.mean);
    }

    #[test]
    fn variance_is_below_mean_square_error() {
        let p = LinearOde::scalar_decay(1.0, 1.0);
        for h in [0.5, 0.05, 0.005] {
            let r = variance_bound_check(&p, 0.25, h, 2000, &ctx()).unwrap();
            assert!(r.holds(4.0));
            assert!(r.mse.mean < r.bound);
        }
        assert!(divergent_local_bound(0.25, 1.0, 0.001) > divergent_local_bound(0.25, 1.0, 0.01));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pairwise_sum_matches_naive(xs in proptest::collection::vec(-1e3f64..1e3, 0..300)) {
            let naive: f64 = xs.iter().sum();
            prop_assert!((pairwise_sum(&xs) - naive).abs() <= 1e-9 * (1.0 + naive.abs()));
        }

        #[test]
        fn noisy_quadratic_slope(noise in proptest::collection::vec(-0.05f64..0.05, 9)) {
            let x: Vec<f64> = (0..9).map(|i| 2f64.powi(-i)).collect();
            let y: Vec<f64> = x.iter().zip(&noise).map(|(x, e)| x * x * (1.0 + e)).collect();
            let s = fit_loglog(&x, &y).unwrap().slope;
            prop_assert!((1.9..=2.1).contains(&s));
        }
    }
}
