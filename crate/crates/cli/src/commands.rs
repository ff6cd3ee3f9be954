//! The experiment subcommands.

use stoch_euler::ded::{companion_bound_check, ded_analytic_1d, ded_linear, ded_nonlinear};
use stoch_euler::linalg::Matrix;
use stoch_euler::montecarlo::{
    divergent_local_bound, estimate_jump_chain_moments, estimate_rmste, estimate_second_moment, fit_loglog,
    simplex_ks_test, ChainOrder, ConvergenceTable, DynamicsOrder, HPolicy, McContext, MomentRow, SimplexSampler,
};
use stoch_euler::ode::{LinearOde, NamedProblem, StateVector};
use stoch_euler::randomness::{derive_stream, SeedSpec};
use stoch_euler::sed::simulate_sed;
use stoch_euler::sed2::simulate_sed2;
use stoch_euler::stability::{
    default_kappa, lyapunov_constants, lyapunov_constants_multidim, lyapunov_generator_inequality_check,
    square_lattice, stability_report, symmetric_decay_rates, LyapunovSpec,
};

use crate::config::*;
use crate::output::{num, opt_num, LinePlot, Outputs};
use crate::CliError;

/// Messages for the manifest and the acceptance verdicts that failed.
#[derive(Debug, Default)]
pub struct Outcome {
    pub messages: Vec<String>,
    pub failures: Vec<String>,
}

impl Outcome {
    fn say(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        println!("{msg}");
        self.messages.push(msg);
    }

    fn fail(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        println!("FAIL {msg}");
        self.failures.push(msg);
    }
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name}: must be positive, got {v}")))
    }
}

fn positive_all(name: &str, v: &[f64]) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(CliError::Config(format!("{name}: must not be empty")));
    }
    v.iter().try_for_each(|&x| positive(name, x).map(|_| ()))
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect()
}

fn ctx(s: &Settings) -> McContext {
    McContext::new(s.seed, s.workers)
}

fn state_cols(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

pub fn simulate(s: &Settings, args: &SimulateArgs, out: &mut Outputs) -> Result<Outcome, CliError> {
    let mut o = Outcome::default();
    let a = positive("a", args.a.unwrap_or(1.0))?;
    let named = NamedProblem::parse(args.problem.as_deref().unwrap_or("linear1d"), a)?;
    let h = positive("h", args.h.unwrap_or(0.8))?;
    let t_end = positive("t_end", args.t_end.unwrap_or(10.0))?;
    let dynamics = args.dynamics.as_deref().unwrap_or("sed");
    let points = args.grid_points.unwrap_or(201);
    if points < 2 {
        return Err(CliError::Config("grid_points: need at least 2".into()));
    }
    let u0: StateVector = args.u0.clone().map_or_else(|| named.default_u0(), Into::into);
    let p = named.problem();
    if u0.len() != p.dim {
        return Err(CliError::Config(format!("u0: {} has dimension {}, got {}", named.label(), p.dim, u0.len())));
    }
    let mut stream = derive_stream(&SeedSpec::new(s.seed, format!("simulate/{}/{dynamics}", named.label()), 0));
    let mut times = linspace(0.0, t_end, points);

    let rows: Vec<(f64, StateVector, StateVector)> = match dynamics {
        "sed" => {
            let path = simulate_sed(&p, &u0, h, t_end, &mut stream)?;
            times.extend_from_slice(&path.jump_times);
            sort_dedup(&mut times);
            o.say(format!("sampled {} jumps", path.jump_times.len() - 1));
            times.iter().map(|&t| path.eval(t).map(|(v, vb)| (t, v, vb))).collect::<Result<_, _>>()?
        }
        "sed2" => {
            let path = simulate_sed2(&p, &u0, h, t_end, &mut stream)?;
            times.extend_from_slice(&path.jump_times);
            sort_dedup(&mut times);
            o.say(format!("sampled {} jumps", path.jump_times.len() - 1));
            times.iter().map(|&t| path.eval(t).map(|(y1, _, yb)| (t, y1, yb))).collect::<Result<_, _>>()?
        }
        "ded" => match named.linear() {
            Some(mut lin) => {
                lin.u0 = u0.clone();
                times.iter().map(|&t| ded_linear(&lin, h, t).map(|st| (t, st.w, st.wbar))).collect::<Result<_, _>>()?
            }
            None => {
                let path = ded_nonlinear(&p, &u0, h, t_end, h.min(1.0) / 50.0)?;
                times.iter().map(|&t| path.eval(t).map(|st| (t, st.w, st.wbar))).collect::<Result<_, _>>()?
            }
        },
        other => return Err(CliError::Config(format!("dynamics: unknown '{other}' (expected sed, sed2 or ded)"))),
    };

    let d = p.dim;
    let mut header = vec!["t".to_string()];
    header.extend(state_cols("component", d));
    header.extend(state_cols("vbar", d));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|(t, v, vb)| {
            std::iter::once(num(*t)).chain(v.iter().map(|x| num(*x))).chain(vb.iter().map(|x| num(*x))).collect()
        })
        .collect();
    out.csv("simulate.csv", &header.iter().map(String::as_str).collect::<Vec<_>>(), &table)?;

    let mut plot = LinePlot::new(&format!("{dynamics} path, {}", named.label()), "t", "state");
    for i in 0..d {
        plot.add(format!("component {}", i + 1), rows.iter().map(|r| (r.0, r.1[i])).collect());
        plot.add(format!("companion {}", i + 1), rows.iter().map(|r| (r.0, r.2[i])).collect());
    }
    out.plot("simulate.svg", &plot)?;
    Ok(o)
}

fn sort_dedup(v: &mut Vec<f64>) {
    v.sort_by(f64::total_cmp);
    v.dedup();
}

pub fn ded_error(_s: &Settings, args: &DedErrorArgs, out: &mut Outputs) -> Result<Outcome, CliError> {
    let mut o = Outcome::default();
    let a = positive("a", args.a.unwrap_or(1.0))?;
    let u0 = args.u0.unwrap_or(1.0);
    let h_grid = args.h_grid.clone().unwrap_or_else(|| (0..=16).map(|i| 10f64.powf(-4.0 + i as f64 / 4.0)).collect());
    let t_grid = args.t_grid.clone().unwrap_or_else(|| vec![0.01, 0.1, 1.0]);
    let slope_h_max = positive("slope_h_max", args.slope_h_max.unwrap_or(0.1))?;
    positive_all("h_grid", &h_grid)?;
    let lin = LinearOde::scalar_decay(a, u0);

    let mut rows = Vec::new();
    let mut slope_rows = Vec::new();
    let mut plot = LinePlot::new("deterministic dynamics error", "h", "distance").log_log();
    for &t in &t_grid {
        if !(t >= 0.0) {
            return Err(CliError::Config(format!("t_grid: times must be nonnegative, got {t}")));
        }
        let exact = u0 * (-a * t).exp();
        let (mut hs, mut du, mut dw) = (Vec::new(), Vec::new(), Vec::new());
        for &h in &h_grid {
            let (w, wbar) = ded_analytic_1d(a, u0, h, t)?;
            let rep = companion_bound_check(&lin, h, t)?;
            if !(rep.companion_holds && rep.residual_holds) {
                o.fail(format!("bound violated at t={t}, h={h}"));
            }
            rows.push(vec![
                num(t),
                num(h),
                num((w - exact).abs()),
                num((w - wbar).abs()),
                num(rep.companion_rhs),
                num(rep.residual_lhs),
                num(rep.residual_rhs),
            ]);
            if h <= slope_h_max {
                hs.push(h);
                du.push((w - exact).abs());
                dw.push((w - wbar).abs());
            }
        }
        for (name, ys) in [("dist_w_u", &du), ("dist_w_wbar", &dw)] {
            let (slope, se) = fit_loglog(&hs, ys).map_or((f64::NAN, f64::NAN), |f| (f.slope, f.stderr));
            o.say(format!("t={t}: slope of {name} = {}", num(slope)));
            slope_rows.push(vec![num(t), name.to_string(), num(slope), num(se)]);
            plot.add(format!("{name}, t={t}"), hs.iter().copied().zip(ys.iter().copied()).collect());
        }
    }
    out.csv(
        "ded_error.csv",
        &["t", "h", "dist_w_u", "dist_w_wbar", "bound_w_wbar", "residual", "bound_residual"],
        &rows,
    )?;
    out.csv("ded_error_slopes.csv", &["t", "quantity", "slope", "stderr"], &slope_rows)?;
    out.plot("ded_error.svg", &plot)?;
    Ok(o)
}

fn linear_problem(name: &str, a: f64, diag: Option<&[f64]>, u0: Option<&[f64]>) -> Result<LinearOde, CliError> {
    let mut lin = match name {
        "diag" => {
            let rates = diag.ok_or_else(|| CliError::Config("diag: required for problem diag".into()))?;
            positive_all("diag", rates)?;
            let d = rates.len();
            let neg: Vec<f64> = rates.iter().map(|r| -r).collect();
            LinearOde::new(Matrix::diag(&neg), vec![1.0 / (d as f64).sqrt(); d])?
        }
        other => NamedProblem::parse(other, a)?
            .linear()
            .ok_or_else(|| CliError::Config(format!("problem: '{other}' is not linear")))?,
    };
    if let Some(u) = u0 {
        if u.len() != lin.dim() {
            return Err(CliError::Config(format!("u0: expected {} components, got {}", lin.dim(), u.len())));
        }
        lin.u0 = u.to_vec().into();
    }
    Ok(lin)
}

fn parse_policy(s: &str) -> Result<HPolicy, CliError> {
    if s == "eps" {
        Ok(HPolicy::EqualToEps)
    } else {
        parse_real(s).map(HPolicy::Fixed).map_err(|e| CliError::Config(format!("h_policies: {e}")))
    }
}

fn policy_tag(p: HPolicy) -> String {
    match p {
        HPolicy::EqualToEps => "eps".into(),
        HPolicy::Fixed(h) => format!("h{h}"),
    }
}

pub fn rmste(s: &Settings, args: &RmsteArgs, out: &mut Outputs) -> Result<Outcome, CliError> {
    let mut o = Outcome::default();
    let a = positive("a", args.a.unwrap_or(1.0))?;
    let lin = linear_problem(args.problem.as_deref().unwrap_or("linear1d"), a, None, None)?;
    let eps_grid = args.eps_grid.clone().unwrap_or_else(|| (0..=8).map(|i| 2f64.powi(-8 + i)).collect());
    let policies = args
        .h_policies
        .clone()
        .unwrap_or_else(|| vec!["0.1".into(), "1".into(), "eps".into()])
        .iter()
        .map(|p| parse_policy(p))
        .collect::<Result<Vec<_>, _>>()?;
    let orders = args
        .orders
        .clone()
        .unwrap_or_else(|| vec!["first".into(), "second".into()])
        .iter()
        .map(|o| match o.as_str() {
            "first" => Ok(DynamicsOrder::First),
            "second" => Ok(DynamicsOrder::Second),
            other => Err(CliError::Config(format!("orders: unknown '{other}' (expected first or second)"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = args.n.unwrap_or(100_000);
    let norm_a = stoch_euler::linalg::spectral_norm(&lin.a)?;
    let c = ctx(s);

    let mut slope_rows = Vec::new();
    let mut bound_rows = Vec::new();
    let mut plot = LinePlot::new("local RMS truncation error", "epsilon", "rmste").log_log();
    for &order in &orders {
        let order_tag = if order == DynamicsOrder::First { "first" } else { "second" };
        for &policy in &policies {
            let table = estimate_rmste(&lin, &eps_grid, policy, order, n, &c)?;
            let fitted: ConvergenceTable = if args.drop_coarsest { table.without_coarsest() } else { table.clone() };
            let tag = policy_tag(policy);
            let rows: Vec<Vec<String>> = table
                .rows
                .iter()
                .map(|r| {
                    vec![
                        num(r.x),
                        num(r.h),
                        n.to_string(),
                        num(r.estimate.mean),
                        num(r.estimate.std_error),
                        r.diverged.to_string(),
                    ]
                })
                .collect();
            out.csv(
                &format!("rmste_{order_tag}_{tag}.csv"),
                &["epsilon", "h", "n", "rmste", "stderr", "diverged"],
                &rows,
            )?;
            for r in &table.rows {
                bound_rows.push(vec![
                    order_tag.to_string(),
                    tag.clone(),
                    num(r.x),
                    num(r.h),
                    num(r.estimate.mean),
                    num(divergent_local_bound(r.x, norm_a, r.h).sqrt()),
                ]);
            }
            o.say(format!(
                "{order_tag} order, {}: slope {} ± {}",
                policy.label(),
                opt_num(fitted.slope),
                opt_num(fitted.slope_stderr)
            ));
            slope_rows.push(vec![
                order_tag.to_string(),
                tag.clone(),
                opt_num(fitted.slope),
                opt_num(fitted.slope_stderr),
            ]);
            plot.add(
                format!("{order_tag}, {}", policy.label()),
                table.rows.iter().map(|r| (r.x, r.estimate.mean)).collect(),
            );
        }
    }
    out.csv("rmste_slopes.csv", &["order", "h_policy", "slope", "stderr"], &slope_rows)?;
    out.csv("rmste_bounds.csv", &["order", "h_policy", "epsilon", "h", "rmste", "root_bound"], &bound_rows)?;
    out.plot("rmste.svg", &plot)?;
    Ok(o)
}

/// Decay constants `(κ, c₃)` of the mean-square bound when its hypotheses hold.
fn decay_constants(rates: &[f64], h: f64, kappa: Option<f64>) -> Result<(f64, f64), String> {
    let lmin = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let k = kappa.unwrap_or_else(|| default_kappa(lmin, h));
    lyapunov_constants_multidim(rates, h, k).map(|c3| (k, c3)).map_err(|e| e.to_string())
}

#[derive(Debug)]
struct Verdict {
    combined: Option<f64>,
    stderr: Option<f64>,
    bound: Option<f64>,
    label: &'static str,
}

fn bound_verdict(row: &MomentRow, constants: Option<(f64, f64)>, u0_sq: f64) -> Verdict {
    let Some((kappa, c3)) = constants else {
        return Verdict { combined: None, stderr: None, bound: None, label: "n/a" };
    };
    let bound = (-kappa * row.t).exp() * u0_sq;
    match row.combined(c3) {
        None => Verdict { combined: None, stderr: None, bound: Some(bound), label: "diverged" },
        Some(e) => Verdict {
            combined: Some(e.mean),
            stderr: Some(e.std_error),
            bound: Some(bound),
            label: if e.mean <= bound + 3.0 * e.std_error { "pass" } else { "fail" },
        },
    }
}

/// Jump-chain steps tabulated next to the 1D second moments.
const JUMP_CHAIN_K_MAX: usize = 20;

pub fn stability(s: &Settings, args: &StabilityArgs, out: &mut Outputs) -> Result<Outcome, CliError> {
    let mut o = Outcome::default();
    let name = args.problem.as_deref().unwrap_or("linear1d");
    let a = positive("a", args.a.unwrap_or(1.0))?;
    let lin = linear_problem(name, a, args.diag.as_deref(), args.u0.as_deref())?;
    let h_grid = args.h_grid.clone().unwrap_or_else(|| vec![0.125, 0.25, 0.5, 1.0, 2.0]);
    positive_all("h_grid", &h_grid)?;
    let t_grid = args.t_grid.clone().unwrap_or_else(|| (0..=15).map(|i| 4.0 * i as f64).collect());
    let n = args.n.unwrap_or(1_000_000);
    let rates = symmetric_decay_rates(&lin.a).ok();
    let u0_sq = lin.u0.norm_sq();
    let c = ctx(s);

    let mut rows = Vec::new();
    let mut check_rows = Vec::new();
    let mut ref_rows = Vec::new();
    let mut plot = LinePlot::new(&format!("second moments, {name}"), "t", "E|V(t)|^2").log_y();
    for &h in &h_grid {
        let constants = match &rates {
            Some(r) => match decay_constants(r, h, args.kappa) {
                Ok(k) => Some(k),
                Err(e) => {
                    o.say(format!("h={h}: no decay bound ({e})"));
                    None
                }
            },
            None => None,
        };
        let cells = estimate_second_moment(&lin, h, &t_grid, n, &c, true)?;
        let mut series = Vec::new();
        for r in &cells {
            let v = bound_verdict(r, constants, u0_sq);
            let ms = r.mean_sq.as_ref();
            rows.push(vec![
                num(r.t),
                num(h),
                n.to_string(),
                opt_num(ms.map(|m| m.mean)),
                opt_num(ms.map(|m| m.sample_sd)),
                opt_num(ms.map(|m| m.std_error)),
                u8::from(r.is_diverged()).to_string(),
                opt_num(v.bound),
            ]);
            if let Some(m) = ms {
                series.push((r.t, m.mean));
            }
            if rates.is_some() {
                if v.label == "fail" {
                    o.fail(format!("decay bound at h={h}, t={}", r.t));
                }
                check_rows.push(vec![
                    num(r.t),
                    num(h),
                    opt_num(v.combined),
                    opt_num(v.stderr),
                    opt_num(v.bound),
                    v.label.into(),
                ]);
            }
            if lin.dim() == 1 {
                let a1 = -lin.a[(0, 0)];
                ref_rows.push(vec![
                    num(r.t),
                    num(h),
                    num((-2.0 * a1 * r.t).exp() * u0_sq),
                    num((-r.t / (2.0 * h)).exp() * u0_sq),
                ]);
            }
        }
        let diverged = cells.iter().filter(|r| r.is_diverged()).count();
        if diverged > 0 {
            o.say(format!("h={h}: {diverged} diverged cells"));
        }
        plot.add(format!("h={h}"), series);
        if lin.dim() == 1 {
            let a1 = -lin.a[(0, 0)];
            let u = lin.u0[0];
            let chain = estimate_jump_chain_moments(a1, h, JUMP_CHAIN_K_MAX, n, &c, ChainOrder::First)?;
            // The estimator runs from u₀ = 1; moments scale with u₀ and u₀².
            let chain_rows: Vec<Vec<String>> = chain
                .iter()
                .map(|r| {
                    vec![
                        r.k.to_string(),
                        r.n.to_string(),
                        num(r.emp_mean * u),
                        num(r.emp_m2 * u * u),
                        num(r.pred_mean * u),
                        num(r.pred_m2 * u * u),
                        num(r.se_mean * u.abs()),
                        num(r.se_m2 * u * u),
                    ]
                })
                .collect();
            out.csv(
                &format!("jumpchain_h{h}.csv"),
                &["k", "n", "emp_mean", "emp_m2", "pred_mean", "pred_m2", "se_mean", "se_m2"],
                &chain_rows,
            )?;
        }
    }
    out.csv("moments.csv", &["t", "h", "n", "mean_sq", "sd", "stderr", "diverged", "bound_value"], &rows)?;
    if rates.is_some() {
        out.csv("bound_check.csv", &["t", "h", "combined", "combined_stderr", "bound_value", "verdict"], &check_rows)?;
    }
    if lin.dim() == 1 {
        out.csv("reference.csv", &["t", "h", "exp_minus_2at", "exp_minus_t_over_2h"], &ref_rows)?;
    }
    out.plot("moments.svg", &plot)?;
    Ok(o)
}

pub fn ded_oscillator(_s: &Settings, args: &DedOscillatorArgs, out: &mut Outputs) -> Result<Outcome, CliError> {
    let mut o = Outcome::default();
    let h_grid = args.h_grid.clone().unwrap_or_else(|| vec![0.2, 0.6, 2.0 / 3.0, 0.7]);
    positive_all("h_grid", &h_grid)?;
    let t_end = positive("t_end", args.t_end.unwrap_or(40.0))?;
    let points = args.grid_points.unwrap_or(401).max(2);
    let osc = LinearOde::oscillator();

    let mut traj = Vec::new();
    let mut eig_rows = Vec::new();
    let mut plot = LinePlot::new("deterministic dynamics, damped oscillator", "t", "w_1");
    for &h in &h_grid {
        let rep = stability_report(&osc.a, h)?;
        let rel = (h - rep.h_max) / rep.h_max;
        let (expected, ok) = if rel.abs() <= 1e-9 {
            ("boundary", rep.max_re_b.abs() <= 1e-10)
        } else if rel < 0.0 {
            ("stable", rep.max_re_b < 0.0)
        } else {
            ("unstable", rep.max_re_b > 0.0)
        };
        o.say(format!("h={h}: max Re eig(B) = {:e} ({expected})", rep.max_re_b));
        if !ok {
            o.fail(format!("h={h}: max Re eig(B) = {} inconsistent with threshold {}", rep.max_re_b, rep.h_max));
        }
        eig_rows.push(vec![
            num(h),
            num(rep.max_re_b),
            num(rep.h_max),
            expected.into(),
            if ok { "pass" } else { "fail" }.into(),
        ]);
        let mut series = Vec::new();
        for t in linspace(0.0, t_end, points) {
            let st = ded_linear(&osc, h, t)?;
            series.push((t, st.w[0]));
            traj.push(vec![num(h), num(t), num(st.w[0]), num(st.w[1]), num(st.wbar[0]), num(st.wbar[1])]);
        }
        plot.add(format!("h={h:.4}"), series);
    }
    out.csv("ded_oscillator.csv", &["h", "t", "w_1", "w_2", "wbar_1", "wbar_2"], &traj)?;
    out.csv("ded_oscillator_eig.csv", &["h", "max_re_eig_b", "threshold", "expected", "verdict"], &eig_rows)?;
    out.plot("ded_oscillator.svg", &plot)?;
    Ok(o)
}

pub fn lyapunov(s: &Settings, args: &LyapunovArgs, out: &mut Outputs) -> Result<Outcome, CliError> {
    let mut o = Outcome::default();
    let h = positive("h", args.h.unwrap_or(0.125))?;
    let rates: Vec<f64> = match &args.eigs {
        Some(e) => e.clone(),
        None => vec![positive("a", args.a.unwrap_or(1.0))?],
    };
    // Hypothesis violations are numeric errors here, reported verbatim.
    let hyp = |e: stoch_euler::Error| CliError::Numeric(e.to_string());
    let lmin = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let kappa = args.kappa.unwrap_or_else(|| default_kappa(lmin.max(0.0), h));
    let c3 = if rates.len() == 1 {
        lyapunov_constants(rates[0], h, kappa).map_err(hyp)?.c3
    } else {
        lyapunov_constants_multidim(&rates, h, kappa).map_err(hyp)?
    };
    o.say(format!("kappa = {kappa}"));
    o.say(format!("c3 = {c3}"));

    let mut table = vec![vec!["h".into(), num(h)], vec!["kappa".into(), num(kappa)], vec!["c3".into(), num(c3)]];
    let grid = square_lattice(10.0, 101);
    for &l in &rates {
        let spec = LyapunovSpec { a: l, h, kappa, c1: 1.0, c2: 0.0, c3 };
        let r = lyapunov_generator_inequality_check(l, &spec, &grid);
        o.say(format!(
            "rate {l}: form min eigenvalue {:e}, lattice violations {}/{} (max {:e})",
            r.form_min_eigenvalue, r.violations, r.points, r.max_violation
        ));
        if !r.passed() {
            o.fail(format!("decay inequality for rate {l}: form is not positive semidefinite"));
        }
        table.push(vec![format!("form_min_eigenvalue[{l}]"), num(r.form_min_eigenvalue)]);
        table.push(vec![format!("lattice_violations[{l}]"), r.violations.to_string()]);
        table.push(vec![format!("lattice_max_violation[{l}]"), num(r.max_violation)]);
    }
    out.csv("lyapunov.csv", &["quantity", "value"], &table)?;

    if args.mc {
        let neg: Vec<f64> = rates.iter().map(|r| -r).collect();
        let d = rates.len();
        let lin = LinearOde::new(Matrix::diag(&neg), vec![1.0 / (d as f64).sqrt(); d])?;
        let t_grid = args.t_grid.clone().unwrap_or_else(|| (1..=8).map(|i| 4.0 * i as f64).collect());
        let cells = estimate_second_moment(&lin, h, &t_grid, args.n.unwrap_or(100_000), &ctx(s), true)?;
        let mut rows = Vec::new();
        for r in &cells {
            let v = bound_verdict(r, Some((kappa, c3)), lin.u0.norm_sq());
            if v.label != "pass" {
                o.fail(format!("mean-square bound at t={}: {}", r.t, v.label));
            }
            rows.push(vec![num(r.t), opt_num(v.combined), opt_num(v.stderr), opt_num(v.bound), v.label.into()]);
        }
        out.csv("lyapunov_mc.csv", &["t", "combined", "combined_stderr", "bound_value", "verdict"], &rows)?;
    }
    Ok(o)
}

pub fn simplex_test(s: &Settings, args: &SimplexTestArgs, out: &mut Outputs) -> Result<Outcome, CliError> {
    let mut o = Outcome::default();
    let ks = args.k.clone().unwrap_or_else(|| vec![1, 2, 3]);
    if let Some(k) = ks.iter().find(|k| !(1..=3).contains(*k)) {
        return Err(CliError::Config(format!("k: must be in 1..=3, got {k}")));
    }
    let t = positive("t", args.t.unwrap_or(1.0))?;
    let h = positive("h", args.h.unwrap_or(0.5))?;
    let n = args.n.unwrap_or(10_000);
    let sampler = if args.negative_control { SimplexSampler::DirichletFace } else { SimplexSampler::Uniform };
    let c = ctx(s);

    let mut rows = Vec::new();
    for &k in &ks {
        let rep = simplex_ks_test(k, t, h, n, sampler, &c)?;
        for (i, r) in rep.per_coordinate.iter().enumerate() {
            rows.push(vec![
                k.to_string(),
                (i + 1).to_string(),
                num(r.statistic),
                num(r.p_value),
                r.rejected(stoch_euler::montecarlo::KS_ALPHA).to_string(),
            ]);
        }
        let verdict = if rep.rejected { "rejected" } else { "not rejected" };
        o.say(format!("k={k}: min p-value {:e}, {verdict}", rep.min_p));
        if rep.rejected != args.negative_control {
            o.fail(format!("k={k}: {verdict}"));
        }
    }
    out.csv("simplex.csv", &["k", "coordinate", "statistic", "p_value", "rejected"], &rows)?;
    Ok(o)
}
