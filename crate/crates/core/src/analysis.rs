//! Error functionals, Monte-Carlo estimation of the refinement error, and
//! rate estimation with bias correction.
//!
//! The error of a coarse trajectory `u` against a finer one `ũ` at the
//! coarse times is
//!
//! ```text
//! max_m ‖ũ(𝔱_m) − u_m‖²_{L²} + Σ_m τ_m ‖F(∇ũ(𝔱_m)) − F(∇u_m)‖²_{L²}.
//! ```
//!
//! Refinement-based slopes overstate the true order by the factor
//! `β_{τ,τ̃}(a) = τᵃ/(τᵃ − τ̃ᵃ)`; [`corrected_rate`] inverts the averaged
//! relation `a·β_μ(a) = ã`.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::constitutive::{tensor_f, GrowthParams, SmallMatrix};
use crate::error::{Error, Result};
use crate::fem::FemOperators;
use crate::mesh::Point;
use crate::psolver::InteriorSystem;
use crate::stepper::{run_trajectory, SchemeConfig, Trajectory};
use crate::stochastics::{mix_seed, random_time_grid, sample_path, uniform_time_grid, GridKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathError {
    pub max_l2_sq: f64,
    pub quasi_sum: f64,
    pub total: f64,
}

impl PathError {
    fn new(max_l2_sq: f64, quasi_sum: f64) -> Self {
        PathError {
            max_l2_sq,
            quasi_sum,
            total: max_l2_sq + quasi_sum,
        }
    }

    pub const ZERO: PathError = PathError {
        max_l2_sq: 0.0,
        quasi_sum: 0.0,
        total: 0.0,
    };
}

/// Error of `coarse` with `fine` standing in for the exact solution,
/// evaluated at the coarse grid points.
pub fn path_error(
    coarse: &Trajectory,
    fine: &Trajectory,
    ops: &FemOperators,
    params: &GrowthParams,
) -> Result<PathError> {
    let fine_points = fine.grid.points();
    let tol = 1e-9 * fine.grid.mean_step();
    let mut cursor = 0;
    let mut max_l2: f64 = 0.0;
    let mut quasi = 0.0;
    for m in 1..coarse.states.len() {
        let t = coarse.grid.points()[m];
        while cursor < fine_points.len() && fine_points[cursor] < t - tol {
            cursor += 1;
        }
        if cursor == fine_points.len() || (fine_points[cursor] - t).abs() > tol {
            return Err(Error::input(format!("coarse time {t} is not a point of the fine grid")));
        }
        let reference = &fine.states[cursor];
        let approx = &coarse.states[m];
        max_l2 = max_l2.max(ops.l2_error_sq(reference, approx)?);
        quasi += coarse.grid.step(m) * ops.quasinorm_error_sq(reference, approx, params)?;
    }
    Ok(PathError::new(max_l2, quasi))
}

/// Symmetric 7-point rule, exact for degree 5; barycentric points and
/// weights normalized to the simplex area.
fn quadrature7() -> [([f64; 3], f64); 7] {
    let s = 15f64.sqrt();
    let a = (6.0 - s) / 21.0;
    let b = (6.0 + s) / 21.0;
    let wa = (155.0 - s) / 1200.0;
    let wb = (155.0 + s) / 1200.0;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 9.0 / 40.0),
        ([a, a, 1.0 - 2.0 * a], wa),
        ([a, 1.0 - 2.0 * a, a], wa),
        ([1.0 - 2.0 * a, a, a], wa),
        ([b, b, 1.0 - 2.0 * b], wb),
        ([b, 1.0 - 2.0 * b, b], wb),
        ([1.0 - 2.0 * b, b, b], wb),
    ]
}

/// Value and gradient of a reference solution at step `m`, time `t`, point `x`.
pub type Reference<'a> = dyn Fn(usize, f64, Point) -> (f64, [f64; 2]) + Sync + 'a;

/// Same functional as [`path_error`], against a reference given pointwise
/// and integrated by quadrature instead of a discrete trajectory.
pub fn path_error_against(
    traj: &Trajectory,
    ops: &FemOperators,
    params: &GrowthParams,
    reference: &Reference<'_>,
) -> Result<PathError> {
    let mesh = ops.mesh();
    let rule = quadrature7();
    let mut max_l2: f64 = 0.0;
    let mut quasi = 0.0;
    for m in 1..traj.states.len() {
        let t = traj.grid.points()[m];
        let u = &traj.states[m].coeffs;
        let mut l2 = 0.0;
        let mut q = 0.0;
        for (j, s) in mesh.simplices().iter().enumerate() {
            let corners = mesh.corners(j);
            let gh = ops.simplex_gradient(j, u);
            let fh = tensor_f(&SmallMatrix::row2(gh[0], gh[1])?, params)?;
            for (bary, w) in rule {
                let x = [
                    bary[0] * corners[0][0] + bary[1] * corners[1][0] + bary[2] * corners[2][0],
                    bary[0] * corners[0][1] + bary[1] * corners[1][1] + bary[2] * corners[2][1],
                ];
                let uh = bary[0] * u[s[0]] + bary[1] * u[s[1]] + bary[2] * u[s[2]];
                let (v, g) = reference(m, t, x);
                let fe = tensor_f(&SmallMatrix::row2(g[0], g[1])?, params)?;
                let d = fe.sub(&fh)?;
                l2 += w * ops.areas[j] * (v - uh).powi(2);
                q += w * ops.areas[j] * d.dot(&d)?;
            }
        }
        max_l2 = max_l2.max(l2);
        quasi += traj.grid.step(m) * q;
    }
    Ok(PathError::new(max_l2, quasi))
}

/// One cell of the Monte-Carlo table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRecord {
    pub p: f64,
    pub tau: f64,
    pub replicate: usize,
    pub error: PathError,
}

/// Outcome of one replicate: its error records, or the failure message.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub result: std::result::Result<Vec<McRecord>, String>,
    /// Newton iterations summed over every trajectory of the replicate.
    pub newton_iterations: usize,
    pub max_kkt_residual: f64,
}

/// Per-τ aggregate over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McLevel {
    pub tau: f64,
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

/// Seed of the Brownian path of replicate `r`.
pub fn replicate_seed(master: u64, replicate: usize) -> u64 {
    mix_seed(master, replicate as u64)
}

/// Seed of the random coarse grid of replicate `r`, ladder entry `l`.
pub fn grid_seed(master: u64, replicate: usize, ladder: usize) -> u64 {
    mix_seed(mix_seed(replicate_seed(master, replicate), 0x6772_6964), ladder as u64)
}

/// Number of reference steps in a path: `T/τ̃`, extended on random grids so
/// the last jittered point `T + τ/4` stays covered.
pub fn reference_steps(cfg: &ExperimentConfig) -> usize {
    let base = (cfg.horizon / cfg.tau_ref).round() as usize;
    match cfg.grid_kind {
        GridKind::Deterministic => base,
        GridKind::Random => {
            let widest = cfg.tau_ladder.iter().copied().fold(0.0, f64::max);
            base + (widest / 4.0 / cfg.tau_ref).ceil() as usize
        }
    }
}

/// Runs replicate `r` for exponent `p`: one reference trajectory at `τ̃` and
/// one coarse trajectory per ladder entry, all on the same path.
pub fn run_replicate(cfg: &ExperimentConfig, p: f64, system: &InteriorSystem, replicate: usize) -> ReplicateOutcome {
    let mut newton = 0;
    let mut kkt: f64 = 0.0;
    let result = (|| -> Result<Vec<McRecord>> {
        let ops = system.ops();
        let mesh = ops.mesh();
        let params = GrowthParams::with_eps(p, cfg.kappa, cfg.eps_reg)?;
        let noise = cfg.noise.build(mesh)?;
        let initial = cfg.initial.build(mesh)?;
        let steps = reference_steps(cfg);
        let path_horizon = steps as f64 * cfg.tau_ref;
        let path = sample_path(replicate_seed(cfg.master_seed, replicate), path_horizon, steps, cfg.noise.components)?;

        let scheme = |grid| SchemeConfig {
            params,
            grid,
            noise: &noise,
            path: &path,
            initial: initial.clone(),
            tol: cfg.solver_tol,
            formulation: cfg.formulation,
            clip_initial: cfg.clip_initial,
        };
        let mut tally = |t: &Trajectory| {
            for r in &t.reports {
                newton += r.iterations;
                kkt = kkt.max(r.kkt_residual);
            }
        };

        let fine = run_trajectory(system, &scheme(uniform_time_grid(steps, path_horizon)?))?;
        tally(&fine);

        let mut records = Vec::with_capacity(cfg.tau_ladder.len());
        for (l, &tau) in cfg.tau_ladder.iter().enumerate() {
            let error = if (tau - cfg.tau_ref).abs() <= 1e-12 * tau {
                PathError::ZERO
            } else {
                let m = (cfg.horizon / tau).round() as usize;
                let grid = match cfg.grid_kind {
                    GridKind::Deterministic => uniform_time_grid(m, cfg.horizon)?,
                    GridKind::Random => random_time_grid(grid_seed(cfg.master_seed, replicate, l), m, cfg.horizon)?
                        .snapped(cfg.tau_ref)?,
                };
                let coarse = run_trajectory(system, &scheme(grid))?;
                tally(&coarse);
                path_error(&coarse, &fine, ops, &params)?
            };
            records.push(McRecord {
                p,
                tau,
                replicate,
                error,
            });
        }
        Ok(records)
    })();
    ReplicateOutcome {
        replicate,
        result: result.map_err(|e| e.to_string()),
        newton_iterations: newton,
        max_kkt_residual: kkt,
    }
}

/// All replicates for one exponent, in replicate order. Runs on the
/// current rayon pool; the result does not depend on its size.
pub fn monte_carlo_outcomes(cfg: &ExperimentConfig, p: f64, system: &InteriorSystem) -> Vec<ReplicateOutcome> {
    (0..cfg.n_r)
        .into_par_iter()
        .map(|r| run_replicate(cfg, p, system, r))
        .collect()
}

/// `Ẽ(τ)` with per-replicate values and sample standard deviations.
pub fn monte_carlo_estimate(cfg: &ExperimentConfig, p: f64, system: &InteriorSystem) -> Result<Vec<McLevel>> {
    let outcomes = monte_carlo_outcomes(cfg, p, system);
    let mut records = Vec::new();
    for o in outcomes {
        match o.result {
            Ok(r) => records.extend(r),
            Err(msg) => warn!("p={p} replicate {} failed: {msg}", o.replicate),
        }
    }
    Ok(aggregate_levels(&records, &cfg.tau_ladder))
}

/// Groups records by τ (in ladder order) and forms means and sample
/// standard deviations. The fold order is the record order.
pub fn aggregate_levels(records: &[McRecord], taus: &[f64]) -> Vec<McLevel> {
    taus.iter()
        .map(|&tau| {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| same_tau(r.tau, tau))
                .map(|r| r.error.total)
                .collect();
            let (mean, std) = mean_std(&values);
            McLevel { tau, mean, std, values }
        })
        .collect()
}

pub(crate) fn same_tau(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Arithmetic mean and sample standard deviation (`0` for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub log_c: f64,
    pub a: f64,
    pub stderr: f64,
}

/// Least squares line through `(log τ, log value)`.
pub fn fit_rate(taus: &[f64], values: &[f64]) -> Result<RateFit> {
    if taus.len() != values.len() {
        return Err(Error::input("taus and values differ in length"));
    }
    if taus.len() < 2 {
        return Err(Error::input("rate fit needs at least two points"));
    }
    for (&t, &v) in taus.iter().zip(values) {
        if !(t > 0.0 && v > 0.0 && t.is_finite() && v.is_finite()) {
            return Err(Error::input(format!("rate fit needs positive data, got ({t}, {v})")));
        }
    }
    let x: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|xi| (xi - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::input("rate fit needs at least two distinct steps"));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let a = sxy / sxx;
    let log_c = my - a * mx;
    let stderr = if x.len() > 2 {
        let ssr: f64 = x.iter().zip(&y).map(|(xi, yi)| (yi - log_c - a * xi).powi(2)).sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(RateFit { log_c, a, stderr })
}

/// [`fit_rate`] after dropping nonpositive values; returns the number dropped.
pub fn fit_rate_positive(taus: &[f64], values: &[f64]) -> Result<(RateFit, usize)> {
    let (t, v): (Vec<f64>, Vec<f64>) = taus
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(&t, &v)| (t, v))
        .unzip();
    let dropped = taus.len() - t.len();
    if dropped > 0 {
        warn!("excluded {dropped} nonpositive error values from the log-log fit");
    }
    Ok((fit_rate(&t, &v)?, dropped))
}

/// `τᵃ / (τᵃ − τ̃ᵃ)`.
pub fn bias(tau: f64, tau_tilde: f64, a: f64) -> Result<f64> {
    if !(tau_tilde > 0.0 && tau_tilde < tau) {
        return Err(Error::input(format!("bias needs 0 < τ̃ < τ, got τ̃={tau_tilde}, τ={tau}")));
    }
    if !(a > 0.0 && a <= 2.0) {
        return Err(Error::input(format!("bias needs 0 < a <= 2, got {a}")));
    }
    if a > 1.0 {
        warn!("bias evaluated at a = {a} > 1, outside the range where the correction is derived");
    }
    let ratio = (tau_tilde / tau).powf(a);
    Ok(1.0 / (1.0 - ratio))
}

/// Mean bias over the regression steps.
pub fn mean_bias(taus: &[f64], tau_tilde: f64, a: f64) -> Result<f64> {
    if taus.is_empty() {
        return Err(Error::input("mean bias needs at least one step"));
    }
    let mut total = 0.0;
    for &t in taus {
        total += bias(t, tau_tilde, a)?;
    }
    Ok(total / taus.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub a: f64,
    pub alpha: f64,
}

const BRACKET: (f64, f64) = (1e-6, 2.0);

/// Solves `a·β_μ(a) = ã` for `a` by bisection on `(1e-6, 2]`.
pub fn corrected_rate(a_tilde: f64, taus: &[f64], tau_tilde: f64) -> Result<Correction> {
    if !(a_tilde > 0.0 && a_tilde.is_finite()) {
        return Err(Error::input(format!("biased rate must be positive, got {a_tilde}")));
    }
    if taus.iter().any(|&t| !(t > tau_tilde)) {
        return Err(Error::input("every regression step must exceed τ̃"));
    }
    let quiet = |a: f64| -> Result<f64> {
        let ratios: f64 = taus.iter().map(|&t| 1.0 / (1.0 - (tau_tilde / t).powf(a))).sum();
        Ok(a * ratios / taus.len() as f64)
    };
    // strict monotonicity of a ↦ a·β_μ(a) on the bracket
    let samples = 256;
    let mut prev = quiet(BRACKET.0)?;
    for i in 1..=samples {
        let a = BRACKET.0 + (BRACKET.1 - BRACKET.0) * i as f64 / samples as f64;
        let v = quiet(a)?;
        if !(v > prev) {
            return Err(Error::Correction(format!("a·β_μ(a) not increasing near a = {a}")));
        }
        prev = v;
    }
    let (mut lo, mut hi) = BRACKET;
    let (flo, fhi) = (quiet(lo)? - a_tilde, quiet(hi)? - a_tilde);
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::Correction(format!(
            "no root of a·β_μ(a) = {a_tilde} in ({lo}, {hi}]: range is [{:.6}, {:.6}]",
            flo + a_tilde,
            fhi + a_tilde
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if quiet(mid)? < a_tilde {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 {
            break;
        }
    }
    let a = 0.5 * (lo + hi);
    if a > 1.0 {
        warn!("corrected rate a = {a} exceeds 1");
    }
    Ok(Correction { a, alpha: a / 2.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// Mean of the per-replicate slopes.
    pub a_biased: f64,
    /// Sample standard deviation of the per-replicate slopes.
    pub slope_std: f64,
    /// Slope of the regression through the mean curve `Ẽ(τ)`.
    pub a_mean_curve: f64,
    pub log_c_mean_curve: f64,
    /// Standard error of the mean-curve slope.
    pub stderr_biased: f64,
    /// Bias-corrected `a` and `α`; absent when `a·β_μ(a) = ã` has no root.
    pub correction: Option<Correction>,
    pub correction_error: Option<String>,
    /// Correction applied to the mean-curve slope instead.
    pub a_corrected_mean_curve: Option<f64>,
    pub slopes: Vec<f64>,
    pub excluded_points: usize,
}

/// Rate estimate from the per-τ aggregates, restricted to `fit_taus`.
pub fn estimate_rate(levels: &[McLevel], fit_taus: &[f64], tau_tilde: f64) -> Result<RateEstimate> {
    let chosen: Vec<&McLevel> = fit_taus
        .iter()
        .map(|&t| {
            levels
                .iter()
                .find(|l| same_tau(l.tau, t))
                .ok_or_else(|| Error::input(format!("no Monte-Carlo level at τ = {t}")))
        })
        .collect::<Result<_>>()?;
    let replicates = chosen.iter().map(|l| l.values.len()).min().unwrap_or(0);
    if replicates == 0 {
        return Err(Error::input("no replicate values to fit"));
    }
    let mut slopes = Vec::with_capacity(replicates);
    let mut excluded = 0;
    for r in 0..replicates {
        let values: Vec<f64> = chosen.iter().map(|l| l.values[r]).collect();
        match fit_rate_positive(fit_taus, &values) {
            Ok((fit, dropped)) => {
                excluded += dropped;
                slopes.push(fit.a);
            }
            Err(e) => {
                warn!("replicate {r} skipped in rate fit: {e}");
                excluded += fit_taus.len();
            }
        }
    }
    if slopes.is_empty() {
        return Err(Error::input("no replicate admitted a rate fit"));
    }
    let (a_biased, slope_std) = mean_std(&slopes);
    let means: Vec<f64> = chosen.iter().map(|l| l.mean).collect();
    let (curve, dropped) = fit_rate_positive(fit_taus, &means)?;
    excluded += dropped;
    let (correction, correction_error) = match corrected_rate(a_biased, fit_taus, tau_tilde) {
        Ok(c) => (Some(c), None),
        Err(e) => {
            warn!("{e}");
            (None, Some(e.to_string()))
        }
    };
    let curve_correction = corrected_rate(curve.a, fit_taus, tau_tilde).ok().map(|c| c.a);
    Ok(RateEstimate {
        a_biased,
        slope_std,
        a_mean_curve: curve.a,
        log_c_mean_curve: curve.log_c,
        stderr_biased: curve.stderr,
        correction,
        correction_error,
        a_corrected_mean_curve: curve_correction,
        slopes,
        excluded_points: excluded,
    })
}
