//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use splap_core::analysis::{bias, corrected_rate, fit_rate, mean_bias, path_error_against};
use splap_core::config::{ExperimentConfig, InitialSpec, PhiSpec};
use splap_core::constitutive::{monotonicity_pairing, quasi_distance_sq, GrowthParams, SmallMatrix};
use splap_core::fem::{nodal_interpolate, BrokenFeFunction};
use splap_core::experiment::run_experiment;
use splap_core::psolver::{Formulation, StepProblem};
use splap_core::stepper::{run_trajectory, SchemeConfig};
use splap_core::stochastics::{
    noise_load, random_time_grid, sample_path, uniform_time_grid, NoiseCoefficient, NoiseMode,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const FIT_TAUS: [f64; 4] = [0.5, 0.25, 0.125, 0.0625];

fn linear_oracle() -> Outcome {
    let sys = system(16);
    let mesh = sys.ops().mesh();
    let noise = NoiseCoefficient::inverse_sqrt_radius(mesh, 1, NoiseMode::Additive).unwrap();
    let path = sample_path(2024, 1.0, 16, 1).unwrap();
    let mut cfg = SchemeConfig::new(
        GrowthParams::new(2.0, 0.0).unwrap(),
        uniform_time_grid(16, 1.0).unwrap(),
        &noise,
        &path,
        nodal_interpolate(mesh, |_| 1.0).unwrap(),
    );
    cfg.tol = 1e-12;
    let traj = run_trajectory(&sys, &cfg).map_err(|e| e.to_string())?;

    let tau = 1.0 / 16.0;
    let (p, a) = dense_mass_stiffness(mesh);
    let idx = interior(mesh);
    let chol = restrict_matrix(&(&p + &a * tau), &idx).cholesky().unwrap();
    let mut worst_step: f64 = 0.0;
    let mut worst_chain: f64 = 0.0;
    let mut chain = traj.states[0].clone();
    for m in 1..=16 {
        let dw = path.increment(m - 1, m).unwrap();
        // one step from the computed state
        let f = noise_load(sys.ops(), &noise, &traj.states[m - 1], &dw).unwrap();
        let step = chol.solve(&restrict_vector(&dense_broken_load(mesh, &f), &idx));
        let got = sys.ops().restrict(&traj.states[m].coeffs);
        worst_step = worst_step.max(rel_err(&got, step.as_slice()));
        // the whole chain by dense solves alone
        let f = noise_load(sys.ops(), &noise, &chain, &dw).unwrap();
        let next = chol.solve(&restrict_vector(&dense_broken_load(mesh, &f), &idx));
        chain = splap_core::fem::FeFunction::new(sys.ops().prolong(next.as_slice()));
        worst_chain = worst_chain.max(rel_err(&traj.states[m].coeffs, &chain.coeffs));
    }
    check(
        worst_step <= 1e-8 && worst_chain <= 1e-7,
        format!("max step error {worst_step:.2e} (<= 1e-8), trajectory error {worst_chain:.2e} (<= 1e-7)"),
    )
}

fn random_broken(rng: &mut ChaCha8Rng, ns: usize, scale: f64) -> BrokenFeFunction {
    BrokenFeFunction { coeffs: (0..3 * ns).map(|_| rng.random_range(-scale..scale)).collect() }
}

fn gradient_fd() -> Outcome {
    let sys = system(4);
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let p = [1.1, 1.5, 2.5, 4.0][trial % 4];
        let eps = [1e-2, 1e-4][(trial / 4) % 2];
        let f = random_broken(&mut rng, sys.ops().simplex_count(), 1.0);
        let tau = rng.random_range(0.01..1.0);
        let prob = StepProblem::new(&sys, GrowthParams::new(p, 0.0).unwrap(), tau, &f, Formulation::Euclidean).unwrap();
        let u: Vec<f64> = (0..prob.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = prob.gradient(&u, eps).unwrap();
        let fd: Vec<f64> = (0..u.len())
            .map(|k| {
                let h = 1e-6;
                let mut up = u.clone();
                let mut um = u.clone();
                up[k] += h;
                um[k] -= h;
                (prob.objective_eps(&up, eps).unwrap() - prob.objective_eps(&um, eps).unwrap()) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel_err(&g, &fd));
    }
    check(worst < 1e-5, format!("50 problems, worst relative error {worst:.2e} (< 1e-5)"))
}

fn brute_force() -> Outcome {
    let sys = system(2);
    let mesh = sys.ops().mesh();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for p in [1.1, 1.5, 2.5] {
        let params = GrowthParams::new(p, 0.0).unwrap();
        for _ in 0..20 {
            let f = random_broken(&mut rng, mesh.simplex_count(), 3.0);
            let prob = StepProblem::new(&sys, params, 0.5, &f, Formulation::Euclidean).unwrap();
            let (u, _) = prob.solve(&[0.0], 1e-10).map_err(|e| e.to_string())?;
            let best = grid_search(
                |x| dense_objective(mesh, &params, 0.5, &f, &sys.ops().prolong(&[x])),
                -10.0,
                10.0,
                1e-6,
            );
            worst = worst.max((u[0] - best).abs());
        }
    }
    check(worst <= 2e-6, format!("60 problems, worst |u - u_grid| {worst:.2e} (grid spacing 1e-6)"))
}

fn equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut lines = Vec::new();
    let mut ok = true;
    for p in [1.1, 1.5, 2.0, 2.5, 4.0] {
        let q: f64 = p - 1.0;
        let (c, big_c) = (0.5 * q.min(1.0 / q), 2.0 * q.max(1.0 / q));
        for kappa in [0.0, 1.0] {
            let gp = GrowthParams::new(p, kappa).unwrap();
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for _ in 0..10_000 {
                let xi = SmallMatrix::row2(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)).unwrap();
                let eta = SmallMatrix::row2(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)).unwrap();
                let m = monotonicity_pairing(&xi, &eta, &gp).unwrap();
                let d = quasi_distance_sq(&xi, &eta, &gp).unwrap();
                ok &= m > 0.0;
                lo = lo.min(d / m);
                hi = hi.max(d / m);
            }
            ok &= lo >= c && hi <= big_c;
            lines.push(format!("p={p} κ={kappa}: [{lo:.3}, {hi:.3}] ⊂ [{c:.3}, {big_c:.3}]"));
        }
    }
    check(ok, lines.join("; "))
}

fn bias_formula() -> Outcome {
    let b = bias(0.5, 1.0 / 32.0, 1.0).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for a0 in [0.1, 0.44, 0.7, 0.88, 1.0, 1.5, 2.0] {
        let a_tilde = a0 * mean_bias(&FIT_TAUS, 1.0 / 32.0, a0).unwrap();
        let back = corrected_rate(a_tilde, &FIT_TAUS, 1.0 / 32.0).map_err(|e| e.to_string())?;
        worst = worst.max((back.a - a0).abs());
    }
    let c = corrected_rate(1.3, &FIT_TAUS, 1.0 / 32.0).map_err(|e| e.to_string())?;
    check(
        b == 16.0 / 15.0 && worst <= 1e-8 && (0.86..=0.90).contains(&c.a) && (0.43..=0.45).contains(&c.alpha),
        format!(
            "bias(1/2,1/32,1) = {b:?}, roundtrip error {worst:.1e}, ã = 1.3 gives a = {:.4}, α = {:.4}",
            c.a, c.alpha
        ),
    )
}

fn regression() -> Outcome {
    let taus: [f64; 5] = [0.5, 0.25, 0.125, 0.0625, 0.03125];
    let mut worst: f64 = 0.0;
    for a in [0.3, 0.88, 1.3, 2.0] {
        let values: Vec<f64> = taus.iter().map(|t| 0.7 * t.powf(a)).collect();
        let fit = fit_rate(&taus, &values).map_err(|e| e.to_string())?;
        worst = worst.max((fit.a - a).abs());
    }
    check(worst <= 1e-10, format!("worst exponent error {worst:.1e} (<= 1e-10)"))
}

fn nested_noise() -> Outcome {
    let mut mismatches = 0;
    for seed in 0..100u64 {
        let path = sample_path(seed, 1.0, 64, 1).unwrap();
        for ratio in [2usize, 4, 8, 16] {
            for start in (0..64).step_by(ratio) {
                let coarse = path.increment(start, start + ratio).unwrap()[0];
                let mut sum = 0.0;
                for i in start..start + ratio {
                    sum += path.increment(i, i + 1).unwrap()[0];
                }
                if coarse.to_bits() != sum.to_bits() {
                    mismatches += 1;
                }
            }
        }
    }
    check(mismatches == 0, format!("100 seeds x ratios {{2,4,8,16}}: {mismatches} mismatches"))
}

fn random_grid_law() -> Outcome {
    let (steps, tau) = (8usize, 0.125);
    let n = 100_000;
    let mut violations = 0;
    let mut sums = vec![0.0; steps + 1];
    for seed in 0..n as u64 {
        let g = random_time_grid(seed, steps, 1.0).unwrap();
        for m in 1..=steps {
            let t = g.points()[m];
            let c = m as f64 * tau;
            let step = g.step(m);
            if !(t >= c - tau / 4.0 && t <= c + tau / 4.0 && step >= tau / 2.0 && step <= 1.5 * tau) {
                violations += 1;
            }
            sums[m] += t;
        }
    }
    let se = (tau / 2.0) / 12f64.sqrt() / (n as f64).sqrt();
    let worst_z = (1..=steps)
        .map(|m| (sums[m] / n as f64 - m as f64 * tau).abs() / se)
        .fold(0.0, f64::max);
    check(
        violations == 0 && worst_z < 4.0,
        format!("{n} grids: {violations} window violations, worst mean deviation {worst_z:.2} SE (< 4)"),
    )
}

fn desk_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        p_list: vec![1.1, 1.5, 2.5],
        mesh_n: 16,
        tau_ladder: vec![0.5, 0.25, 0.125, 0.0625],
        fit_taus: vec![0.5, 0.25, 0.125, 0.0625],
        tau_ref: 1.0 / 32.0,
        n_r: 30,
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn desk_reproduction(dir: &std::path::Path) -> Outcome {
    let cfg = desk_config(dir);
    assert_eq!(cfg.noise.phi, PhiSpec::InvSqrtRadius);
    assert_eq!(cfg.initial, InitialSpec::Ones);
    let start = Instant::now();
    let report = run_experiment(&cfg, None).map_err(|e| e.to_string())?;
    let mut ok = report.summary.failed_cells() == 0;
    let mut lines = Vec::new();
    for e in &report.summary.exponents {
        let means: Vec<String> = e.levels.iter().map(|l| format!("{:.3}", l.mean)).collect();
        match &e.estimate {
            Some(r) => {
                let alpha = r.correction.map(|c| c.alpha);
                ok &= (1.0..=1.6).contains(&r.a_biased) && alpha.is_some_and(|a| (0.30..=0.60).contains(&a));
                let alpha = alpha.map_or_else(|| "none (no root)".to_string(), |a| format!("{a:.3}"));
                lines.push(format!(
                    "p={}: ã = {:.3} ± {:.3}, α = {alpha}, mean-curve slope {:.3}, Ẽ = [{}]",
                    e.p,
                    r.a_biased,
                    r.slope_std,
                    r.a_mean_curve,
                    means.join(", ")
                ));
            }
            None => {
                ok = false;
                lines.push(format!("p={}: {}", e.p, e.estimate_error.as_deref().unwrap_or("no estimate")));
            }
        }
    }
    lines.push(format!("{:.0} s", start.elapsed().as_secs_f64()));
    check(ok, format!("target ã ∈ [1.0, 1.6], α ∈ [0.30, 0.60]; {}", lines.join("; ")))
}

fn determinism(first: &std::path::Path, second: &std::path::Path) -> Outcome {
    run_experiment(&desk_config(second), Some(3)).map_err(|e| e.to_string())?;
    let a = fs::read(first.join("results.csv")).map_err(|e| e.to_string())?;
    let b = fs::read(second.join("results.csv")).map_err(|e| e.to_string())?;
    let workers = rayon::current_num_threads();
    check(a == b, format!("results.csv from {workers} and 3 workers: {} and {} bytes, identical = {}", a.len(), b.len(), a == b))
}

/// Quasi-norm error of the heat equation against `u₀(x)(1+2π²τ)^{-m}`, the
/// exact solution of the time-discrete problem for `u₀ = sin πx sin πy`.
fn heat_quasi_error(n: usize, steps: usize, horizon: f64) -> f64 {
    let sys = system(n);
    let mesh = sys.ops().mesh();
    let noise = NoiseCoefficient::zero(mesh.simplex_count(), 1).unwrap();
    let path = sample_path(1, horizon, steps, 1).unwrap();
    let u0 = |x: [f64; 2]| (PI * x[0]).sin() * (PI * x[1]).sin();
    let params = GrowthParams::new(2.0, 0.0).unwrap();
    let cfg = SchemeConfig::new(params, uniform_time_grid(steps, horizon).unwrap(), &noise, &path, nodal_interpolate(mesh, u0).unwrap());
    let traj = run_trajectory(&sys, &cfg).unwrap();
    let tau = horizon / steps as f64;
    let decay = 1.0 / (1.0 + 2.0 * PI * PI * tau);
    let reference = move |m: usize, _t: f64, x: [f64; 2]| {
        let r = decay.powi(m as i32);
        let g = [PI * (PI * x[0]).cos() * (PI * x[1]).sin(), PI * (PI * x[0]).sin() * (PI * x[1]).cos()];
        (r * u0(x), [r * g[0], r * g[1]])
    };
    path_error_against(&traj, sys.ops(), &params, &reference).unwrap().quasi_sum
}

fn h_dependence() -> Outcome {
    let errors: Vec<f64> = [8, 16, 32].iter().map(|&n| heat_quasi_error(n, 32, 0.25)).collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    check(
        ratios.iter().all(|r| (3.0..=5.0).contains(r)),
        format!(
            "τ = 1/128, quasi_sum at h = 1/8, 1/16, 1/32: {:.3e}, {:.3e}, {:.3e}; ratios {:.3}, {:.3} (in [3, 5])",
            errors[0], errors[1], errors[2], ratios[0], ratios[1]
        ),
    )
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let first = tmp.path().join("desk");
    let second = tmp.path().join("desk-again");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("linear oracle equivalence", Box::new(linear_oracle)),
        ("gradient correctness", Box::new(gradient_fd)),
        ("brute-force optimizer oracle", Box::new(brute_force)),
        ("distance/pairing equivalence", Box::new(equivalence)),
        ("bias formula", Box::new(bias_formula)),
        ("regression exactness", Box::new(regression)),
        ("nested-noise exactness", Box::new(nested_noise)),
        ("random-grid law", Box::new(random_grid_law)),
        ("desk-scale reproduction", Box::new(|| desk_reproduction(&first))),
        ("determinism across worker counts", Box::new(|| determinism(&first, &second))),
        ("h-dependence of the quasi-norm error", Box::new(h_dependence)),
    ];
    let mut failed = Vec::new();
    for (name, run) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failed.push(*name);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed.len(), criteria.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
