//! Implicit Euler–Maruyama time stepping: each step minimizes the convex
//! step functional with forcing `u_{h,m−1} + Φ Δ_m W`.

use std::io::Write;

use serde::Serialize;

use crate::constitutive::GrowthParams;
use crate::error::{Error, Result};
use crate::fem::FeFunction;
use crate::psolver::{Formulation, InteriorSystem, SolveReport, StepProblem, DEFAULT_TOL};
use crate::stochastics::{noise_load, NoiseCoefficient, NoisePath, TimeGrid};

#[derive(Debug, Clone)]
pub struct SchemeConfig<'a> {
    pub params: GrowthParams,
    pub grid: TimeGrid,
    pub noise: &'a NoiseCoefficient,
    pub path: &'a NoisePath,
    pub initial: FeFunction,
    pub tol: f64,
    pub formulation: Formulation,
    /// Zero the boundary coefficients of the initial state.
    pub clip_initial: bool,
}

impl<'a> SchemeConfig<'a> {
    pub fn new(
        params: GrowthParams,
        grid: TimeGrid,
        noise: &'a NoiseCoefficient,
        path: &'a NoisePath,
        initial: FeFunction,
    ) -> Self {
        SchemeConfig {
            params,
            grid,
            noise,
            path,
            initial,
            tol: DEFAULT_TOL,
            formulation: Formulation::Euclidean,
            clip_initial: false,
        }
    }

    /// Positions of the grid points on the path's finest grid.
    pub fn path_indices(&self) -> Result<Vec<usize>> {
        let idx = self.grid.indices_on(self.path.finest_step())?;
        if let Some(&last) = idx.last() {
            if last > self.path.steps() {
                return Err(Error::input(format!(
                    "time grid reaches fine index {last}, path has only {} steps",
                    self.path.steps()
                )));
            }
        }
        Ok(idx)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<FeFunction>,
    pub grid: TimeGrid,
    pub reports: Vec<SolveReport>,
}

#[derive(Serialize)]
struct StepLog<'a> {
    step: usize,
    time: f64,
    #[serde(flatten)]
    report: &'a SolveReport,
}

impl Trajectory {
    /// `SPLAPT1`, then rows (`M+1`) and columns (vertices) as little-endian
    /// u64, then the states row-major as little-endian f64.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let cols = self.states.first().map_or(0, FeFunction::len);
        w.write_all(b"SPLAPT1")?;
        w.write_all(&(self.states.len() as u64).to_le_bytes())?;
        w.write_all(&(cols as u64).to_le_bytes())?;
        for s in &self.states {
            for v in &s.coeffs {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// One JSON object per step.
    pub fn write_solve_log<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, report) in self.reports.iter().enumerate() {
            let line = StepLog {
                step: i + 1,
                time: self.grid.points()[i + 1],
                report,
            };
            serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn run_trajectory(system: &InteriorSystem, cfg: &SchemeConfig<'_>) -> Result<Trajectory> {
    let ops = system.ops();
    ops.check_len(&cfg.initial)?;
    cfg.grid.validate()?;
    if cfg.noise.components() != cfg.path.components() {
        return Err(Error::input(format!(
            "noise coefficient has {} components, path has {}",
            cfg.noise.components(),
            cfg.path.components()
        )));
    }
    let idx = cfg.path_indices()?;

    let mut initial = cfg.initial.clone();
    if cfg.clip_initial {
        for (c, &b) in initial.coeffs.iter_mut().zip(ops.mesh().boundary_flags()) {
            if b {
                *c = 0.0;
            }
        }
    }

    let steps = cfg.grid.steps();
    let mut states = Vec::with_capacity(steps + 1);
    let mut reports = Vec::with_capacity(steps);
    states.push(initial);
    for m in 1..=steps {
        let prev = &states[m - 1];
        let dw = cfg.path.increment(idx[m - 1], idx[m])?;
        let forcing = noise_load(ops, cfg.noise, prev, &dw)?;
        let wrap = |e: Error| Error::Step {
            step: m,
            source: Box::new(e),
        };
        let prob = StepProblem::new(system, cfg.params, cfg.grid.step(m), &forcing, cfg.formulation).map_err(wrap)?;
        let warm = ops.restrict(&prev.coeffs);
        let (u, report) = prob.solve(&warm, cfg.tol).map_err(wrap)?;
        states.push(FeFunction::new(ops.prolong(&u)));
        reports.push(report);
    }
    Ok(Trajectory {
        states,
        grid: cfg.grid.clone(),
        reports,
    })
}

/// Runs a coarse and a fine trajectory driven by the same Brownian path.
pub fn run_nested_pair(
    system: &InteriorSystem,
    coarse: &SchemeConfig<'_>,
    fine: &SchemeConfig<'_>,
) -> Result<(Trajectory, Trajectory)> {
    if !std::ptr::eq(coarse.path, fine.path) && coarse.path != fine.path {
        return Err(Error::input("nested trajectories must share one noise path"));
    }
    let ci = coarse.path_indices()?;
    let fi = fine.path_indices()?;
    let mut cursor = 0;
    for &c in &ci {
        while cursor < fi.len() && fi[cursor] < c {
            cursor += 1;
        }
        if cursor == fi.len() || fi[cursor] != c {
            return Err(Error::input(format!(
                "coarse grid point at fine index {c} is not on the fine grid"
            )));
        }
    }
    let (a, b) = rayon::join(|| run_trajectory(system, coarse), || run_trajectory(system, fine));
    Ok((a?, b?))
}
