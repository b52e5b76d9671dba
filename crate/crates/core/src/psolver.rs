//! One implicit step as a convex minimization over interior coefficients:
//!
//! ```text
//! min ½ uᵀPu + τ Σⱼ |𝒮ⱼ| Ψ((D u)ⱼ) − fᵀP̃u,   u = Rᵀu_I,
//! ```
//!
//! where `Ψ(ξ) = φ(|ξ|)` with `φ' (t) = (κ+t)^{p−2} t`, so `Ψ(ξ) = |ξ|ᵖ/p` for
//! `κ = 0`. The solver is a damped Newton method on the regularized
//! potential `φ(√(ε²+|ξ|²))`, driving `ε` down through a continuation
//! schedule when `p < 2`.

use nalgebra::DVector;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::pattern::SparsityPattern;
use nalgebra_sparse::{CscMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use crate::constitutive::{potential, tensor_s_regularized, GrowthParams, SmallMatrix};
use crate::error::{Error, Result};
use crate::fem::{spmv, BrokenFeFunction, FemOperators};

/// How the gradient enters the p-growth term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// `|∇u|ᵖ` with the Euclidean norm of the gradient.
    #[default]
    Euclidean,
    /// `Σᵢ |∂ᵢu|ᵖ`, each partial derivative separately.
    Componentwise,
}

const CONTINUATION: [f64; 3] = [1e-2, 1e-4, 1e-6];
const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const MAX_RESCALINGS: usize = 30;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-9;

/// Interior-restricted structure shared by every step on one mesh: the
/// interior mass block and the sparsity pattern of the Newton matrix.
#[derive(Debug, Clone)]
pub struct InteriorSystem {
    ops: FemOperators,
    /// vertex -> interior position
    slot_of: Vec<Option<usize>>,
    pattern: SparsityPattern,
    mass_values: Vec<f64>,
    /// per simplex, per local (a, b): index into the pattern's values
    local_slots: Vec<[[Option<usize>; 3]; 3]>,
}

impl InteriorSystem {
    pub fn new(ops: FemOperators) -> Result<Self> {
        let nv = ops.vertex_count();
        let ni = ops.interior().len();
        if ni == 0 {
            return Err(Error::input("mesh has no interior vertices"));
        }
        let mut slot_of = vec![None; nv];
        for (i, &k) in ops.interior().iter().enumerate() {
            slot_of[k] = Some(i);
        }

        let simplices = ops.mesh().simplices();
        let mut columns: Vec<Vec<usize>> = vec![Vec::new(); ni];
        for s in simplices {
            for &a in s {
                for &b in s {
                    if let (Some(r), Some(c)) = (slot_of[a], slot_of[b]) {
                        columns[c].push(r);
                    }
                }
            }
        }
        let mut offsets = Vec::with_capacity(ni + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for col in &mut columns {
            col.sort_unstable();
            col.dedup();
            indices.extend_from_slice(col);
            offsets.push(indices.len());
        }
        let pattern = SparsityPattern::try_from_offsets_and_indices(ni, ni, offsets, indices)
            .map_err(|e| Error::Validation(format!("hessian pattern: {e}")))?;

        let mut local_slots = Vec::with_capacity(simplices.len());
        let mut mass_values = vec![0.0; pattern.nnz()];
        for (j, s) in simplices.iter().enumerate() {
            let mut slots = [[None; 3]; 3];
            let area = ops.areas[j];
            for a in 0..3 {
                for b in 0..3 {
                    if let (Some(r), Some(c)) = (slot_of[s[a]], slot_of[s[b]]) {
                        let lane = pattern.lane(c);
                        let pos = lane.binary_search(&r).expect("entry in pattern");
                        let idx = pattern.major_offsets()[c] + pos;
                        slots[a][b] = Some(idx);
                        mass_values[idx] += if a == b { area / 6.0 } else { area / 12.0 };
                    }
                }
            }
            local_slots.push(slots);
        }

        Ok(InteriorSystem {
            ops,
            slot_of,
            pattern,
            mass_values,
            local_slots,
        })
    }

    pub fn ops(&self) -> &FemOperators {
        &self.ops
    }

    pub fn interior_len(&self) -> usize {
        self.pattern.major_dim()
    }

    /// Interior mass block `R P Rᵀ` in CSC form.
    pub fn interior_mass(&self) -> CscMatrix<f64> {
        CscMatrix::try_from_pattern_and_values(self.pattern.clone(), self.mass_values.clone())
            .expect("pattern and values agree")
    }

    fn mass_apply(&self, x: &[f64]) -> Vec<f64> {
        // symmetric, so the CSC columns double as rows
        let mut out = vec![0.0; x.len()];
        for (c, out_c) in out.iter_mut().enumerate() {
            let start = self.pattern.major_offsets()[c];
            let lane = self.pattern.lane(c);
            *out_c = lane
                .iter()
                .zip(&self.mass_values[start..start + lane.len()])
                .map(|(&r, &v)| v * x[r])
                .sum();
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub continuation_levels: Vec<f64>,
    pub iterations_per_level: Vec<usize>,
    pub objective_trace: Vec<f64>,
    pub regularizations: usize,
    /// Residual of the variational equation at the returned point.
    pub kkt_residual: f64,
}

/// Data of one implicit step; unknowns are the interior coefficients.
#[derive(Debug, Clone)]
pub struct StepProblem<'a> {
    system: &'a InteriorSystem,
    params: GrowthParams,
    tau: f64,
    formulation: Formulation,
    forcing: &'a BrokenFeFunction,
    /// `R P̃ᵀ f`
    load: Vec<f64>,
}

impl<'a> StepProblem<'a> {
    pub fn new(
        system: &'a InteriorSystem,
        params: GrowthParams,
        tau: f64,
        forcing: &'a BrokenFeFunction,
        formulation: Formulation,
    ) -> Result<Self> {
        params.validate()?;
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::input(format!("time step must be >= 0, got {tau}")));
        }
        let full = system.ops.broken_load(forcing)?;
        let load = system.ops.restrict(&full);
        Ok(StepProblem {
            system,
            params,
            tau,
            formulation,
            forcing,
            load,
        })
    }

    pub fn params(&self) -> &GrowthParams {
        &self.params
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load.is_empty()
    }

    /// Regularization at which the solver stops: `eps_reg` for `p < 2`,
    /// zero otherwise.
    pub fn eps_floor(&self) -> f64 {
        if self.params.p >= 2.0 {
            0.0
        } else {
            self.params.eps_reg
        }
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.load.len() {
            return Err(Error::input(format!(
                "expected {} interior coefficients, got {}",
                self.load.len(),
                u.len()
            )));
        }
        Ok(())
    }

    fn shape_for(&self, eps: f64) -> Shape {
        Shape {
            p: self.params.p,
            kappa: self.params.kappa,
            eps,
        }
    }

    /// Regularized objective.
    pub fn objective_eps(&self, u_interior: &[f64], eps: f64) -> Result<f64> {
        self.check(u_interior)?;
        let ops = &self.system.ops;
        let u = ops.prolong(u_interior);
        let quad = 0.5 * dot(u_interior, &self.system.mass_apply(u_interior));
        let lin = dot(&self.load, u_interior);
        let shape = self.shape_for(eps);
        let mut energy = 0.0;
        for j in 0..ops.simplex_count() {
            let g = ops.simplex_gradient(j, &u);
            let e = match self.formulation {
                Formulation::Euclidean => shape.potential(g[0] * g[0] + g[1] * g[1], &self.params),
                Formulation::Componentwise => {
                    shape.potential(g[0] * g[0], &self.params) + shape.potential(g[1] * g[1], &self.params)
                }
            };
            energy += ops.areas[j] * e;
        }
        Ok(quad + self.tau * energy - lin)
    }

    /// `objective_eps(u + d) − objective_eps(u)`, formed from differences
    /// so that changes far below the objective's magnitude stay resolved.
    fn objective_change(&self, u_interior: &[f64], d: &[f64], eps: f64) -> f64 {
        let ops = &self.system.ops;
        let pu = self.system.mass_apply(u_interior);
        let pd = self.system.mass_apply(d);
        let mut change = 0.0;
        for k in 0..d.len() {
            change += d[k] * (pu[k] - self.load[k] + 0.5 * pd[k]);
        }
        let u = ops.prolong(u_interior);
        let du = ops.prolong(d);
        let shape = self.shape_for(eps);
        let mut energy = 0.0;
        for j in 0..ops.simplex_count() {
            let g = ops.simplex_gradient(j, &u);
            let dg = ops.simplex_gradient(j, &du);
            let e = match self.formulation {
                Formulation::Euclidean => {
                    let t2 = g[0] * g[0] + g[1] * g[1];
                    let dt2 = dg[0] * (2.0 * g[0] + dg[0]) + dg[1] * (2.0 * g[1] + dg[1]);
                    shape.potential_change(t2, dt2, &self.params)
                }
                Formulation::Componentwise => (0..2)
                    .map(|i| shape.potential_change(g[i] * g[i], dg[i] * (2.0 * g[i] + dg[i]), &self.params))
                    .sum(),
            };
            energy += ops.areas[j] * e;
        }
        change + self.tau * energy
    }

    /// Gradient of the ε-regularized objective with respect to `u_I`.
    pub fn gradient(&self, u_interior: &[f64], eps: f64) -> Result<Vec<f64>> {
        self.check(u_interior)?;
        if !(eps >= 0.0) {
            return Err(Error::input("regularization must be >= 0"));
        }
        let ops = &self.system.ops;
        let u = ops.prolong(u_interior);
        let shape = self.shape_for(eps);
        let mut grad = self.system.mass_apply(u_interior);
        for (gv, l) in grad.iter_mut().zip(&self.load) {
            *gv -= l;
        }
        for (j, s) in ops.mesh().simplices().iter().enumerate() {
            let g = ops.simplex_gradient(j, &u);
            let flux = self.flux(&shape, g, j)?;
            let w = self.tau * ops.areas[j];
            let lg = ops.local_gradients(j);
            for a in 0..3 {
                if let Some(i) = self.system.slot_of[s[a]] {
                    grad[i] += w * (lg[a][0] * flux[0] + lg[a][1] * flux[1]);
                }
            }
        }
        Ok(grad)
    }

    fn flux(&self, shape: &Shape, g: [f64; 2], j: usize) -> Result<[f64; 2]> {
        let singular = |t2: f64| shape.eps == 0.0 && shape.p < 2.0 && shape.kappa == 0.0 && t2 == 0.0;
        match self.formulation {
            Formulation::Euclidean => {
                let t2 = g[0] * g[0] + g[1] * g[1];
                if singular(t2) {
                    return Err(Error::Singular(format!("zero gradient on simplex {j} with p < 2 and eps = 0")));
                }
                let c = shape.coefficient(t2);
                Ok([c * g[0], c * g[1]])
            }
            Formulation::Componentwise => {
                let mut out = [0.0; 2];
                for i in 0..2 {
                    let t2 = g[i] * g[i];
                    if singular(t2) {
                        return Err(Error::Singular(format!(
                            "zero partial derivative on simplex {j} with p < 2 and eps = 0"
                        )));
                    }
                    out[i] = shape.coefficient(t2) * g[i];
                }
                Ok(out)
            }
        }
    }

    fn hessian_values(&self, u_interior: &[f64], eps: f64) -> Result<Vec<f64>> {
        let ops = &self.system.ops;
        let u = ops.prolong(u_interior);
        let shape = self.shape_for(eps);
        let mut values = self.system.mass_values.clone();
        for j in 0..ops.simplex_count() {
            let g = ops.simplex_gradient(j, &u);
            let h = match self.formulation {
                Formulation::Euclidean => shape.hessian(g),
                Formulation::Componentwise => {
                    let h0 = shape.hessian([g[0], 0.0])[0][0];
                    let h1 = shape.hessian([0.0, g[1]])[1][1];
                    [[h0, 0.0], [0.0, h1]]
                }
            };
            if h.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Singular(format!("hessian block not finite on simplex {j}")));
            }
            let w = self.tau * ops.areas[j];
            let lg = ops.local_gradients(j);
            let slots = &self.system.local_slots[j];
            for a in 0..3 {
                let ha = [
                    h[0][0] * lg[a][0] + h[0][1] * lg[a][1],
                    h[1][0] * lg[a][0] + h[1][1] * lg[a][1],
                ];
                for b in 0..3 {
                    if let Some(idx) = slots[a][b] {
                        values[idx] += w * (ha[0] * lg[b][0] + ha[1] * lg[b][1]);
                    }
                }
            }
        }
        Ok(values)
    }

    /// `τ Σᵢ D⁽ⁱ⁾ᵀ diag(|𝒮|) sᵢ(Du)` over all vertices, with the flux taken
    /// at the regularization floor. Evaluated through the assembled
    /// derivative matrices and the constitutive tensor.
    pub fn nonlinear_term(&self, u_interior: &[f64]) -> Result<Vec<f64>> {
        self.check(u_interior)?;
        let ops = &self.system.ops;
        let u = ops.prolong(u_interior);
        let d1 = spmv(&ops.dgrad[0], &u);
        let d2 = spmv(&ops.dgrad[1], &u);
        let eps = self.eps_floor();
        let mut s1 = vec![0.0; d1.len()];
        let mut s2 = vec![0.0; d1.len()];
        for j in 0..d1.len() {
            match self.formulation {
                Formulation::Euclidean => {
                    let s = tensor_s_regularized(&SmallMatrix::row2(d1[j], d2[j])?, &self.params, eps)?;
                    s1[j] = s.get(0, 0);
                    s2[j] = s.get(0, 1);
                }
                Formulation::Componentwise => {
                    let a = tensor_s_regularized(&SmallMatrix::from_rows(1, 1, &[d1[j]])?, &self.params, eps)?;
                    let b = tensor_s_regularized(&SmallMatrix::from_rows(1, 1, &[d2[j]])?, &self.params, eps)?;
                    s1[j] = a.get(0, 0);
                    s2[j] = b.get(0, 0);
                }
            }
            s1[j] *= ops.areas[j];
            s2[j] *= ops.areas[j];
        }
        let mut out = transpose_apply(&ops.dgrad[0], &s1, ops.vertex_count());
        for (o, v) in out.iter_mut().zip(transpose_apply(&ops.dgrad[1], &s2, ops.vertex_count())) {
            *o = self.tau * (*o + v);
        }
        Ok(out)
    }

    /// Euclidean norm of the interior residual of the discrete variational
    /// equation `P u + τ Σᵢ D⁽ⁱ⁾ᵀ|𝒮| sᵢ − P̃ᵀ f`, tested against every
    /// interior basis function.
    pub fn kkt_residual(&self, u_interior: &[f64]) -> Result<f64> {
        let ops = &self.system.ops;
        let u = ops.prolong(u_interior);
        let pu = spmv(&ops.mass, &u);
        let nl = self.nonlinear_term(u_interior)?;
        let pf = ops.broken_load(self.forcing)?;
        let full: Vec<f64> = (0..u.len()).map(|k| pu[k] + nl[k] - pf[k]).collect();
        Ok(norm(&spmv(&ops.restriction, &full)))
    }

    /// Unregularized objective.
    pub fn objective(&self, u_interior: &[f64]) -> Result<f64> {
        self.objective_eps(u_interior, 0.0)
    }

    fn levels(&self) -> Vec<f64> {
        let floor = self.eps_floor();
        if self.params.p >= 2.0 {
            return vec![0.0];
        }
        let mut levels: Vec<f64> = CONTINUATION.iter().copied().filter(|&e| e > floor).collect();
        levels.push(floor);
        levels
    }

    pub fn solve(&self, warm_start: &[f64], tol: f64) -> Result<(Vec<f64>, SolveReport)> {
        self.solve_with(warm_start, tol, DEFAULT_MAX_ITER)
    }

    pub fn solve_with(&self, warm_start: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
        self.check(warm_start)?;
        if !(tol > 0.0) {
            return Err(Error::input("tolerance must be positive"));
        }
        let levels = self.levels();
        let eps_final = *levels.last().expect("at least one level");
        let scale = 1.0 + norm(&self.gradient(warm_start, eps_final)?);
        let final_threshold = tol * scale;
        let coarse_threshold = tol.max(1e-6) * scale;

        let mut report = SolveReport {
            continuation_levels: levels.clone(),
            ..Default::default()
        };
        let mut u = warm_start.to_vec();
        for (li, &eps) in levels.iter().enumerate() {
            let threshold = if li + 1 == levels.len() {
                final_threshold
            } else {
                coarse_threshold
            };
            let its = self.newton_level(&mut u, eps, threshold, max_iter, &mut report)?;
            report.iterations_per_level.push(its);
            report.iterations += its;
        }
        report.final_grad_norm = norm(&self.gradient(&u, eps_final)?);
        report.kkt_residual = self.kkt_residual(&u)?;
        Ok((u, report))
    }

    fn newton_level(
        &self,
        u: &mut Vec<f64>,
        eps: f64,
        threshold: f64,
        max_iter: usize,
        report: &mut SolveReport,
    ) -> Result<usize> {
        let mut f = self.objective_eps(u, eps)?;
        for it in 0..=max_iter {
            let g = self.gradient(u, eps)?;
            let gnorm = norm(&g);
            if gnorm <= threshold {
                return Ok(it);
            }
            if it == max_iter {
                break;
            }
            let dir = self.newton_direction(u, &g, eps, report)?;
            let slope = dot(&g, &dir);
            if !(slope < 0.0) {
                return Err(self.fail(format!("non-descent Newton direction at eps={eps:e}"), report, gnorm));
            }
            let mut step = 1.0;
            let mut accepted = None;
            let mut fallback = None;
            for _ in 0..MAX_HALVINGS {
                let d: Vec<f64> = dir.iter().map(|x| step * x).collect();
                let df = self.objective_change(u, &d, eps);
                let trial: Vec<f64> = u.iter().zip(&d).map(|(x, d)| x + d).collect();
                if df <= ARMIJO_C1 * step * slope {
                    accepted = Some((trial, f + df));
                    // Newton steps on the degenerate potential over- or undershoot;
                    // walk the step length by factors of two while the decrease grows
                    let mut best = df;
                    for factor in [2.0, 0.5] {
                        if factor == 0.5 && step != 1.0 {
                            break;
                        }
                        let mut moved = false;
                        for _ in 0..MAX_RESCALINGS {
                            let next = factor * step;
                            let d: Vec<f64> = dir.iter().map(|x| next * x).collect();
                            let dn = self.objective_change(u, &d, eps);
                            if !(dn < best && dn <= ARMIJO_C1 * next * slope) {
                                break;
                            }
                            step = next;
                            best = dn;
                            moved = true;
                            accepted = Some((u.iter().zip(&d).map(|(x, d)| x + d).collect(), f + dn));
                        }
                        if moved {
                            break;
                        }
                    }
                    break;
                }
                if fallback.is_none() && df <= 0.0 {
                    // decrease lost in rounding: keep it if the gradient shrinks
                    if norm(&self.gradient(&trial, eps)?) < gnorm {
                        fallback = Some((trial, f + df));
                    }
                }
                step *= 0.5;
            }
            match accepted.or(fallback) {
                Some((trial, ft)) => {
                    *u = trial;
                    f = ft;
                    report.objective_trace.push(f);
                }
                None => {
                    return Err(self.fail(format!("line search failed at eps={eps:e}"), report, gnorm));
                }
            }
        }
        let gnorm = norm(&self.gradient(u, eps)?);
        Err(self.fail(
            format!("iteration cap {max_iter} reached at eps={eps:e} (|g| = {gnorm:e}, target {threshold:e})"),
            report,
            gnorm,
        ))
    }

    fn newton_direction(&self, u: &[f64], g: &[f64], eps: f64, report: &mut SolveReport) -> Result<Vec<f64>> {
        let mut values = self.hessian_values(u, eps)?;
        let mut shift = 1e-12;
        loop {
            let mat = CscMatrix::try_from_pattern_and_values(self.system.pattern.clone(), values.clone())
                .expect("pattern and values agree");
            match CscCholesky::factor(&mat) {
                Ok(chol) => {
                    let rhs = DVector::from_iterator(g.len(), g.iter().map(|v| -v));
                    let sol = chol.solve(&rhs);
                    return Ok(sol.iter().copied().collect());
                }
                Err(_) if shift < 1e6 => {
                    report.regularizations += 1;
                    for (v, m) in values.iter_mut().zip(&self.system.mass_values) {
                        *v += shift * m;
                    }
                    shift *= 100.0;
                }
                Err(e) => {
                    return Err(self.fail(format!("hessian factorization failed: {e}"), report, norm(g)));
                }
            }
        }
    }

    fn fail(&self, msg: String, report: &SolveReport, gnorm: f64) -> Error {
        let mut report = report.clone();
        report.final_grad_norm = gnorm;
        Error::Convergence {
            msg,
            report: Box::new(report),
        }
    }
}

/// Scalar shape of the regularized potential as a function of `t² = |ξ|²`.
struct Shape {
    p: f64,
    kappa: f64,
    eps: f64,
}

impl Shape {
    fn radius(&self, t2: f64) -> f64 {
        (self.eps * self.eps + t2).sqrt()
    }

    fn potential(&self, t2: f64, params: &GrowthParams) -> f64 {
        potential(self.radius(t2), params)
    }

    /// `φ(r(t² + δ)) − φ(r(t²))`; short intervals are integrated with a
    /// three-point Gauss rule on `φ'` instead of subtracting.
    fn potential_change(&self, t2: f64, dt2: f64, params: &GrowthParams) -> f64 {
        let r0 = self.radius(t2);
        let r1 = self.radius(t2 + dt2);
        if r0 + r1 == 0.0 {
            return 0.0;
        }
        let dr = dt2 / (r0 + r1);
        if dr.abs() > 1e-2 * r0.max(r1) {
            return potential(r1, params) - potential(r0, params);
        }
        let mid = r0 + 0.5 * dr;
        let off = 0.5 * dr * (0.6f64).sqrt();
        let dphi = |s: f64| (self.kappa + s).powf(self.p - 2.0) * s;
        0.5 * dr * (5.0 * dphi(mid - off) + 8.0 * dphi(mid) + 5.0 * dphi(mid + off)) / 9.0
    }

    /// `(κ + r)^{p−2}`; the flux is this times `ξ`.
    fn coefficient(&self, t2: f64) -> f64 {
        let base = self.kappa + self.radius(t2);
        if base == 0.0 {
            // only reached for p >= 2 (or guarded as singular)
            return if self.p == 2.0 { 1.0 } else { 0.0 };
        }
        base.powf(self.p - 2.0)
    }

    /// `c I + (p−2)(κ+r)^{p−3} ξξᵀ / r`.
    fn hessian(&self, g: [f64; 2]) -> [[f64; 2]; 2] {
        let t2 = g[0] * g[0] + g[1] * g[1];
        let r = self.radius(t2);
        let c = self.coefficient(t2);
        let d = if r == 0.0 || self.p == 2.0 {
            0.0
        } else {
            (self.p - 2.0) * (self.kappa + r).powf(self.p - 3.0) / r
        };
        [
            [c + d * g[0] * g[0], d * g[0] * g[1]],
            [d * g[1] * g[0], c + d * g[1] * g[1]],
        ]
    }
}

fn transpose_apply(a: &CsrMatrix<f64>, x: &[f64], ncols: usize) -> Vec<f64> {
    let mut out = vec![0.0; ncols];
    for (row, &xi) in a.row_iter().zip(x) {
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            out[c] += v * xi;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::nodal_interpolate;
    use crate::mesh::Mesh;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(n: usize) -> InteriorSystem {
        InteriorSystem::new(FemOperators::assemble(&Mesh::unit_square(n).unwrap()).unwrap()).unwrap()
    }

    fn random_broken(sys: &InteriorSystem, rng: &mut ChaCha8Rng) -> BrokenFeFunction {
        let n = 3 * sys.ops().simplex_count();
        BrokenFeFunction {
            coeffs: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn objective_change_matches_difference() {
        let sys = system(4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_broken(&sys, &mut rng);
        for (p, kappa, form) in [
            (1.1, 0.0, Formulation::Euclidean),
            (1.5, 0.3, Formulation::Componentwise),
            (3.0, 0.0, Formulation::Euclidean),
        ] {
            let prob = StepProblem::new(&sys, GrowthParams::new(p, kappa).unwrap(), 0.3, &f, form).unwrap();
            let n = prob.len();
            for scale in [1.0, 1e-3, 1e-6] {
                let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let d: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
                let ud: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + b).collect();
                let plain = prob.objective_eps(&ud, 1e-4).unwrap() - prob.objective_eps(&u, 1e-4).unwrap();
                let change = prob.objective_change(&u, &d, 1e-4);
                assert!((plain - change).abs() <= 1e-6 * plain.abs() + 1e-14, "{p} {scale}: {plain} vs {change}");
            }
        }
    }

    #[test]
    fn interior_mass_matches_restricted_mass() {
        let sys = system(4);
        let ops = sys.ops();
        let pii = sys.interior_mass();
        let interior = ops.interior();
        for (c, col) in pii.col_iter().enumerate() {
            for (&r, &v) in col.row_indices().iter().zip(col.values()) {
                let want = ops.mass.get_entry(interior[r], interior[c]).unwrap().into_value();
                assert_relative_eq!(v, want, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn zero_problem_has_zero_objective_and_gradient() {
        let sys = system(3);
        let f = BrokenFeFunction {
            coeffs: vec![0.0; 3 * sys.ops().simplex_count()],
        };
        let params = GrowthParams::new(1.5, 0.0).unwrap();
        let prob = StepProblem::new(&sys, params, 0.1, &f, Formulation::Euclidean).unwrap();
        let zero = vec![0.0; prob.len()];
        assert_eq!(prob.objective(&zero).unwrap(), 0.0);
        assert!(prob.gradient(&zero, 1e-2).unwrap().iter().all(|&g| g == 0.0));
        // p < 2, κ = 0, ε = 0 and a flat simplex: singular
        assert!(matches!(prob.gradient(&zero, 0.0), Err(Error::Singular(_))));
        assert!(prob.objective(&[0.0]).is_err());
    }

    #[test]
    fn componentwise_differs_from_euclidean_off_p2() {
        let sys = system(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_broken(&sys, &mut rng);
        let u: Vec<f64> = (0..sys.ops().interior().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p3 = GrowthParams::new(3.0, 0.0).unwrap();
        let e = StepProblem::new(&sys, p3, 0.5, &f, Formulation::Euclidean).unwrap();
        let c = StepProblem::new(&sys, p3, 0.5, &f, Formulation::Componentwise).unwrap();
        assert!((e.objective(&u).unwrap() - c.objective(&u).unwrap()).abs() > 1e-6);
        let p2 = GrowthParams::new(2.0, 0.0).unwrap();
        let e = StepProblem::new(&sys, p2, 0.5, &f, Formulation::Euclidean).unwrap();
        let c = StepProblem::new(&sys, p2, 0.5, &f, Formulation::Componentwise).unwrap();
        assert_relative_eq!(e.objective(&u).unwrap(), c.objective(&u).unwrap(), max_relative = 1e-13);
    }

    #[test]
    fn solve_reports_monotone_trace_and_small_residual() {
        let sys = system(6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &p in &[1.1, 1.5, 2.0, 2.5, 4.0] {
            for formulation in [Formulation::Euclidean, Formulation::Componentwise] {
                let f = random_broken(&sys, &mut rng);
                let params = GrowthParams::new(p, 0.0).unwrap();
                let prob = StepProblem::new(&sys, params, 0.05, &f, formulation).unwrap();
                let start = vec![0.0; prob.len()];
                let (u, report) = prob.solve(&start, DEFAULT_TOL).unwrap();
                assert!(report.objective_trace.windows(2).all(|w| w[1] <= w[0]), "p={p}");
                let scale = 1.0 + norm(&prob.gradient(&start, prob.eps_floor()).unwrap());
                assert!(report.final_grad_norm <= DEFAULT_TOL * scale);
                let kkt = prob.kkt_residual(&u).unwrap();
                assert!(kkt <= 10.0 * DEFAULT_TOL * scale, "p={p} {formulation:?} kkt={kkt:e}");
            }
        }
    }

    #[test]
    fn continuation_schedule() {
        let sys = system(2);
        let f = BrokenFeFunction {
            coeffs: vec![1.0; 3 * sys.ops().simplex_count()],
        };
        let prob = StepProblem::new(&sys, GrowthParams::new(1.5, 0.0).unwrap(), 0.1, &f, Formulation::Euclidean).unwrap();
        assert_eq!(prob.levels(), vec![1e-2, 1e-4, 1e-6]);
        let fine = GrowthParams::with_eps(1.5, 0.0, 1e-8).unwrap();
        let prob = StepProblem::new(&sys, fine, 0.1, &f, Formulation::Euclidean).unwrap();
        assert_eq!(prob.levels(), vec![1e-2, 1e-4, 1e-6, 1e-8]);
        let prob = StepProblem::new(&sys, GrowthParams::new(2.5, 0.0).unwrap(), 0.1, &f, Formulation::Euclidean).unwrap();
        assert_eq!(prob.levels(), vec![0.0]);
    }

    #[test]
    fn iteration_cap_reports_convergence_error() {
        let sys = system(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_broken(&sys, &mut rng);
        let prob = StepProblem::new(&sys, GrowthParams::new(1.1, 0.0).unwrap(), 1.0, &f, Formulation::Euclidean).unwrap();
        let start = vec![0.0; prob.len()];
        match prob.solve_with(&start, 1e-12, 1) {
            Err(Error::Convergence { report, .. }) => assert!(report.iterations <= 3),
            other => panic!("expected a convergence error, got {other:?}"),
        }
    }

    #[test]
    fn nonlinear_pairing_matches_constitutive() {
        let sys = system(5);
        let ops = sys.ops();
        let mesh = ops.mesh();
        let f = BrokenFeFunction {
            coeffs: vec![0.0; 3 * ops.simplex_count()],
        };
        let u_full = nodal_interpolate(mesh, |x| (3.0 * x[0]).sin() * x[1] * (1.0 - x[1]) * x[0] * (1.0 - x[0])).unwrap();
        let u = ops.restrict(&u_full.coeffs);
        for &p in &[1.5, 2.0, 3.0] {
            let params = GrowthParams::with_eps(p, 0.3, 0.0).unwrap();
            let prob = StepProblem::new(&sys, params, 1.0, &f, Formulation::Euclidean).unwrap();
            let nl = prob.nonlinear_term(&u).unwrap();
            let lhs = dot(&nl, &ops.prolong(&u));
            let grads = ops.gradient_per_simplex(&u_full).unwrap();
            let rhs: f64 = grads
                .iter()
                .zip(&ops.areas)
                .map(|(g, a)| a * crate::constitutive::tensor_s(g, &params).unwrap().dot(g).unwrap())
                .sum();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
        }
    }
}
