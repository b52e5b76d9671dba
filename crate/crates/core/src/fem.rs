//! Piecewise linear finite elements on a [`Mesh`]: the conforming space,
//! its broken (discontinuous) counterpart, and the assembled operators.

use std::sync::Arc;

use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::constitutive::{tensor_f, GrowthParams, SmallMatrix};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};

/// Coefficients of a conforming P1 function, one per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct FeFunction {
    pub coeffs: Vec<f64>,
}

/// Coefficients of a broken P1 function. Simplex `j` owns entries
/// `3j..3j+3`, in the local vertex order of the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct BrokenFeFunction {
    pub coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn new(coeffs: Vec<f64>) -> Self {
        FeFunction { coeffs }
    }

    pub fn zeros(n: usize) -> Self {
        FeFunction { coeffs: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct FemOperators {
    mesh: Arc<Mesh>,
    /// Conforming mass matrix `P`.
    pub mass: CsrMatrix<f64>,
    /// Broken-by-conforming mass matrix `P̃` (`3·ns × nv`).
    pub broken_mass: CsrMatrix<f64>,
    /// Discrete partial derivatives `D⁽¹⁾`, `D⁽²⁾` (`ns × nv`).
    pub dgrad: [CsrMatrix<f64>; 2],
    pub areas: Vec<f64>,
    /// 0/1 selection of the interior vertices (`ni × nv`).
    pub restriction: CsrMatrix<f64>,
    interior: Vec<usize>,
    local_grads: Vec<[[f64; 2]; 3]>,
}

fn local_gradients(c: [Point; 3], area: f64) -> [[f64; 2]; 3] {
    let inv = 1.0 / (2.0 * area);
    let mut g = [[0.0; 2]; 3];
    for a in 0..3 {
        let p = c[(a + 1) % 3];
        let q = c[(a + 2) % 3];
        g[a] = [(p[1] - q[1]) * inv, (q[0] - p[0]) * inv];
    }
    g
}

impl FemOperators {
    pub fn assemble(mesh: &Mesh) -> Result<Self> {
        Self::assemble_shared(Arc::new(mesh.clone()))
    }

    pub fn assemble_shared(mesh: Arc<Mesh>) -> Result<Self> {
        let nv = mesh.vertex_count();
        let ns = mesh.simplex_count();
        let mean = (0..ns).map(|j| mesh.area(j)).sum::<f64>() / ns as f64;

        let mut mass = CooMatrix::new(nv, nv);
        let mut broken = CooMatrix::new(3 * ns, nv);
        let mut d1 = CooMatrix::new(ns, nv);
        let mut d2 = CooMatrix::new(ns, nv);
        let mut areas = Vec::with_capacity(ns);
        let mut local_grads = Vec::with_capacity(ns);

        for (j, s) in mesh.simplices().iter().enumerate() {
            let area = mesh.area(j);
            if area < 1e-14 * mean {
                return Err(Error::Validation(format!("degenerate simplex {j} in assembly")));
            }
            let grads = local_gradients(mesh.corners(j), area);
            for a in 0..3 {
                for b in 0..3 {
                    let m = if a == b { area / 6.0 } else { area / 12.0 };
                    mass.push(s[a], s[b], m);
                    broken.push(3 * j + a, s[b], m);
                }
                d1.push(j, s[a], grads[a][0]);
                d2.push(j, s[a], grads[a][1]);
            }
            areas.push(area);
            local_grads.push(grads);
        }

        let interior = mesh.interior_vertices();
        let mut restriction = CooMatrix::new(interior.len(), nv);
        for (i, &k) in interior.iter().enumerate() {
            restriction.push(i, k, 1.0);
        }

        Ok(FemOperators {
            mass: CsrMatrix::from(&mass),
            broken_mass: CsrMatrix::from(&broken),
            dgrad: [CsrMatrix::from(&d1), CsrMatrix::from(&d2)],
            areas,
            restriction: CsrMatrix::from(&restriction),
            interior,
            local_grads,
            mesh,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> Arc<Mesh> {
        Arc::clone(&self.mesh)
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn simplex_count(&self) -> usize {
        self.mesh.simplex_count()
    }

    /// Interior vertex indices; position `i` corresponds to row `i` of `R`.
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// Gradients of the three local basis functions on simplex `j`.
    pub fn local_gradients(&self, j: usize) -> &[[f64; 2]; 3] {
        &self.local_grads[j]
    }

    /// Stiffness matrix `Σᵢ D⁽ⁱ⁾ᵀ diag(|𝒮|) D⁽ⁱ⁾`.
    pub fn stiffness(&self) -> CsrMatrix<f64> {
        let mut total: Option<CsrMatrix<f64>> = None;
        for d in &self.dgrad {
            let mut weighted = d.clone();
            for (j, mut row) in weighted.row_iter_mut().enumerate() {
                row.values_mut().iter_mut().for_each(|v| *v *= self.areas[j]);
            }
            let term = &d.transpose() * &weighted;
            total = Some(match total {
                None => term,
                Some(acc) => &acc + &term,
            });
        }
        total.expect("two derivative matrices")
    }

    /// `R u`: interior coefficients.
    pub fn restrict(&self, u: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&k| u[k]).collect()
    }

    /// `Rᵀ u_I`: zero on the boundary.
    pub fn prolong(&self, u_interior: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.vertex_count()];
        for (&k, &v) in self.interior.iter().zip(u_interior) {
            u[k] = v;
        }
        u
    }

    /// Conforming function viewed as a broken one.
    pub fn embed_broken(&self, u: &FeFunction) -> Result<BrokenFeFunction> {
        self.check_len(u)?;
        let mut coeffs = Vec::with_capacity(3 * self.simplex_count());
        for s in self.mesh.simplices() {
            coeffs.extend(s.iter().map(|&k| u.coeffs[k]));
        }
        Ok(BrokenFeFunction { coeffs })
    }

    /// `P̃ᵀ f`, the load vector of a broken function against the conforming basis.
    pub fn broken_load(&self, f: &BrokenFeFunction) -> Result<Vec<f64>> {
        if f.coeffs.len() != 3 * self.simplex_count() {
            return Err(Error::input(format!(
                "broken function has {} coefficients, expected {}",
                f.coeffs.len(),
                3 * self.simplex_count()
            )));
        }
        let mut out = vec![0.0; self.vertex_count()];
        for (row, &fv) in self.broken_mass.row_iter().zip(&f.coeffs) {
            for (&col, &m) in row.col_indices().iter().zip(row.values()) {
                out[col] += m * fv;
            }
        }
        Ok(out)
    }

    pub(crate) fn simplex_gradient(&self, j: usize, u: &[f64]) -> [f64; 2] {
        let s = self.mesh.simplices()[j];
        let g = &self.local_grads[j];
        [
            u[s[0]] * g[0][0] + u[s[1]] * g[1][0] + u[s[2]] * g[2][0],
            u[s[0]] * g[0][1] + u[s[1]] * g[1][1] + u[s[2]] * g[2][1],
        ]
    }

    pub fn gradient_per_simplex(&self, u: &FeFunction) -> Result<Vec<SmallMatrix>> {
        self.check_len(u)?;
        (0..self.simplex_count())
            .map(|j| {
                let g = self.simplex_gradient(j, &u.coeffs);
                SmallMatrix::row2(g[0], g[1])
            })
            .collect()
    }

    /// `(u−v)ᵀ P (u−v)`.
    pub fn l2_error_sq(&self, u: &FeFunction, v: &FeFunction) -> Result<f64> {
        self.check_len(u)?;
        self.check_len(v)?;
        let diff: Vec<f64> = u.coeffs.iter().zip(&v.coeffs).map(|(a, b)| a - b).collect();
        Ok(quadratic_form(&self.mass, &diff))
    }

    /// `Σⱼ |𝒮ⱼ| |F(∇u|ⱼ) − F(∇v|ⱼ)|²`.
    pub fn quasinorm_error_sq(
        &self,
        u: &FeFunction,
        v: &FeFunction,
        params: &GrowthParams,
    ) -> Result<f64> {
        self.check_len(u)?;
        self.check_len(v)?;
        let mut total = 0.0;
        for j in 0..self.simplex_count() {
            let gu = self.simplex_gradient(j, &u.coeffs);
            let gv = self.simplex_gradient(j, &v.coeffs);
            let fu = tensor_f(&SmallMatrix::row2(gu[0], gu[1])?, params)?;
            let fv = tensor_f(&SmallMatrix::row2(gv[0], gv[1])?, params)?;
            let d = fu.sub(&fv)?;
            total += self.areas[j] * d.dot(&d)?;
        }
        Ok(total)
    }

    pub(crate) fn check_len(&self, u: &FeFunction) -> Result<()> {
        if u.coeffs.len() != self.vertex_count() {
            return Err(Error::input(format!(
                "function has {} coefficients, mesh has {} vertices",
                u.coeffs.len(),
                self.vertex_count()
            )));
        }
        Ok(())
    }
}

pub(crate) fn quadratic_form(a: &CsrMatrix<f64>, x: &[f64]) -> f64 {
    a.row_iter()
        .zip(x)
        .map(|(row, &xi)| {
            xi * row
                .col_indices()
                .iter()
                .zip(row.values())
                .map(|(&c, &v)| v * x[c])
                .sum::<f64>()
        })
        .sum()
}

pub(crate) fn spmv(a: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    a.row_iter()
        .map(|row| {
            row.col_indices()
                .iter()
                .zip(row.values())
                .map(|(&c, &v)| v * x[c])
                .sum()
        })
        .collect()
}

/// Vertex values `g(x⁽ᵏ⁾)`.
pub fn nodal_interpolate<G: Fn(Point) -> f64>(mesh: &Mesh, g: G) -> Result<FeFunction> {
    let coeffs: Vec<f64> = mesh.vertices().iter().map(|&x| g(x)).collect();
    if let Some(k) = coeffs.iter().position(|v| !v.is_finite()) {
        return Err(Error::input(format!("interpolated value at vertex {k} is not finite")));
    }
    Ok(FeFunction { coeffs })
}
