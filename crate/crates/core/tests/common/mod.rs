//! Dense reference computations assembled straight from the mesh geometry,
//! independent of the sparse operators under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use splap_core::constitutive::{potential, GrowthParams};
use splap_core::fem::{BrokenFeFunction, FemOperators};
use splap_core::mesh::Mesh;
use splap_core::psolver::InteriorSystem;

pub fn system(n: usize) -> InteriorSystem {
    InteriorSystem::new(FemOperators::assemble(&Mesh::unit_square(n).unwrap()).unwrap()).unwrap()
}

fn gradients(mesh: &Mesh, j: usize) -> ([[f64; 2]; 3], f64) {
    let c = mesh.corners(j);
    let det = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
    let mut g = [[0.0; 2]; 3];
    for a in 0..3 {
        let p = c[(a + 1) % 3];
        let q = c[(a + 2) % 3];
        g[a] = [(p[1] - q[1]) / det, (q[0] - p[0]) / det];
    }
    (g, det.abs() / 2.0)
}

/// Full mass and stiffness matrices.
pub fn dense_mass_stiffness(mesh: &Mesh) -> (DMatrix<f64>, DMatrix<f64>) {
    let nv = mesh.vertex_count();
    let mut p = DMatrix::zeros(nv, nv);
    let mut a = DMatrix::zeros(nv, nv);
    for (j, s) in mesh.simplices().iter().enumerate() {
        let (g, area) = gradients(mesh, j);
        for x in 0..3 {
            for y in 0..3 {
                p[(s[x], s[y])] += area * if x == y { 1.0 / 6.0 } else { 1.0 / 12.0 };
                a[(s[x], s[y])] += area * (g[x][0] * g[y][0] + g[x][1] * g[y][1]);
            }
        }
    }
    (p, a)
}

/// Load of a broken P1 function against the conforming basis.
pub fn dense_broken_load(mesh: &Mesh, f: &BrokenFeFunction) -> DVector<f64> {
    let mut out = DVector::zeros(mesh.vertex_count());
    for (j, s) in mesh.simplices().iter().enumerate() {
        let area = mesh.area(j);
        for x in 0..3 {
            for y in 0..3 {
                out[s[x]] += area * if x == y { 1.0 / 6.0 } else { 1.0 / 12.0 } * f.coeffs[3 * j + y];
            }
        }
    }
    out
}

pub fn interior(mesh: &Mesh) -> Vec<usize> {
    mesh.interior_vertices()
}

pub fn restrict_matrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

pub fn restrict_vector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |r, _| v[idx[r]])
}

/// Interior solution of `(P + τA) u = P̃ᵀ f`.
pub fn linear_step(mesh: &Mesh, tau: f64, f: &BrokenFeFunction) -> Vec<f64> {
    let (p, a) = dense_mass_stiffness(mesh);
    let idx = interior(mesh);
    let lhs = restrict_matrix(&(p + a * tau), &idx);
    let rhs = restrict_vector(&dense_broken_load(mesh, f), &idx);
    lhs.cholesky().expect("positive definite").solve(&rhs).as_slice().to_vec()
}

/// Step objective evaluated from the dense matrices and the closed-form
/// potential, with `u` given on every vertex.
pub fn dense_objective(mesh: &Mesh, params: &GrowthParams, tau: f64, f: &BrokenFeFunction, u: &[f64]) -> f64 {
    let (p, _) = dense_mass_stiffness(mesh);
    let uv = DVector::from_column_slice(u);
    let load = dense_broken_load(mesh, f);
    let mut energy = 0.0;
    for (j, s) in mesh.simplices().iter().enumerate() {
        let (g, area) = gradients(mesh, j);
        let gx: f64 = (0..3).map(|a| g[a][0] * u[s[a]]).sum();
        let gy: f64 = (0..3).map(|a| g[a][1] * u[s[a]]).sum();
        energy += area * potential(gx.hypot(gy), params);
    }
    0.5 * uv.dot(&(&p * &uv)) + tau * energy - load.dot(&uv)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

/// Minimizer of a unimodal scalar function on `[lo, hi]` by repeated grid
/// search, each pass shrinking the window around the best sample until
/// the spacing is below `resolution`.
pub fn grid_search(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, resolution: f64) -> f64 {
    let samples = 201;
    loop {
        let h = (hi - lo) / (samples - 1) as f64;
        let (best, _) = (0..samples)
            .map(|i| lo + i as f64 * h)
            .map(|x| (x, f(x)))
            .fold((lo, f64::INFINITY), |acc, (x, v)| if v < acc.1 { (x, v) } else { acc });
        if h < resolution {
            return best;
        }
        lo = best - 2.0 * h;
        hi = best + 2.0 * h;
    }
}
