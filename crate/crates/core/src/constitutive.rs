//! The nonlinear tensor `S(ξ) = (κ+|ξ|)^{p-2} ξ`, its square-root companion
//! `F(ξ) = (κ+|ξ|)^{(p-2)/2} ξ`, and the quantities built from them.
//!
//! Matrices are small `D×d` blocks (at most 3×3) with the Frobenius norm.
//! At `ξ = 0` both tensors take their continuous extension `0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent, shift and the solver-only regularization floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    pub p: f64,
    pub kappa: f64,
    pub eps_reg: f64,
}

impl GrowthParams {
    pub fn new(p: f64, kappa: f64) -> Result<Self> {
        Self::with_eps(p, kappa, 1e-6)
    }

    pub fn with_eps(p: f64, kappa: f64, eps_reg: f64) -> Result<Self> {
        let params = GrowthParams { p, kappa, eps_reg };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.p > 1.0) {
            return Err(Error::input(format!("p must be finite and > 1, got {}", self.p)));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::input(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.eps_reg.is_finite() && self.eps_reg >= 0.0) {
            return Err(Error::input(format!("eps_reg must be >= 0, got {}", self.eps_reg)));
        }
        Ok(())
    }
}

const MAX_ENTRIES: usize = 9;

/// A dense `rows × cols` matrix with at most nine entries, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallMatrix {
    rows: usize,
    cols: usize,
    data: [f64; MAX_ENTRIES],
}

impl SmallMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols > MAX_ENTRIES || rows > 3 || cols > 3 {
            return Err(Error::input(format!("unsupported matrix shape {rows}x{cols}")));
        }
        Ok(SmallMatrix {
            rows,
            cols,
            data: [0.0; MAX_ENTRIES],
        })
    }

    pub fn from_rows(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        let mut m = Self::zeros(rows, cols)?;
        if entries.len() != rows * cols {
            return Err(Error::input(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite matrix entry {bad}")));
        }
        m.data[..entries.len()].copy_from_slice(entries);
        Ok(m)
    }

    /// A `1×2` row, the gradient of a scalar function in the plane.
    pub fn row2(a: f64, b: f64) -> Result<Self> {
        Self::from_rows(1, 2, &[a, b])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entries(&self) -> &[f64] {
        &self.data[..self.rows * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn norm(&self) -> f64 {
        self.dot_unchecked(self).sqrt()
    }

    pub fn scale(&self, t: f64) -> Self {
        let mut out = *self;
        out.data.iter_mut().for_each(|v| *v *= t);
        out
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let mut out = *self;
        for (o, b) in out.data.iter_mut().zip(other.data.iter()) {
            *o -= b;
        }
        Ok(out)
    }

    /// Frobenius inner product `A : B`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self.dot_unchecked(other))
    }

    fn dot_unchecked(&self, other: &Self) -> f64 {
        self.entries()
            .iter()
            .zip(other.entries())
            .map(|(a, b)| a * b)
            .sum()
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::input(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        if self.entries().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::input("non-finite matrix entry"))
        }
    }
}

/// Scalar factor `(κ+t)^e` with the convention that the product with a zero
/// matrix is zero.
fn shifted_power(t: f64, kappa: f64, exponent: f64) -> f64 {
    let base = kappa + t;
    if base == 0.0 {
        0.0
    } else {
        base.powf(exponent)
    }
}

pub fn tensor_s(xi: &SmallMatrix, params: &GrowthParams) -> Result<SmallMatrix> {
    xi.check_finite()?;
    let t = xi.norm();
    if t == 0.0 {
        return Ok(xi.scale(0.0));
    }
    Ok(xi.scale(shifted_power(t, params.kappa, params.p - 2.0)))
}

pub fn tensor_f(xi: &SmallMatrix, params: &GrowthParams) -> Result<SmallMatrix> {
    xi.check_finite()?;
    let t = xi.norm();
    if t == 0.0 {
        return Ok(xi.scale(0.0));
    }
    Ok(xi.scale(shifted_power(t, params.kappa, 0.5 * (params.p - 2.0))))
}

/// `(κ + √(ε²+|ξ|²))^{p-2} ξ`, the flux of the ε-regularized potential.
/// Coincides with [`tensor_s`] at `ε = 0`.
pub fn tensor_s_regularized(xi: &SmallMatrix, params: &GrowthParams, eps: f64) -> Result<SmallMatrix> {
    if eps == 0.0 {
        return tensor_s(xi, params);
    }
    xi.check_finite()?;
    let r = (eps * eps + xi.dot_unchecked(xi)).sqrt();
    Ok(xi.scale((params.kappa + r).powf(params.p - 2.0)))
}

/// `|F(ξ) − F(η)|²`.
pub fn quasi_distance_sq(xi: &SmallMatrix, eta: &SmallMatrix, params: &GrowthParams) -> Result<f64> {
    xi.check_shape(eta)?;
    let diff = tensor_f(xi, params)?.sub(&tensor_f(eta, params)?)?;
    Ok(diff.dot_unchecked(&diff))
}

/// `(S(ξ) − S(η)) : (ξ − η)`.
pub fn monotonicity_pairing(
    xi: &SmallMatrix,
    eta: &SmallMatrix,
    params: &GrowthParams,
) -> Result<f64> {
    xi.check_shape(eta)?;
    let ds = tensor_s(xi, params)?.sub(&tensor_s(eta, params)?)?;
    let dx = xi.sub(eta)?;
    Ok(ds.dot_unchecked(&dx))
}

/// Scalar potential `φ(t) = ∫₀ᵗ (κ+s)^{p-2} s ds`, so that `S(ξ) = ∇ φ(|ξ|)`.
/// For `κ = 0` this is `t^p / p`.
pub fn potential(t: f64, params: &GrowthParams) -> f64 {
    let p = params.p;
    let kappa = params.kappa;
    if t <= 0.0 {
        return 0.0;
    }
    if kappa == 0.0 {
        return t.powf(p) / p;
    }
    let s = t / kappa;
    let scale = kappa.powf(p);
    if s < 0.1 {
        // ∫₀ˢ x (1+x)^{p-2} dx by its binomial series; the closed form below
        // cancels catastrophically for small s.
        let a = p - 2.0;
        let mut binom = 1.0;
        let mut power = s * s;
        let mut series = 0.0;
        for n in 0..60 {
            let term = binom * power / (n as f64 + 2.0);
            series += term;
            if term.abs() <= 1e-18 * series.abs() {
                break;
            }
            binom *= (a - n as f64) / (n as f64 + 1.0);
            power *= s;
        }
        return scale * series;
    }
    let b = 1.0 + s;
    scale * (b.powf(p) / p - b.powf(p - 1.0) / (p - 1.0) + 1.0 / (p * (p - 1.0)))
}
