//! Brownian paths on a finest reference grid, time grids, and the noise
//! forcing assembled into the broken space.
//!
//! Gaussian increments come from a ChaCha8 stream seeded with a 64-bit
//! seed and mapped through `rand_distr::StandardNormal` (ziggurat). Both
//! are specified bit-for-bit, so a seed reproduces the same path on every
//! platform. Increments over coarser intervals are always partial sums of
//! the stored fine increments, accumulated left to right from `0.0`.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{BrokenFeFunction, FeFunction, FemOperators};
use crate::mesh::{Mesh, Point};

/// splitmix64 finalizer over `base + (index+1)·γ`. For a fixed `base` the
/// map is injective in `index`.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Deterministic,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    horizon: f64,
    kind: GridKind,
}

impl TimeGrid {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    /// Number of steps `M`.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Mean step `τ = T/M`.
    pub fn mean_step(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    /// `τ_m = 𝔱_m − 𝔱_{m−1}` for `m = 1..=M`.
    pub fn step(&self, m: usize) -> f64 {
        self.points[m] - self.points[m - 1]
    }

    /// Checks ordering and, for random grids, the jitter window.
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 || self.points[0] != 0.0 {
            return Err(Error::Validation("time grid must start at 0 and have M >= 1".into()));
        }
        let tau = self.mean_step();
        for m in 1..self.points.len() {
            let step = self.step(m);
            if !(step > 0.0) {
                return Err(Error::Validation(format!("time grid not increasing at m={m}")));
            }
            if self.kind == GridKind::Random {
                let t = self.points[m];
                let centre = m as f64 * tau;
                if (t - centre).abs() > tau / 4.0 * (1.0 + 1e-12) {
                    return Err(Error::Validation(format!("t_{m} = {t} outside its window")));
                }
                if step < tau / 2.0 * (1.0 - 1e-12) || step > 1.5 * tau * (1.0 + 1e-12) {
                    return Err(Error::Validation(format!("step {m} = {step} outside [τ/2, 3τ/2]")));
                }
            }
        }
        Ok(())
    }

    /// Moves every point of a random grid to a multiple of `fine_step`,
    /// nearest to the original point but kept inside its jitter window.
    pub fn snapped(&self, fine_step: f64) -> Result<TimeGrid> {
        if self.kind == GridKind::Deterministic {
            return Ok(self.clone());
        }
        let tau = self.mean_step();
        if tau / 2.0 < fine_step {
            return Err(Error::input(format!(
                "cannot snap a grid with mean step {tau} to a finer step {fine_step}"
            )));
        }
        let mut points = Vec::with_capacity(self.points.len());
        points.push(0.0);
        for (m, &t) in self.points.iter().enumerate().skip(1) {
            let centre = m as f64 * tau;
            let lo = ((centre - tau / 4.0) / fine_step - 1e-9).ceil();
            let hi = ((centre + tau / 4.0) / fine_step + 1e-9).floor();
            let idx = (t / fine_step).round().clamp(lo, hi);
            points.push(idx * fine_step);
        }
        Ok(TimeGrid {
            points,
            horizon: self.horizon,
            kind: GridKind::Random,
        })
    }

    /// Index of each grid point on a fine grid of step `fine_step`.
    pub fn indices_on(&self, fine_step: f64) -> Result<Vec<usize>> {
        self.points
            .iter()
            .map(|&t| {
                let x = t / fine_step;
                let idx = x.round();
                if (x - idx).abs() > 1e-9 * x.abs().max(1.0) {
                    Err(Error::input(format!(
                        "time {t} is not a multiple of the fine step {fine_step}"
                    )))
                } else {
                    Ok(idx as usize)
                }
            })
            .collect()
    }
}

pub fn uniform_time_grid(steps: usize, horizon: f64) -> Result<TimeGrid> {
    if steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::input("uniform grid needs M >= 1 and T > 0"));
    }
    let points = (0..=steps)
        .map(|m| m as f64 * horizon / steps as f64)
        .collect();
    Ok(TimeGrid {
        points,
        horizon,
        kind: GridKind::Deterministic,
    })
}

/// `𝔱_m ~ U[mτ − τ/4, mτ + τ/4]` independently for `m = 1..=M`.
pub fn random_time_grid(seed: u64, steps: usize, horizon: f64) -> Result<TimeGrid> {
    if steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::input("random grid needs M >= 1 and T > 0"));
    }
    let tau = horizon / steps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(steps + 1);
    points.push(0.0);
    for m in 1..=steps {
        let u: f64 = rng.random();
        points.push(m as f64 * tau - tau / 4.0 + u * tau / 2.0);
    }
    Ok(TimeGrid {
        points,
        horizon,
        kind: GridKind::Random,
    })
}

/// `K` independent Brownian components sampled on `N_fine` equal steps.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    seed: u64,
    finest_step: f64,
    steps: usize,
    components: usize,
    /// Row-major `steps × components`.
    increments: Vec<f64>,
}

pub fn sample_path(seed: u64, horizon: f64, steps: usize, components: usize) -> Result<NoisePath> {
    if steps == 0 || components == 0 {
        return Err(Error::input("path needs N_fine >= 1 and K >= 1"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::input("path horizon must be positive"));
    }
    let finest_step = horizon / steps as f64;
    let scale = finest_step.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let increments = (0..steps * components)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        })
        .collect();
    Ok(NoisePath {
        seed,
        finest_step,
        steps,
        components,
        increments,
    })
}

impl NoisePath {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn finest_step(&self) -> f64 {
        self.finest_step
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W(b·τ_fine) − W(a·τ_fine)`, summed in index order.
    pub fn increment(&self, a: usize, b: usize) -> Result<Vec<f64>> {
        if a > b || b > self.steps {
            return Err(Error::input(format!(
                "increment range ({a}, {b}] invalid for a path of {} steps",
                self.steps
            )));
        }
        let k = self.components;
        let mut out = vec![0.0; k];
        for row in self.increments[a * k..b * k].chunks_exact(k) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// The same path cut after `steps` fine steps.
    pub fn truncated(&self, steps: usize) -> Result<NoisePath> {
        if steps == 0 || steps > self.steps {
            return Err(Error::input("truncation length out of range"));
        }
        Ok(NoisePath {
            increments: self.increments[..steps * self.components].to_vec(),
            steps,
            ..self.clone()
        })
    }

    /// Binary dump: ASCII `SPLAPW1`, `N_fine` and `K` as little-endian u64,
    /// then the increments row-major as little-endian f64.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"SPLAPW1")?;
        w.write_all(&(self.steps as u64).to_le_bytes())?;
        w.write_all(&(self.components as u64).to_le_bytes())?;
        for v in &self.increments {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump written by [`NoisePath::write_binary`]. The dump does not
    /// carry the seed or the step size, so both are supplied.
    pub fn read_binary<R: Read>(mut r: R, seed: u64, finest_step: f64) -> Result<NoisePath> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != b"SPLAPW1" {
            return Err(Error::input("not a SPLAPW1 path file"));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let steps = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let components = u64::from_le_bytes(word) as usize;
        let mut increments = Vec::with_capacity(steps * components);
        for _ in 0..steps * components {
            r.read_exact(&mut word)?;
            increments.push(f64::from_le_bytes(word));
        }
        Ok(NoisePath {
            seed,
            finest_step,
            steps,
            components,
            increments,
        })
    }
}

/// Scalar shape `σ` of multiplicative noise, evaluated at nodal values.
#[derive(Clone)]
pub struct Sigma {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Sigma {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Sigma {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn identity() -> Self {
        Sigma::new("identity", |u| u)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, u: f64) -> f64 {
        (self.f)(u)
    }
}

impl fmt::Debug for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sigma({})", self.name)
    }
}

#[derive(Debug, Clone)]
pub enum NoiseMode {
    Additive,
    Multiplicative(Sigma),
}

/// Largest admitted ratio `|σ(ξ)| / (1 + |ξ|)` on the sample points.
pub const LINEAR_GROWTH_BOUND: f64 = 1e3;

/// Piecewise constant coefficients `Φ_{j,k}`, one per simplex and component.
#[derive(Debug, Clone)]
pub struct NoiseCoefficient {
    simplices: usize,
    components: usize,
    values: Vec<f64>,
    mode: NoiseMode,
}

impl NoiseCoefficient {
    pub fn new(simplices: usize, components: usize, values: Vec<f64>, mode: NoiseMode) -> Result<Self> {
        if components == 0 || values.len() != simplices * components {
            return Err(Error::input(format!(
                "noise coefficient needs {} values, got {}",
                simplices * components,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("noise coefficient has non-finite entries"));
        }
        if let NoiseMode::Multiplicative(sigma) = &mode {
            check_linear_growth(sigma)?;
        }
        Ok(NoiseCoefficient {
            simplices,
            components,
            values,
            mode,
        })
    }

    pub fn zero(simplices: usize, components: usize) -> Result<Self> {
        Self::new(simplices, components, vec![0.0; simplices * components], NoiseMode::Additive)
    }

    /// Evaluates `phi` at simplex barycenters. Component `k` (1-based) is
    /// weighted by `1/k`, so `K = 1` reproduces `phi` itself.
    pub fn from_fn<G: Fn(Point) -> f64>(mesh: &Mesh, components: usize, phi: G, mode: NoiseMode) -> Result<Self> {
        let mut values = Vec::with_capacity(mesh.simplex_count() * components);
        for j in 0..mesh.simplex_count() {
            let v = phi(mesh.barycenter(j));
            values.extend((1..=components).map(|k| v / k as f64));
        }
        Self::new(mesh.simplex_count(), components, values, mode)
    }

    /// `Φ(x) = |x|^{-1/2}`.
    pub fn inverse_sqrt_radius(mesh: &Mesh, components: usize, mode: NoiseMode) -> Result<Self> {
        Self::from_fn(mesh, components, |x| x[0].hypot(x[1]).powf(-0.5), mode)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn mode(&self) -> &NoiseMode {
        &self.mode
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

fn check_linear_growth(sigma: &Sigma) -> Result<()> {
    let mut samples = vec![0.0];
    for e in -3..=8 {
        let x = 10f64.powi(e);
        samples.extend([x, -x, 3.0 * x, -3.0 * x]);
    }
    for x in samples {
        let ratio = sigma.eval(x).abs() / (1.0 + x.abs());
        if !(ratio <= LINEAR_GROWTH_BOUND) {
            return Err(Error::input(format!(
                "sigma `{}` violates linear growth at {x}: |σ|/(1+|ξ|) = {ratio:e}",
                sigma.name()
            )));
        }
    }
    Ok(())
}

/// Forcing `f = u_{h,m−1} + Φ Δ_m W` in the broken space.
pub fn noise_load(
    ops: &FemOperators,
    phi: &NoiseCoefficient,
    state: &FeFunction,
    dw: &[f64],
) -> Result<BrokenFeFunction> {
    if phi.simplices != ops.simplex_count() {
        return Err(Error::input(format!(
            "noise coefficient covers {} simplices, mesh has {}",
            phi.simplices,
            ops.simplex_count()
        )));
    }
    if dw.len() != phi.components {
        return Err(Error::input(format!(
            "noise increment has {} components, coefficient has {}",
            dw.len(),
            phi.components
        )));
    }
    let mut f = ops.embed_broken(state)?;
    let k = phi.components;
    for (j, s) in ops.mesh().simplices().iter().enumerate() {
        let coeffs = &phi.values[j * k..(j + 1) * k];
        let kick: f64 = coeffs.iter().zip(dw).map(|(c, w)| c * w).sum();
        match &phi.mode {
            NoiseMode::Additive => {
                for a in 0..3 {
                    f.coeffs[3 * j + a] += kick;
                }
            }
            NoiseMode::Multiplicative(sigma) => {
                for a in 0..3 {
                    f.coeffs[3 * j + a] += kick * sigma.eval(state.coeffs[s[a]]);
                }
            }
        }
    }
    Ok(f)
}
