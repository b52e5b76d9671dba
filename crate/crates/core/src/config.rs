//! Experiment configuration: `key = value` lines, `#` comments, fractions
//! such as `1/32` wherever a real number is expected.
//!
//! Every key is optional; an empty file gives the full-scale protocol
//! (h = 1/32, τ ∈ {1, …, 1/32}, τ̃ = 1/32, 100 replicates).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Read;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::fem::{nodal_interpolate, FeFunction};
use crate::mesh::Mesh;
use crate::psolver::{Formulation, DEFAULT_TOL};
use crate::stochastics::{GridKind, NoiseCoefficient, NoiseMode, Sigma};

#[derive(Debug, Clone, PartialEq)]
pub enum PhiSpec {
    /// `|x|^{-1/2}` at simplex barycenters.
    InvSqrtRadius,
    Zero,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SigmaSpec {
    Identity,
    Sin,
    Scaled(f64),
}

impl SigmaSpec {
    fn build(&self) -> Sigma {
        match *self {
            SigmaSpec::Identity => Sigma::identity(),
            SigmaSpec::Sin => Sigma::new("sin", f64::sin),
            SigmaSpec::Scaled(c) => Sigma::new(format!("scaled:{c:?}"), move |u| c * u),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub multiplicative: bool,
    pub phi: PhiSpec,
    pub components: usize,
    pub sigma: SigmaSpec,
}

impl NoiseSpec {
    pub fn build(&self, mesh: &Mesh) -> Result<NoiseCoefficient> {
        let mode = if self.multiplicative {
            NoiseMode::Multiplicative(self.sigma.build())
        } else {
            NoiseMode::Additive
        };
        match self.phi {
            PhiSpec::InvSqrtRadius => NoiseCoefficient::inverse_sqrt_radius(mesh, self.components, mode),
            PhiSpec::Zero => NoiseCoefficient::from_fn(mesh, self.components, |_| 0.0, mode),
            PhiSpec::Constant(c) => NoiseCoefficient::from_fn(mesh, self.components, move |_| c, mode),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialSpec {
    Ones,
    Zero,
    /// `sin(πx) sin(πy)`.
    Sine,
}

impl InitialSpec {
    pub fn build(&self, mesh: &Mesh) -> Result<FeFunction> {
        use std::f64::consts::PI;
        match self {
            InitialSpec::Ones => nodal_interpolate(mesh, |_| 1.0),
            InitialSpec::Zero => Ok(FeFunction::zeros(mesh.vertex_count())),
            InitialSpec::Sine => nodal_interpolate(mesh, |x| (PI * x[0]).sin() * (PI * x[1]).sin()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub p_list: Vec<f64>,
    pub kappa: f64,
    pub mesh_n: usize,
    pub tau_ladder: Vec<f64>,
    /// Ladder entries entering the rate regression.
    pub fit_taus: Vec<f64>,
    pub tau_ref: f64,
    pub horizon: f64,
    pub n_r: usize,
    pub master_seed: u64,
    pub noise: NoiseSpec,
    pub initial: InitialSpec,
    pub clip_initial: bool,
    pub grid_kind: GridKind,
    pub solver_tol: f64,
    pub formulation: Formulation,
    pub eps_reg: f64,
    pub output_dir: PathBuf,
}

fn halvings(from: u32, to: u32) -> Vec<f64> {
    (from..=to).map(|k| 0.5f64.powi(k as i32)).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            p_list: vec![1.1, 1.2, 1.5, 2.5],
            kappa: 0.0,
            mesh_n: 32,
            tau_ladder: halvings(0, 5),
            fit_taus: halvings(1, 4),
            tau_ref: 1.0 / 32.0,
            horizon: 1.0,
            n_r: 100,
            master_seed: 1,
            noise: NoiseSpec {
                multiplicative: false,
                phi: PhiSpec::InvSqrtRadius,
                components: 1,
                sigma: SigmaSpec::Identity,
            },
            initial: InitialSpec::Ones,
            clip_initial: false,
            grid_kind: GridKind::Deterministic,
            solver_tol: DEFAULT_TOL,
            formulation: Formulation::Euclidean,
            eps_reg: 1e-6,
            output_dir: PathBuf::from("splap-out"),
        }
    }
}

const KEYS: &[&str] = &[
    "p_list",
    "kappa",
    "mesh_n",
    "tau_ladder",
    "fit_taus",
    "tau_ref",
    "horizon",
    "n_r",
    "master_seed",
    "noise_mode",
    "noise_phi",
    "noise_k",
    "noise_sigma",
    "initial",
    "clip_initial",
    "grid_kind",
    "solver_tol",
    "formulation",
    "eps_reg",
    "output_dir",
];

/// A real number, or a fraction `a/b` of two reals.
pub fn parse_real(s: &str) -> Option<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?,
        None => s.parse::<f64>().ok()?,
    };
    v.is_finite().then_some(v)
}

fn real(key: &str, s: &str) -> Result<f64> {
    parse_real(s).ok_or_else(|| Error::config(key, format!("expected a number, got {s:?}")))
}

fn reals(key: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| real(key, t))
        .collect()
}

fn integer<T: std::str::FromStr>(key: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::config(key, format!("expected a nonnegative integer, got {s:?}")))
}

fn boolean(key: &str, s: &str) -> Result<bool> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::config(key, format!("expected true or false, got {other:?}"))),
    }
}

impl ExperimentConfig {
    pub fn parse(source: impl Read) -> Result<Self> {
        let mut text = String::new();
        let mut source = source;
        source.read_to_string(&mut text)?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::config(key, "unknown key"));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "given more than once"));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "p_list" => self.p_list = reals(key, v)?,
            "kappa" => self.kappa = real(key, v)?,
            "mesh_n" => self.mesh_n = integer(key, v)?,
            "tau_ladder" => self.tau_ladder = reals(key, v)?,
            "fit_taus" => self.fit_taus = reals(key, v)?,
            "tau_ref" => self.tau_ref = real(key, v)?,
            "horizon" => self.horizon = real(key, v)?,
            "n_r" => self.n_r = integer(key, v)?,
            "master_seed" => self.master_seed = integer(key, v)?,
            "noise_mode" => {
                self.noise.multiplicative = match v {
                    "additive" => false,
                    "multiplicative" => true,
                    _ => return Err(Error::config(key, format!("expected additive or multiplicative, got {v:?}"))),
                }
            }
            "noise_phi" => {
                self.noise.phi = match v {
                    "inv_sqrt_radius" => PhiSpec::InvSqrtRadius,
                    "zero" => PhiSpec::Zero,
                    _ => match v.strip_prefix("constant:") {
                        Some(c) => PhiSpec::Constant(real(key, c)?),
                        None => {
                            return Err(Error::config(
                                key,
                                format!("expected inv_sqrt_radius, zero or constant:<c>, got {v:?}"),
                            ))
                        }
                    },
                }
            }
            "noise_k" => self.noise.components = integer(key, v)?,
            "noise_sigma" => {
                self.noise.sigma = match v {
                    "identity" => SigmaSpec::Identity,
                    "sin" => SigmaSpec::Sin,
                    _ => match v.strip_prefix("scaled:") {
                        Some(c) => SigmaSpec::Scaled(real(key, c)?),
                        None => {
                            return Err(Error::config(
                                key,
                                format!("expected identity, sin or scaled:<c>, got {v:?}"),
                            ))
                        }
                    },
                }
            }
            "initial" => {
                self.initial = match v {
                    "ones" => InitialSpec::Ones,
                    "zero" => InitialSpec::Zero,
                    "sine" => InitialSpec::Sine,
                    _ => return Err(Error::config(key, format!("expected ones, zero or sine, got {v:?}"))),
                }
            }
            "clip_initial" => self.clip_initial = boolean(key, v)?,
            "grid_kind" => {
                self.grid_kind = match v {
                    "deterministic" => GridKind::Deterministic,
                    "random" => GridKind::Random,
                    _ => return Err(Error::config(key, format!("expected deterministic or random, got {v:?}"))),
                }
            }
            "solver_tol" => self.solver_tol = real(key, v)?,
            "formulation" => {
                self.formulation = match v {
                    "euclidean" => Formulation::Euclidean,
                    "componentwise" => Formulation::Componentwise,
                    _ => return Err(Error::config(key, format!("expected euclidean or componentwise, got {v:?}"))),
                }
            }
            "eps_reg" => self.eps_reg = real(key, v)?,
            "output_dir" => {
                if v.is_empty() {
                    return Err(Error::config(key, "empty path"));
                }
                self.output_dir = PathBuf::from(v)
            }
            _ => unreachable!("key list and setter disagree"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_list.is_empty() {
            return Err(Error::config("p_list", "empty"));
        }
        if let Some(p) = self.p_list.iter().find(|&&p| !(p > 1.0)) {
            return Err(Error::config("p_list", format!("exponents must exceed 1, got {p}")));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::config("kappa", "must be nonnegative"));
        }
        if self.mesh_n < 2 {
            return Err(Error::config("mesh_n", "at least 2 cells per side are needed for an interior vertex"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::config("horizon", "must be positive"));
        }
        if !(self.tau_ref > 0.0) {
            return Err(Error::config("tau_ref", "must be positive"));
        }
        if !is_multiple(self.horizon, self.tau_ref) {
            return Err(Error::config("tau_ref", "horizon is not an integer multiple of tau_ref"));
        }
        if self.tau_ladder.is_empty() {
            return Err(Error::config("tau_ladder", "empty"));
        }
        for &t in &self.tau_ladder {
            if !(t >= self.tau_ref * (1.0 - 1e-12)) || !is_multiple(t, self.tau_ref) {
                return Err(Error::config(
                    "tau_ref",
                    format!("ladder step {t} is not an integer multiple of tau_ref = {}", self.tau_ref),
                ));
            }
            if !is_multiple(self.horizon, t) {
                return Err(Error::config("tau_ladder", format!("horizon is not an integer multiple of {t}")));
            }
        }
        if self.fit_taus.len() < 2 {
            return Err(Error::config("fit_taus", "at least two steps are needed for a fit"));
        }
        for &t in &self.fit_taus {
            if !self.tau_ladder.iter().any(|&l| crate::analysis::same_tau(l, t)) {
                return Err(Error::config("fit_taus", format!("{t} is not on the ladder")));
            }
            if !(t > self.tau_ref * (1.0 + 1e-12)) {
                return Err(Error::config("fit_taus", format!("{t} does not exceed tau_ref")));
            }
        }
        if self.n_r == 0 {
            return Err(Error::config("n_r", "at least one replicate is needed"));
        }
        if self.noise.components == 0 {
            return Err(Error::config("noise_k", "at least one component is needed"));
        }
        if let PhiSpec::Constant(c) = self.noise.phi {
            if !c.is_finite() {
                return Err(Error::config("noise_phi", "constant must be finite"));
            }
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::config("solver_tol", "must be positive"));
        }
        if !(self.eps_reg > 0.0) {
            return Err(Error::config("eps_reg", "must be positive"));
        }
        Ok(())
    }

    /// Every key with its value, parseable back into an identical config.
    pub fn echo(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("p_list", list(&self.p_list));
        put("kappa", format!("{:?}", self.kappa));
        put("mesh_n", self.mesh_n.to_string());
        put("tau_ladder", list(&self.tau_ladder));
        put("fit_taus", list(&self.fit_taus));
        put("tau_ref", format!("{:?}", self.tau_ref));
        put("horizon", format!("{:?}", self.horizon));
        put("n_r", self.n_r.to_string());
        put("master_seed", self.master_seed.to_string());
        put(
            "noise_mode",
            if self.noise.multiplicative { "multiplicative" } else { "additive" }.into(),
        );
        put(
            "noise_phi",
            match self.noise.phi {
                PhiSpec::InvSqrtRadius => "inv_sqrt_radius".into(),
                PhiSpec::Zero => "zero".into(),
                PhiSpec::Constant(c) => format!("constant:{c:?}"),
            },
        );
        put("noise_k", self.noise.components.to_string());
        put(
            "noise_sigma",
            match self.noise.sigma {
                SigmaSpec::Identity => "identity".into(),
                SigmaSpec::Sin => "sin".into(),
                SigmaSpec::Scaled(c) => format!("scaled:{c:?}"),
            },
        );
        put(
            "initial",
            match self.initial {
                InitialSpec::Ones => "ones",
                InitialSpec::Zero => "zero",
                InitialSpec::Sine => "sine",
            }
            .into(),
        );
        put("clip_initial", self.clip_initial.to_string());
        put(
            "grid_kind",
            match self.grid_kind {
                GridKind::Deterministic => "deterministic",
                GridKind::Random => "random",
            }
            .into(),
        );
        put("solver_tol", format!("{:?}", self.solver_tol));
        put(
            "formulation",
            match self.formulation {
                Formulation::Euclidean => "euclidean",
                Formulation::Componentwise => "componentwise",
            }
            .into(),
        );
        put("eps_reg", format!("{:?}", self.eps_reg));
        put("output_dir", self.output_dir.display().to_string());
        s
    }
}

fn is_multiple(big: f64, small: f64) -> bool {
    let r = big / small;
    r >= 1.0 - 1e-9 && (r - r.round()).abs() <= 1e-9 * r.max(1.0)
}
