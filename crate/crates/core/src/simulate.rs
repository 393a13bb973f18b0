//! Skeleton sampling for CBI processes and functionals of the limit diffusion.
//!
//! Schemes, in order of preference under [`Scheme::Auto`]:
//!
//! * pure immigration (`c = 0`, `μ = 0`): exact. Between integer times the
//!   process is `x e^{b} + β∫₀¹e^{bs}ds` plus `ν`-jumps discounted by
//!   `e^{b(1−τ)}` for a jump at time `τ`.
//! * critical CIR (`μ = ν = 0`, `b̃ = 0`, `c > 0`): exact noncentral
//!   chi-square transition.
//! * everything else: Euler–Maruyama on the compensated form with drift
//!   `β̃ + b̃X`, branching jumps with intensity frozen at the left point,
//!   exact immigration jumps, and full truncation at zero.

use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{derive, CbiParams};
use crate::numeric::exp_integral_unit;
use crate::rng::{derive_key, domain, substream, SimRng};

/// Default Euler substeps per unit time.
pub const DEFAULT_SUBSTEPS: u32 = 64;
/// Default number of grid points on `[0, 1]` for limit functionals.
pub const DEFAULT_GRID_POINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Auto,
    ExactPureImmigration,
    ExactCir,
    EulerJump,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Scheme::Auto),
            "exact-pure-immigration" => Ok(Scheme::ExactPureImmigration),
            "exact-cir" => Ok(Scheme::ExactCir),
            "euler-jump" => Ok(Scheme::EulerJump),
            other => Err(Error::InvalidConfig(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_substeps")]
    pub substeps_per_unit: u32,
    #[serde(default)]
    pub scheme: Scheme,
}

fn default_substeps() -> u32 {
    DEFAULT_SUBSTEPS
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { substeps_per_unit: DEFAULT_SUBSTEPS, scheme: Scheme::Auto }
    }
}

impl SimConfig {
    pub fn with_substeps(substeps_per_unit: u32) -> Self {
        Self { substeps_per_unit, ..Self::default() }
    }

    pub fn with_scheme(scheme: Scheme) -> Self {
        Self { scheme, ..Self::default() }
    }
}

/// Observations `X₀, …, Xₙ` at unit spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub observations: Vec<f64>,
    /// Seed the skeleton was simulated from, when known.
    pub seed: Option<u64>,
}

impl Skeleton {
    pub fn new(observations: Vec<f64>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Parse("skeleton needs at least X_0".into()));
        }
        if let Some((k, x)) = observations.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::Parse(format!("X_{k} = {x} is not a nonnegative finite value")));
        }
        Ok(Self { observations, seed: None })
    }

    /// Number of transitions `n` (observations minus one).
    pub fn n(&self) -> usize {
        self.observations.len() - 1
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,x")?;
        for (k, x) in self.observations.iter().enumerate() {
            writeln!(w, "{k},{x}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to vec");
        String::from_utf8(buf).expect("ascii csv")
    }

    /// Parses the `k,x` format; rows must be in order starting at `k = 0`.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty skeleton file".into()))??;
        if header.trim() != "k,x" {
            return Err(Error::Parse(format!("expected header `k,x`, found `{}`", header.trim())));
        }
        let mut obs = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, x) = line.split_once(',').ok_or_else(|| Error::Parse(format!("row {row}: expected `k,x`")))?;
            let k: usize = k.trim().parse().map_err(|_| Error::Parse(format!("row {row}: bad index `{k}`")))?;
            if k != obs.len() {
                return Err(Error::Parse(format!("row {row}: expected k = {}, found {k}", obs.len())));
            }
            let x: f64 = x.trim().parse().map_err(|_| Error::Parse(format!("row {row}: bad value `{x}`")))?;
            obs.push(x);
        }
        Skeleton::new(obs)
    }
}

/// One replicate of `(∫₀¹𝒴dt, ∫₀¹𝒴²dt, ℳ₁, ∫₀¹𝒴dℳ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitFunctionals {
    pub int_y: f64,
    pub int_y2: f64,
    pub m1: f64,
    pub int_y_dm: f64,
}

fn poisson_count<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng)
}

fn resolve_scheme(params: &CbiParams, cfg: &SimConfig) -> Result<Scheme> {
    let d = derive(params);
    let cir_ok = params.mu.is_empty() && params.nu.is_empty() && d.b_tilde == 0.0 && params.c > 0.0;
    if cfg.substeps_per_unit == 0 {
        return Err(Error::InvalidConfig("substeps_per_unit must be at least 1".into()));
    }
    match cfg.scheme {
        Scheme::Auto if params.is_pure_immigration() => Ok(Scheme::ExactPureImmigration),
        Scheme::Auto if cir_ok => Ok(Scheme::ExactCir),
        Scheme::Auto => Ok(Scheme::EulerJump),
        Scheme::ExactPureImmigration if !params.is_pure_immigration() => {
            Err(Error::InvalidConfig("exact-pure-immigration requires c = 0 and an empty mu".into()))
        }
        Scheme::ExactCir if !cir_ok => {
            Err(Error::InvalidConfig("exact-cir requires c > 0, empty mu and nu, and b_tilde = 0".into()))
        }
        s => Ok(s),
    }
}

/// Path `X₀ = x0, X₁, …, Xₙ` drawn from `rng`.
pub fn simulate_path<R: Rng + ?Sized>(params: &CbiParams, x0: f64, n: usize, cfg: &SimConfig, rng: &mut R) -> Result<Vec<f64>> {
    if !(x0.is_finite() && x0 >= 0.0) {
        return Err(Error::InvalidConfig(format!("x0 = {x0} must be nonnegative")));
    }
    let scheme = resolve_scheme(params, cfg)?;
    let d = derive(params);
    let mut path = Vec::with_capacity(n + 1);
    path.push(x0);
    let mut x = x0;
    match scheme {
        Scheme::ExactPureImmigration => {
            let growth = params.b.exp();
            let drift = params.beta * exp_integral_unit(params.b);
            let unit = Uniform::new(0.0, 1.0).expect("unit interval");
            for _ in 0..n {
                let mut next = growth * x + drift;
                for atom in params.nu.atoms() {
                    let count = poisson_count(rng, atom.rate) as u64;
                    if params.b == 0.0 {
                        next += atom.z * count as f64;
                    } else {
                        for _ in 0..count {
                            let tau: f64 = unit.sample(rng);
                            next += atom.z * (params.b * (1.0 - tau)).exp();
                        }
                    }
                }
                x = next;
                path.push(x);
            }
        }
        Scheme::ExactCir => {
            for _ in 0..n {
                x = exact_cir_step(x, d.beta_tilde, d.c_limit, 1.0, rng)?;
                path.push(x);
            }
        }
        Scheme::EulerJump | Scheme::Auto => {
            let m = cfg.substeps_per_unit;
            let h = 1.0 / m as f64;
            let sqrt_h = h.sqrt();
            let imm_comp = params.nu.moment(1) * h;
            let branch_comp = params.mu.moment(1) * h;
            for k in 0..n {
                for _ in 0..m {
                    let mut dx = (d.beta_tilde + d.b_tilde * x) * h;
                    if x > 0.0 {
                        if params.c > 0.0 {
                            let xi: f64 = StandardNormal.sample(rng);
                            dx += (2.0 * params.c * x).sqrt() * sqrt_h * xi;
                        }
                        for atom in params.mu.atoms() {
                            dx += atom.z * poisson_count(rng, x * atom.rate * h);
                        }
                        dx -= x * branch_comp;
                    }
                    for atom in params.nu.atoms() {
                        dx += atom.z * poisson_count(rng, atom.rate * h);
                    }
                    dx -= imm_comp;
                    x = (x + dx).max(0.0);
                }
                if !x.is_finite() {
                    return Err(Error::NonFinite(format!("Euler path at k = {}", k + 1)));
                }
                path.push(x);
            }
        }
    }
    Ok(path)
}

/// Replicate `rep` of a skeleton of length `n` under `seed`.
///
/// Replicate 0 is what [`simulate_skeleton`] returns, so a CLI run and the
/// first replicate of an experiment with the same seed and `n` coincide.
pub fn simulate_replicate(params: &CbiParams, n: usize, cfg: &SimConfig, seed: u64, rep: u64) -> Result<Skeleton> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let mut rng = substream(derive_key(seed, domain::SKELETON, n as u64), rep);
    let observations = simulate_path(params, 0.0, n, cfg, &mut rng)?;
    Ok(Skeleton { observations, seed: Some(seed) })
}

/// `X₀ = 0, X₁, …, Xₙ` for the given seed.
pub fn simulate_skeleton(params: &CbiParams, n: usize, cfg: &SimConfig, seed: u64) -> Result<Skeleton> {
    simulate_replicate(params, n, cfg, seed, 0)
}

/// Exact transition over `dt` of `d𝒴 = β̃ dt + √(C 𝒴⁺) d𝒲` from `y`.
///
/// The result is `(C·dt/4)·G` with `G` noncentral chi-square with
/// `4β̃/C` degrees of freedom and noncentrality `4y/(C·dt)`, drawn as
/// `Gamma(d/2 + P, 2)` with `P ~ Poisson(noncentrality/2)`.
pub fn exact_cir_step<R: Rng + ?Sized>(y: f64, beta_tilde: f64, c_limit: f64, dt: f64, rng: &mut R) -> Result<f64> {
    if c_limit <= 0.0 {
        return Err(Error::DegenerateDiffusion);
    }
    let scale = c_limit * dt / 4.0;
    let dof = 4.0 * beta_tilde / c_limit;
    let noncentrality = y / scale;
    let shape = dof / 2.0 + poisson_count(rng, noncentrality / 2.0);
    if shape <= 0.0 {
        return Ok(0.0);
    }
    let g: f64 = Gamma::new(shape, 2.0).map_err(|e| Error::NonFinite(format!("gamma({shape}): {e}")))?.sample(rng);
    Ok(scale * g)
}

/// Functionals of the limit diffusion on a uniform grid of `grid_points`
/// points covering `[0, 1]`. Time integrals use the trapezoid rule and the
/// stochastic integral the left-point (Itô) sum.
pub fn sample_limit_functionals<R: Rng + ?Sized>(beta_tilde: f64, c_limit: f64, grid_points: usize, rng: &mut R) -> Result<LimitFunctionals> {
    if grid_points < 2 {
        return Err(Error::InvalidConfig("grid_points must be at least 2".into()));
    }
    let steps = grid_points - 1;
    let dt = 1.0 / steps as f64;
    let mut y = 0.0;
    let mut m = 0.0;
    let (mut int_y, mut int_y2, mut int_y_dm) = (0.0, 0.0, 0.0);
    for i in 0..steps {
        let y_next = if c_limit > 0.0 {
            exact_cir_step(y, beta_tilde, c_limit, dt, rng)?
        } else {
            beta_tilde * (i + 1) as f64 * dt
        };
        let m_next = if c_limit > 0.0 { y_next - beta_tilde * (i + 1) as f64 * dt } else { 0.0 };
        int_y += 0.5 * (y + y_next) * dt;
        int_y2 += 0.5 * (y * y + y_next * y_next) * dt;
        int_y_dm += y * (m_next - m);
        y = y_next;
        m = m_next;
    }
    Ok(LimitFunctionals { int_y, int_y2, m1: m, int_y_dm })
}

/// One draw from the limit law of `(n(b̃̂ₙ − b̃), β̃̂ₙ − β̃)`.
pub fn limit_vector(f: &LimitFunctionals) -> Result<(f64, f64)> {
    let denom = f.int_y2 - f.int_y * f.int_y;
    if !(denom > 0.0) {
        return Err(Error::DegenerateDenominator(denom));
    }
    Ok(((f.int_y_dm - f.m1 * f.int_y) / denom, (f.m1 * f.int_y2 - f.int_y * f.int_y_dm) / denom))
}

/// Stream `rep` for limit-law samples under `seed`.
pub fn limit_rng(seed: u64, rep: u64) -> SimRng {
    substream(derive_key(seed, domain::LIMIT, 0), rep)
}
