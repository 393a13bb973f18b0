//! Parameters of a CBI process and the transition-law machinery.
//!
//! A CBI process with admissible parameters `(c, β, b, ν, μ)` has branching
//! mechanism
//!
//! ```text
//! φ(λ) = cλ² − bλ + ∫ (e^{−λz} − 1 + λ(1∧z)) μ(dz)
//! ```
//!
//! and immigration mechanism `ψ(λ) = βλ + ∫ (1 − e^{−λz}) ν(dz)`. The Laplace
//! transform of `X_t` given `X_0 = x` is `exp(−x v(t,λ) − ∫₀ᵗ ψ(v(s,λ)) ds)`
//! where `∂ₜv = −φ(v)`, `v(0,λ) = λ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{exp_integral_unit, simpson};

/// Default RK4 step for [`solve_v`] and [`laplace_transform`].
pub const DEFAULT_ODE_STEP: f64 = 1e-3;

/// One atom `rate · δ_z` of a jump measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub z: f64,
    pub rate: f64,
}

/// Finite atomic Lévy measure `Σⱼ rateⱼ δ_{zⱼ}` on `(0, ∞)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Atom>", into = "Vec<Atom>")]
pub struct JumpMeasure {
    atoms: Vec<Atom>,
}

impl JumpMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        for (i, a) in atoms.iter().enumerate() {
            if !(a.z.is_finite() && a.z > 0.0) {
                return Err(Error::InvalidParams(format!("atom {i}: size z = {} must be positive and finite", a.z)));
            }
            if !(a.rate.is_finite() && a.rate > 0.0) {
                return Err(Error::InvalidParams(format!("atom {i}: rate = {} must be positive and finite", a.rate)));
            }
        }
        Ok(Self { atoms })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Convenience constructor from `(size, rate)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(z, rate)| Atom { z, rate }).collect())
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `∫ z^q m(dz)`.
    pub fn moment(&self, q: u32) -> f64 {
        self.atoms.iter().map(|a| a.rate * a.z.powi(q as i32)).sum()
    }

    pub fn total_rate(&self) -> f64 {
        self.atoms.iter().map(|a| a.rate).sum()
    }

    /// `∫₁^∞ (z − 1) m(dz)`.
    pub fn excess_over_one(&self) -> f64 {
        self.atoms.iter().filter(|a| a.z > 1.0).map(|a| a.rate * (a.z - 1.0)).sum()
    }
}

impl TryFrom<Vec<Atom>> for JumpMeasure {
    type Error = Error;

    fn try_from(atoms: Vec<Atom>) -> Result<Self> {
        JumpMeasure::new(atoms)
    }
}

impl From<JumpMeasure> for Vec<Atom> {
    fn from(m: JumpMeasure) -> Self {
        m.atoms
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    c: f64,
    beta: f64,
    b: f64,
    #[serde(default)]
    nu: JumpMeasure,
    #[serde(default)]
    mu: JumpMeasure,
}

/// Admissible parameter tuple `(c, β, b, ν, μ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct CbiParams {
    pub c: f64,
    pub beta: f64,
    pub b: f64,
    pub nu: JumpMeasure,
    pub mu: JumpMeasure,
}

impl TryFrom<RawParams> for CbiParams {
    type Error = Error;

    fn try_from(r: RawParams) -> Result<Self> {
        CbiParams::new(r.c, r.beta, r.b, r.nu, r.mu)
    }
}

impl CbiParams {
    pub fn new(c: f64, beta: f64, b: f64, nu: JumpMeasure, mu: JumpMeasure) -> Result<Self> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::InvalidParams(format!("c = {c} must be nonnegative and finite")));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidParams(format!("beta = {beta} must be nonnegative and finite")));
        }
        if !b.is_finite() {
            return Err(Error::InvalidParams(format!("b = {b} must be finite")));
        }
        Ok(Self { c, beta, b, nu, mu })
    }

    /// Critical parameters with `b` chosen so that `b̃ = 0`.
    pub fn critical(c: f64, beta: f64, nu: JumpMeasure, mu: JumpMeasure) -> Result<Self> {
        let b = -mu.excess_over_one();
        Self::new(c, beta, b, nu, mu)
    }

    /// `β ≠ 0` or `ν ≠ 0`; otherwise a process started at zero stays there.
    pub fn has_immigration(&self) -> bool {
        self.beta != 0.0 || !self.nu.is_empty()
    }

    /// `c = 0` and `μ = 0`.
    pub fn is_pure_immigration(&self) -> bool {
        self.c == 0.0 && self.mu.is_empty()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }
}

/// Quantities derived in closed form from [`CbiParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub b_tilde: f64,
    pub beta_tilde: f64,
    pub rho: f64,
    pub beta_bar: f64,
    #[serde(rename = "C")]
    pub c_limit: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "V0")]
    pub v0: f64,
}

impl DerivedParams {
    pub fn is_critical(&self) -> bool {
        self.b_tilde == 0.0
    }
}

/// Modified parameters, one-step regression coefficients, the limit
/// diffusion coefficient and the conditional-variance coefficients.
///
/// With `E(x) = ∫₀¹ e^{xs} ds` the variance integrals reduce to
/// `V = C e^{b̃} E(b̃)` and
/// `V₀ = ν₂ E(2b̃) + β̃ C E(b̃)²/2`, where the double integral
/// `∫₀¹ ∫₀^{1−u} e^{b̃v} dv e^{2b̃u} du` equals `E(b̃)²/2`.
pub fn derive(params: &CbiParams) -> DerivedParams {
    let b_tilde = params.b + params.mu.excess_over_one();
    let beta_tilde = params.beta + params.nu.moment(1);
    let c_limit = 2.0 * params.c + params.mu.moment(2);
    let nu2 = params.nu.moment(2);
    if b_tilde == 0.0 {
        return DerivedParams {
            b_tilde,
            beta_tilde,
            rho: 1.0,
            beta_bar: beta_tilde,
            c_limit,
            v: c_limit,
            v0: nu2 + beta_tilde * c_limit / 2.0,
        };
    }
    let e1 = exp_integral_unit(b_tilde);
    let e2 = exp_integral_unit(2.0 * b_tilde);
    let rho = b_tilde.exp();
    DerivedParams {
        b_tilde,
        beta_tilde,
        rho,
        beta_bar: beta_tilde * e1,
        c_limit,
        v: c_limit * rho * e1,
        v0: nu2 * e2 + beta_tilde * c_limit * e1 * e1 / 2.0,
    }
}

/// Both mechanisms evaluated at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MechanismEval {
    pub lambda: f64,
    pub phi: f64,
    pub psi: f64,
}

pub fn mechanisms(params: &CbiParams, lambda: f64) -> MechanismEval {
    MechanismEval { lambda, phi: phi(params, lambda), psi: psi(params, lambda) }
}

/// Branching mechanism `φ(λ)`.
pub fn phi(params: &CbiParams, lambda: f64) -> f64 {
    let jumps: f64 = params
        .mu
        .atoms()
        .iter()
        .map(|a| a.rate * ((-lambda * a.z).exp_m1() + lambda * a.z.min(1.0)))
        .sum();
    params.c * lambda * lambda - params.b * lambda + jumps
}

/// Immigration mechanism `ψ(λ)`.
pub fn psi(params: &CbiParams, lambda: f64) -> f64 {
    let jumps: f64 = params.nu.atoms().iter().map(|a| -a.rate * (-lambda * a.z).exp_m1()).sum();
    params.beta * lambda + jumps
}

fn check_ode_args(t: f64, lambda: f64, step: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidConfig(format!("t = {t} must be nonnegative")));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda = {lambda} must be nonnegative")));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidConfig(format!("step = {step} must be positive")));
    }
    Ok(())
}

/// RK4 trajectory of `v(·,λ)` on an even number of equal steps, each at most `step`.
fn v_trajectory(params: &CbiParams, t: f64, lambda: f64, step: f64) -> Result<(Vec<f64>, f64)> {
    check_ode_args(t, lambda, step)?;
    if t == 0.0 {
        return Ok((vec![lambda], 0.0));
    }
    let mut steps = (t / step).ceil() as usize;
    steps = steps.max(2);
    steps += steps % 2;
    let h = t / steps as f64;
    let f = |v: f64| -phi(params, v);
    let mut traj = Vec::with_capacity(steps + 1);
    let mut v = lambda;
    traj.push(v);
    for i in 0..steps {
        let k1 = f(v);
        let k2 = f(v + 0.5 * h * k1);
        let k3 = f(v + 0.5 * h * k2);
        let k4 = f(v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("v(t, {lambda}) at step {} of {steps} (h = {h})", i + 1)));
        }
        v = v.max(0.0);
        traj.push(v);
    }
    Ok((traj, h))
}

/// `v(t, λ)` from `∂ₜv = −φ(v)`, `v(0) = λ`, by classical RK4.
pub fn solve_v(params: &CbiParams, t: f64, lambda: f64, step: f64) -> Result<f64> {
    let (traj, _) = v_trajectory(params, t, lambda, step)?;
    Ok(*traj.last().expect("nonempty trajectory"))
}

/// `E[e^{−λ X_t} | X_0 = x0]`.
pub fn laplace_transform(params: &CbiParams, x0: f64, t: f64, lambda: f64, step: f64) -> Result<f64> {
    if !(x0.is_finite() && x0 >= 0.0) {
        return Err(Error::InvalidConfig(format!("x0 = {x0} must be nonnegative")));
    }
    let (traj, h) = v_trajectory(params, t, lambda, step)?;
    let v_t = *traj.last().expect("nonempty trajectory");
    let integral = if traj.len() == 1 {
        0.0
    } else {
        let psi_vals: Vec<f64> = traj.iter().map(|&v| psi(params, v)).collect();
        simpson(&psi_vals, h)
    };
    let out = (-x0 * v_t - integral).exp();
    if !out.is_finite() {
        return Err(Error::NonFinite("laplace transform".into()));
    }
    Ok(out)
}
