//! Closed-form and recursive moments of CBI processes.
//!
//! Centered moments `m_j(t) = E[(X_t − EX_t)^j]` from a deterministic start
//! satisfy, for `j ≥ 2`,
//!
//! ```text
//! m_j(t) = j(j−1)c ∫₀ᵗ e^{jb̃(t−s)} g_{j−2}(s) ds
//!        + Σ_{ℓ≤j−2} C(j,ℓ) μ_{j−ℓ} ∫₀ᵗ e^{jb̃(t−s)} g_ℓ(s) ds
//!        + Σ_{ℓ≤j−2} C(j,ℓ) ν_{j−ℓ} ∫₀ᵗ e^{jb̃(t−s)} m_ℓ(s) ds
//! ```
//!
//! with `g_ℓ(s) = E[(X_s − EX_s)^ℓ X_s]`. The recursion closes through the
//! identity `g_ℓ = m_{ℓ+1} + EX_s · m_ℓ`, so building orders in increasing
//! `j` keeps every integrand available on the grid.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{derive, CbiParams, DerivedParams};
use crate::numeric::{binomial, cumulative_simpson, exp_integral_unit};

/// Default quadrature step for [`centered_moments`].
pub const DEFAULT_STEP: f64 = 1.0 / 512.0;
/// Highest supported moment order.
pub const MAX_ORDER: usize = 8;
/// Relative Richardson error above which a step is rejected.
pub const RICHARDSON_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenteredMoments {
    pub t: f64,
    /// `values[j − 1] = E[(X_t − EX_t)^j]` for `j = 1..=q`.
    pub values: Vec<f64>,
}

impl CenteredMoments {
    /// Centered moment of order `j` (1-based); order 0 is 1.
    pub fn order(&self, j: usize) -> f64 {
        if j == 0 {
            1.0
        } else {
            self.values[j - 1]
        }
    }
}

/// `E(X_t | X_0 = x) = e^{b̃t}x + β̃∫₀ᵗe^{b̃u}du`.
pub fn conditional_mean(d: &DerivedParams, x: f64, t: f64) -> f64 {
    if d.b_tilde == 0.0 {
        return x + d.beta_tilde * t;
    }
    (d.b_tilde * t).exp() * x + d.beta_tilde * t * exp_integral_unit(d.b_tilde * t)
}

/// `Var(X_1 | X_0 = x) = V x + V₀`.
pub fn conditional_variance(d: &DerivedParams, x: f64) -> f64 {
    d.v * x + d.v0
}

/// Centered moments `m_0..=m_q` on a uniform grid of `steps` intervals over `[0, t]`.
fn moment_grid(params: &CbiParams, x0: f64, t: f64, q: usize, steps: usize) -> Vec<Vec<f64>> {
    let d = derive(params);
    let h = t / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * h).collect();
    let mean: Vec<f64> = times.iter().map(|&s| conditional_mean(&d, x0, s)).collect();
    let mu: Vec<f64> = (0..=q).map(|k| params.mu.moment(k as u32)).collect();
    let nu: Vec<f64> = (0..=q).map(|k| params.nu.moment(k as u32)).collect();

    let mut m: Vec<Vec<f64>> = Vec::with_capacity(q + 1);
    m.push(vec![1.0; steps + 1]);
    if q >= 1 {
        m.push(vec![0.0; steps + 1]);
    }
    for j in 2..=q {
        // g_ℓ(s) = m_{ℓ+1}(s) + E(X_s) m_ℓ(s)
        let g = |l: usize, i: usize| m[l + 1][i] + mean[i] * m[l][i];
        let jb = j as f64 * d.b_tilde;
        let integrand: Vec<f64> = (0..=steps)
            .map(|i| {
                let mut f = j as f64 * (j as f64 - 1.0) * params.c * g(j - 2, i);
                for l in 0..=j - 2 {
                    let coef = binomial(j, l);
                    f += coef * mu[j - l] * g(l, i) + coef * nu[j - l] * m[l][i];
                }
                // discount so that m_j(t) = e^{jb̃t} ∫₀ᵗ e^{−jb̃s} F(s) ds
                f * (-jb * times[i]).exp()
            })
            .collect();
        let cumulative = cumulative_simpson(&integrand, h);
        let mj: Vec<f64> = cumulative.iter().zip(&times).map(|(v, &s)| (jb * s).exp() * v).collect();
        m.push(mj);
    }
    m
}

fn check_moment_args(x0: f64, t: f64, q: usize, step: f64) -> Result<()> {
    if !(1..=MAX_ORDER).contains(&q) {
        return Err(Error::InvalidConfig(format!("moment order q = {q} must be in 1..={MAX_ORDER}")));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidConfig(format!("t = {t} must be nonnegative")));
    }
    if !(x0.is_finite() && x0 >= 0.0) {
        return Err(Error::InvalidConfig(format!("x0 = {x0} must be nonnegative")));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidConfig(format!("step = {step} must be positive")));
    }
    Ok(())
}

fn even_steps(t: f64, step: f64) -> usize {
    let s = ((t / step).ceil() as usize).max(4);
    s + s % 2
}

/// Centered moments of `X_t` started from `x0`, with a Richardson check
/// against the same recursion on a grid twice as coarse.
pub fn centered_moments_from(params: &CbiParams, x0: f64, t: f64, q: usize, step: f64) -> Result<CenteredMoments> {
    check_moment_args(x0, t, q, step)?;
    if t == 0.0 {
        return Ok(CenteredMoments { t, values: vec![0.0; q] });
    }
    let steps = even_steps(t, step);
    let fine = moment_grid(params, x0, t, q, steps);
    let coarse = moment_grid(params, x0, t, q, steps / 2);
    let values: Vec<f64> = (1..=q).map(|j| fine[j][steps]).collect();
    let scale2 = values.get(1).copied().unwrap_or(0.0).max(0.0);
    for j in 2..=q {
        let f = fine[j][steps];
        let c = coarse[j][steps / 2];
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("centered moment of order {j}")));
        }
        // fourth-order quadrature: error of the fine grid ≈ |fine − coarse| / 15
        let err = (f - c).abs() / 15.0;
        let reference = f.abs().max(scale2.powf(j as f64 / 2.0));
        if err > RICHARDSON_TOLERANCE * reference {
            return Err(Error::StepTooCoarse { order: j, rel_error: err / reference });
        }
    }
    Ok(CenteredMoments { t, values })
}

/// Centered moments of `X_t` with `X_0 = 0`.
pub fn centered_moments(params: &CbiParams, t: f64, q: usize, step: f64) -> Result<CenteredMoments> {
    centered_moments_from(params, 0.0, t, q, step)
}

/// `E(X^q)` from the mean and centered moments.
pub fn raw_moment(mean: f64, cm: &CenteredMoments, q: usize) -> f64 {
    (0..=q).map(|j| binomial(q, j) * cm.order(j) * mean.powi((q - j) as i32)).sum()
}

/// Coefficients `a_0..a_deg` of the polynomial `x ↦ E[M_k^j | X_{k−1} = x]`,
/// recovered by evaluating the recursion at `deg + 1` starting points.
pub fn conditional_residual_polynomial(params: &CbiParams, j: usize, step: f64) -> Result<Vec<f64>> {
    let deg = j / 2;
    let nodes: Vec<f64> = (0..=deg).map(|i| i as f64).collect();
    let vals: Vec<f64> = nodes
        .iter()
        .map(|&x| centered_moments_from(params, x, 1.0, j, step).map(|cm| cm.order(j)))
        .collect::<Result<_>>()?;
    // Newton divided differences, expanded into monomial coefficients
    let mut dd = vals.clone();
    for level in 1..=deg {
        for i in (level..=deg).rev() {
            dd[i] = (dd[i] - dd[i - 1]) / (nodes[i] - nodes[i - level]);
        }
    }
    let mut coeffs = vec![0.0; deg + 1];
    for i in (0..=deg).rev() {
        // coeffs ← coeffs·(x − nodes[i]) + dd[i]
        let mut next = vec![0.0; deg + 1];
        for k in 0..deg {
            next[k + 1] += coeffs[k];
            next[k] -= coeffs[k] * nodes[i];
        }
        next[0] += dd[i];
        coeffs = next;
    }
    Ok(coeffs)
}

/// Boundedness diagnostics for `E(X_k^q)/(1+k)^q` and `E(M_k^{2p})/k^p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub q: usize,
    pub p: usize,
    pub n_max: usize,
    /// `E(X_k^q)/(1+k)^q` for `k = 1..=n_max`.
    pub x_ratios: Vec<f64>,
    /// `E(M_k^{2p})` for `k = 1..=n_max`.
    pub m_moments: Vec<f64>,
    /// `E(M_k^{2p})/k^p` for `k = 1..=n_max`.
    pub m_ratios: Vec<f64>,
    pub x_ratio_max: f64,
    pub m_ratio_max: f64,
    pub violation: bool,
}

/// Flags a sequence that keeps increasing over its second half and grows by
/// more than 10% there.
fn unbounded_trend(seq: &[f64]) -> bool {
    if seq.len() < 2 {
        return false;
    }
    let mid = seq.len() / 2;
    let tail = &seq[mid..];
    let monotone = tail.windows(2).all(|w| w[1] >= w[0]);
    monotone && tail[tail.len() - 1] > 1.1 * tail[0]
}

/// Moment growth in the critical case, from the centered-moment recursion.
pub fn growth_bounds_check(params: &CbiParams, q: usize, n_max: usize) -> Result<GrowthReport> {
    let d = derive(params);
    if !d.is_critical() {
        return Err(Error::InvalidConfig(format!("growth check needs b_tilde = 0, got {}", d.b_tilde)));
    }
    if n_max < 2 {
        return Err(Error::InvalidConfig("n_max must be at least 2".into()));
    }
    let p = (q / 2).max(1);
    let order = q.max(2 * p);
    check_moment_args(0.0, n_max as f64, order, DEFAULT_STEP)?;

    let per_unit = 64;
    let steps = n_max * per_unit;
    let grid = moment_grid(params, 0.0, n_max as f64, order, steps);
    let at = |k: usize| CenteredMoments { t: k as f64, values: (1..=order).map(|j| grid[j][k * per_unit]).collect() };

    let poly = conditional_residual_polynomial(params, 2 * p, DEFAULT_STEP)?;
    let mut x_ratios = Vec::with_capacity(n_max);
    let mut m_moments = Vec::with_capacity(n_max);
    for k in 1..=n_max {
        let cm = at(k);
        let mean = conditional_mean(&d, 0.0, k as f64);
        x_ratios.push(raw_moment(mean, &cm, q) / (1.0 + k as f64).powi(q as i32));
        // E(M_k^{2p}) = E[P_{2p}(X_{k−1})]
        let prev = at(k - 1);
        let prev_mean = conditional_mean(&d, 0.0, (k - 1) as f64);
        let e: f64 = poly.iter().enumerate().map(|(i, a)| a * raw_moment(prev_mean, &prev, i)).sum();
        m_moments.push(e);
    }
    let m_ratios: Vec<f64> = m_moments.iter().enumerate().map(|(i, e)| e / ((i + 1) as f64).powi(p as i32)).collect();
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(GrowthReport {
        q,
        p,
        n_max,
        x_ratio_max: max(&x_ratios),
        m_ratio_max: max(&m_ratios),
        violation: unbounded_trend(&x_ratios) || unbounded_trend(&m_ratios),
        x_ratios,
        m_moments,
        m_ratios,
    })
}
