//! Monte Carlo experiments for the critical-regime limit theorems.
//!
//! Every replicate draws from its own counter-based substream, and results
//! are collected in replicate order, so a report depends only on the
//! configuration (seed included) and never on the worker count.
//!
//! Finite-`n` thresholds used by callers are engineering tolerances; the
//! reports always carry the raw statistics behind them.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{cls_rho_betabar, gaussian_limit_covariance, residuals, scaled_errors, Regime};
use crate::model::{derive, CbiParams, DerivedParams};
use crate::rng::{derive_key, domain, substream};
use crate::simulate::{exact_cir_step, limit_vector, sample_limit_functionals, simulate_replicate, SimConfig, DEFAULT_GRID_POINTS};
use crate::stats;

/// Minimum replicates for distributional statistics.
pub const MIN_REPLICATES: usize = 100;
/// Reference-law draws per experiment replicate.
pub const DEFAULT_REFERENCE_FACTOR: usize = 10;
/// Largest tolerated fraction of degenerate limit denominators.
pub const MAX_REFERENCE_DISCARD_RATE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Convergence,
    DeterministicLimits,
    ScalingLimit,
    IidResiduals,
}

fn default_grid() -> usize {
    DEFAULT_GRID_POINTS
}

fn default_checks() -> Vec<Check> {
    vec![Check::Convergence]
}

fn default_reference_factor() -> usize {
    DEFAULT_REFERENCE_FACTOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub params: CbiParams,
    pub n_values: Vec<usize>,
    pub replicates: usize,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    /// Drawn at random (and echoed in the report) when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    pub regime: Regime,
    #[serde(default)]
    pub output_path: Option<String>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default = "default_checks")]
    pub checks: Vec<Check>,
    #[serde(default = "default_reference_factor")]
    pub reference_factor: usize,
}

impl ExperimentConfig {
    pub fn new(params: CbiParams, n_values: Vec<usize>, replicates: usize, seed: u64, regime: Regime) -> Self {
        Self {
            params,
            n_values,
            replicates,
            grid_points: DEFAULT_GRID_POINTS,
            seed: Some(seed),
            regime,
            output_path: None,
            sim: SimConfig::default(),
            checks: default_checks(),
            reference_factor: DEFAULT_REFERENCE_FACTOR,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::InvalidConfig("seed must be resolved before running".into()))
    }

    /// Fills in a random seed if none was given.
    pub fn resolve_seed(mut self) -> Self {
        if self.seed.is_none() {
            self.seed = Some(rand::random());
        }
        self
    }

    fn validate_common(&self) -> Result<DerivedParams> {
        if self.n_values.is_empty() {
            return Err(Error::InvalidConfig("n_values must not be empty".into()));
        }
        if let Some(n) = self.n_values.iter().find(|&&n| n < 2) {
            return Err(Error::InvalidConfig(format!("every n must be at least 2, got {n}")));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be positive".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidConfig("grid_points must be at least 2".into()));
        }
        if self.reference_factor == 0 {
            return Err(Error::InvalidConfig("reference_factor must be positive".into()));
        }
        let d = derive(&self.params);
        if self.regime == Regime::PureImmigration && d.c_limit != 0.0 {
            return Err(Error::InvalidConfig("regime pure-immigration requires C = 0".into()));
        }
        Ok(d)
    }

    fn validate_critical(&self) -> Result<DerivedParams> {
        let d = self.validate_common()?;
        if !d.is_critical() {
            return Err(Error::InvalidConfig(format!("parameters must be critical, b_tilde = {}", d.b_tilde)));
        }
        if !self.params.has_immigration() {
            return Err(Error::InvalidConfig("immigration mechanism must be nonzero".into()));
        }
        Ok(d)
    }
}

/// Maps `f` over replicate indices `0..count` on `workers` threads
/// (0 = rayon default), preserving index order.
pub fn par_map<T, F>(count: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    if workers == 1 {
        return (0..count as u64).map(f).collect();
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 1 {
        builder = builder.num_threads(workers);
    }
    let pool = builder.build().expect("thread pool");
    pool.install(|| (0..count as u64).into_par_iter().map(f).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RawRow {
    pub n: usize,
    pub rep: u64,
    pub e1: Option<f64>,
    pub e2: Option<f64>,
    pub hn: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerN {
    pub n: usize,
    pub replicates: usize,
    pub hn_fraction: f64,
    /// Replicates with a transformed estimate.
    pub valid: usize,
    /// Replicates excluded: `Hₙ` failed, `ρ̂ ≤ 0`, or the simulation failed.
    pub discards: usize,
    pub nonfinite: usize,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub ks: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    LimitSample,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSummary {
    pub kind: ReferenceKind,
    pub samples: usize,
    pub discards: usize,
    pub discard_rate: f64,
    /// Discard rate above [`MAX_REFERENCE_DISCARD_RATE`].
    pub flagged: bool,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistReport {
    pub regime: Regime,
    pub reference: ReferenceSummary,
    pub per_n: Vec<PerN>,
    #[serde(skip)]
    pub rows: Vec<RawRow>,
    #[serde(skip)]
    pub reference_samples: Vec<[f64; 2]>,
}

impl DistReport {
    pub fn for_n(&self, n: usize) -> Option<&PerN> {
        self.per_n.iter().find(|p| p.n == n)
    }

    /// Scaled errors of the valid replicates at `n`.
    pub fn errors_at(&self, n: usize) -> Vec<[f64; 2]> {
        self.rows.iter().filter(|r| r.n == n).filter_map(|r| Some([r.e1?, r.e2?])).collect()
    }
}

/// Draws `count` samples from the limit law of the scaled errors.
pub fn sample_limit_vectors(beta_tilde: f64, c_limit: f64, grid_points: usize, count: usize, key: u64, workers: usize) -> Result<(Vec<[f64; 2]>, usize)> {
    let draws = par_map(count, workers, |r| {
        let mut rng = substream(key, r);
        sample_limit_functionals(beta_tilde, c_limit, grid_points, &mut rng).map(|f| limit_vector(&f))
    });
    let mut samples = Vec::with_capacity(count);
    let mut discards = 0;
    for d in draws {
        match d? {
            Ok((a, b)) => samples.push([a, b]),
            Err(Error::DegenerateDenominator(_)) => discards += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((samples, discards))
}

fn column(v: &[[f64; 2]], i: usize) -> Vec<f64> {
    v.iter().map(|p| p[i]).collect()
}

/// KS distance of a sample against marginal `i` of the reference law.
type KsAgainst = dyn Fn(&[f64], usize) -> f64 + Sync;

/// Scaled CLS errors across replicates for each `n`, compared with the limit law.
pub fn run_convergence(cfg: &ExperimentConfig, workers: usize) -> Result<DistReport> {
    let d = cfg.validate_critical()?;
    if cfg.replicates < MIN_REPLICATES {
        return Err(Error::InvalidConfig(format!("distributional checks need at least {MIN_REPLICATES} replicates")));
    }
    let seed = cfg.seed()?;

    let (reference, reference_samples, ks_against): (ReferenceSummary, Vec<[f64; 2]>, Box<KsAgainst>) = match cfg.regime {
        Regime::GeneralCritical => {
            let count = cfg.reference_factor * cfg.replicates;
            let key = derive_key(seed, domain::REFERENCE, cfg.grid_points as u64);
            let (samples, discards) = sample_limit_vectors(d.beta_tilde, d.c_limit, cfg.grid_points, count, key, workers)?;
            let rate = discards as f64 / count as f64;
            let summary = ReferenceSummary {
                kind: ReferenceKind::LimitSample,
                samples: samples.len(),
                discards,
                discard_rate: rate,
                flagged: rate > MAX_REFERENCE_DISCARD_RATE,
                mean: [stats::mean(&column(&samples, 0)), stats::mean(&column(&samples, 1))],
                cov: stats::covariance2(&samples),
            };
            let cols = [column(&samples, 0), column(&samples, 1)];
            (summary, samples, Box::new(move |xs: &[f64], i: usize| stats::ks_two_sample(xs, &cols[i])))
        }
        Regime::PureImmigration => {
            let cov = gaussian_limit_covariance(&d)?;
            let sd = [cov[0][0].sqrt(), cov[1][1].sqrt()];
            let summary = ReferenceSummary {
                kind: ReferenceKind::Gaussian,
                samples: 0,
                discards: 0,
                discard_rate: 0.0,
                flagged: false,
                mean: [0.0, 0.0],
                cov,
            };
            (summary, Vec::new(), Box::new(move |xs: &[f64], i: usize| stats::ks_one_sample(xs, |x| stats::normal_cdf(x, sd[i]))))
        }
    };

    let mut per_n = Vec::with_capacity(cfg.n_values.len());
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        let outcomes = par_map(cfg.replicates, workers, |r| -> Result<(bool, Option<[f64; 2]>)> {
            let skeleton = simulate_replicate(&cfg.params, n, &cfg.sim, seed, r)?;
            let est = cls_rho_betabar(&skeleton)?;
            Ok((est.hn_holds, scaled_errors(&est, &d, n, cfg.regime).ok()))
        });
        let mut hn = 0;
        let mut nonfinite = 0;
        let mut errors = Vec::with_capacity(cfg.replicates);
        for (r, outcome) in outcomes.into_iter().enumerate() {
            let row = match outcome {
                Ok((holds, e)) => {
                    hn += holds as usize;
                    if let Some(e) = e {
                        errors.push(e);
                    }
                    RawRow { n, rep: r as u64, e1: e.map(|v| v[0]), e2: e.map(|v| v[1]), hn: holds }
                }
                Err(err) if err.is_numeric() => {
                    nonfinite += 1;
                    RawRow { n, rep: r as u64, e1: None, e2: None, hn: false }
                }
                Err(err) => return Err(err),
            };
            rows.push(row);
        }
        let c0 = column(&errors, 0);
        let c1 = column(&errors, 1);
        per_n.push(PerN {
            n,
            replicates: cfg.replicates,
            hn_fraction: hn as f64 / cfg.replicates as f64,
            valid: errors.len(),
            discards: cfg.replicates - errors.len(),
            nonfinite,
            mean: [stats::mean(&c0), stats::mean(&c1)],
            cov: stats::covariance2(&errors),
            ks: [ks_against(&c0, 0), ks_against(&c1, 1)],
        });
    }
    Ok(DistReport { regime: cfg.regime, reference, per_n, rows, reference_samples })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeterministicLimitsPerN {
    pub n: usize,
    /// `β̃/2`.
    pub target_sum: f64,
    /// `β̃²/3`.
    pub target_sum_sq: f64,
    pub median_dev_sum: f64,
    pub median_dev_sum_sq: f64,
    /// Fraction of replicates with `|n⁻²ΣX_{k−1} − β̃/2| ≤ 0.02β̃`.
    pub frac_within_sum: f64,
    /// Fraction with `|n⁻³ΣX²_{k−1} − β̃²/3| ≤ 0.02β̃²`.
    pub frac_within_sum_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeterministicLimitsReport {
    pub per_n: Vec<DeterministicLimitsPerN>,
}

/// Laws of large numbers for `n⁻²ΣX_{k−1}` and `n⁻³ΣX²_{k−1}` when `C = 0`.
pub fn check_deterministic_limits(cfg: &ExperimentConfig, workers: usize) -> Result<DeterministicLimitsReport> {
    let d = cfg.validate_critical()?;
    if d.c_limit != 0.0 {
        return Err(Error::RequiresPureImmigration);
    }
    let seed = cfg.seed()?;
    let bt = d.beta_tilde;
    let mut per_n = Vec::new();
    for &n in &cfg.n_values {
        let devs = par_map(cfg.replicates, workers, |r| -> Result<(f64, f64)> {
            let s = simulate_replicate(&cfg.params, n, &cfg.sim, seed, r)?;
            let prev = &s.observations[..n];
            let nf = n as f64;
            let sum: f64 = prev.iter().sum::<f64>() / (nf * nf);
            let sum_sq: f64 = prev.iter().map(|x| x * x).sum::<f64>() / (nf * nf * nf);
            Ok(((sum - bt / 2.0).abs(), (sum_sq - bt * bt / 3.0).abs()))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let a = column(&devs.iter().map(|&(x, y)| [x, y]).collect::<Vec<_>>(), 0);
        let b: Vec<f64> = devs.iter().map(|p| p.1).collect();
        let frac = |v: &[f64], tol: f64| v.iter().filter(|&&x| x <= tol).count() as f64 / v.len() as f64;
        per_n.push(DeterministicLimitsPerN {
            n,
            target_sum: bt / 2.0,
            target_sum_sq: bt * bt / 3.0,
            median_dev_sum: stats::median(&a),
            median_dev_sum_sq: stats::median(&b),
            frac_within_sum: frac(&a, 0.02 * bt),
            frac_within_sum_sq: frac(&b, 0.02 * bt * bt),
        });
    }
    Ok(DeterministicLimitsReport { per_n })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingLimitPerN {
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
    pub target_mean: f64,
    /// `(mean − β̃)/std_error`; zero for a degenerate sample that hits the target.
    pub z_score: f64,
    /// Two-sample KS distance between `{X_n/n}` and `{𝒴₁}` (absent when `C = 0`).
    pub ks: Option<f64>,
    /// `max |X_n/n − β̃|` (present when `C = 0`).
    pub max_abs_dev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingLimitReport {
    pub reference_samples: usize,
    pub per_n: Vec<ScalingLimitPerN>,
}

/// Compares `X_n/n` with the marginal `𝒴₁` of the limit diffusion.
pub fn check_scaling_limit(cfg: &ExperimentConfig, workers: usize) -> Result<ScalingLimitReport> {
    let d = cfg.validate_critical()?;
    let seed = cfg.seed()?;
    let reference: Vec<f64> = if d.c_limit > 0.0 {
        let key = derive_key(seed, domain::SCALING, 0);
        par_map(cfg.reference_factor * cfg.replicates, workers, |r| exact_cir_step(0.0, d.beta_tilde, d.c_limit, 1.0, &mut substream(key, r)))
            .into_iter()
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut per_n = Vec::new();
    for &n in &cfg.n_values {
        let xs = par_map(cfg.replicates, workers, |r| simulate_replicate(&cfg.params, n, &cfg.sim, seed, r).map(|s| s.observations[n] / n as f64))
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
        let mean = stats::mean(&xs);
        let se = stats::std_error(&xs);
        let z = if se > 0.0 { (mean - d.beta_tilde) / se } else if mean == d.beta_tilde { 0.0 } else { f64::INFINITY };
        let (ks, max_abs_dev) = if d.c_limit > 0.0 {
            (Some(stats::ks_two_sample(&xs, &reference)), None)
        } else {
            (None, Some(xs.iter().map(|x| (x - d.beta_tilde).abs()).fold(0.0, f64::max)))
        };
        per_n.push(ScalingLimitPerN { n, mean, std_error: se, target_mean: d.beta_tilde, z_score: z, ks, max_abs_dev });
    }
    Ok(ScalingLimitReport { reference_samples: reference.len(), per_n })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IidResidualsPerN {
    pub n: usize,
    /// Pooled lag-1 sample autocorrelation of `M_k` within paths.
    pub lag1_autocorr: f64,
    pub pairs: usize,
    /// `3/√pairs`.
    pub band: f64,
    pub within_band: bool,
    /// Two-sample KS between `{M_k : k ≤ n/2}` and `{M_k : k > n/2}`.
    pub ks_halves: f64,
    /// Asymptotic two-sample critical value at level 0.001.
    pub ks_critical: f64,
    pub ks_consistent: bool,
    pub m1_mean: f64,
    pub m1_std_error: f64,
    pub m1_variance: f64,
    pub v0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IidResidualsReport {
    pub per_n: Vec<IidResidualsPerN>,
}

/// Residuals at the true parameters are iid when `C = 0`.
pub fn check_iid_residuals(cfg: &ExperimentConfig, workers: usize) -> Result<IidResidualsReport> {
    let d = cfg.validate_critical()?;
    if d.c_limit != 0.0 {
        return Err(Error::RequiresPureImmigration);
    }
    let seed = cfg.seed()?;
    let mut per_n = Vec::new();
    for &n in &cfg.n_values {
        let paths = par_map(cfg.replicates, workers, |r| simulate_replicate(&cfg.params, n, &cfg.sim, seed, r).map(|s| residuals(&s, &d)))
            .into_iter()
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let all: Vec<f64> = paths.iter().flatten().copied().collect();
        let m = stats::mean(&all);
        let denom: f64 = all.iter().map(|x| (x - m) * (x - m)).sum();
        let num: f64 = paths.iter().flat_map(|p| p.windows(2).map(|w| (w[0] - m) * (w[1] - m))).sum();
        let pairs = paths.iter().map(|p| p.len().saturating_sub(1)).sum::<usize>();
        let lag1 = if denom > 0.0 { num / denom } else { 0.0 };
        let band = 3.0 / (pairs.max(1) as f64).sqrt();
        let half = n / 2;
        let first: Vec<f64> = paths.iter().flat_map(|p| p[..half].iter().copied()).collect();
        let second: Vec<f64> = paths.iter().flat_map(|p| p[half..].iter().copied()).collect();
        let ks = stats::ks_two_sample(&first, &second);
        let crit = stats::ks_two_sample_critical(first.len(), second.len(), 1e-3);
        let m1: Vec<f64> = paths.iter().map(|p| p[0]).collect();
        per_n.push(IidResidualsPerN {
            n,
            lag1_autocorr: lag1,
            pairs,
            band,
            within_band: lag1.abs() <= band,
            ks_halves: ks,
            ks_critical: crit,
            ks_consistent: ks <= crit,
            m1_mean: stats::mean(&m1),
            m1_std_error: stats::std_error(&m1),
            m1_variance: stats::variance(&m1),
            v0: d.v0,
        });
    }
    Ok(IidResidualsReport { per_n })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config_echo: ExperimentConfig,
    pub per_n: Vec<PerN>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deterministic_limits: Option<DeterministicLimitsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling_limit: Option<ScalingLimitReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iid_residuals: Option<IidResidualsReport>,
    #[serde(skip)]
    pub rows: Vec<RawRow>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Raw scaled errors as `n,rep,e1,e2,hn`; absent errors are empty fields.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("n,rep,e1,e2,hn\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.n, r.rep, fmt(r.e1), fmt(r.e2), r.hn as u8));
        }
        out
    }
}

/// Runs every check listed in the configuration.
pub fn run_experiment(cfg: ExperimentConfig, workers: usize) -> Result<ExperimentReport> {
    let cfg = cfg.resolve_seed();
    let mut report = ExperimentReport {
        config_echo: cfg.clone(),
        per_n: Vec::new(),
        reference: None,
        deterministic_limits: None,
        scaling_limit: None,
        iid_residuals: None,
        rows: Vec::new(),
    };
    for check in &cfg.checks {
        match check {
            Check::Convergence => {
                let dist = run_convergence(&cfg, workers)?;
                report.per_n = dist.per_n;
                report.reference = Some(dist.reference);
                report.rows = dist.rows;
            }
            Check::DeterministicLimits => report.deterministic_limits = Some(check_deterministic_limits(&cfg, workers)?),
            Check::ScalingLimit => report.scaling_limit = Some(check_scaling_limit(&cfg, workers)?),
            Check::IidResiduals => report.iid_residuals = Some(check_iid_residuals(&cfg, workers)?),
        }
    }
    Ok(report)
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so `path` is either absent or complete.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Report JSON at `path` plus the raw-row CSV next to it (`.csv` extension).
pub fn write_report(report: &ExperimentReport, path: &Path) -> Result<PathBuf> {
    let csv_path = path.with_extension("csv");
    if csv_path == path {
        return Err(Error::InvalidConfig("output_path must not end in .csv".into()));
    }
    write_atomic(&csv_path, report.rows_csv().as_bytes())?;
    write_atomic(path, report.to_json().as_bytes())?;
    Ok(csv_path)
}
