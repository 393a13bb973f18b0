//! Sample statistics used by the harness.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::numeric::CompensatedSum;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().copied().collect::<CompensatedSum>().value() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).collect::<CompensatedSum>().value() / (xs.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Unbiased 2×2 sample covariance of paired observations.
pub fn covariance2(pairs: &[[f64; 2]]) -> [[f64; 2]; 2] {
    let n = pairs.len();
    if n < 2 {
        return [[f64::NAN; 2]; 2];
    }
    let m0 = mean(&pairs.iter().map(|p| p[0]).collect::<Vec<_>>());
    let m1 = mean(&pairs.iter().map(|p| p[1]).collect::<Vec<_>>());
    let mut s = [[CompensatedSum::new(); 2]; 2];
    for p in pairs {
        let d = [p[0] - m0, p[1] - m1];
        for i in 0..2 {
            for j in 0..2 {
                s[i][j].add(d[i] * d[j]);
            }
        }
    }
    let k = (n - 1) as f64;
    [[s[0][0].value() / k, s[0][1].value() / k], [s[1][0].value() / k, s[1][1].value() / k]]
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `sup |Fₙ − F|` for a continuous reference CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().fold(0.0, |acc: f64, (i, &x)| {
        let f = cdf(x);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        acc.max(above).max(below)
    })
}

/// `sup |Fₙ − Gₘ|` between two empirical CDFs; ties handled exactly.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at level `alpha`.
pub fn ks_two_sample_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

pub fn normal_cdf(x: f64, sd: f64) -> f64 {
    Normal::new(0.0, sd).expect("positive sd").cdf(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn basic_moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert_relative_eq!(variance(&xs), 5.0 / 3.0);
        assert_eq!(median(&xs), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        let c = covariance2(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]);
        assert_relative_eq!(c[0][0], 1.0);
        assert_relative_eq!(c[0][1], 2.0);
        assert_relative_eq!(c[1][1], 4.0);
    }

    #[test]
    fn ks_one_sample_uniform() {
        let xs = [0.1, 0.4, 0.7];
        // steps at 1/3, 2/3, 1 against F(x) = x
        assert_relative_eq!(ks_one_sample(&xs, |x| x.clamp(0.0, 1.0)), 0.3, max_relative = 1e-12);
    }

    #[test]
    fn ks_two_sample_cases() {
        assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert_relative_eq!(ks_two_sample(&[1.0, 1.0, 2.0, 2.0], &[1.0, 2.0, 2.0, 2.0]), 0.25);
        assert!(ks_two_sample_critical(1000, 1000, 0.001) > 0.08);
    }

    #[test]
    fn normal_cdf_values() {
        assert_relative_eq!(normal_cdf(0.0, 2.0), 0.5);
        assert_relative_eq!(normal_cdf(1.96, 1.0), 0.9750021048517795, max_relative = 1e-9);
    }
}
