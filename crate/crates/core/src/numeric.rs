//! Small numerical building blocks shared across modules.

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// `∫₀¹ e^{x s} ds = (eˣ − 1)/x`, with the removable singularity at 0.
pub fn exp_integral_unit(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.abs() < 1e-5 {
        // 1 + x/2 + x²/6 + x³/24
        1.0 + x * (0.5 + x * (1.0 / 6.0 + x / 24.0))
    } else {
        x.exp_m1() / x
    }
}

/// `a·b − c·d` with one rounding, via an error-free product.
pub fn diff_of_products(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let cd = c * d;
    let err = c.mul_add(-d, cd);
    let dop = a.mul_add(b, -cd);
    dop + err
}

/// Cumulative integral of uniformly sampled `f` with spacing `h`.
///
/// Even nodes use composite Simpson; odd nodes add the integral of the
/// quadratic through the first three samples over the first interval.
/// Needs at least three samples when `f.len() > 2`.
pub fn cumulative_simpson(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * h * (f[0] + f[1]);
        return out;
    }
    out[1] = h / 12.0 * (5.0 * f[0] + 8.0 * f[1] - f[2]);
    for i in 2..n {
        out[i] = out[i - 2] + h / 3.0 * (f[i - 2] + 4.0 * f[i - 1] + f[i]);
    }
    out
}

/// Composite Simpson over an even number of intervals.
pub fn simpson(f: &[f64], h: f64) -> f64 {
    debug_assert!(f.len() >= 3 && f.len() % 2 == 1);
    let last = f.len() - 1;
    let mut acc = CompensatedSum::new();
    acc.add(f[0]);
    acc.add(f[last]);
    for (i, &v) in f.iter().enumerate().take(last).skip(1) {
        acc.add(if i % 2 == 1 { 4.0 * v } else { 2.0 * v });
    }
    acc.value() * h / 3.0
}

/// Binomial coefficient for the small orders used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let s: CompensatedSum = [1e16, 1.0, -1e16, 1.0].into_iter().collect();
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn exp_integral_unit_matches_closed_form() {
        assert_eq!(exp_integral_unit(0.0), 1.0);
        assert_relative_eq!(exp_integral_unit(0.5), (0.5f64.exp() - 1.0) / 0.5, max_relative = 1e-15);
        assert_relative_eq!(exp_integral_unit(1e-7), 1.0 + 0.5e-7 + 1e-14 / 6.0, max_relative = 1e-15);
        assert_relative_eq!(exp_integral_unit(-2.0), (1.0 - (-2.0f64).exp()) / 2.0, max_relative = 1e-15);
    }

    #[test]
    fn cumulative_simpson_is_exact_for_cubics() {
        let h = 0.1;
        let f: Vec<f64> = (0..=11).map(|i| (i as f64 * h).powi(3)).collect();
        let c = cumulative_simpson(&f, h);
        for (i, v) in c.iter().enumerate() {
            let t = i as f64 * h;
            // the first panel is exact only to degree 2; its error carries to odd nodes
            let tol = if i % 2 == 1 { 3e-5 } else { 1e-13 };
            assert!((v - t.powi(4) / 4.0).abs() < tol, "i={i} got {v}");
        }
    }

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(8, 0), 1.0);
        assert_eq!(binomial(8, 8), 1.0);
        assert_eq!(binomial(3, 4), 0.0);
    }

    #[test]
    fn diff_of_products_avoids_cancellation() {
        let a = 1.0 + f64::EPSILON;
        let v = diff_of_products(a, a, 1.0, 1.0);
        assert_relative_eq!(v, 2.0 * f64::EPSILON + f64::EPSILON * f64::EPSILON, max_relative = 1e-12);
    }
}
