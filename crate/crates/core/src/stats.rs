//! Summary statistics and the few hypothesis tests the experiments need.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
pub fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return if n == 1 { 0.0 } else { f64::NAN };
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of already sorted data (the common
/// "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // the bounds touch 0 and 1 exactly at the extremes
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if p == 1.0 { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Result of a significance test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_two_sided: f64,
    /// One-sided p-value for the alternative "first sample is larger".
    pub p_greater: f64,
}

fn degenerate(diff: f64) -> TestResult {
    // zero variance: the samples are either identical or certainly different
    let (t, p2, pg) = if diff == 0.0 {
        (0.0, 1.0, 0.5)
    } else if diff > 0.0 {
        (f64::INFINITY, 0.0, 0.0)
    } else {
        (f64::NEG_INFINITY, 0.0, 1.0)
    };
    TestResult {
        statistic: t,
        p_two_sided: p2,
        p_greater: pg,
    }
}

fn t_result(t: f64, df: f64) -> TestResult {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let upper = 1.0 - dist.cdf(t);
    TestResult {
        statistic: t,
        p_two_sided: (2.0 * (1.0 - dist.cdf(t.abs()))).min(1.0),
        p_greater: upper,
    }
}

/// Welch's unequal-variance two-sample t-test.
pub fn welch_t(a: &[f64], b: &[f64]) -> TestResult {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (std_dev(a).powi(2) / na, std_dev(b).powi(2) / nb);
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    if se2 == 0.0 {
        return degenerate(diff);
    }
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    t_result(diff / se2.sqrt(), df)
}

/// Paired t-test on `a[i] - b[i]`.
pub fn paired_t(a: &[f64], b: &[f64]) -> TestResult {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let sd = std_dev(&d);
    let m = mean(&d);
    if sd == 0.0 {
        return degenerate(m);
    }
    t_result(m / (sd / n.sqrt()), n - 1.0)
}

/// Two-proportion z-test with pooled variance.
pub fn two_proportion_z(x1: u64, n1: u64, x2: u64, n2: u64) -> TestResult {
    let (p1, p2) = (x1 as f64 / n1 as f64, x2 as f64 / n2 as f64);
    let pooled = (x1 + x2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        return degenerate(p1 - p2);
    }
    let z = (p1 - p2) / se;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    TestResult {
        statistic: z,
        p_two_sided: (2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0),
        p_greater: 1.0 - normal.cdf(z),
    }
}

/// One-sample Kolmogorov-Smirnov test against a continuous `cdf`.
/// Returns the statistic `D` and its asymptotic p-value.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    // Stephens' small-sample correction of the Kolmogorov limit
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    (d, kolmogorov_survival(lambda))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powi(k as i32 - 1) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Pearson correlation coefficient.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_moments() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_eq!(mean(&xs), 5.0);
        assert!((std_dev(&xs) - 2.138_089_935_299_395).abs() < 1e-12);
        assert_eq!(std_dev(&[3.0]), 0.0);
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 4.0);
        assert_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert!((quantile_sorted(&xs, 0.95) - 3.85).abs() < 1e-12);
    }

    #[test]
    fn wilson_known_values() {
        // 0 of 10: upper bound z^2/(n+z^2)
        let (lo, hi) = wilson_interval(0, 10, Z95);
        assert_eq!(lo, 0.0);
        assert!((hi - Z95 * Z95 / (10.0 + Z95 * Z95)).abs() < 1e-12);
        let (lo, hi) = wilson_interval(50, 100, Z95);
        assert!((lo - 0.4038).abs() < 1e-4 && (hi - 0.5962).abs() < 1e-4);
        let (lo, hi) = wilson_interval(10, 10, Z95);
        assert!(lo < 1.0 && hi == 1.0);
    }

    #[test]
    fn t_tests() {
        let a = [5.1, 4.9, 5.3, 5.0, 5.2];
        let b = [4.0, 4.2, 3.9, 4.1, 4.3];
        let w = welch_t(&a, &b);
        assert!(w.p_two_sided < 1e-4 && w.p_greater < 1e-4);
        let same = welch_t(&a, &a);
        assert!((same.p_two_sided - 1.0).abs() < 1e-12);
        let p = paired_t(&a, &b);
        assert!(p.statistic > 0.0 && p.p_greater < 1e-3);
        assert_eq!(paired_t(&a, &a).p_two_sided, 1.0);
    }

    #[test]
    fn proportion_test() {
        let r = two_proportion_z(60, 100, 40, 100);
        assert!((r.statistic - 2.828_427).abs() < 1e-5);
        assert!(r.p_greater < 0.01);
    }

    #[test]
    fn kolmogorov_tail() {
        // classical critical value at alpha = 0.05
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 1e-3);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
    }
}
