//! Statistical post-processing: two-sample Kolmogorov-Smirnov distance,
//! log-log least-squares slope fits, and mean / standard-error reduction.

use crate::error::{QgError, Result};

/// Two-sample Kolmogorov-Smirnov statistic: the sup-distance between the two
/// empirical CDFs, in [0, 1].
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(QgError::Config("KS distance needs nonempty samples".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_unstable_by(|u, v| u.partial_cmp(v).expect("non-finite sample"));
    ys.sort_unstable_by(|u, v| u.partial_cmp(v).expect("non-finite sample"));
    let (mut i, mut j) = (0usize, 0usize);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let t = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] == t {
            i += 1;
        }
        while j < ys.len() && ys[j] == t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// Ordinary least squares of y against x; `stderr` is the standard error of
/// the slope estimate.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(QgError::Config("slope fit needs at least two matched points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    if sxx <= 0.0 {
        return Err(QgError::Config("slope fit has a degenerate abscissa".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(&u, &v)| (u - mx) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    for (&u, &v) in x.iter().zip(y) {
        let r = v - (intercept + slope * u);
        ss_res += r * r;
    }
    let dof = (x.len() as f64 - 2.0).max(1.0);
    let stderr = (ss_res / dof / sxx).sqrt();
    Ok(SlopeFit { slope, intercept, stderr })
}

/// Least-squares slope of `log y` against `log t`.
pub fn fit_decay_slope(t: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if t.len() < 5 {
        return Err(QgError::Config("decay fit needs at least 5 points".into()));
    }
    if t.iter().any(|&v| v <= 0.0) || y.iter().any(|&v| v <= 0.0) {
        return Err(QgError::Config("decay fit needs positive data".into()));
    }
    let lx: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample variance and the standard error of the variance estimate
/// (gaussian-based: var * sqrt(2/(n-1))).
pub fn variance_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (var, var * (2.0 / (n - 1.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ks_extreme_cases() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(ks_distance(&a, &a.clone()).unwrap(), 0.0);
        let b = vec![10.0, 11.0, 12.0];
        assert_eq!(ks_distance(&a, &b).unwrap(), 1.0);
        assert!(ks_distance(&a, &[]).is_err());
        // half-shifted overlap has distance 0.5
        let c = vec![1.5, 2.5, 3.5, 4.5];
        let d = ks_distance(&a, &c).unwrap();
        assert!(d <= 0.5 + 1e-12 && d >= 0.25 - 1e-12);
    }

    #[test]
    fn decay_fit_exact_power_laws() {
        let t: Vec<f64> = (1..=10).map(|i| 0.5 * i as f64).collect();
        let y: Vec<f64> = t.iter().map(|&v| v.powf(-0.5)).collect();
        let fit = fit_decay_slope(&t, &y).unwrap();
        assert_relative_eq!(fit.slope, -0.5, epsilon = 1e-12);
        assert!(fit.stderr < 1e-12);
        let c: Vec<f64> = t.iter().map(|_| 2.7).collect();
        let fit = fit_decay_slope(&t, &c).unwrap();
        assert_relative_eq!(fit.slope, 0.0, epsilon = 1e-12);
        assert!(fit_decay_slope(&t[..3], &y[..3]).is_err());
    }

    #[test]
    fn mean_and_variance_reductions() {
        let xs = vec![1.0, 2.0, 3.0, 4.0];
        let (m, se) = mean_stderr(&xs);
        assert_relative_eq!(m, 2.5, epsilon = 1e-15);
        assert!(se > 0.0);
        let (v, _) = variance_stderr(&xs);
        assert_relative_eq!(v, 5.0 / 3.0, epsilon = 1e-12);
    }
}
