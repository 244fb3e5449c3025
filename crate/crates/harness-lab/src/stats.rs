//! Estimators and the log-log exponent fit used by the experiments.

use serde::Serialize;

use crate::error::{Error, Result};

/// Mean/variance summary of a sample with its 99% confidence half-width.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
    pub stderr: f64,
    pub ci99_half_width: f64,
}

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.576;

/// Unbiased mean/variance with `stderr = sqrt(var / n)`.
pub fn estimate(samples: &[f64]) -> Result<Estimate> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            got: samples.len(),
            want: 2,
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let stderr = (variance / n).sqrt();
    Ok(Estimate {
        mean,
        variance,
        count: samples.len(),
        stderr,
        ci99_half_width: Z99 * stderr,
    })
}

/// Least-squares slope of `log y` on `log s` over the points with `s >= s_min`,
/// with the usual regression standard error of the slope.
pub fn fit_power_law(points: &[(f64, f64)], s_min: f64) -> Result<(f64, f64)> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(s, _)| s >= s_min)
        .map(|&(s, y)| (s, y))
        .collect();
    if kept.len() < 4 {
        return Err(Error::TooFewPoints {
            got: kept.len(),
            want: 4,
        });
    }
    if kept.iter().any(|&(s, y)| s <= 0.0 || y <= 0.0) {
        return Err(Error::NonPositiveData);
    }
    let logs: Vec<(f64, f64)> = kept.iter().map(|&(s, y)| (s.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|&(x, _)| x).sum::<f64>() / n;
    let my = logs.iter().map(|&(_, y)| y).sum::<f64>() / n;
    let sxx = logs.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum::<f64>();
    let sxy = logs
        .iter()
        .map(|&(x, y)| (x - mx) * (y - my))
        .sum::<f64>();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = logs
        .iter()
        .map(|&(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum::<f64>();
    let se = if logs.len() > 2 {
        (ss_res / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok((slope, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_sequence() {
        let e = estimate(&[3.0, 3.0, 3.0]).unwrap();
        assert_eq!(e.mean, 3.0);
        assert_eq!(e.variance, 0.0);
    }

    #[test]
    fn two_point_hand_arithmetic() {
        let e = estimate(&[0.0, 2.0]).unwrap();
        assert_abs_diff_eq!(e.mean, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.variance, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.ci99_half_width, Z99 * e.stderr, epsilon = 1e-15);
    }

    #[test]
    fn normal_draws_mean_near_zero() {
        let mut rng = crate::rng::stream_rng(5, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let e = estimate(&xs).unwrap();
        assert!(e.mean.abs() < 3.0 * 0.01, "mean {}", e.mean);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(matches!(
            estimate(&[1.0]).unwrap_err(),
            Error::TooFewSamples { .. }
        ));
    }

    #[test]
    fn exact_power_laws_fit_exactly() {
        let pts: Vec<(f64, f64)> = (1..=20).map(|k| (k as f64, (k as f64).powf(-0.5))).collect();
        let (slope, se) = fit_power_law(&pts, 1.0).unwrap();
        assert_abs_diff_eq!(slope, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(se, 0.0, epsilon = 1e-12);
        let pts2: Vec<(f64, f64)> =
            (1..=20).map(|k| (k as f64, 3.0 * (k as f64).powf(-1.5))).collect();
        let (slope2, _) = fit_power_law(&pts2, 1.0).unwrap();
        assert_abs_diff_eq!(slope2, -1.5, epsilon = 1e-12);
    }

    #[test]
    fn noisy_power_law_close_to_truth() {
        let mut rng = crate::rng::stream_rng(9, 0);
        let pts: Vec<(f64, f64)> = (1..=50)
            .map(|k| {
                let s = k as f64;
                let z: f64 = StandardNormal.sample(&mut rng);
                (s, s.powf(-0.5) * (1.0 + 0.05 * z))
            })
            .collect();
        let (slope, _) = fit_power_law(&pts, 1.0).unwrap();
        assert!((-0.6..=-0.4).contains(&slope), "slope {slope}");
    }

    #[test]
    fn power_law_rejects_bad_data() {
        let pts = vec![(1.0, 1.0), (2.0, -1.0), (3.0, 1.0), (4.0, 1.0)];
        assert!(matches!(
            fit_power_law(&pts, 0.5).unwrap_err(),
            Error::NonPositiveData
        ));
        let few = vec![(1.0, 1.0), (2.0, 1.0), (3.0, 1.0), (4.0, 1.0)];
        assert!(matches!(
            fit_power_law(&few, 3.0).unwrap_err(),
            Error::TooFewPoints { .. }
        ));
    }
}
