//! Order-independent reductions and the small amount of statistics the
//! estimators need.

use statrs::distribution::{Beta, ContinuousCDF, StudentsT};

/// Pairwise (cascade) summation. The split points depend only on the length,
/// so the result is a pure function of the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error (sample standard deviation / sqrt(n)).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (0 for an exact fit or two points).
    pub slope_se: f64,
    pub points: usize,
}

pub fn least_squares(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if xs.len() > 2 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let r = y - intercept - slope * x;
                r * r
            })
            .sum();
        (rss / (m - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LineFit {
        slope,
        intercept,
        slope_se,
        points: xs.len(),
    }
}

/// Two-sided Student-t critical value at the given confidence level.
pub fn student_t_critical(confidence: f64, dof: usize) -> f64 {
    let t = StudentsT::new(0.0, 1.0, dof.max(1) as f64).expect("valid Student-t parameters");
    t.inverse_cdf(0.5 + confidence / 2.0)
}

/// One-sided exact binomial (Clopper-Pearson) lower confidence bound.
pub fn clopper_pearson_lower(hits: usize, trials: usize, confidence: f64) -> f64 {
    if hits == 0 || trials == 0 {
        return 0.0;
    }
    let beta = Beta::new(hits as f64, (trials - hits + 1) as f64).expect("valid beta parameters");
    beta.inverse_cdf(1.0 - confidence)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|k| k as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn mean_se() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let fit = least_squares(&xs, &ys);
        assert!((fit.slope + 0.5).abs() < 1e-14);
        assert!((fit.intercept - 2.0).abs() < 1e-14);
        assert!(fit.slope_se < 1e-12);
    }

    #[test]
    fn clopper_pearson_known_values() {
        // all successes: lower bound is (1 - conf)^(1/n)
        let lb = clopper_pearson_lower(10, 10, 0.95);
        assert!((lb - 0.05f64.powf(0.1)).abs() < 1e-9);
        assert_eq!(clopper_pearson_lower(0, 10, 0.95), 0.0);
        let lb = clopper_pearson_lower(50, 100, 0.95);
        assert!(lb > 0.40 && lb < 0.5);
    }

    #[test]
    fn t_critical() {
        assert!((student_t_critical(0.95, 1) - 12.706).abs() < 1e-3);
        assert!((student_t_critical(0.95, 1000) - 1.962).abs() < 1e-3);
    }
}
