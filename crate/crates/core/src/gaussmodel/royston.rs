//! Royston's H test of multivariate normality (1992 revision).

use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::shapiro_wilk::{shapiro_wilk, upper_tail};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoystonTest {
    pub h: f64,
    /// Equivalent degrees of freedom.
    pub df: f64,
    pub p_value: f64,
}

/// Royston's test on an `N x K` sample (rows are observations).
///
/// Each column's Shapiro-Wilk W is normalized to `z_j`, mapped to
/// `R_j = (Phi^-1(Phi(-z_j) / 2))^2`, and the `R_j` are pooled with an
/// equivalent degrees-of-freedom correction driven by the average
/// transformed inter-column correlation. `p` is the chi-square upper tail.
pub fn royston_test(samples: &DMatrix<f64>) -> Result<RoystonTest> {
    let (n, k) = samples.shape();
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one column".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut r_sum = 0.0;
    for col in samples.column_iter() {
        let col: Vec<f64> = col.iter().copied().collect();
        let sw = shapiro_wilk(&col)?;
        let half_tail = upper_tail(sw.z) / 2.0;
        r_sum += normal.inverse_cdf(half_tail).powi(2);
    }

    let df = if k == 1 {
        1.0
    } else {
        let corr = correlation(samples);
        let ln_n = (n as f64).ln();
        let u = 0.715;
        let v = 0.21364 + 0.015124 * ln_n.powi(2) - 0.0018034 * ln_n.powi(3);
        let mut total = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    let c = corr[(i, j)];
                    total += c.powi(5) * (1.0 - u * (1.0 - c).powf(u) / v);
                }
            }
        }
        let mean_c = total / (k * k - k) as f64;
        k as f64 / (1.0 + (k as f64 - 1.0) * mean_c)
    };
    let h = df * r_sum / k as f64;
    let chi = ChiSquared::new(df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p_value = chi.sf(h).clamp(0.0, 1.0);
    Ok(RoystonTest { h, df, p_value })
}

fn correlation(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = samples.shape();
    let means = samples.row_mean();
    let centred = DMatrix::from_fn(n, k, |r, c| samples[(r, c)] - means[c]);
    let cov = centred.tr_mul(&centred);
    DMatrix::from_fn(k, k, |i, j| {
        (cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt()).clamp(-1.0, 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_column_reduces_to_shapiro_wilk() {
        let x: Vec<f64> = (0..40)
            .map(|i| ((i * 37) % 41) as f64 + (i as f64).sqrt())
            .collect();
        let sw = shapiro_wilk(&x).unwrap();
        let r = royston_test(&DMatrix::from_column_slice(40, 1, &x)).unwrap();
        assert_eq!(r.df, 1.0);
        assert!(
            (r.p_value - sw.p_value).abs() < 1e-6,
            "{} vs {}",
            r.p_value,
            sw.p_value
        );
    }

    #[test]
    fn identical_columns_collapse_degrees_of_freedom() {
        let x: Vec<f64> = (0..30)
            .map(|i| (i as f64 * 0.9).sin() + 0.05 * i as f64)
            .collect();
        let mut data = x.clone();
        data.extend(&x);
        let r = royston_test(&DMatrix::from_column_slice(30, 2, &data)).unwrap();
        assert!((r.df - 1.0).abs() < 1e-9, "df = {}", r.df);
    }

    #[test]
    fn propagates_column_errors() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(matches!(
            royston_test(&m),
            Err(Error::SampleSizeOutOfRange(2))
        ));
    }
}
