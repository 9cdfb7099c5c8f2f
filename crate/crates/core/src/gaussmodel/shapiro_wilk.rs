//! Shapiro-Wilk W test, Royston's polynomial approximation (AS R94).

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p_value: f64,
    /// Normalizing transform of W; standard normal under the null, with
    /// `p_value` its upper tail.
    pub z: f64,
}

const SMALL: f64 = 1e-19;

// polynomial coefficients from AS R94
const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Shapiro-Wilk test of normality, valid for `3 <= n <= 5000`.
pub fn shapiro_wilk(sample: &[f64]) -> Result<ShapiroWilk> {
    let n = sample.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::SampleSizeOutOfRange(n));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "sample contains non-finite values".into(),
        ));
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range < SMALL {
        return Err(Error::ConstantSample);
    }

    let a = coefficients(n);
    let mean = x.iter().sum::<f64>() / n as f64;
    // scale by range for conditioning; W is scale invariant
    let ssq: f64 = x.iter().map(|v| ((v - mean) / range).powi(2)).sum();
    let lin: f64 = a
        .iter()
        .enumerate()
        .map(|(i, ai)| ai * (x[n - 1 - i] - x[i]) / range)
        .sum();
    let w = (lin * lin / ssq).min(1.0);

    let normal = std_normal();
    if n == 3 {
        // exact null distribution for n = 3
        const SIX_OVER_PI: f64 = 1.909_859_317_102_74;
        const ASIN_SQRT_THREE_QUARTERS: f64 = std::f64::consts::FRAC_PI_3;
        let p = (SIX_OVER_PI * (w.sqrt().asin() - ASIN_SQRT_THREE_QUARTERS)).clamp(0.0, 1.0);
        let z = normal.inverse_cdf(1.0 - p);
        return Ok(ShapiroWilk { w, p_value: p, z });
    }

    let z = normalized_w(w, n);
    let p_value = upper_tail(z);
    Ok(ShapiroWilk { w, p_value, z })
}

/// Royston's normalizing transform of W for `n >= 4`.
pub(crate) fn normalized_w(w: f64, n: usize) -> f64 {
    let an = n as f64;
    let y = (1.0 - w).ln();
    if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return f64::INFINITY;
        }
        let m = poly(&C3, an);
        let s = poly(&C4, an).exp();
        (-(gamma - y).ln() - m) / s
    } else {
        let ln_n = an.ln();
        let m = poly(&C5, ln_n);
        let s = poly(&C6, ln_n).exp();
        (y - m) / s
    }
}

/// `P(Z > z)` for standard normal `Z`.
pub(crate) fn upper_tail(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

/// The `n / 2` positive coefficients `a_1 >= a_2 >= ...`, normalized so the
/// full antisymmetric vector has unit length.
fn coefficients(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let normal = std_normal();
    let an25 = n as f64 + 0.25;
    let m: Vec<f64> = (1..=half)
        .map(|i| normal.inverse_cdf((i as f64 - 0.375) / an25))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / (n as f64).sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;

    let mut a = vec![0.0; half];
    a[0] = a1;
    let (first, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        a[1] = a2;
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
            / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
            .sqrt();
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        (1, fac)
    };
    for i in first..half {
        a[i] = -m[i] / fac;
    }
    a
}
