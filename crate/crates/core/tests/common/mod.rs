//! Independent reference routines for the integration tests. Nothing here
//! calls into the code under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Two-sample Kolmogorov-Smirnov test, asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    (d, kolmogorov_q(lambda))
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..200 {
        let term = (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Eigenvalues (descending) and eigenvectors of the explicit `p x p`
/// sample covariance (divisor N - 1) of row-major faces.
pub fn dense_covariance_eigen(faces: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = faces.len();
    let p = faces[0].len();
    let mean: Vec<f64> = (0..p)
        .map(|j| faces.iter().map(|f| f[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for f in faces {
        for r in 0..p {
            for c in 0..p {
                cov[(r, c)] += (f[r] - mean[r]) * (f[c] - mean[c]);
            }
        }
    }
    cov /= (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(p, p, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Composite Simpson rule on `[lo, hi]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    assert!(n.is_multiple_of(2));
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// Tensor-product Simpson rule over a square.
pub fn simpson_2d(f: impl Fn(f64, f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    simpson(|x| simpson(|y| f(x, y), lo, hi, n), lo, hi, n)
}

pub fn column(rows: &[DVector<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

/// Median of a slice (average of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Shapiro-Wilk reference values computed with an independent
/// implementation (scipy.stats.shapiro) and frozen here:
/// (name, sample, W, p).
pub fn shapiro_reference() -> Vec<(&'static str, Vec<f64>, f64, f64)> {
    let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
    use statrs::distribution::ContinuousCDF;
    vec![
        (
            "three",
            vec![1.0, 2.0, 4.0],
            0.9642857142857142,
            0.6368868450289689,
        ),
        (
            "ten",
            vec![148., 154., 158., 160., 161., 162., 166., 170., 182., 195.],
            0.9080491141028906,
            0.2678575575376505,
        ),
        (
            "twenty_quadratic",
            (1..=20).map(|i| (i * i) as f64).collect(),
            0.9061306286053874,
            0.053809589128654696,
        ),
        (
            "fifty_sine",
            (0..50)
                .map(|i| (1.7 * i as f64).sin() + 0.1 * i as f64)
                .collect(),
            0.9769757256304654,
            0.43262869276932103,
        ),
        (
            "two_hundred_lognormal",
            (0..200)
                .map(|i| normal.inverse_cdf((i as f64 + 0.5) / 200.0).exp())
                .collect(),
            0.6469290555563703,
            3.7279203910001635e-20,
        ),
    ]
}
