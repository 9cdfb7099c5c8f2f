//! Multivariate normal model of reduced coordinates and normality diagnostics.

mod royston;
mod shapiro_wilk;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigenspace::Coordinates;
use crate::error::{Error, Result};
use crate::rng;

pub use royston::{royston_test, RoystonTest};
pub(crate) use shapiro_wilk::upper_tail;
pub use shapiro_wilk::{shapiro_wilk, ShapiroWilk};

/// Gaussian model `N_K(mu_c, sigma_c)` of eigenface coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct MvnModel {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    marginal_sd: DVector<f64>,
    corr: DMatrix<f64>,
}

impl MvnModel {
    /// Build from a mean and covariance. The covariance must be square,
    /// symmetric and positive semidefinite (eigenvalues >= -1e-8).
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let k = mu.len();
        if sigma.shape() != (k, k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: sigma.nrows(),
            });
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-10 * sigma.amax().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        if k > 0 && sigma.clone().symmetric_eigenvalues().min() < -1e-8 {
            return Err(Error::NotPositiveDefinite);
        }
        let marginal_sd = sigma.diagonal().map(|v| v.max(0.0).sqrt());
        let corr = DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                1.0
            } else if marginal_sd[i] > 0.0 && marginal_sd[j] > 0.0 {
                (sigma[(i, j)] / (marginal_sd[i] * marginal_sd[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        });
        Ok(MvnModel {
            mu,
            sigma,
            marginal_sd,
            corr,
        })
    }

    /// Standard normal model on `k` coordinates.
    pub fn standard(k: usize) -> Self {
        MvnModel::new(DVector::zeros(k), DMatrix::identity(k, k)).expect("identity is PSD")
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn marginal_sd(&self) -> &DVector<f64> {
        &self.marginal_sd
    }

    /// Correlation matrix of `sigma`; unit diagonal, zero off-diagonal for
    /// degenerate coordinates.
    pub fn corr(&self) -> &DMatrix<f64> {
        &self.corr
    }

    /// `(c - mu) / sd`, elementwise.
    pub fn standardize(&self, coords: &Coordinates) -> Result<DVector<f64>> {
        self.check_len(coords.len())?;
        Ok((coords.vector() - &self.mu).component_div(&self.marginal_sd))
    }

    /// Inverse of [`MvnModel::standardize`].
    pub fn unstandardize(&self, z: &DVector<f64>) -> Result<Coordinates> {
        self.check_len(z.len())?;
        Ok(Coordinates::new(
            &self.mu + z.component_mul(&self.marginal_sd),
        ))
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                found: len,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = MvnFile {
            k: self.k(),
            mu: self.mu.as_slice().to_vec(),
            sigma: self.sigma.transpose().as_slice().to_vec(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MvnFile = serde_json::from_str(text)?;
        if file.mu.len() != file.k || file.sigma.len() != file.k * file.k {
            return Err(Error::DimensionMismatch {
                expected: file.k,
                found: file.mu.len(),
            });
        }
        MvnModel::new(
            DVector::from_vec(file.mu),
            DMatrix::from_row_slice(file.k, file.k, &file.sigma),
        )
    }
}

/// On-disk form; `sigma` is row-major.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MvnFile {
    k: usize,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

/// Maximum-likelihood fit (covariance divisor N).
///
/// Fails when any coordinate has zero variance, listing the offending
/// indices.
pub fn fit_mvn(coords: &[Coordinates]) -> Result<MvnModel> {
    let n = coords.len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            given: n,
        });
    }
    let k = coords[0].len();
    if let Some(bad) = coords.iter().find(|c| c.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: bad.len(),
        });
    }
    let data = DMatrix::from_fn(k, n, |r, c| coords[c].as_slice()[r]);
    let mu = data.column_mean();
    let centred = DMatrix::from_fn(k, n, |r, c| data[(r, c)] - mu[r]);
    let mut sigma = (&centred * centred.transpose()) / n as f64;
    // exact symmetry
    sigma = (&sigma + sigma.transpose()) * 0.5;
    let zero: Vec<usize> = (0..k).filter(|&i| sigma[(i, i)] <= 0.0).collect();
    if !zero.is_empty() {
        return Err(Error::ZeroVariance(zero));
    }
    MvnModel::new(mu, sigma)
}

/// Lower-triangular `L` with `L L^T = a` for a positive semidefinite `a`.
///
/// Pivots within `1e-8 * max(1, max diag)` of zero are treated as exact
/// zeros, which is equivalent to at most that much diagonal jitter.
pub fn psd_cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = a.nrows();
    let tol = 1e-8 * a.diagonal().amax().max(1.0);
    let mut l = DMatrix::<f64>::zeros(k, k);
    for j in 0..k {
        let d = a[(j, j)] - (0..j).map(|m| l[(j, m)] * l[(j, m)]).sum::<f64>();
        if d < -tol {
            return Err(Error::NotPositiveDefinite);
        }
        if d <= tol {
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in j + 1..k {
            let s = a[(i, j)] - (0..j).map(|m| l[(i, m)] * l[(j, m)]).sum::<f64>();
            l[(i, j)] = s / pivot;
        }
    }
    Ok(l)
}

/// `n` draws from the model; a pure function of `(model, n, seed)`.
pub fn sample_mvn(model: &MvnModel, n: usize, seed: u64) -> Result<Vec<Coordinates>> {
    let chol = psd_cholesky(model.sigma())?;
    let mut rng = rng::stream(seed, 0);
    let k = model.k();
    Ok((0..n)
        .map(|_| {
            let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            Coordinates::new(model.mu() + &chol * z)
        })
        .collect())
}

/// Bootstrap summary of per-coordinate Shapiro-Wilk p-values plus a
/// Royston test on the coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub replications: usize,
    pub subsample: usize,
    pub p_min: Vec<f64>,
    pub p_mean: Vec<f64>,
    pub p_max: Vec<f64>,
    pub royston_h: f64,
    pub royston_df: f64,
    pub royston_p: f64,
}

/// For each coordinate, run Shapiro-Wilk on `replications` resamples (with
/// replacement) of size `subsample` and record min/mean/max p-values.
///
/// Replication `b` draws from RNG stream `b` of `seed`, so the result does
/// not depend on how the work is scheduled. Royston's test runs on a
/// subsample of `subsample` distinct rows drawn from stream
/// `replications`.
pub fn bootstrap_normality(
    coords: &[Coordinates],
    replications: usize,
    subsample: usize,
    seed: u64,
) -> Result<NormalityReport> {
    let n = coords.len();
    if n == 0 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            given: 0,
        });
    }
    if replications == 0 {
        return Err(Error::InvalidArgument(
            "need at least one replication".into(),
        ));
    }
    if subsample > n {
        return Err(Error::InvalidArgument(format!(
            "subsample size {subsample} exceeds sample count {n}"
        )));
    }
    let k = coords[0].len();
    let columns: Vec<Vec<f64>> = (0..k)
        .map(|j| coords.iter().map(|c| c.as_slice()[j]).collect())
        .collect();

    let per_rep: Vec<Vec<f64>> = (0..replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, b as u64);
            let rows: Vec<usize> = (0..subsample).map(|_| rng.random_range(0..n)).collect();
            columns
                .iter()
                .map(|col| {
                    let sample: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
                    shapiro_wilk(&sample).map(|t| t.p_value)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut p_min = vec![f64::INFINITY; k];
    let mut p_max = vec![f64::NEG_INFINITY; k];
    let mut p_mean = vec![0.0; k];
    for rep in &per_rep {
        for (j, &p) in rep.iter().enumerate() {
            p_min[j] = p_min[j].min(p);
            p_max[j] = p_max[j].max(p);
            p_mean[j] += p / replications as f64;
        }
    }

    let mut rng = rng::stream(seed, replications as u64);
    let rows = index::sample(&mut rng, n, subsample).into_vec();
    let matrix = DMatrix::from_fn(subsample, k, |r, c| columns[c][rows[r]]);
    let royston = royston_test(&matrix)?;

    Ok(NormalityReport {
        replications,
        subsample,
        p_min,
        p_mean,
        p_max,
        royston_h: royston.h,
        royston_df: royston.df,
        royston_p: royston.p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coords(rows: &[&[f64]]) -> Vec<Coordinates> {
        rows.iter()
            .map(|r| Coordinates::from_vec(r.to_vec()))
            .collect()
    }

    #[test]
    fn fit_two_point_scalar() {
        let m = fit_mvn(&coords(&[&[-1.0], &[1.0]])).unwrap();
        assert_eq!(m.mu()[0], 0.0);
        assert_eq!(m.sigma()[(0, 0)], 1.0);
        assert_eq!(m.marginal_sd()[0], 1.0);
    }

    #[test]
    fn fit_matches_direct_formula() {
        let pts: Vec<[f64; 2]> = (0..10)
            .map(|i| {
                let t = i as f64;
                [t.sin() * 2.0 + 0.3 * t, (0.7 * t).cos() - 0.1 * t * t]
            })
            .collect();
        let cs: Vec<Coordinates> = pts
            .iter()
            .map(|p| Coordinates::from_vec(p.to_vec()))
            .collect();
        let m = fit_mvn(&cs).unwrap();

        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
        let sxx = pts.iter().map(|p| (p[0] - mx).powi(2)).sum::<f64>() / n;
        let syy = pts.iter().map(|p| (p[1] - my).powi(2)).sum::<f64>() / n;
        let sxy = pts.iter().map(|p| (p[0] - mx) * (p[1] - my)).sum::<f64>() / n;
        assert!((m.mu()[0] - mx).abs() < 1e-12 && (m.mu()[1] - my).abs() < 1e-12);
        assert!((m.sigma()[(0, 0)] - sxx).abs() < 1e-12);
        assert!((m.sigma()[(1, 1)] - syy).abs() < 1e-12);
        assert!((m.sigma()[(0, 1)] - sxy).abs() < 1e-12);
        assert!((m.corr()[(0, 1)] - sxy / (sxx * syy).sqrt()).abs() < 1e-12);
        assert_eq!(m.corr()[(0, 0)], 1.0);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_mvn(&coords(&[&[1.0, 2.0]])),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(matches!(
            fit_mvn(&coords(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]])),
            Err(Error::ZeroVariance(v)) if v == vec![0, 1]
        ));
        assert!(matches!(
            fit_mvn(&coords(&[&[1.0, 2.0], &[3.0, 2.0]])),
            Err(Error::ZeroVariance(v)) if v == vec![1]
        ));
    }

    #[test]
    fn degenerate_sampler_returns_mean() {
        let mu = DVector::from_vec(vec![0.5, -2.0, 3.0]);
        let m = MvnModel::new(mu.clone(), DMatrix::zeros(3, 3)).unwrap();
        for c in sample_mvn(&m, 20, 9).unwrap() {
            assert_eq!(c.vector(), &mu);
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let m = MvnModel::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        assert_eq!(
            sample_mvn(&m, 50, 3).unwrap(),
            sample_mvn(&m, 50, 3).unwrap()
        );
        assert_ne!(
            sample_mvn(&m, 50, 3).unwrap(),
            sample_mvn(&m, 50, 4).unwrap()
        );
    }

    #[test]
    fn non_psd_rejected() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            psd_cholesky(&bad),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(MvnModel::new(DVector::zeros(2), bad).is_err());
    }

    #[test]
    fn psd_cholesky_reconstructs() {
        // rank-2 PSD 3x3
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, -1.0, 3.0]);
        let a = &b * b.transpose();
        let l = psd_cholesky(&a).unwrap();
        assert!((&l * l.transpose() - &a).amax() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let m = MvnModel::new(
            DVector::from_vec(vec![0.1, 1.0 / 3.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0 / 7.0]),
        )
        .unwrap();
        let back = MvnModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn standardize_round_trip() {
        let m = MvnModel::new(
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.25]),
        )
        .unwrap();
        let c = Coordinates::from_vec(vec![3.0, -0.5]);
        let z = m.standardize(&c).unwrap();
        assert_eq!(z.as_slice(), &[1.0, 1.0]);
        assert_eq!(m.unstandardize(&z).unwrap(), c);
    }

    #[test]
    fn bootstrap_single_replication_is_flat() {
        let m = MvnModel::standard(3);
        let cs = sample_mvn(&m, 200, 1).unwrap();
        let r = bootstrap_normality(&cs, 1, 100, 5).unwrap();
        assert_eq!(r.p_min, r.p_mean);
        assert_eq!(r.p_max, r.p_mean);
        assert!(r.p_mean.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(bootstrap_normality(&cs, 1, 201, 5).is_err());
    }
}
