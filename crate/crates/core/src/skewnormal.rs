//! Multivariate skew-normal distribution and the skewed face generator.
//!
//! With skewness vector `delta` (each entry in `(-1, 1)`) and a correlation
//! matrix `psi`, a draw is `Y_i = delta_i |Z0| + sqrt(1 - delta_i^2) Z_i`,
//! `Z0 ~ N(0, 1)` independent of `Z ~ N_K(0, psi)`. Its density is
//! `2 phi_K(y; omega) Phi(alpha^T y)` and its mean is `sqrt(2/pi) delta`.

use std::f64::consts::{FRAC_2_PI, PI};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::eigenspace::{Coordinates, EigenModel};
use crate::error::{Error, Result};
use crate::faceio::FaceVector;
use crate::gaussmodel::MvnModel;
use crate::rng;

/// Default stability margin keeping `|delta_i| <= 1 - zeta`.
pub const DEFAULT_ZETA: f64 = 0.01;

/// Map a desired standardized mean displacement to skewness parameters.
///
/// `raw = sqrt(pi/2) * mu_tilde`, then the whole vector is shrunk by
/// `k* = min(1, (1 - zeta) / |raw|_inf)` so every entry stays inside the
/// unit interval with margin `zeta`. Direction is preserved.
pub fn delta_from_mu(mu_tilde: &DVector<f64>, zeta: f64) -> Result<(DVector<f64>, f64)> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "zeta {zeta} outside (0, 1)"
        )));
    }
    let raw = mu_tilde * (PI / 2.0).sqrt();
    let largest = raw.amax();
    let k_star = if largest == 0.0 {
        1.0
    } else {
        ((1.0 - zeta) / largest).min(1.0)
    };
    Ok((raw * k_star, k_star))
}

/// A desired mean displacement `mu_tilde` in standardized coordinates,
/// with the shrink factor applied to keep the skewness admissible.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewTarget {
    mu_tilde: DVector<f64>,
    zeta: f64,
    k_star: f64,
    delta: DVector<f64>,
}

impl SkewTarget {
    pub fn new(mu_tilde: DVector<f64>, zeta: f64) -> Result<Self> {
        let (delta, k_star) = delta_from_mu(&mu_tilde, zeta)?;
        Ok(SkewTarget {
            mu_tilde,
            zeta,
            k_star,
            delta,
        })
    }

    /// No skew: generation reduces to the Gaussian model.
    pub fn neutral(k: usize) -> Self {
        SkewTarget::new(DVector::zeros(k), DEFAULT_ZETA).expect("default zeta valid")
    }

    pub fn mu_tilde(&self) -> &DVector<f64> {
        &self.mu_tilde
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn k_star(&self) -> f64 {
        self.k_star
    }

    pub fn delta(&self) -> &DVector<f64> {
        &self.delta
    }

    pub fn len(&self) -> usize {
        self.mu_tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_tilde.is_empty()
    }
}

/// Full parameter bundle of a standardized multivariate skew-normal.
#[derive(Clone, Debug)]
pub struct SnParams {
    delta: DVector<f64>,
    lambda: DVector<f64>,
    /// Diagonal of `Delta`, `sqrt(1 - delta_i^2)`.
    delta_scale: DVector<f64>,
    psi: DMatrix<f64>,
    omega: DMatrix<f64>,
    alpha: DVector<f64>,
    psi_chol: Cholesky<f64, Dyn>,
    omega_chol: Cholesky<f64, Dyn>,
    omega_log_det: f64,
}

impl SnParams {
    /// Derive `lambda`, `Delta`, `omega` and `alpha` from `delta` and `psi`.
    ///
    /// `psi` must be positive definite with unit diagonal.
    pub fn new(delta: DVector<f64>, psi: DMatrix<f64>) -> Result<Self> {
        let k = delta.len();
        if psi.shape() != (k, k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: psi.nrows(),
            });
        }
        if let Some((index, &value)) = delta
            .iter()
            .enumerate()
            .find(|(_, d)| d.is_nan() || d.abs() >= 1.0)
        {
            return Err(Error::DeltaOutOfRange { index, value });
        }
        if psi.diagonal().iter().any(|d| (d - 1.0).abs() > 1e-10) {
            return Err(Error::InvalidArgument("psi must have unit diagonal".into()));
        }
        if (&psi - psi.transpose()).amax() > 1e-10 {
            return Err(Error::InvalidArgument("psi must be symmetric".into()));
        }
        let psi_chol = Cholesky::new(psi.clone()).ok_or(Error::NotPositiveDefinite)?;

        let delta_scale = delta.map(|d| (1.0 - d * d).sqrt());
        let lambda = delta.component_div(&delta_scale);
        let psi_inv_lambda = psi_chol.solve(&lambda);
        let denom = (1.0 + lambda.dot(&psi_inv_lambda)).sqrt();
        let alpha = psi_inv_lambda.component_div(&delta_scale) / denom;

        let inner = &psi + &lambda * lambda.transpose();
        let mut omega =
            DMatrix::from_fn(k, k, |i, j| delta_scale[i] * inner[(i, j)] * delta_scale[j]);
        omega = (&omega + omega.transpose()) * 0.5;
        let omega_chol = Cholesky::new(omega.clone()).ok_or(Error::NotPositiveDefinite)?;
        let omega_log_det = omega_chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| 2.0 * d.ln())
            .sum();

        Ok(SnParams {
            delta,
            lambda,
            delta_scale,
            psi,
            omega,
            alpha,
            psi_chol,
            omega_chol,
            omega_log_det,
        })
    }

    pub fn k(&self) -> usize {
        self.delta.len()
    }

    pub fn delta(&self) -> &DVector<f64> {
        &self.delta
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn delta_scale(&self) -> &DVector<f64> {
        &self.delta_scale
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// `E[Y] = sqrt(2/pi) delta`.
    pub fn mean(&self) -> DVector<f64> {
        &self.delta * FRAC_2_PI.sqrt()
    }

    /// `Cov[Y] = omega - (2/pi) delta delta^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.omega - &self.delta * self.delta.transpose() * FRAC_2_PI
    }
}

/// Alias following the operation name used elsewhere in the crate.
pub fn build_sn_params(delta: DVector<f64>, psi: DMatrix<f64>) -> Result<SnParams> {
    SnParams::new(delta, psi)
}

/// `2 phi_K(y; omega) Phi(alpha^T y)`.
pub fn sn_density(params: &SnParams, y: &DVector<f64>) -> Result<f64> {
    let k = params.k();
    if y.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: y.len(),
        });
    }
    let maha = y.dot(&params.omega_chol.solve(y));
    let log_phi = -0.5 * (k as f64 * (2.0 * PI).ln() + params.omega_log_det + maha);
    let cdf = crate::gaussmodel::upper_tail(-params.alpha.dot(y));
    Ok(2.0 * log_phi.exp() * cdf)
}

const CHUNK: usize = 4096;

/// `n` draws, rows of the returned `n x K` matrix.
///
/// Draws are generated in fixed-size chunks, chunk `i` from RNG stream
/// `i` of `seed`, so the output is identical however the chunks are
/// scheduled.
pub fn sample_sn(params: &SnParams, n: usize, seed: u64) -> DMatrix<f64> {
    let k = params.k();
    let l = params.psi_chol.l();
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let rows = CHUNK.min(n - c * CHUNK);
            let mut rng = rng::stream(seed, c as u64);
            let mut out = Vec::with_capacity(rows * k);
            let mut z = DVector::zeros(k);
            for _ in 0..rows {
                let z0: f64 = rng.sample::<f64, _>(StandardNormal).abs();
                for v in z.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let correlated = &l * &z;
                out.extend(
                    (0..k).map(|i| params.delta[i] * z0 + params.delta_scale[i] * correlated[i]),
                );
            }
            out
        })
        .collect();
    let flat: Vec<f64> = chunks.into_iter().flatten().collect();
    DMatrix::from_row_slice(n, k, &flat)
}

/// A generated face with its eigenface coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedFace {
    pub face: FaceVector,
    pub coords: Coordinates,
}

/// Draw `n` coordinates `mu_c + sd * Y`, with `Y` skew-normal under the
/// correlation of `mvn` and the target's skewness, and reconstruct faces.
pub fn generate_faces(
    eigen: &EigenModel,
    mvn: &MvnModel,
    target: &SkewTarget,
    n: usize,
    seed: u64,
) -> Result<Vec<GeneratedFace>> {
    generate_coordinates(mvn, target, n, seed)?
        .into_iter()
        .map(|coords| {
            Ok(GeneratedFace {
                face: eigen.reconstruct(&coords)?,
                coords,
            })
        })
        .collect()
}

/// Coordinate part of [`generate_faces`], without reconstruction.
pub fn generate_coordinates(
    mvn: &MvnModel,
    target: &SkewTarget,
    n: usize,
    seed: u64,
) -> Result<Vec<Coordinates>> {
    if target.len() != mvn.k() {
        return Err(Error::DimensionMismatch {
            expected: mvn.k(),
            found: target.len(),
        });
    }
    let params = SnParams::new(target.delta().clone(), mvn.corr().clone())?;
    let draws = sample_sn(&params, n, seed);
    Ok(draws
        .row_iter()
        .map(|row| Coordinates::new(mvn.mu() + row.transpose().component_mul(mvn.marginal_sd())))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mu_gives_zero_delta() {
        let (d, k) = delta_from_mu(&DVector::zeros(3), 0.01).unwrap();
        assert_eq!(d, DVector::zeros(3));
        assert_eq!(k, 1.0);
    }

    #[test]
    fn within_bound_is_unscaled() {
        let (d, k) = delta_from_mu(&DVector::from_vec(vec![0.4]), 0.01).unwrap();
        assert_eq!(k, 1.0);
        assert!((d[0] - 0.501_325_654_926_200_6).abs() < 1e-12);
    }

    #[test]
    fn clamp_preserves_direction() {
        let (d, k) = delta_from_mu(&DVector::from_vec(vec![2.0, 1.0]), 0.01).unwrap();
        assert!((d.amax() - 0.99).abs() < 1e-15);
        assert!((d[1] / d[0] - 0.5).abs() < 1e-15);
        assert!(k < 1.0);
        assert!(delta_from_mu(&DVector::zeros(1), 0.0).is_err());
        assert!(delta_from_mu(&DVector::zeros(1), 1.0).is_err());
    }

    #[test]
    fn zero_delta_is_normal() {
        let psi = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let p = SnParams::new(DVector::zeros(2), psi.clone()).unwrap();
        assert_eq!(p.lambda(), &DVector::zeros(2));
        assert_eq!(p.delta_scale(), &DVector::from_element(2, 1.0));
        assert_eq!(p.omega(), &psi);
        assert_eq!(p.alpha(), &DVector::zeros(2));
    }

    #[test]
    fn scalar_hand_values() {
        let p = SnParams::new(DVector::from_vec(vec![0.6]), DMatrix::identity(1, 1)).unwrap();
        assert!((p.lambda()[0] - 0.75).abs() < 1e-15);
        assert!((p.delta_scale()[0] - 0.8).abs() < 1e-15);
        assert!((p.omega()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((p.alpha()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn omega_off_diagonal_for_identity_psi() {
        let p = SnParams::new(DVector::from_vec(vec![0.5, -0.3]), DMatrix::identity(2, 2)).unwrap();
        assert!((p.omega()[(0, 1)] + 0.15).abs() < 1e-15);
        assert!((p.omega()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((p.omega()[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parameter_errors() {
        assert!(matches!(
            SnParams::new(DVector::from_vec(vec![1.0]), DMatrix::identity(1, 1)),
            Err(Error::DeltaOutOfRange { index: 0, .. })
        ));
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            SnParams::new(DVector::zeros(2), singular),
            Err(Error::NotPositiveDefinite)
        ));
        let not_unit = DMatrix::from_row_slice(1, 1, &[2.0]);
        assert!(SnParams::new(DVector::zeros(1), not_unit).is_err());
    }

    #[test]
    fn density_at_origin() {
        let p = SnParams::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let d = sn_density(&p, &DVector::zeros(1)).unwrap();
        assert!((d - 0.398_942_280_401_432_7).abs() < 1e-12);

        // Phi(0) = 1/2 leaves the plain Gaussian density at the origin
        let p = SnParams::new(
            DVector::from_vec(vec![0.7, -0.2]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]),
        )
        .unwrap();
        let om = p.omega();
        let det = om[(0, 0)] * om[(1, 1)] - om[(0, 1)] * om[(1, 0)];
        let phi0 = 1.0 / (2.0 * PI * det.sqrt());
        assert!((sn_density(&p, &DVector::zeros(2)).unwrap() - phi0).abs() < 1e-12);
    }

    #[test]
    fn sampler_deterministic_and_shaped() {
        let p = SnParams::new(
            DVector::from_vec(vec![0.2, 0.5, -0.4]),
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let a = sample_sn(&p, 5000, 42);
        assert_eq!(a.shape(), (5000, 3));
        assert_eq!(a, sample_sn(&p, 5000, 42));
        assert_ne!(a, sample_sn(&p, 5000, 43));
        assert_eq!(sample_sn(&p, 0, 1).nrows(), 0);
    }

    #[test]
    fn generator_checks_dimensions() {
        let mvn = MvnModel::standard(3);
        let eig = EigenModel::identity(3, DVector::from_element(3, 1.0)).unwrap();
        let bad = SkewTarget::neutral(2);
        assert!(generate_faces(&eig, &mvn, &bad, 4, 1).is_err());
        let out = generate_faces(&eig, &mvn, &SkewTarget::neutral(3), 4, 1).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out[0].face.pixels(), out[0].coords.as_slice());
    }
}
