//! Eigenface basis: fitting, projection, reconstruction and persistence.
//!
//! Faces are mean-centred before the covariance eigendecomposition, so the
//! reduced face space is the affine set `mean_face + span(basis)`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use sha2::{Digest, Sha256};

use crate::binfmt::ByteReader;
use crate::error::{Error, Result};
use crate::faceio::{FaceDataset, FaceVector, Geometry};

/// Reduced coordinates of a face in the eigenface basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Coordinates(DVector<f64>);

impl Coordinates {
    pub fn new(values: DVector<f64>) -> Self {
        Coordinates(values)
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Coordinates(DVector::from_vec(values))
    }

    pub fn zeros(k: usize) -> Self {
        Coordinates(DVector::zeros(k))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

impl From<Vec<f64>> for Coordinates {
    fn from(v: Vec<f64>) -> Self {
        Coordinates::from_vec(v)
    }
}

/// Mean face plus the top-K eigenfaces of the corpus covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenModel {
    geometry: Geometry,
    mean: DVector<f64>,
    /// p x K, orthonormal columns.
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    total_variance: f64,
    n_samples: usize,
}

const ORTHO_TOL: f64 = 1e-8;

impl EigenModel {
    /// Assemble a model from precomputed parts, checking the basis is
    /// orthonormal and the eigenvalues are sorted and nonnegative.
    pub fn from_parts(
        geometry: Geometry,
        mean: DVector<f64>,
        basis: DMatrix<f64>,
        eigenvalues: DVector<f64>,
        total_variance: f64,
        n_samples: usize,
    ) -> Result<Self> {
        let p = geometry.len();
        if mean.len() != p || basis.nrows() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: if mean.len() != p {
                    mean.len()
                } else {
                    basis.nrows()
                },
            });
        }
        if eigenvalues.len() != basis.ncols() {
            return Err(Error::DimensionMismatch {
                expected: basis.ncols(),
                found: eigenvalues.len(),
            });
        }
        if eigenvalues.iter().any(|&l| l < -1e-10 || !l.is_finite())
            || eigenvalues.as_slice().windows(2).any(|w| w[1] > w[0])
        {
            return Err(Error::InvalidArgument(
                "eigenvalues must be finite, nonnegative and non-increasing".into(),
            ));
        }
        let model = EigenModel {
            geometry,
            mean,
            basis,
            eigenvalues,
            total_variance,
            n_samples,
        };
        let err = model.orthonormality_error();
        if err >= ORTHO_TOL {
            return Err(Error::InvalidArgument(format!(
                "basis is not orthonormal (max error {err:e})"
            )));
        }
        Ok(model)
    }

    /// Identity model on `k` coordinates: zero mean, unit basis. Faces and
    /// coordinates coincide, which is convenient for synthetic searches.
    pub fn identity(k: usize, eigenvalues: DVector<f64>) -> Result<Self> {
        let total = eigenvalues.sum();
        EigenModel::from_parts(
            Geometry::new(k, 1),
            DVector::zeros(k),
            DMatrix::identity(k, k),
            eigenvalues,
            total,
            0,
        )
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// Retained dimension K.
    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn mean_face(&self) -> FaceVector {
        FaceVector::new(self.mean.as_slice().to_vec(), self.geometry)
            .expect("mean has model geometry")
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// `max |(V^T V - I)_ij|`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.basis.tr_mul(&self.basis);
        let k = gram.nrows();
        (gram - DMatrix::<f64>::identity(k, k)).amax()
    }

    /// `c = V^T (x - mean)`.
    pub fn project(&self, face: &FaceVector) -> Result<Coordinates> {
        if face.geometry() != self.geometry {
            return Err(Error::WrongDimensions {
                expected_width: self.geometry.width,
                expected_height: self.geometry.height,
                found_width: face.width(),
                found_height: face.height(),
            });
        }
        let centred = DVector::from_column_slice(face.pixels()) - &self.mean;
        Ok(Coordinates(self.basis.tr_mul(&centred)))
    }

    /// `x = mean + V c`, without clamping.
    pub fn reconstruct(&self, coords: &Coordinates) -> Result<FaceVector> {
        if coords.len() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                found: coords.len(),
            });
        }
        let x = &self.mean + &self.basis * coords.vector();
        FaceVector::new(x.data.into(), self.geometry)
    }

    /// Fraction of total variance captured by the first `k` eigenfaces.
    pub fn explained_variance(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.k() {
            return Err(Error::KOutOfRange { k, max: self.k() });
        }
        if self.total_variance <= 0.0 {
            // no variance at all: every truncation explains all of it
            return Ok(1.0);
        }
        let captured: f64 = self.eigenvalues.rows(0, k).sum();
        Ok((captured / self.total_variance).clamp(0.0, 1.0))
    }

    /// Cumulative explained-variance fractions for `k = 1..=K`.
    pub fn explained_variance_table(&self) -> Vec<f64> {
        (1..=self.k())
            .map(|k| self.explained_variance(k).expect("k in range"))
            .collect()
    }
}

/// Fit the mean face and top-`k` eigenfaces of `dataset`.
///
/// Uses the sample covariance (divisor `N - 1`). When `N <= p` the
/// eigenproblem is solved on the `N x N` Gram matrix of centred faces and
/// mapped back, otherwise on the `p x p` covariance directly. Each column's
/// largest-magnitude entry is made positive.
pub fn fit_eigenmodel(dataset: &FaceDataset, k: usize) -> Result<EigenModel> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            given: n,
        });
    }
    let geometry = dataset.geometry().expect("nonempty");
    let p = geometry.len();
    let max_k = p.min(n - 1);
    if k == 0 || k > max_k {
        return Err(Error::KOutOfRange { k, max: max_k });
    }

    // rows are centred faces
    let mut centred = DMatrix::<f64>::from_fn(n, p, |i, j| dataset.faces()[i].pixels()[j]);
    let mean = DVector::from_iterator(p, centred.column_iter().map(|c| c.mean()));
    for mut row in centred.row_iter_mut() {
        row -= mean.transpose();
    }
    let dof = (n - 1) as f64;
    let total_variance = centred.norm_squared() / dof;

    let (values, mut basis) = if n <= p {
        let gram = (&centred * centred.transpose()) / dof;
        let (values, vectors) = top_eigenpairs(gram, k);
        let scale = values[0].max(0.0);
        let mut basis = centred.tr_mul(&vectors);
        for (j, mut col) in basis.column_iter_mut().enumerate() {
            let lambda = values[j];
            if lambda > 1e-12 * scale && lambda > 0.0 {
                col /= (dof * lambda).sqrt();
            } else {
                col.fill(0.0);
            }
        }
        (values, basis)
    } else {
        let cov = centred.tr_mul(&centred) / dof;
        top_eigenpairs(cov, k)
    };
    orthonormalize(&mut basis);
    fix_signs(&mut basis);

    let eigenvalues = values.map(|v| v.max(0.0));
    Ok(EigenModel {
        geometry,
        mean,
        basis,
        eigenvalues,
        total_variance,
        n_samples: n,
    })
}

/// Largest `k` eigenpairs of a symmetric matrix, sorted by decreasing value.
fn top_eigenpairs(matrix: DMatrix<f64>, k: usize) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(matrix);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.truncate(k);
    let values = DVector::from_iterator(k, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), k, |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Modified Gram-Schmidt. Zero (null-space) columns are replaced by the
/// first standard basis vectors that remain independent.
fn orthonormalize(basis: &mut DMatrix<f64>) {
    let (p, k) = basis.shape();
    let mut next_unit = 0;
    for j in 0..k {
        let mut v = basis.column(j).into_owned();
        let initial = v.norm();
        for _ in 0..2 {
            for i in 0..j {
                let q = basis.column(i);
                let d = q.dot(&v);
                v.axpy(-d, &q, 1.0);
            }
        }
        if initial == 0.0 || v.norm() < 1e-6 * initial.max(1.0) {
            // complete the basis from standard unit vectors
            loop {
                let mut e = DVector::zeros(p);
                e[next_unit] = 1.0;
                next_unit += 1;
                for _ in 0..2 {
                    for i in 0..j {
                        let q = basis.column(i);
                        let d = q.dot(&e);
                        e.axpy(-d, &q, 1.0);
                    }
                }
                if e.norm() > 1e-3 {
                    v = e;
                    break;
                }
            }
        }
        let norm = v.norm();
        basis.set_column(j, &(v / norm));
    }
}

fn fix_signs(basis: &mut DMatrix<f64>) {
    for mut col in basis.column_iter_mut() {
        let pivot = col.iter().copied().fold(
            0.0f64,
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

const MODEL_MAGIC: &[u8; 8] = b"EIGNFACE";
const MODEL_VERSION: u32 = 1;

/// Serialize to the versioned binary model format.
///
/// Layout (little-endian): magic, `u32` version, `u64` width, height, p, K,
/// N, `f64` total variance, p mean entries, K eigenvalues, p*K basis entries
/// column-major, then the SHA-256 of everything before it.
pub fn model_to_bytes(model: &EigenModel) -> Vec<u8> {
    let p = model.geometry.len();
    let k = model.k();
    let mut buf = Vec::with_capacity(60 + 8 * (p + k + p * k) + 32);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for v in [
        model.geometry.width,
        model.geometry.height,
        p,
        k,
        model.n_samples,
    ] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&model.total_variance.to_le_bytes());
    for v in model
        .mean
        .iter()
        .chain(model.eigenvalues.iter())
        .chain(model.basis.iter())
    {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<EigenModel> {
    let mut r = ByteReader::new(bytes);
    let magic = r
        .take(8)
        .map_err(|_| Error::Version("file too short for header".into()))?;
    if magic != MODEL_MAGIC {
        return Err(Error::Version("bad magic, not an eigenface model".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Version(format!(
            "model version {version}, this build reads {MODEL_VERSION}"
        )));
    }
    let width = r.u64()? as usize;
    let height = r.u64()? as usize;
    let p = r.u64()? as usize;
    let k = r.u64()? as usize;
    let n_samples = r.u64()? as usize;
    if width.checked_mul(height) != Some(p) {
        return Err(Error::Version(format!(
            "header geometry {width}x{height} != p={p}"
        )));
    }
    let total_variance = r.f64()?;
    let mean = r.f64s(p)?;
    let eigenvalues = r.f64s(k)?;
    let basis = r.f64s(p.checked_mul(k).ok_or(Error::Truncated)?)?;
    let body_len = r.position();
    let stored = r.take(32)?;
    if Sha256::digest(&bytes[..body_len]).as_slice() != stored {
        return Err(Error::Checksum);
    }
    Ok(EigenModel {
        geometry: Geometry::new(width, height),
        mean: DVector::from_vec(mean),
        basis: DMatrix::from_vec(p, k, basis),
        eigenvalues: DVector::from_vec(eigenvalues),
        total_variance,
        n_samples,
    })
}

pub fn save_model(model: &EigenModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<EigenModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
