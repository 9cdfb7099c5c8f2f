//! The pipeline commands, callable from `main` or from tests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use facesearch_core::eigenspace::{fit_eigenmodel, load_model, save_model};
use facesearch_core::faceio::{
    decode_image, encode_png, filter_symmetric, load_dataset, load_dir, save_dataset,
    symmetry_index,
};
use facesearch_core::gaussmodel::{bootstrap_normality, fit_mvn, sample_mvn};
use facesearch_core::search::{init_session, project_dataset, run};
use facesearch_core::{
    Coordinates, EigenModel, FaceDataset, Geometry, MvnModel, NormalityReport, SearchConfig,
    SearchResult, SimulatedOracle,
};
use serde::Serialize;

pub const DATASET_FILE: &str = "faces.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EIGEN_FILE: &str = "eigen.bin";
pub const MVN_FILE: &str = "mvn.json";
pub const VARIANCE_FILE: &str = "explained_variance.csv";
pub const RESULT_FILE: &str = "result.json";
pub const TRACE_FILE: &str = "trace.csv";

/// Accept either an archive file or a directory holding `faces.bin`.
pub fn dataset_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(DATASET_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn read_dataset(path: &Path) -> Result<FaceDataset> {
    let path = dataset_path(path);
    load_dataset(&path).with_context(|| format!("reading dataset {}", path.display()))
}

pub fn read_models(dir: &Path) -> Result<(EigenModel, MvnModel)> {
    let eigen = load_model(&dir.join(EIGEN_FILE))
        .with_context(|| format!("reading {}", dir.join(EIGEN_FILE).display()))?;
    let text = fs::read_to_string(dir.join(MVN_FILE))
        .with_context(|| format!("reading {}", dir.join(MVN_FILE).display()))?;
    let mvn = MvnModel::from_json(&text)?;
    if mvn.k() != eigen.k() {
        bail!(
            "eigen model has {} coordinates but the normal model has {}",
            eigen.k(),
            mvn.k()
        );
    }
    Ok((eigen, mvn))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SymmetryStats {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    /// Largest index among the retained faces.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub file: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub percentile: f64,
    pub n_before: usize,
    pub n_after: usize,
    pub symmetry: SymmetryStats,
    pub retained: Vec<String>,
    pub failures: Vec<Failure>,
}

/// Read an image directory, keep the most symmetric `percentile` of it and
/// write `faces.bin` plus `manifest.json` into `out`.
pub fn ingest(dir: &Path, out: &Path, percentile: f64, geometry: Geometry) -> Result<Manifest> {
    let loaded = load_dir(dir, geometry).with_context(|| format!("ingesting {}", dir.display()))?;
    let mut indices = loaded
        .dataset
        .faces()
        .iter()
        .map(symmetry_index)
        .collect::<facesearch_core::Result<Vec<f64>>>()?;
    let kept = filter_symmetric(&loaded.dataset, percentile)?;

    let threshold = kept
        .ids()
        .iter()
        .map(|id| {
            let i = loaded
                .dataset
                .ids()
                .iter()
                .position(|x| x == id)
                .expect("subset");
            indices[i]
        })
        .fold(f64::NEG_INFINITY, f64::max);
    indices.sort_by(f64::total_cmp);
    let n = indices.len();
    let median = if n % 2 == 1 {
        indices[n / 2]
    } else {
        0.5 * (indices[n / 2 - 1] + indices[n / 2])
    };

    let manifest = Manifest {
        width: geometry.width,
        height: geometry.height,
        percentile,
        n_before: n,
        n_after: kept.len(),
        symmetry: SymmetryStats {
            min: indices[0],
            median,
            max: indices[n - 1],
            threshold,
        },
        retained: kept.ids().to_vec(),
        failures: loaded
            .failures
            .iter()
            .map(|(path, e)| Failure {
                file: path.display().to_string(),
                error: e.to_string(),
            })
            .collect(),
    };

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_dataset(&kept, &out.join(DATASET_FILE))?;
    fs::write(
        out.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitSummary {
    pub k: usize,
    pub n_samples: usize,
    /// Cumulative explained variance for `1..=k` components.
    pub explained_variance: Vec<f64>,
}

impl FitSummary {
    pub fn table(&self) -> String {
        let mut out = String::from("k,cumulative_explained_variance\n");
        for (i, v) in self.explained_variance.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i + 1, v);
        }
        out
    }
}

/// Fit eigenfaces and the coordinate normal model, and save both.
pub fn fit(dataset: &Path, k: usize, out: &Path) -> Result<FitSummary> {
    let ds = read_dataset(dataset)?;
    let eigen = fit_eigenmodel(&ds, k)?;
    let coords: Vec<Coordinates> = ds
        .faces()
        .iter()
        .map(|f| eigen.project(f))
        .collect::<facesearch_core::Result<_>>()?;
    let mvn = fit_mvn(&coords)?;

    let summary = FitSummary {
        k,
        n_samples: ds.len(),
        explained_variance: eigen.explained_variance_table(),
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_model(&eigen, &out.join(EIGEN_FILE))?;
    fs::write(out.join(MVN_FILE), mvn.to_json()?)?;
    fs::write(out.join(VARIANCE_FILE), summary.table())?;
    Ok(summary)
}

/// Bootstrap normality diagnostics of the dataset's eigenface coordinates.
pub fn stats(
    dataset: &Path,
    models: &Path,
    bootstrap: usize,
    subsample: usize,
    seed: u64,
) -> Result<NormalityReport> {
    let ds = read_dataset(dataset)?;
    let (eigen, _) = read_models(models)?;
    let coords: Vec<Coordinates> = ds
        .faces()
        .iter()
        .map(|f| eigen.project(f))
        .collect::<facesearch_core::Result<_>>()?;
    Ok(bootstrap_normality(&coords, bootstrap, subsample, seed)?)
}

/// File name of the `i`-th generated face.
pub fn random_file_name(i: usize) -> String {
    format!("face_{i:05}.png")
}

/// Draw `n` faces from the coordinate normal model and write them as PNG.
/// Returns the coordinates in file order.
pub fn random(models: &Path, n: usize, out: &Path, seed: u64) -> Result<Vec<Coordinates>> {
    let (eigen, mvn) = read_models(models)?;
    let coords = sample_mvn(&mvn, n, seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (i, c) in coords.iter().enumerate() {
        let face = eigen.reconstruct(c)?;
        fs::write(out.join(random_file_name(i)), encode_png(&face))?;
    }
    Ok(coords)
}

#[derive(Clone, Debug)]
pub struct SearchOutput {
    pub result: SearchResult,
    pub trace_csv: String,
}

/// Simulated-oracle search for the face in `target`.
pub fn search(
    models: &Path,
    dataset: &Path,
    target: &Path,
    config: SearchConfig,
    seed: u64,
) -> Result<SearchOutput> {
    let (eigen, mvn) = read_models(models)?;
    let ds = read_dataset(dataset)?;
    let bytes = fs::read(target).with_context(|| format!("reading {}", target.display()))?;
    let face = decode_image(&bytes, eigen.geometry())
        .with_context(|| format!("decoding {}", target.display()))?;
    let oracle = SimulatedOracle::new(eigen.project(&face)?, &mvn)?;
    let pool = project_dataset(&ds, &eigen)?;

    let mut state =
        init_session(&pool, &eigen, &mvn, &oracle, config, seed).map_err(|e| match e {
            facesearch_core::Error::EmptyAcceptedSet => anyhow::anyhow!(
                "no face in the initial pool was accepted; raise --epsilon or --initial-pool"
            ),
            other => other.into(),
        })?;
    let result = run(&mut state, &eigen, &mvn, &oracle)?;
    Ok(SearchOutput {
        trace_csv: state.trace_csv(),
        result,
    })
}

/// Write `result.json` and `trace.csv` into `out`.
pub fn write_search_output(output: &SearchOutput, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(
        out.join(RESULT_FILE),
        serde_json::to_string_pretty(&output.result)?,
    )?;
    fs::write(out.join(TRACE_FILE), &output.trace_csv)?;
    Ok(())
}
