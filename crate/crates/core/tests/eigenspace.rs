mod common;

use facesearch_core::eigenspace::{fit_eigenmodel, Coordinates};
use facesearch_core::faceio::{FaceDataset, FaceVector, Geometry};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy(n: usize, g: Geometry, seed: u64) -> (FaceDataset, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // a few strong directions plus noise, so the spectrum is not flat
    let dirs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..g.len()).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..3)
                .map(|k| (3 - k) as f64 * (rng.random::<f64>() - 0.5))
                .collect();
            (0..g.len())
                .map(|j| {
                    0.5 + (0..3).map(|k| w[k] * dirs[k][j]).sum::<f64>() * 0.3
                        + 0.05 * rng.random::<f64>()
                })
                .collect()
        })
        .collect();
    let faces = raw
        .iter()
        .map(|px| FaceVector::new(px.clone(), g).unwrap())
        .collect();
    (FaceDataset::from_faces(faces).unwrap(), raw)
}

fn geometries() -> impl Strategy<Value = Geometry> {
    prop_oneof![
        Just(Geometry::new(2, 2)),
        Just(Geometry::new(4, 3)),
        Just(Geometry::new(4, 4)),
        Just(Geometry::new(8, 5)),
        Just(Geometry::new(8, 8)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spectrum_matches_dense_covariance(g in geometries(), n in 3usize..=50, seed in any::<u64>()) {
        let (ds, raw) = toy(n, g, seed);
        let full = g.len().min(n - 1);
        let model = fit_eigenmodel(&ds, full).unwrap();
        let (values, vectors) = common::dense_covariance_eigen(&raw);
        let scale = values[0].abs().max(1e-300);
        for (j, want) in values.iter().take(full).enumerate() {
            let got = model.eigenvalues()[j];
            prop_assert!((got - want.max(0.0)).abs() <= 1e-6 * scale,
                "eigenvalue {j}: {got} vs {want}");
        }
        // compare eigenvectors where the eigenvalue is well separated
        for j in 0..full {
            let gap_prev = if j == 0 { f64::INFINITY } else { values[j - 1] - values[j] };
            let gap_next = if j + 1 < values.len() { values[j] - values[j + 1] } else { f64::INFINITY };
            if gap_prev.min(gap_next) > 1e-3 * scale && values[j] > 1e-6 * scale {
                let dot = model.basis().column(j).dot(&vectors.column(j)).abs();
                prop_assert!((dot - 1.0).abs() < 1e-6, "vector {j}: |dot| = {dot}");
            }
        }
        prop_assert!(model.orthonormality_error() < 1e-8);
        prop_assert!((model.explained_variance(full).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn projection_idempotence_and_parseval(g in geometries(), n in 3usize..=50, seed in any::<u64>()) {
        let (ds, _) = toy(n, g, seed);
        let full = g.len().min(n - 1);
        let model = fit_eigenmodel(&ds, full).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let c = Coordinates::from_vec((0..full).map(|_| rng.random::<f64>() - 0.5).collect());
        let back = model.project(&model.reconstruct(&c).unwrap()).unwrap();
        prop_assert!((back.vector() - c.vector()).amax() < 1e-8);

        for face in ds.faces() {
            let coords = model.project(face).unwrap();
            let centred = DVector::from_column_slice(face.pixels()) - model.mean();
            let (e, c2) = (centred.norm_squared(), coords.vector().norm_squared());
            prop_assert!((e - c2).abs() <= 1e-6 * e.max(1e-12), "{e} vs {c2}");
            // dataset faces lie in the affine span at full rank
            let rec = model.reconstruct(&coords).unwrap();
            for (a, b) in rec.pixels().iter().zip(face.pixels()) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn explained_variance_monotone(g in geometries(), n in 3usize..=30, seed in any::<u64>()) {
        let (ds, _) = toy(n, g, seed);
        let full = g.len().min(n - 1);
        let table = fit_eigenmodel(&ds, full).unwrap().explained_variance_table();
        prop_assert!(table.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        prop_assert!(table.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn truncated_reconstruction_never_beats_distance_to_mean() {
    let g = Geometry::new(8, 8);
    let (train, _) = toy(50, g, 17);
    let (held, _) = toy(5, g, 99);
    let model = fit_eigenmodel(&train, 49).unwrap();
    for face in held.faces() {
        let rec = model.reconstruct(&model.project(face).unwrap()).unwrap();
        let err: f64 = rec
            .pixels()
            .iter()
            .zip(face.pixels())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let dist: f64 = face
            .pixels()
            .iter()
            .zip(model.mean().iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        assert!(err.sqrt() <= dist.sqrt() + 1e-12);

        // brute force: full-rank orthogonal projection onto the same span
        let basis = model.basis();
        let centred = DVector::from_column_slice(face.pixels()) - model.mean();
        let proj = basis * (basis.transpose() * &centred);
        let brute = (&centred - proj).norm_squared();
        assert!((brute - err).abs() < 1e-10);
    }
}

#[test]
fn reconstruction_error_non_increasing_in_k() {
    let g = Geometry::new(16, 16);
    let (train, _) = toy(150, g, 5);
    let (held, _) = toy(1, g, 6);
    let face = &held.faces()[0];
    let model = fit_eigenmodel(&train, 100).unwrap();
    let mut last = f64::INFINITY;
    for k in [1usize, 10, 50, 100] {
        let c = model.project(face).unwrap();
        let truncated = Coordinates::from_vec(
            c.as_slice()
                .iter()
                .enumerate()
                .map(|(i, v)| if i < k { *v } else { 0.0 })
                .collect(),
        );
        let rec = model.reconstruct(&truncated).unwrap();
        let mse = rec
            .pixels()
            .iter()
            .zip(face.pixels())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / g.len() as f64;
        assert!(mse <= last + 1e-15, "k={k}: {mse} > {last}");
        last = mse;
    }
}
