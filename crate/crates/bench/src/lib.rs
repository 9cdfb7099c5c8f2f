//! Fixtures shared by the benchmarks.

use facesearch_core::{rng, FaceDataset, FaceVector, Geometry};
use rand::Rng;

/// `n` random faces of the given geometry, pixels uniform in `[0, 1]`.
pub fn random_dataset(n: usize, geometry: Geometry, seed: u64) -> FaceDataset {
    let mut r = rng::stream(seed, 0);
    let faces = (0..n)
        .map(|_| {
            let px = (0..geometry.len()).map(|_| r.random::<f64>()).collect();
            FaceVector::new(px, geometry).expect("valid pixels")
        })
        .collect();
    FaceDataset::from_faces(faces).expect("nonempty")
}
