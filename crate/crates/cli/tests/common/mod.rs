#![allow(dead_code)]

use std::fs;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const W: usize = 16;
pub const H: usize = 16;

/// Synthetic grayscale faces: a symmetric template, a few smooth modes and
/// an asymmetric perturbation whose size varies per face. Returns raw bytes.
pub fn synthetic_faces(n: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let template: Vec<f64> = (0..W * H)
        .map(|i| {
            let (r, c) = ((i / W) as f64, (i % W) as f64);
            let dx = (c - (W as f64 - 1.0) / 2.0) / W as f64;
            let dy = (r - (H as f64 - 1.0) / 2.0) / H as f64;
            0.5 + 0.3 * (-(dx * dx + dy * dy) * 8.0).exp()
        })
        .collect();
    (0..n)
        .map(|_| {
            let w: [f64; 4] = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let skew = rng.random_range(0.0..0.15);
            (0..W * H)
                .map(|i| {
                    let (r, c) = ((i / W) as f64, (i % W) as f64);
                    let v = template[i]
                        + 0.08 * w[0] * (r / 3.0).sin()
                        + 0.06 * w[1] * (c / 2.5).cos()
                        + 0.05 * w[2] * ((r + c) / 4.0).sin()
                        + skew * w[3] * (c / W as f64 - 0.5)
                        + 0.01 * rng.random_range(-1.0..1.0);
                    (v.clamp(0.0, 1.0) * 255.0).round() as u8
                })
                .collect()
        })
        .collect()
}

pub fn pgm(pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{W} {H}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Write `n` faces as `face_000.pgm`, ... and return their pixels.
pub fn write_corpus(dir: &Path, n: usize, seed: u64) -> Vec<Vec<u8>> {
    fs::create_dir_all(dir).unwrap();
    let faces = synthetic_faces(n, seed);
    for (i, f) in faces.iter().enumerate() {
        fs::write(dir.join(format!("face_{i:03}.pgm")), pgm(f)).unwrap();
    }
    faces
}

/// Symmetry index straight from the bytes.
pub fn brute_symmetry(pixels: &[u8]) -> f64 {
    let mut s = 0.0;
    for r in 0..H {
        for c in 0..W / 2 {
            let a = pixels[r * W + c] as f64 / 255.0;
            let b = pixels[r * W + W - 1 - c] as f64 / 255.0;
            s += (a - b).powi(2);
        }
    }
    2.0 * s / (W * H) as f64
}
