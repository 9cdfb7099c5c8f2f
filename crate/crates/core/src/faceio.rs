//! Grayscale face images: codec, dataset ingestion and the symmetry filter.
//!
//! A face is a flat row-major vector of intensities in `[0, 1]`. Decoding
//! accepts binary PGM (`P5`, maxval up to 255) and 8-bit grayscale PNG;
//! encoding always writes PGM or PNG at 8 bits, clamping out-of-range values
//! produced by reconstruction.

use std::collections::HashSet;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image width and height in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
}

impl Geometry {
    pub const fn new(width: usize, height: usize) -> Self {
        Geometry { width, height }
    }

    /// Pixel count `p`.
    pub const fn len(&self) -> usize {
        self.width * self.height
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry::new(64, 64)
    }
}

/// A grayscale image flattened row-major.
///
/// Decoded faces always lie in `[0, 1]`. Reconstructed faces may overshoot
/// slightly; the overshoot is kept here and only clamped by the encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceVector {
    pixels: Vec<f64>,
    geometry: Geometry,
}

impl FaceVector {
    pub fn new(pixels: Vec<f64>, geometry: Geometry) -> Result<Self> {
        if pixels.len() != geometry.len() {
            return Err(Error::DimensionMismatch {
                expected: geometry.len(),
                found: pixels.len(),
            });
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("pixel {i} is not finite")));
        }
        Ok(FaceVector { pixels, geometry })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        FaceVector {
            pixels: vec![0.0; geometry.len()],
            geometry,
        }
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Pixel at `(row, col)`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.geometry.width + col]
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> FaceVector {
        let Geometry { width, .. } = self.geometry;
        let pixels = self
            .pixels
            .chunks_exact(width)
            .flat_map(|row| row.iter().rev().copied())
            .collect();
        FaceVector {
            pixels,
            geometry: self.geometry,
        }
    }

    /// Quantize to 8 bits, clamping to `[0, 1]` first.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize(v)).collect()
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Faces sharing one geometry, each with a unique identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceDataset {
    faces: Vec<FaceVector>,
    ids: Vec<String>,
}

impl FaceDataset {
    pub fn new(faces: Vec<FaceVector>, ids: Vec<String>) -> Result<Self> {
        if faces.len() != ids.len() {
            return Err(Error::DimensionMismatch {
                expected: faces.len(),
                found: ids.len(),
            });
        }
        if let Some(first) = faces.first() {
            let g = first.geometry();
            if let Some(bad) = faces.iter().find(|f| f.geometry() != g) {
                return Err(Error::WrongDimensions {
                    expected_width: g.width,
                    expected_height: g.height,
                    found_width: bad.width(),
                    found_height: bad.height(),
                });
            }
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::InvalidArgument(format!("duplicate face id {dup:?}")));
        }
        Ok(FaceDataset { faces, ids })
    }

    /// Dataset with ids `"0"`, `"1"`, ... in order.
    pub fn from_faces(faces: Vec<FaceVector>) -> Result<Self> {
        let ids = (0..faces.len()).map(|i| i.to_string()).collect();
        FaceDataset::new(faces, ids)
    }

    pub fn faces(&self) -> &[FaceVector] {
        &self.faces
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn geometry(&self) -> Option<Geometry> {
        self.faces.first().map(FaceVector::geometry)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FaceVector)> {
        self.ids.iter().map(String::as_str).zip(self.faces.iter())
    }

    fn select(&self, indices: &[usize]) -> FaceDataset {
        FaceDataset {
            faces: indices.iter().map(|&i| self.faces[i].clone()).collect(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Decode a PGM (`P5`) or 8-bit grayscale PNG of the given geometry.
pub fn decode_image(bytes: &[u8], geometry: Geometry) -> Result<FaceVector> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes, geometry)
    } else if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(bytes, geometry)
    } else {
        Err(Error::MalformedHeader(
            "neither a binary PGM (P5) nor a PNG signature".into(),
        ))
    }
}

fn check_geometry(width: usize, height: usize, geometry: Geometry) -> Result<()> {
    if width != geometry.width || height != geometry.height {
        return Err(Error::WrongDimensions {
            expected_width: geometry.width,
            expected_height: geometry.height,
            found_width: width,
            found_height: height,
        });
    }
    Ok(())
}

fn decode_pgm(bytes: &[u8], geometry: Geometry) -> Result<FaceVector> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (slot, name) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        // whitespace and `#` comments may separate header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader(format!("missing {name}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *slot = text
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("{name} {text:?} does not fit")))?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::MalformedHeader(
            "expected whitespace after maxval".into(),
        ));
    }
    pos += 1;
    if maxval == 0 {
        return Err(Error::MalformedHeader("maxval must be positive".into()));
    }
    if maxval > 255 {
        return Err(Error::UnsupportedBitDepth(format!(
            "PGM maxval {maxval} needs 16-bit samples"
        )));
    }
    check_geometry(width, height, geometry)?;
    let data = &bytes[pos..];
    if data.len() < geometry.len() {
        return Err(Error::TruncatedImage {
            expected: geometry.len(),
            found: data.len(),
        });
    }
    let scale = maxval as f64;
    let mut pixels = Vec::with_capacity(geometry.len());
    for &b in &data[..geometry.len()] {
        if b as usize > maxval {
            return Err(Error::MalformedHeader(format!(
                "sample {b} exceeds maxval {maxval}"
            )));
        }
        pixels.push(b as f64 / scale);
    }
    Ok(FaceVector { pixels, geometry })
}

fn decode_png(bytes: &[u8], geometry: Geometry) -> Result<FaceVector> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::MalformedHeader(format!("png: {e}")))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::UnsupportedBitDepth(format!(
            "png color type {:?}, expected grayscale",
            info.color_type
        )));
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth(format!(
            "png bit depth {:?}, expected 8",
            info.bit_depth
        )));
    }
    check_geometry(info.width as usize, info.height as usize, geometry)?;
    let mut buf = vec![0u8; geometry.len()];
    reader
        .next_frame(&mut buf)
        .map_err(|e| Error::MalformedHeader(format!("png: {e}")))?;
    let pixels = buf.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(FaceVector { pixels, geometry })
}

/// Encode as binary PGM, maxval 255, no comments.
pub fn encode_image(face: &FaceVector) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", face.width(), face.height());
    let mut out = Vec::with_capacity(header.len() + face.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(face.to_bytes());
    out
}

/// Encode as 8-bit grayscale PNG.
pub fn encode_png(face: &FaceVector) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, face.width() as u32, face.height() as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("in-memory png header");
        writer
            .write_image_data(&face.to_bytes())
            .expect("in-memory png data");
    }
    out
}

/// Mean squared difference between mirrored pixel pairs:
/// `(2/p) * sum over rows and j < w/2 of (x[i,j] - x[i,w-1-j])^2`.
///
/// Zero for a mirror-symmetric image; lower means more symmetric.
pub fn symmetry_index(face: &FaceVector) -> Result<f64> {
    let Geometry { width, .. } = face.geometry();
    if width % 2 != 0 {
        return Err(Error::OddWidth(width));
    }
    if face.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = face
        .pixels
        .chunks_exact(width)
        .map(|row| {
            (0..width / 2)
                .map(|j| {
                    let d = row[j] - row[width - 1 - j];
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    Ok(2.0 * sum / face.len() as f64)
}

/// Number of faces kept when retaining `fraction` of `n`.
pub fn retained_count(n: usize, fraction: f64) -> usize {
    // guards against 0.15 * 20 = 3.0000000000000004 rounding up to 4
    let raw = (fraction * n as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// Keep the `ceil(percentile * N)` most symmetric faces (lowest index),
/// preserving dataset order. Ties go to the earlier face.
pub fn filter_symmetric(dataset: &FaceDataset, percentile: f64) -> Result<FaceDataset> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile {percentile} outside (0, 1]"
        )));
    }
    let scores = dataset
        .faces
        .iter()
        .map(symmetry_index)
        .collect::<Result<Vec<_>>>()?;
    let keep = retained_count(dataset.len(), percentile);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut survivors = order[..keep].to_vec();
    survivors.sort_unstable();
    Ok(dataset.select(&survivors))
}

/// Result of reading an image directory.
#[derive(Debug)]
pub struct Ingested {
    pub dataset: FaceDataset,
    /// Files that could not be decoded, with the reason.
    pub failures: Vec<(PathBuf, Error)>,
}

/// Read every `.pgm`/`.png` file in `dir`, in lexicographic filename order.
///
/// Undecodable files are collected in [`Ingested::failures`]; the call only
/// fails when the directory is unreadable or no file decodes.
pub fn load_dir(dir: &Path, geometry: Geometry) -> Result<Ingested> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("png"));
        if is_image && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();

    let mut faces = Vec::new();
    let mut ids = Vec::new();
    let mut failures = Vec::new();
    for path in paths {
        let decoded = fs::read(&path)
            .map_err(|e| Error::io(&path, e))
            .and_then(|bytes| decode_image(&bytes, geometry));
        match decoded {
            Ok(face) => {
                ids.push(
                    path.file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                );
                faces.push(face);
            }
            Err(e) => failures.push((path, e)),
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Ingested {
        dataset: FaceDataset::new(faces, ids)?,
        failures,
    })
}

const DATASET_MAGIC: &[u8; 8] = b"FACEDS\0\x01";

/// Write a dataset archive: magic, geometry, count, then per face a
/// length-prefixed UTF-8 id and `p` little-endian f64 pixels.
pub fn save_dataset(dataset: &FaceDataset, path: &Path) -> Result<()> {
    let g = dataset.geometry().unwrap_or_default();
    let mut buf = Vec::with_capacity(32 + dataset.len() * (g.len() * 8 + 16));
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&(g.width as u64).to_le_bytes());
    buf.extend_from_slice(&(g.height as u64).to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for (id, face) in dataset.iter() {
        buf.extend_from_slice(&(id.len() as u64).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        for v in face.pixels() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<FaceDataset> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = crate::binfmt::ByteReader::new(&bytes);
    if r.take(8)? != DATASET_MAGIC {
        return Err(Error::Version("not a face dataset archive".into()));
    }
    let width = r.u64()? as usize;
    let height = r.u64()? as usize;
    let count = r.u64()? as usize;
    let geometry = Geometry::new(width, height);
    let mut faces = Vec::with_capacity(count.min(1 << 20));
    let mut ids = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = r.u64()? as usize;
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Version("face id is not UTF-8".into()))?
            .to_owned();
        let pixels = r.f64s(geometry.len())?;
        faces.push(FaceVector::new(pixels, geometry)?);
        ids.push(id);
    }
    FaceDataset::new(faces, ids)
}
