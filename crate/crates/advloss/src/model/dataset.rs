//! Datasets: the `[0,1]^d` feature box, binary persistence, and the
//! synthetic generators used to build desk-scale fixtures.
//!
//! On disk a dataset is a little-endian block:
//!
//! ```text
//! magic "ALDS" | u32 n | u32 d | u32 c | n*d f32 features | n u32 labels
//! ```
//!
//! Features are stored as `f32`; generators quantize through `f32` at
//! creation so the in-memory values match what a save/load round trip
//! produces.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelError;
use crate::numerics::BatchMatrix;

const MAGIC: &[u8; 4] = b"ALDS";

/// A labeled dataset with features in `[0,1]` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: BatchMatrix,
    labels: Vec<u32>,
    num_classes: usize,
}

impl Dataset {
    /// Validate the box constraint and label range.
    pub fn new(
        features: BatchMatrix,
        labels: Vec<u32>,
        num_classes: usize,
    ) -> Result<Self, ModelError> {
        if labels.len() != features.rows() {
            return Err(ModelError::InvalidDataset(format!(
                "{} labels for {} samples",
                labels.len(),
                features.rows()
            )));
        }
        if num_classes < 2 {
            return Err(ModelError::InvalidDataset(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if !features.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(ModelError::InvalidDataset(
                "features must lie in [0,1]".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= num_classes) {
            return Err(ModelError::InvalidDataset(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &BatchMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn n_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    /// New dataset containing the given sample indices, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut data = Vec::with_capacity(indices.len() * self.input_dim());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features: BatchMatrix::new(indices.len(), self.input_dim(), data)
                .expect("subset shape"),
            labels,
            num_classes: self.num_classes,
        }
    }

    /// Deterministic slice of up to `count` samples drawn by seeded
    /// shuffle of the index range.
    pub fn seeded_slice(&self, count: usize, seed: u64) -> Dataset {
        let mut indices: Vec<usize> = (0..self.n_samples()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..indices.len()).rev() {
            let j = rng.gen_range(0..=i);
            indices.swap(i, j);
        }
        indices.truncate(count.min(self.n_samples()));
        self.subset(&indices)
    }
}

/// Write the binary dataset format.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), ModelError> {
    let n = dataset.n_samples();
    let d = dataset.input_dim();
    let mut bytes = Vec::with_capacity(16 + n * d * 4 + n * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(n as u32).to_le_bytes());
    bytes.extend_from_slice(&(d as u32).to_le_bytes());
    bytes.extend_from_slice(&(dataset.num_classes as u32).to_le_bytes());
    for &v in dataset.features.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &y in &dataset.labels {
        bytes.extend_from_slice(&y.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Read the binary dataset format, re-validating every invariant.
pub fn load_dataset(path: &Path) -> Result<Dataset, ModelError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(ModelError::MalformedFile(
            "missing ALDS dataset header".into(),
        ));
    }
    let read_u32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let n = read_u32(4) as usize;
    let d = read_u32(8) as usize;
    let c = read_u32(12) as usize;
    let expected = 16 + n * d * 4 + n * 4;
    if bytes.len() != expected {
        return Err(ModelError::MalformedFile(format!(
            "dataset payload is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(n * d);
    let mut off = 16;
    for _ in 0..n * d {
        data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
        off += 4;
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        off += 4;
    }
    let features = BatchMatrix::new(n, d, data)
        .map_err(|e| ModelError::MalformedFile(e.to_string()))?;
    Dataset::new(features, labels, c)
}

/// Quantize through `f32` and clamp into the feature box.
fn boxed(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) as f32) as f64
}

fn validate_counts(n: usize, dims: usize, classes: usize) -> Result<(), ModelError> {
    if n == 0 || dims == 0 {
        return Err(ModelError::InvalidParameter(
            "need at least one sample and one dimension".into(),
        ));
    }
    if classes < 2 {
        return Err(ModelError::InvalidParameter(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    Ok(())
}

/// Gaussian class blobs with well-separated centers.
pub fn make_blobs(
    n: usize,
    dims: usize,
    classes: usize,
    std: f64,
    seed: u64,
) -> Result<Dataset, ModelError> {
    validate_counts(n, dims, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let centers: Vec<Vec<f64>> = if dims == 2 {
        // Evenly spaced on a circle around the box center.
        (0..classes)
            .map(|k| {
                let angle = TAU * k as f64 / classes as f64;
                vec![0.5 + 0.28 * angle.cos(), 0.5 + 0.28 * angle.sin()]
            })
            .collect()
    } else {
        // Rejection-sampled centers with a minimum separation.
        let mut centers: Vec<Vec<f64>> = Vec::new();
        let mut min_sep = 0.4;
        while centers.len() < classes {
            let candidate: Vec<f64> = (0..dims).map(|_| rng.gen_range(0.2..0.8)).collect();
            let ok = centers.iter().all(|c| {
                let d2: f64 = c
                    .iter()
                    .zip(&candidate)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() >= min_sep
            });
            if ok {
                centers.push(candidate);
            } else {
                min_sep *= 0.995;
            }
        }
        centers
    };

    let noise = Normal::new(0.0, std)
        .map_err(|_| ModelError::InvalidParameter("std must be finite and >= 0".into()))?;
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        for d in 0..dims {
            data.push(boxed(centers[k][d] + noise.sample(&mut rng)));
        }
        labels.push(k as u32);
    }
    Dataset::new(BatchMatrix::new(n, dims, data).unwrap(), labels, classes)
}

/// Concentric rings in two dimensions, one radius band per class.
pub fn make_rings(n: usize, classes: usize, seed: u64) -> Result<Dataset, ModelError> {
    validate_counts(n, 2, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.015).unwrap();
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        let radius = 0.12 + 0.30 * k as f64 / (classes - 1).max(1) as f64
            + noise.sample(&mut rng);
        let angle = rng.gen_range(0.0..TAU);
        data.push(boxed(0.5 + radius * angle.cos()));
        data.push(boxed(0.5 + radius * angle.sin()));
        labels.push(k as u32);
    }
    Dataset::new(BatchMatrix::new(n, 2, data).unwrap(), labels, classes)
}

fn read_be_u32(bytes: &[u8], off: usize) -> Result<u32, ModelError> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| ModelError::MalformedFile("idx file truncated".into()))
}

/// Build a dataset from IDX-format image/label files (the MNIST layout),
/// taking a seeded subsample of `n` examples scaled into `[0,1]`.
pub fn mnist_subset(
    images_path: &Path,
    labels_path: &Path,
    n: usize,
    seed: u64,
) -> Result<Dataset, ModelError> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    if read_be_u32(&images, 0)? != 2051 {
        return Err(ModelError::MalformedFile(
            "image file is not idx3-ubyte".into(),
        ));
    }
    if read_be_u32(&labels, 0)? != 2049 {
        return Err(ModelError::MalformedFile(
            "label file is not idx1-ubyte".into(),
        ));
    }
    let count = read_be_u32(&images, 4)? as usize;
    if read_be_u32(&labels, 4)? as usize != count {
        return Err(ModelError::MalformedFile(
            "image and label counts differ".into(),
        ));
    }
    let rows = read_be_u32(&images, 8)? as usize;
    let cols = read_be_u32(&images, 12)? as usize;
    let dim = rows * cols;
    if images.len() != 16 + count * dim || labels.len() != 8 + count {
        return Err(ModelError::MalformedFile("idx payload size mismatch".into()));
    }

    let mut indices: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    indices.truncate(n.min(count));

    let mut data = Vec::with_capacity(indices.len() * dim);
    let mut ys = Vec::with_capacity(indices.len());
    for &i in &indices {
        let start = 16 + i * dim;
        for &px in &images[start..start + dim] {
            data.push((f32::from(px) / 255.0) as f64);
        }
        ys.push(u32::from(labels[8 + i]));
    }
    Dataset::new(
        BatchMatrix::new(indices.len(), dim, data)
            .map_err(|e| ModelError::MalformedFile(e.to_string()))?,
        ys,
        10,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn validation_rejects_bad_data() {
        let features = BatchMatrix::from_rows(&[&[0.5, 1.5]]);
        assert!(Dataset::new(features, vec![0], 2).is_err());
        let features = BatchMatrix::from_rows(&[&[0.5, 0.5]]);
        assert!(Dataset::new(features.clone(), vec![2], 2).is_err());
        assert!(Dataset::new(features.clone(), vec![0, 1], 2).is_err());
        assert!(Dataset::new(features, vec![0], 1).is_err());
    }

    #[test]
    fn blobs_have_requested_shape_and_are_deterministic() {
        let a = make_blobs(300, 2, 3, 0.08, 7).unwrap();
        assert_eq!(a.n_samples(), 300);
        assert_eq!(a.input_dim(), 2);
        assert_eq!(a.num_classes(), 3);
        let b = make_blobs(300, 2, 3, 0.08, 7).unwrap();
        assert_eq!(a, b);
        assert!(make_blobs(10, 2, 1, 0.08, 7).is_err());
    }

    #[test]
    fn rings_live_in_the_box() {
        let d = make_rings(400, 3, 9).unwrap();
        assert!(d.features().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("toy.alds");
        let d = make_blobs(64, 3, 4, 0.1, 3).unwrap();
        save_dataset(&d, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(d, loaded);
        // Identical bytes when saved again.
        let path2 = dir.path().join("toy2.alds");
        save_dataset(&loaded, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_dataset_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.alds");
        let d = make_blobs(16, 2, 2, 0.05, 1).unwrap();
        save_dataset(&d, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(ModelError::MalformedFile(_))
        ));
    }

    #[test]
    fn seeded_slice_is_reproducible_and_capped() {
        let d = make_blobs(100, 2, 2, 0.05, 11).unwrap();
        let a = d.seeded_slice(32, 5);
        let b = d.seeded_slice(32, 5);
        assert_eq!(a, b);
        assert_eq!(a.n_samples(), 32);
        assert_eq!(d.seeded_slice(1000, 5).n_samples(), 100);
        assert_ne!(d.seeded_slice(32, 6), a);
    }

    #[test]
    fn mnist_reader_parses_idx_layout() {
        let dir = tempdir().unwrap();
        let images_path = dir.path().join("imgs.idx3");
        let labels_path = dir.path().join("lbls.idx1");
        // Two 2x2 "images".
        let mut img = Vec::new();
        img.extend_from_slice(&2051u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[0, 51, 102, 255, 10, 20, 30, 40]);
        fs::write(&images_path, &img).unwrap();
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&2049u32.to_be_bytes());
        lbl.extend_from_slice(&2u32.to_be_bytes());
        lbl.extend_from_slice(&[7, 3]);
        fs::write(&labels_path, &lbl).unwrap();

        let d = mnist_subset(&images_path, &labels_path, 2, 0).unwrap();
        assert_eq!(d.n_samples(), 2);
        assert_eq!(d.input_dim(), 4);
        assert_eq!(d.num_classes(), 10);
        let mut seen: Vec<u32> = d.labels().to_vec();
        seen.sort_unstable();
        assert_eq!(seen, vec![3, 7]);
        assert!(d.features().data().iter().all(|&v| (0.0..=1.0).contains(&v)));

        // Corrupt magic.
        let mut bad = img.clone();
        bad[3] = 0xff;
        fs::write(&images_path, &bad).unwrap();
        assert!(mnist_subset(&images_path, &labels_path, 2, 0).is_err());
    }
}
