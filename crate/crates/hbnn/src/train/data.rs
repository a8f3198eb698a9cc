//! Dataset ingestion: IDX-format image/label files and deterministic
//! synthetic 2-D sets for smoke tests.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Raw (uncompressed) IDX files in `path`:
    /// `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
    /// `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`.
    Mnist { path: String },
    TwoMoons {
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    GaussianBlobs {
        n: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSpec {
    /// Load (or generate) the train and test splits.
    pub fn load(&self) -> Result<(DatasetHandle, DatasetHandle)> {
        match self {
            DatasetSpec::Mnist { path } => load_mnist(Path::new(path)),
            DatasetSpec::TwoMoons { n, seed } => Ok((
                gen_synthetic(SyntheticKind::TwoMoons, *n, *seed)?,
                gen_synthetic(SyntheticKind::TwoMoons, (*n / 4).max(8), seed ^ 0x5EED)?,
            )),
            DatasetSpec::GaussianBlobs { n, seed } => Ok((
                gen_synthetic(SyntheticKind::GaussianBlobs, *n, *seed)?,
                gen_synthetic(SyntheticKind::GaussianBlobs, (*n / 4).max(8), seed ^ 0x5EED)?,
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    TwoMoons,
    GaussianBlobs,
}

/// One data split, already normalized. Pixels are held in f32 to keep MNIST
/// resident; batches are materialized as f64 tensors.
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    images: Vec<f32>,
    pub feature_shape: Vec<usize>,
    pub labels: Vec<u8>,
    pub split: String,
    pub num_classes: usize,
    /// Normalization applied at load time (mean, std per dataset).
    pub norm_stats: (f64, f64),
}

impl DatasetHandle {
    /// Assemble a split from raw normalized features.
    pub fn from_parts(
        images: Vec<f32>,
        feature_shape: Vec<usize>,
        labels: Vec<u8>,
        num_classes: usize,
        split: &str,
    ) -> Result<Self> {
        let f: usize = feature_shape.iter().product();
        if f == 0 || images.len() != f * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: f * labels.len(),
                got: images.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|l| **l as usize >= num_classes) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            images,
            feature_shape,
            labels,
            split: split.to_string(),
            num_classes,
            norm_stats: (0.0, 1.0),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.feature_shape.iter().product()
    }

    /// Materialize the samples at `indices` as an f64 batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let f = self.feature_len();
        let mut data = Vec::with_capacity(indices.len() * f);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend(self.images[i * f..(i + 1) * f].iter().map(|v| *v as f64));
            labels.push(self.labels[i] as usize);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.feature_shape);
        (
            Tensor::from_vec(shape, data).expect("batch shape is consistent"),
            labels,
        )
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Parse {
            offset: offset as u64,
            msg: format!("file too short for a 4-byte field at {offset}"),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parse an IDX image file (magic 2051): returns (count, rows, cols, pixels).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("bad image magic {magic:#x} (expected {IDX_IMAGES_MAGIC})"),
        });
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::ChecksumMismatch {
            expected: expected as u64,
            got: bytes.len() as u64,
        });
    }
    Ok((n, rows, cols, &bytes[16..]))
}

/// Parse an IDX label file (magic 2049): returns the label bytes.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("bad label magic {magic:#x} (expected {IDX_LABELS_MAGIC})"),
        });
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(Error::ChecksumMismatch {
            expected: expected as u64,
            got: bytes.len() as u64,
        });
    }
    Ok(&bytes[8..])
}

/// Load the four-file IDX layout from `dir`. Pixels are scaled to [0, 1] and
/// standardized with the training split's global mean and standard
/// deviation; labels must be < 10.
pub fn load_mnist(dir: &Path) -> Result<(DatasetHandle, DatasetHandle)> {
    let train_images = std::fs::read(dir.join("train-images-idx3-ubyte"))?;
    let train_labels = std::fs::read(dir.join("train-labels-idx1-ubyte"))?;
    let test_images = std::fs::read(dir.join("t10k-images-idx3-ubyte"))?;
    let test_labels = std::fs::read(dir.join("t10k-labels-idx1-ubyte"))?;

    let (n_train, rows, cols, train_px) = parse_idx_images(&train_images)?;
    let (n_test, rows2, cols2, test_px) = parse_idx_images(&test_images)?;
    if rows != rows2 || cols != cols2 {
        return Err(Error::Parse {
            offset: 8,
            msg: format!("split image sizes disagree: {rows}×{cols} vs {rows2}×{cols2}"),
        });
    }
    let train_lb = parse_idx_labels(&train_labels)?;
    let test_lb = parse_idx_labels(&test_labels)?;
    if train_lb.len() != n_train {
        return Err(Error::ChecksumMismatch {
            expected: n_train as u64,
            got: train_lb.len() as u64,
        });
    }
    if test_lb.len() != n_test {
        return Err(Error::ChecksumMismatch {
            expected: n_test as u64,
            got: test_lb.len() as u64,
        });
    }
    if let Some(bad) = train_lb.iter().chain(test_lb).find(|l| **l > 9) {
        return Err(Error::Parse {
            offset: 8,
            msg: format!("label {bad} out of range 0..=9"),
        });
    }

    // Training-split statistics in [0,1] scale.
    let inv255 = 1.0 / 255.0;
    let n_px = train_px.len() as f64;
    let mean = train_px.iter().map(|p| *p as f64 * inv255).sum::<f64>() / n_px;
    let var = train_px
        .iter()
        .map(|p| {
            let d = *p as f64 * inv255 - mean;
            d * d
        })
        .sum::<f64>()
        / n_px;
    let std = var.sqrt().max(1e-12);

    let normalize = |px: &[u8]| -> Vec<f32> {
        px.iter()
            .map(|p| ((*p as f64 * inv255 - mean) / std) as f32)
            .collect()
    };

    let feature_shape = vec![rows * cols];
    Ok((
        DatasetHandle {
            images: normalize(train_px),
            feature_shape: feature_shape.clone(),
            labels: train_lb.to_vec(),
            split: "train".into(),
            num_classes: 10,
            norm_stats: (mean, std),
        },
        DatasetHandle {
            images: normalize(test_px),
            feature_shape,
            labels: test_lb.to_vec(),
            split: "test".into(),
            num_classes: 10,
            norm_stats: (mean, std),
        },
    ))
}

/// Deterministic synthetic 2-D classification sets, standardized per feature.
pub fn gen_synthetic(kind: SyntheticKind, n: usize, seed: u64) -> Result<DatasetHandle> {
    if n == 0 {
        return Err(Error::Config(vec!["synthetic dataset size must be ≥ 1".into()]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = vec![0.0f64; n * 2];
    let mut labels = vec![0u8; n];
    let num_classes;
    match kind {
        SyntheticKind::TwoMoons => {
            num_classes = 2;
            for i in 0..n {
                let t: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let (mut x, mut y) = if i % 2 == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                let nx: f64 = StandardNormal.sample(&mut rng);
                let ny: f64 = StandardNormal.sample(&mut rng);
                x += 0.1 * nx;
                y += 0.1 * ny;
                xs[i * 2] = x;
                xs[i * 2 + 1] = y;
                labels[i] = (i % 2) as u8;
            }
        }
        SyntheticKind::GaussianBlobs => {
            num_classes = 3;
            const CENTERS: [(f64, f64); 3] = [(0.0, -2.5), (2.5, 2.0), (-2.5, 2.0)];
            for i in 0..n {
                let c = i % 3;
                let nx: f64 = StandardNormal.sample(&mut rng);
                let ny: f64 = StandardNormal.sample(&mut rng);
                xs[i * 2] = CENTERS[c].0 + 0.8 * nx;
                xs[i * 2 + 1] = CENTERS[c].1 + 0.8 * ny;
                labels[i] = c as u8;
            }
        }
    }

    // Standardize each feature.
    let mut images = vec![0.0f32; n * 2];
    for f in 0..2 {
        let mean = (0..n).map(|i| xs[i * 2 + f]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (xs[i * 2 + f] - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-12);
        for i in 0..n {
            images[i * 2 + f] = ((xs[i * 2 + f] - mean) / std) as f32;
        }
    }

    Ok(DatasetHandle {
        images,
        feature_shape: vec![2],
        labels,
        split: format!("synthetic-{n}"),
        num_classes,
        norm_stats: (0.0, 1.0),
    })
}
