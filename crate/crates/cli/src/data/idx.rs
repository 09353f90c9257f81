//! IDX image/label files (the MNIST distribution format).
//!
//! Both files start with a big-endian `u32` magic number followed by
//! big-endian `u32` dimensions: `2051, n, rows, cols` for images and
//! `2049, n` for labels. Payload bytes follow, one per pixel or label.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic number {found} (expected {expected})")]
    BadMagic { expected: u32, found: u32 },
    #[error("file truncated: need {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {0} is not a digit")]
    BadLabel(u8),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols` values in `[0, 1]` per image.
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.pixels();
        &self.features[i * p..(i + 1) * p]
    }

    /// Keeps only examples whose label is in `labels`.
    pub fn filter_labels(&self, labels: &[u32]) -> LabeledImages {
        let p = self.pixels();
        let mut features = Vec::new();
        let mut kept = Vec::new();
        for (i, &y) in self.labels.iter().enumerate() {
            if labels.contains(&y) {
                features.extend_from_slice(&self.features[i * p..(i + 1) * p]);
                kept.push(y);
            }
        }
        LabeledImages {
            rows: self.rows,
            cols: self.cols,
            features,
            labels: kept,
        }
    }
}

fn header(bytes: &[u8], words: usize) -> Result<Vec<u32>, IdxError> {
    if bytes.len() < 4 * words {
        return Err(IdxError::Truncated {
            expected: 4 * words,
            actual: bytes.len(),
        });
    }
    Ok(bytes[..4 * words]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = header(bytes, 1)?[0];
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

/// `(count, rows, cols, pixel bytes)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8]), IdxError> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let h = header(bytes, 4)?;
    let (n, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(IdxError::Truncated {
            expected: need,
            actual: bytes.len(),
        });
    }
    Ok((n, rows, cols, &bytes[16..need]))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8], IdxError> {
    check_magic(bytes, LABEL_MAGIC)?;
    let n = header(bytes, 2)?[1] as usize;
    let need = 8 + n;
    if bytes.len() < need {
        return Err(IdxError::Truncated {
            expected: need,
            actual: bytes.len(),
        });
    }
    Ok(&bytes[8..need])
}

pub fn decode(images: &[u8], labels: &[u8]) -> Result<LabeledImages, IdxError> {
    let (n, rows, cols, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(IdxError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 9) {
        return Err(IdxError::BadLabel(bad));
    }
    Ok(LabeledImages {
        rows,
        cols,
        features: pixels.iter().map(|&b| b as f64 / 255.0).collect(),
        labels: labels.iter().map(|&y| y as u32).collect(),
    })
}

fn read(path: &Path) -> Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<LabeledImages, IdxError> {
    decode(&read(images)?, &read(labels)?)
}

/// Serializes images and labels back to IDX bytes.
pub fn encode(data: &LabeledImages) -> (Vec<u8>, Vec<u8>) {
    let n = data.len() as u32;
    let mut images = Vec::with_capacity(16 + data.features.len());
    for w in [IMAGE_MAGIC, n, data.rows as u32, data.cols as u32] {
        images.extend_from_slice(&w.to_be_bytes());
    }
    images.extend(
        data.features
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut labels = Vec::with_capacity(8 + data.len());
    labels.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    labels.extend(data.labels.iter().map(|&y| y as u8));
    (images, labels)
}
