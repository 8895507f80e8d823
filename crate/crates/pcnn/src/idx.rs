//! Big-endian IDX container parsing for the MNIST image/label files.

use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{IMAGE_PIXELS, IMAGE_SIDE};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// A labelled image collection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// First `n` items (or everything when `n` is 0 or larger than the set).
    pub fn subset(&self, n: usize) -> Dataset {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        Dataset { images: self.images[..n].to_vec(), labels: self.labels[..n].to_vec() }
    }

    pub fn samples(&self) -> crate::twin::Samples<'_> {
        crate::twin::Samples { images: &self.images, labels: &self.labels }
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Parse {
            offset,
            message: format!("expected 4 bytes, file has {}", bytes.len()),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parses the image and label IDX files and validates that their counts
/// match.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;

    let magic = read_u32(&image_bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_u32(&image_bytes, 4)? as usize;
    let rows = read_u32(&image_bytes, 8)? as usize;
    let cols = read_u32(&image_bytes, 12)? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::Parse {
            offset: 8,
            message: format!("expected 28x28 images, got {rows}x{cols}"),
        });
    }
    let expected = 16 + count * IMAGE_PIXELS;
    if image_bytes.len() != expected {
        return Err(Error::Parse {
            offset: image_bytes.len().min(expected),
            message: format!("image payload: expected {expected} bytes, got {}", image_bytes.len()),
        });
    }

    let magic = read_u32(&label_bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let label_count = read_u32(&label_bytes, 4)? as usize;
    if label_count != count {
        return Err(Error::Parse {
            offset: 4,
            message: format!("{count} images but {label_count} labels"),
        });
    }
    let expected = 8 + label_count;
    if label_bytes.len() != expected {
        return Err(Error::Parse {
            offset: label_bytes.len().min(expected),
            message: format!("label payload: expected {expected} bytes, got {}", label_bytes.len()),
        });
    }
    for (i, &l) in label_bytes[8..].iter().enumerate() {
        if l > 9 {
            return Err(Error::Parse { offset: 8 + i, message: format!("label {l} out of 0-9") });
        }
    }

    let images = image_bytes[16..]
        .chunks_exact(IMAGE_PIXELS)
        .map(|c| c.to_vec())
        .collect();
    Ok(Dataset { images, labels: label_bytes[8..].to_vec() })
}

/// Re-serializes a dataset into IDX bytes; the inverse of `load_idx`.
pub fn to_idx_bytes(dataset: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + dataset.len() * IMAGE_PIXELS);
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    images.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    images.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    for img in &dataset.images {
        images.extend_from_slice(img);
    }
    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    labels.extend_from_slice(&dataset.labels);
    (images, labels)
}
